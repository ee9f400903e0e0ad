use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean, sample standard deviation and 95% Student-t half-width of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary { n, mean: f64::NAN, std_dev: f64::NAN, ci95: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Summary { n, mean, std_dev: 0.0, ci95: f64::INFINITY };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        let ci95 = t_quantile_975(n - 1) * std_dev / (n as f64).sqrt();
        Summary { n, mean, std_dev, ci95 }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn high(&self) -> f64 {
        self.mean + self.ci95
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        self.std_dev / (self.n as f64).sqrt()
    }
}

pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).expect("dof >= 1").inverse_cdf(0.975)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_table_values() {
        assert!((t_quantile_975(4) - 2.776445).abs() < 1e-5);
        assert!((t_quantile_975(1) - 12.706205).abs() < 1e-4);
    }

    #[test]
    fn summary_of_known_sample() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, 3.0);
        assert!((s.std_dev - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((s.ci95 - 2.776445 * (0.5f64).sqrt()).abs() < 1e-5);
        assert!(Summary::of(&[]).mean.is_nan());
        assert_eq!(Summary::of(&[2.0]).std_dev, 0.0);
    }
}
