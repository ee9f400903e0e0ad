use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sidelink_core::queue::{simulate_mm1k, Mm1kEstimate};

use crate::config::{ExperimentSpec, Mode};
use crate::error::HarnessError;

pub const REPORT_HEADER: [&str; 9] =
    ["rho", "k", "arrivals", "blocked", "simulated", "analytic", "std_error", "z_score", "within_3_sigma"];

/// Simulated M/M/1/K blocking against the closed form over the configured
/// (rho, K) grid. Grid point `i` uses stream `i` of the first seed.
pub fn run_queue_validation(spec: &ExperimentSpec) -> Result<Vec<Mm1kEstimate>, HarnessError> {
    spec.validate(Mode::ValidateQueue)?;
    let q = &spec.queue_validation;
    let mut out = Vec::with_capacity(q.rhos.len() * q.capacities.len());
    for &rho in &q.rhos {
        for &k in &q.capacities {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seeds[0]);
            rng.set_stream(out.len() as u64);
            out.push(simulate_mm1k(rho, k, q.arrivals, &mut rng));
        }
    }
    Ok(out)
}

pub fn within_3_sigma(e: &Mm1kEstimate) -> bool {
    (e.simulated - e.analytic).abs() <= 3.0 * e.std_error
}

pub fn write_report(path: &Path, rows: &[Mm1kEstimate]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(HarnessError::csv(path))?;
    w.write_record(REPORT_HEADER).map_err(HarnessError::csv(path))?;
    for e in rows {
        w.write_record([
            e.rho.to_string(),
            e.k.to_string(),
            e.arrivals.to_string(),
            e.blocked.to_string(),
            e.simulated.to_string(),
            e.analytic.to_string(),
            e.std_error.to_string(),
            e.z_score.to_string(),
            within_3_sigma(e).to_string(),
        ])
        .map_err(HarnessError::csv(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}
