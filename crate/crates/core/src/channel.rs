//! Large-scale path loss (UMi street canyon), Rician small-scale fading and
//! Shannon link rates for the five mode-band options.
//!
//! Frequencies enter the dB formulas in GHz; wavelength and breakpoint
//! distance use Hz.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::Scalar;

/// Speed of light used by the breakpoint and wavelength formulas (m/s).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Thermal noise power spectral density, -174 dBm/Hz, in W/Hz.
pub const THERMAL_NOISE_W_PER_HZ: f64 = 3.981_071_705_534_973e-21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid link geometry: {0}")]
    Geometry(String),
    #[error("invalid link budget: {0}")]
    Budget(String),
    #[error("rician K-factor must be non-negative, got {0}")]
    KFactor(f64),
    #[error("NLOS power scale must be positive, got {0}")]
    NlosScale(f64),
}

/// Transmitter/receiver placement and carrier for one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry<T> {
    /// 3D distance, meters.
    pub d3d: T,
    /// Transmitter antenna height, meters.
    pub h_t: T,
    /// Receiver antenna height, meters.
    pub h_r: T,
    /// Carrier frequency, GHz.
    pub fc_ghz: T,
}

impl<T: Scalar> LinkGeometry<T> {
    pub fn new(d3d: T, h_t: T, h_r: T, fc_ghz: T) -> Result<Self, ChannelError> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if !ok(d3d) {
            return Err(ChannelError::Geometry(format!("d3d must be > 0, got {d3d}")));
        }
        if !ok(h_r) || !h_t.is_finite() || h_t <= h_r {
            return Err(ChannelError::Geometry(format!(
                "heights must satisfy h_t > h_r > 0, got h_t={h_t}, h_r={h_r}"
            )));
        }
        if !ok(fc_ghz) {
            return Err(ChannelError::Geometry(format!("fc_ghz must be > 0, got {fc_ghz}")));
        }
        Ok(Self { d3d, h_t, h_r, fc_ghz })
    }

    pub fn fc_hz(&self) -> T {
        self.fc_ghz * T::lit(1e9)
    }

    pub fn wavelength(&self) -> T {
        T::lit(SPEED_OF_LIGHT) / self.fc_hz()
    }
}

/// `4 h_t h_r f_c / c` with `f_c` in Hz.
pub fn breakpoint_distance<T: Scalar>(g: &LinkGeometry<T>) -> T {
    T::lit(4.0) * g.h_t * g.h_r * g.fc_hz() / T::lit(SPEED_OF_LIGHT)
}

/// Two-slope LOS path loss in dB.
pub fn pathloss_los<T: Scalar>(g: &LinkGeometry<T>) -> T {
    let d_bp = breakpoint_distance(g);
    let freq_term = T::lit(20.0) * g.fc_ghz.log10();
    if g.d3d <= d_bp {
        T::lit(32.4) + T::lit(21.0) * g.d3d.log10() + freq_term
    } else {
        let dh = g.h_t - g.h_r;
        T::lit(32.4) + T::lit(40.0) * g.d3d.log10() + freq_term
            - T::lit(9.5) * (d_bp * d_bp + dh * dh).log10()
    }
}

/// NLOS path loss in dB, never below the LOS value.
pub fn pathloss_nlos<T: Scalar>(g: &LinkGeometry<T>) -> T {
    let nlos = T::lit(22.4) + T::lit(35.3) * g.d3d.log10() + T::lit(21.3) * g.fc_ghz.log10()
        - T::lit(0.3) * (g.h_r - T::lit(1.5));
    pathloss_los(g).max(nlos)
}

/// One draw of the small-scale channel coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization<T> {
    pub h: Complex<T>,
    pub k_factor: T,
    pub nlos_power_scale: T,
}

impl<T: Scalar> ChannelRealization<T> {
    /// Unit-gain LOS-only channel.
    pub fn unit() -> Self {
        Self {
            h: Complex::new(T::one(), T::zero()),
            k_factor: T::infinity(),
            nlos_power_scale: T::one(),
        }
    }

    pub fn power_gain(&self) -> T {
        self.h.norm_sqr()
    }

    /// Expected `|h|^2` under the distribution this draw came from.
    pub fn expected_power_gain(k_factor: T, nlos_power_scale: T) -> T {
        if k_factor.is_infinite() {
            return T::one();
        }
        (k_factor + nlos_power_scale) / (k_factor + T::one())
    }
}

/// Draws `h = sqrt(K/(K+1)) e^{-j 2 pi d / lambda} + sqrt(1/(K+1)) z`, with
/// `z ~ CN(0, nlos_power_scale)`.
pub fn sample_rician<T: Scalar, R: Rng + ?Sized>(
    g: &LinkGeometry<T>,
    k_factor: T,
    nlos_power_scale: T,
    rng: &mut R,
) -> Result<ChannelRealization<T>, ChannelError> {
    if k_factor.is_nan() || k_factor < T::zero() {
        return Err(ChannelError::KFactor(k_factor.to_f64().unwrap_or(f64::NAN)));
    }
    if !(nlos_power_scale > T::zero()) || !nlos_power_scale.is_finite() {
        return Err(ChannelError::NlosScale(
            nlos_power_scale.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let (los_w, nlos_w) = if k_factor.is_infinite() {
        (T::one(), T::zero())
    } else {
        let denom = k_factor + T::one();
        ((k_factor / denom).sqrt(), (T::one() / denom).sqrt())
    };
    // Reduce the path phase in f64 before converting; d/lambda can be ~1e4 cycles.
    let cycles = (g.d3d / g.wavelength()).to_f64().unwrap_or(0.0).fract();
    let phase = T::lit(-2.0 * std::f64::consts::PI * cycles);
    let los = Complex::from_polar(T::one(), phase);

    // Always consume two normals so the stream position does not depend on K.
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let sigma = (nlos_power_scale / T::lit(2.0)).sqrt();
    let z = Complex::new(T::lit(re) * sigma, T::lit(im) * sigma);

    Ok(ChannelRealization {
        h: los * los_w + z * nlos_w,
        k_factor,
        nlos_power_scale,
    })
}

/// Transmit power, noise density, bandwidth and path loss of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget<T> {
    /// Watts.
    pub tx_power: T,
    /// W/Hz.
    pub noise_spectral_density: T,
    pub bandwidth_hz: T,
    pub pathloss_db: T,
}

impl<T: Scalar> LinkBudget<T> {
    pub fn new(
        tx_power: T,
        noise_spectral_density: T,
        bandwidth_hz: T,
        pathloss_db: T,
    ) -> Result<Self, ChannelError> {
        let pos = |v: T| v.is_finite() && v > T::zero();
        if !pos(tx_power) || !pos(noise_spectral_density) || !pos(bandwidth_hz) {
            return Err(ChannelError::Budget(format!(
                "power, noise density and bandwidth must be > 0 (P_t={tx_power}, N0={noise_spectral_density}, B={bandwidth_hz})"
            )));
        }
        if !pathloss_db.is_finite() || pathloss_db < T::zero() {
            return Err(ChannelError::Budget(format!("path loss must be >= 0 dB, got {pathloss_db}")));
        }
        Ok(Self { tx_power, noise_spectral_density, bandwidth_hz, pathloss_db })
    }

    /// Linear SNR for a given small-scale power gain `|h|^2`.
    pub fn snr(&self, power_gain: T) -> T {
        let attenuation = T::lit(10.0).powf(-self.pathloss_db / T::lit(10.0));
        self.tx_power * power_gain * attenuation / (self.noise_spectral_density * self.bandwidth_hz)
    }
}

/// Back-solves the transmit power so that the SNR at `|h|^2 = 1` equals `target_snr_db`.
pub fn calibrated_budget<T: Scalar>(
    target_snr_db: T,
    bandwidth_hz: T,
    pathloss_db: T,
) -> Result<LinkBudget<T>, ChannelError> {
    let n0 = T::lit(THERMAL_NOISE_W_PER_HZ);
    let snr = db_to_linear(target_snr_db);
    let tx_power = snr * n0 * bandwidth_hz * db_to_linear(pathloss_db);
    LinkBudget::new(tx_power, n0, bandwidth_hz, pathloss_db)
}

/// Shannon rate `B log2(1 + SNR)` in bits/s.
pub fn link_rate<T: Scalar>(b: &LinkBudget<T>, c: &ChannelRealization<T>) -> T {
    b.bandwidth_hz * (T::one() + b.snr(c.power_gain())).log2()
}

pub fn db_to_linear<T: Scalar>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}
