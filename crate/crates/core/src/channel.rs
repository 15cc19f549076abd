//! Block-fading link with additive Gaussian noise and zero-forcing receivers.
//!
//! The gain `h` is a single real Gaussian draw with variance `d^-a`, held for
//! the whole payload. Total transmit power is fixed, so each of the `K`
//! symbols gets `P/K`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gains with magnitude below this are reported as a deep fade.
pub const DEEP_FADE_GAIN: f64 = 1e-12;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// One hop's large-scale parameters. Powers are in watts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkParams {
    pub distance: f64,
    pub path_loss: f64,
    pub noise_power: f64,
    pub total_power: f64,
}

impl LinkParams {
    pub fn new(distance: f64, path_loss: f64, noise_power: f64, total_power: f64) -> Result<Self> {
        let link = Self { distance, path_loss, noise_power, total_power };
        link.validate()?;
        Ok(link)
    }

    pub fn from_dbm(distance: f64, path_loss: f64, noise_dbm: f64, power_dbm: f64) -> Result<Self> {
        Self::new(distance, path_loss, dbm_to_watts(noise_dbm), dbm_to_watts(power_dbm))
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("distance", self.distance),
            ("path-loss exponent", self.path_loss),
            ("noise power", self.noise_power),
            ("transmit power", self.total_power),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// `E[h²] = d^-a`.
    pub fn fading_variance(&self) -> f64 {
        self.distance.powf(-self.path_loss)
    }

    /// Per-symbol power for a payload of `k` symbols.
    pub fn per_symbol_power(&self, k: usize) -> f64 {
        self.total_power / k as f64
    }

    /// Average per-symbol SNR in dB, `10·log10(P̄·E[h²]/N)`.
    pub fn average_snr_db(&self, k: usize) -> f64 {
        10.0 * (self.per_symbol_power(k) * self.fading_variance() / self.noise_power).log10()
    }
}

/// Scales `s` to unit mean square. Returns the normalized vector and the
/// RMS scale needed to undo it.
pub fn normalize_power<T: Scalar>(s: &[T]) -> Result<(Vec<T>, T)> {
    if s.is_empty() {
        return Err(Error::Argument("cannot normalize an empty payload".into()));
    }
    let ms = s.iter().map(|&v| v * v).sum::<T>() / T::from_usize_lossy(s.len());
    if ms == T::zero() {
        return Err(Error::DegenerateInput("payload is all zeros".into()));
    }
    let scale = ms.sqrt();
    Ok((s.iter().map(|&v| v / scale).collect(), scale))
}

pub fn sample_fading<R: Rng + ?Sized>(distance: f64, path_loss: f64, rng: &mut R) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Parameter(format!("distance must be positive, got {distance}")));
    }
    let std = distance.powf(-path_loss).sqrt();
    let n = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(n.sample(rng))
}

/// `√P̄·h·s + n` with `n ~ N(0, noise_power)` i.i.d. Returns the received
/// vector and the noise realization.
pub fn transmit<T: Scalar, R: Rng + ?Sized>(
    s: &[T],
    gain: f64,
    per_symbol_power: f64,
    noise_power: f64,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    if s.is_empty() {
        return Err(Error::Argument("cannot transmit an empty payload".into()));
    }
    if noise_power < 0.0 {
        return Err(Error::Parameter(format!("noise power must be non-negative, got {noise_power}")));
    }
    let amp = T::lit(per_symbol_power.sqrt() * gain);
    let std = noise_power.sqrt();
    let noise: Vec<T> = s
        .iter()
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(std * z)
        })
        .collect();
    let r = s.iter().zip(&noise).map(|(&v, &n)| amp * v + n).collect();
    Ok((r, noise))
}

/// Zero-forcing: `r·scale/(√P̄·h)`.
pub fn equalize<T: Scalar>(r: &[T], gain: f64, per_symbol_power: f64, scale: T) -> Result<Vec<T>> {
    if gain.abs() < DEEP_FADE_GAIN {
        return Err(Error::DeepFade { gain });
    }
    let inv = scale / T::lit(per_symbol_power.sqrt() * gain);
    Ok(r.iter().map(|&v| v * inv).collect())
}

/// Everything needed to replay or differentiate one hop.
#[derive(Clone, Debug, PartialEq)]
pub struct HopRecord<T> {
    pub gain: f64,
    pub per_symbol_power: f64,
    pub scale: T,
    pub noise: Vec<T>,
    /// Instantaneous SNR `P̄h²/N` in dB.
    pub snr_db: f64,
}

/// Normalize, draw a fading gain, transmit, then equalize. The gain is drawn
/// before the noise from the same stream, so one seeded RNG per hop fixes
/// the whole realization.
pub fn hop<T: Scalar, R: Rng + ?Sized>(s: &[T], link: &LinkParams, rng: &mut R) -> Result<(Vec<T>, HopRecord<T>)> {
    link.validate()?;
    let (unit, scale) = normalize_power(s)?;
    let gain = sample_fading(link.distance, link.path_loss, rng)?;
    let p_bar = link.per_symbol_power(s.len());
    let (r, noise) = transmit(&unit, gain, p_bar, link.noise_power, rng)?;
    let est = equalize(&r, gain, p_bar, scale)?;
    let snr_db = 10.0 * (p_bar * gain * gain / link.noise_power).log10();
    Ok((est, HopRecord { gain, per_symbol_power: p_bar, scale, noise, snr_db }))
}

/// Gradient of [`hop`]'s output w.r.t. its input.
///
/// The estimate is `s + n·scale(s)/(√P̄h)`, and `∂scale/∂s = s/(K·scale)`.
pub fn hop_backward<T: Scalar>(s: &[T], rec: &HopRecord<T>, grad_out: &[T]) -> Vec<T> {
    let k = T::from_usize_lossy(s.len());
    let c = T::lit(1.0 / (rec.per_symbol_power.sqrt() * rec.gain));
    let gn: T = grad_out.iter().zip(&rec.noise).map(|(&g, &n)| g * n).sum();
    let coef = gn * c / (k * rec.scale);
    grad_out.iter().zip(s).map(|(&g, &v)| g + coef * v).collect()
}
