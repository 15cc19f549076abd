//! Hyperprior entropy model.
//!
//! `h_a` maps the encoded feature `Y` to hyper-latent `Z`; `h_s` maps the
//! quantized `Z̃` to per-element scales `σ̃`. Each element of `Ỹ` is modeled as
//! `N(0, σ̃²)` convolved with `U(-½, ½)`, and each element of `Z̃` by a
//! per-channel logistic convolved with the same box. The self-information of
//! `Ỹ` under this model is the importance map used for compression.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::codec::ArchConfig;
use crate::error::{Error, Result};
use crate::nn::{Stack, Tape};
use crate::scalar::{logistic_cdf, normal_cdf, normal_pdf, softplus, softplus_grad, softplus_inv, Scalar};
use crate::tensor::FeatureTensor;

/// Lower clamp applied to every modeled probability (2^-50).
pub const LIKELIHOOD_FLOOR: f64 = 8.881_784_197_001_252e-16;
/// Floor added to softplus outputs used as scales.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive `U(-½, ½)` noise; gradients pass straight through.
    Train,
    /// Round to nearest integer, ties to even.
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams<T> {
    pub h_a: Stack<T>,
    pub h_s: Stack<T>,
    /// Per-channel location of the `Z̃` prior.
    pub prior_loc: Vec<T>,
    /// Per-channel raw scale: `scale = softplus(raw) + 1e-6`.
    pub prior_scale_raw: Vec<T>,
}

impl<T: Scalar> HyperParams<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        let hc = arch.hyper_channels;
        Ok(Self {
            h_a: Stack::from_specs(&arch.h_a_specs())?,
            h_s: Stack::from_specs(&arch.h_s_specs())?,
            prior_loc: vec![T::zero(); hc],
            prior_scale_raw: vec![softplus_inv(T::one()); hc],
        })
    }

    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let hc = arch.hyper_channels;
        Ok(Self {
            h_a: Stack::init(&arch.h_a_specs(), rng)?,
            h_s: Stack::init(&arch.h_s_specs(), rng)?,
            prior_loc: vec![T::zero(); hc],
            prior_scale_raw: vec![softplus_inv(T::one()); hc],
        })
    }

    pub fn prior_scales(&self) -> Vec<T> {
        self.prior_scale_raw.iter().map(|&r| softplus(r) + T::lit(SCALE_FLOOR)).collect()
    }

    /// `Z = h_a(Y)`.
    pub fn hyper_encode(&self, y: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        check_channels(y, self.h_a.in_channels(), "hyper analysis")?;
        self.h_a.forward(y)
    }

    pub fn hyper_encode_recorded(&self, y: &FeatureTensor<T>, tape: &mut Tape<T>) -> Result<FeatureTensor<T>> {
        check_channels(y, self.h_a.in_channels(), "hyper analysis")?;
        self.h_a.forward_recorded(y, tape)
    }

    /// `σ̃ = softplus(h_s(Z̃)) + 1e-6`, strictly positive.
    pub fn hyper_decode(&self, z_tilde: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        check_channels(z_tilde, self.h_s.in_channels(), "hyper synthesis")?;
        Ok(positive_scale(&self.h_s.forward(z_tilde)?))
    }

    /// Recorded variant; returns `(σ̃, pre-softplus output)`.
    pub fn hyper_decode_recorded(
        &self,
        z_tilde: &FeatureTensor<T>,
        tape: &mut Tape<T>,
    ) -> Result<(FeatureTensor<T>, FeatureTensor<T>)> {
        check_channels(z_tilde, self.h_s.in_channels(), "hyper synthesis")?;
        let raw = self.h_s.forward_recorded(z_tilde, tape)?;
        Ok((positive_scale(&raw), raw))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            h_a: self.h_a.zeros_like(),
            h_s: self.h_s.zeros_like(),
            prior_loc: vec![T::zero(); self.prior_loc.len()],
            prior_scale_raw: vec![T::zero(); self.prior_scale_raw.len()],
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.h_a.visit_params("h_a.", f);
        self.h_s.visit_params("h_s.", f);
        f("prior.loc", &[self.prior_loc.len()], &self.prior_loc);
        f("prior.scale_raw", &[self.prior_scale_raw.len()], &self.prior_scale_raw);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.h_a.visit_params_mut("h_a.", f);
        self.h_s.visit_params_mut("h_s.", f);
        let n = self.prior_loc.len();
        f("prior.loc", &[n], &mut self.prior_loc);
        f("prior.scale_raw", &[n], &mut self.prior_scale_raw);
    }
}

fn check_channels<T: Scalar>(t: &FeatureTensor<T>, expected: usize, what: &str) -> Result<()> {
    if t.channels() != expected {
        return Err(Error::Shape(format!("{what} expects {expected} channels, got {}", t.channels())));
    }
    Ok(())
}

fn positive_scale<T: Scalar>(raw: &FeatureTensor<T>) -> FeatureTensor<T> {
    raw.map(|v| softplus(v) + T::lit(SCALE_FLOOR))
}

/// Derivative of the scale map used by [`HyperParams::hyper_decode`].
pub fn positive_scale_grad<T: Scalar>(raw: T) -> T {
    softplus_grad(raw)
}

/// Uniform-noise (train) or rounding (test) quantization proxy.
pub fn quantize<T: Scalar, R: Rng + ?Sized>(t: &FeatureTensor<T>, mode: QuantMode, rng: &mut R) -> FeatureTensor<T> {
    match mode {
        QuantMode::Test => t.map(round_half_even),
        QuantMode::Train => {
            let u = Uniform::new(-0.5f64, 0.5).expect("valid uniform bounds");
            t.map(|v| v + T::lit(u.sample(rng)))
        }
    }
}

pub fn round_half_even<T: Scalar>(x: T) -> T {
    let r = x.round();
    let half = T::lit(0.5);
    if (r - x).abs() == half && (r * half).fract() != T::zero() {
        r - (r - x).signum()
    } else {
        r
    }
}

/// Probability mass of a box of width 1 centered at `y` under `N(0, σ²)`,
/// and its partial derivatives `(p, ∂p/∂y, ∂p/∂σ)` before clamping.
fn gaussian_box<T: Scalar>(y: T, sigma: T) -> (T, T, T) {
    let half = T::lit(0.5);
    // p is symmetric in y; evaluate on the negative side so both CDF values
    // sit in the lower tail where erfc keeps full relative precision
    let neg = y > T::zero();
    let m = if neg { -y } else { y };
    let a = (m + half) / sigma;
    let b = (m - half) / sigma;
    let p = normal_cdf(a) - normal_cdf(b);
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    let dp_dm = (pa - pb) / sigma;
    let dp_ds = (pb * b - pa * a) / sigma;
    (p, if neg { -dp_dm } else { dp_dm }, dp_ds)
}

/// Same as [`gaussian_box`] for a logistic with location `loc` and scale `s`.
fn logistic_box<T: Scalar>(z: T, loc: T, s: T) -> (T, T, T, T) {
    let half = T::lit(0.5);
    let u = z - loc;
    let neg = u > T::zero();
    let m = if neg { -u } else { u };
    let a = (m + half) / s;
    let b = (m - half) / s;
    let (la, lb) = (logistic_cdf(a), logistic_cdf(b));
    let p = la - lb;
    let (da, db) = (la * (T::one() - la), lb * (T::one() - lb));
    let dp_dm = (da - db) / s;
    let dp_ds = (db * b - da * a) / s;
    let dp_du = if neg { -dp_dm } else { dp_dm };
    // (p, ∂p/∂z, ∂p/∂loc, ∂p/∂s)
    (p, dp_du, -dp_du, dp_ds)
}

/// `Φ((ỹ+½)/σ) − Φ((ỹ−½)/σ)`, clamped below at 2⁻⁵⁰.
pub fn likelihood_y<T: Scalar>(y_tilde: T, sigma: T) -> Result<T> {
    if !(sigma > T::zero()) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(gaussian_box(y_tilde, sigma).0.max(T::lit(LIKELIHOOD_FLOOR)))
}

/// `−ln p(ỹ | σ)` with its gradients `(value, ∂/∂ỹ, ∂/∂σ)`; zero gradient
/// where the clamp is active.
pub fn neg_log_likelihood_y<T: Scalar>(y_tilde: T, sigma: T) -> (T, T, T) {
    let (p, dy, ds) = gaussian_box(y_tilde, sigma);
    let floor = T::lit(LIKELIHOOD_FLOOR);
    if p <= floor {
        (-floor.ln(), T::zero(), T::zero())
    } else {
        (-p.ln(), -dy / p, -ds / p)
    }
}

/// Logistic prior mass of `z̃`, clamped below at 2⁻⁵⁰.
pub fn prior_z<T: Scalar>(z_tilde: T, loc: T, scale: T) -> Result<T> {
    if !(scale > T::zero()) {
        return Err(Error::Parameter(format!("prior scale must be positive, got {scale}")));
    }
    Ok(logistic_box(z_tilde, loc, scale).0.max(T::lit(LIKELIHOOD_FLOOR)))
}

/// `−ln p(z̃)` with gradients `(value, ∂/∂z̃, ∂/∂loc, ∂/∂scale)`.
pub fn neg_log_prior_z<T: Scalar>(z_tilde: T, loc: T, scale: T) -> (T, T, T, T) {
    let (p, dz, dl, ds) = logistic_box(z_tilde, loc, scale);
    let floor = T::lit(LIKELIHOOD_FLOOR);
    if p <= floor {
        (-floor.ln(), T::zero(), T::zero(), T::zero())
    } else {
        (-p.ln(), -dz / p, -dl / p, -ds / p)
    }
}

/// Self-information `−log₂ p(ỹ | σ̃)` per element, in bits.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap<T>(pub FeatureTensor<T>);

impl<T: Scalar> ImportanceMap<T> {
    pub fn tensor(&self) -> &FeatureTensor<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[T] {
        self.0.data()
    }
}

pub fn importance<T: Scalar>(y_tilde: &FeatureTensor<T>, sigma: &FeatureTensor<T>) -> Result<ImportanceMap<T>> {
    y_tilde.check_same_shape(sigma)?;
    let bits = y_tilde
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&y, &s)| likelihood_y(y, s).map(|p| -p.log2()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceMap(y_tilde.with_data(bits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson integration of the standard normal density.
    fn simpson_normal(lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn center_bin_matches_quadrature() {
        let oracle = simpson_normal(-0.5, 0.5, 1000);
        let p = likelihood_y(0.0, 1.0).unwrap();
        assert!((p - oracle).abs() < 1e-10);
        assert!((p - 0.3829).abs() < 1e-4);
    }

    #[test]
    fn likelihood_normalizes() {
        for &s in &[0.1, 1.0, 10.0] {
            let total: f64 = (-200..=200).map(|y| likelihood_y(y as f64, s).unwrap()).sum();
            // mass outside the 2^-50 clamp is negligible; clamped tails add
            // at most 401 * 2^-50
            assert!((total - 1.0).abs() < 1e-9, "sigma {s}: {total}");
        }
    }

    #[test]
    fn wide_sigma_asymptotic() {
        let p = likelihood_y(0.0, 100.0).unwrap();
        let approx = 1.0 / (100.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((p / approx - 1.0).abs() < 0.01);
    }

    #[test]
    fn non_positive_scales_rejected() {
        assert!(matches!(likelihood_y(0.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(likelihood_y(0.0, -1.0), Err(Error::Parameter(_))));
        assert!(matches!(prior_z(0.0, 0.0, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn prior_examples() {
        let total: f64 = (-200..=200).map(|z| prior_z(z as f64, 0.0, 1.0).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let l = |x: f64| 1.0 / (1.0 + (-x).exp());
        let p = prior_z(0.0, 0.0, 1.0).unwrap();
        assert!((p - (l(0.5) - l(-0.5))).abs() < 1e-15);
        assert!((p - 0.2449).abs() < 1e-4);
        for z in [0.3, 1.0, 2.7, 9.0] {
            assert_eq!(prior_z(z, 0.0, 1.3).unwrap(), prior_z(-z, 0.0, 1.3).unwrap());
        }
        for &s in &[0.1, 10.0] {
            let total: f64 = (-1000..=1000).map(|z| prior_z(z as f64, 0.3, s).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn importance_examples() {
        let y = FeatureTensor::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        // sigma chosen so the center bin has mass 0.5 and 0.25
        let sigma_half: f64 = 0.5 / 0.674_489_750_196_081_7;
        let sigma_quarter = 0.5 / 0.318_639_363_964_375_4;
        let s = FeatureTensor::new(1, 1, 2, vec![sigma_half, sigma_quarter]).unwrap();
        let imp = importance(&y, &s).unwrap();
        assert!((imp.values()[0] - 1.0).abs() < 1e-12);
        assert!((imp.values()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn importance_grows_in_the_tails() {
        for &s in &[0.3, 1.0, 4.0] {
            let mut prev = -1.0;
            for k in 0..60 {
                let y = k as f64 * 0.25;
                let bits = -likelihood_y(y, s).unwrap().log2();
                assert!(bits >= prev, "sigma {s}, y {y}");
                assert!(bits.is_finite() && bits >= 0.0);
                prev = bits;
            }
        }
    }

    #[test]
    fn likelihood_gradients_match_finite_differences() {
        let h = 1e-6;
        for &(y, s) in &[(0.0, 1.0), (0.7, 0.4), (-2.3, 1.7), (3.2, 0.9), (0.2, 5.0)] {
            let (_, dy, ds) = neg_log_likelihood_y(y, s);
            let f = |y: f64, s: f64| neg_log_likelihood_y(y, s).0;
            let fdy = (f(y + h, s) - f(y - h, s)) / (2.0 * h);
            let fds = (f(y, s + h) - f(y, s - h)) / (2.0 * h);
            assert!((dy - fdy).abs() <= 1e-3 * dy.abs().max(fdy.abs()).max(1e-6), "dy at {y},{s}");
            assert!((ds - fds).abs() <= 1e-3 * ds.abs().max(fds.abs()).max(1e-6), "ds at {y},{s}");
        }
        for &(z, l, s) in &[(0.0, 0.0, 1.0), (1.3, -0.2, 0.6), (-2.0, 0.5, 2.0)] {
            let (_, dz, dl, ds) = neg_log_prior_z(z, l, s);
            let f = |z: f64, l: f64, s: f64| neg_log_prior_z(z, l, s).0;
            let fdz = (f(z + h, l, s) - f(z - h, l, s)) / (2.0 * h);
            let fdl = (f(z, l + h, s) - f(z, l - h, s)) / (2.0 * h);
            let fds = (f(z, l, s + h) - f(z, l, s - h)) / (2.0 * h);
            for (a, b) in [(dz, fdz), (dl, fdl), (ds, fds)] {
                assert!((a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-6));
            }
        }
    }

    #[test]
    fn quantize_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = FeatureTensor::new(1, 1, 5, vec![0.4, 0.6, -1.5, 0.5, 2.5]).unwrap();
        let q = quantize(&t, QuantMode::Test, &mut rng);
        assert_eq!(q.data(), &[0.0, 1.0, -2.0, 0.0, 2.0]);

        let big = FeatureTensor::from_fn(2, 8, 8, |c, y, x| (c * 64 + y * 8 + x) as f64 * 0.37);
        let n = quantize(&big, QuantMode::Train, &mut rng);
        assert!(n.data().iter().zip(big.data()).all(|(a, b)| (a - b).abs() <= 0.5));
        let a = quantize(&big, QuantMode::Train, &mut ChaCha8Rng::seed_from_u64(42));
        let b = quantize(&big, QuantMode::Train, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn hyper_shapes_and_zero_params() {
        let arch = ArchConfig::desk();
        let hp = HyperParams::<f64>::zeros(&arch).unwrap();
        let y = FeatureTensor::filled(12, 4, 8, 1.0);
        let z = hp.hyper_encode(&y).unwrap();
        assert_eq!(z.shape(), (4, 1, 2));
        assert!(z.data().iter().all(|&v| v == 0.0));
        let sigma = hp.hyper_decode(&z).unwrap();
        assert_eq!(sigma.shape(), (12, 4, 8));
        assert!(sigma.data().iter().all(|&s| (s - (std::f64::consts::LN_2 + 1e-6)).abs() < 1e-12));

        let full = ArchConfig::full_scale();
        let hp = HyperParams::<f64>::zeros(&full).unwrap();
        assert_eq!(hp.h_a.output_shape((96, 64, 128)).unwrap(), (32, 16, 32));
        assert_eq!(hp.h_s.output_shape((32, 16, 32)).unwrap(), (96, 64, 128));
    }

    #[test]
    fn sigma_positive_for_random_params() {
        let arch = ArchConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hp = HyperParams::<f64>::init(&arch, &mut rng).unwrap();
        let z = FeatureTensor::from_fn(4, 1, 2, |c, _, x| (c as f64 - 2.0) * 40.0 + x as f64);
        let sigma = hp.hyper_decode(&z).unwrap();
        assert!(sigma.data().iter().all(|&s| s >= 1e-6));
    }
}
