//! Rate-distortion loss and the Adam training loop.

use std::io::Write;

use rayon::prelude::*;

use crate::channel::LinkParams;
use crate::error::{Error, Result};
use crate::experiment::fmt_sig;
use crate::hyperprior::{neg_log_likelihood_y, neg_log_prior_z, QuantMode};
use crate::model::SystemModel;
use crate::pipeline::{backward, forward, PipelineSettings, RelayLinks, Trace, UpstreamGrads};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::tensor::{FeatureTensor, ImageBatch};

/// Paper-scale defaults: rate weight 8192, learning rate 1e-4, Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Distortion weight; `None` means `1/(3·H·W)` for the model's image size.
    pub eta: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub distance_m: f64,
    pub path_loss: f64,
    pub power_dbm: f64,
    pub noise_dbm: f64,
    pub v1: f64,
    pub v2: f64,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 8192.0,
            eta: None,
            learning_rate: 1e-4,
            epochs: 200,
            seed: 0,
            distance_m: 1.0,
            path_loss: 3.0,
            power_dbm: 0.0,
            noise_dbm: -66.0,
            v1: 0.0,
            v2: 0.0,
            divergence_factor: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("learning_rate", self.learning_rate)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if let Some(e) = self.eta {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Config(format!("eta must be finite and non-negative, got {e}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.v1) || !(0.0..1.0).contains(&self.v2) {
            return Err(Error::Config("compression rates must lie in [0, 1)".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        self.link().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn link(&self) -> Result<LinkParams> {
        LinkParams::from_dbm(self.distance_m, self.path_loss, self.noise_dbm, self.power_dbm)
    }

    pub fn eta_for(&self, height: usize, width: usize) -> f64 {
        self.eta.unwrap_or(1.0 / (3 * height * width) as f64)
    }

    pub fn settings(&self) -> Result<PipelineSettings> {
        let l = self.link()?;
        Ok(PipelineSettings {
            v1: self.v1,
            v2: self.v2,
            quant: QuantMode::Train,
            links: Some(RelayLinks { source_relay: l, relay_destination: l }),
        })
    }
}

/// Loss weights `L = λ·rate + η·SSE`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// `−Σ ln p(ỹ|σ̃) − Σ ln p(z̃)`, in nats.
    pub rate_nats: f64,
    /// Sum of squared errors over all images of the batch.
    pub sse: f64,
    pub mse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn rate_bits(&self) -> f64 {
        self.rate_nats / std::f64::consts::LN_2
    }
}

fn check_prior<T: Scalar>(z_tilde: &FeatureTensor<T>, loc: &[T], scale: &[T]) -> Result<()> {
    if loc.len() != z_tilde.channels() || scale.len() != z_tilde.channels() {
        return Err(Error::Shape(format!(
            "prior has {} locations and {} scales for {} hyper channels",
            loc.len(),
            scale.len(),
            z_tilde.channels()
        )));
    }
    Ok(())
}

/// Rate term in nats.
pub fn rate_loss<T: Scalar>(
    y_tilde: &FeatureTensor<T>,
    sigma: &FeatureTensor<T>,
    z_tilde: &FeatureTensor<T>,
    loc: &[T],
    scale: &[T],
) -> Result<T> {
    Ok(rate_with_grad(y_tilde, sigma, z_tilde, loc, scale)?.0)
}

struct RateGrads<T> {
    y: FeatureTensor<T>,
    sigma: FeatureTensor<T>,
    z: FeatureTensor<T>,
    loc: Vec<T>,
    scale: Vec<T>,
}

fn rate_with_grad<T: Scalar>(
    y_tilde: &FeatureTensor<T>,
    sigma: &FeatureTensor<T>,
    z_tilde: &FeatureTensor<T>,
    loc: &[T],
    scale: &[T],
) -> Result<(T, RateGrads<T>)> {
    y_tilde.check_same_shape(sigma)?;
    check_prior(z_tilde, loc, scale)?;
    let mut total = T::zero();
    let mut gy = Vec::with_capacity(y_tilde.len());
    let mut gs = Vec::with_capacity(y_tilde.len());
    for (&y, &s) in y_tilde.data().iter().zip(sigma.data()) {
        let (v, dy, ds) = neg_log_likelihood_y(y, s);
        total += v;
        gy.push(dy);
        gs.push(ds);
    }
    let mut gz = vec![T::zero(); z_tilde.len()];
    let mut gl = vec![T::zero(); loc.len()];
    let mut gsc = vec![T::zero(); scale.len()];
    let plane = z_tilde.plane();
    for c in 0..z_tilde.channels() {
        for i in 0..plane {
            let k = c * plane + i;
            let (v, dz, dl, ds) = neg_log_prior_z(z_tilde.data()[k], loc[c], scale[c]);
            total += v;
            gz[k] = dz;
            gl[c] += dl;
            gsc[c] += ds;
        }
    }
    let grads = RateGrads {
        y: y_tilde.with_data(gy),
        sigma: sigma.with_data(gs),
        z: z_tilde.with_data(gz),
        loc: gl,
        scale: gsc,
    };
    Ok((total, grads))
}

fn breakdown<T: Scalar>(trace: &Trace<T>, model: &SystemModel<T>, batch: &ImageBatch<T>, w: LossWeights) -> Result<(LossBreakdown, RateGrads<T>)> {
    let scales = model.hyper.prior_scales();
    let (rate, rg) = rate_with_grad(&trace.y_tilde, &trace.sigma, &trace.z_tilde, &model.hyper.prior_loc, &scales)?;
    let mut sse = T::zero();
    for (r, x) in trace.recon.iter().zip(batch.images()) {
        sse += r.data().iter().zip(x.data()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
    }
    let (rate, sse) = (rate.to_f64_lossy(), sse.to_f64_lossy());
    Ok((
        LossBreakdown {
            rate_nats: rate,
            sse,
            mse: sse / batch.value_count() as f64,
            total: w.lambda * rate + w.eta * sse,
        },
        rg,
    ))
}

/// Loss of one group without gradients.
pub fn total_loss<T: Scalar>(
    model: &SystemModel<T>,
    batch: &ImageBatch<T>,
    weights: LossWeights,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<LossBreakdown> {
    let trace = forward(model, batch, settings, seed)?;
    Ok(breakdown(&trace, model, batch, weights)?.0)
}

/// Loss of one group and the gradient of its total with respect to every
/// parameter.
pub fn loss_and_grad<T: Scalar>(
    model: &SystemModel<T>,
    batch: &ImageBatch<T>,
    weights: LossWeights,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<(LossBreakdown, SystemModel<T>)> {
    let trace = forward(model, batch, settings, seed)?;
    let (loss, rg) = breakdown(&trace, model, batch, weights)?;
    let lam = T::lit(weights.lambda);
    let two_eta = T::lit(2.0 * weights.eta);
    let recon = trace
        .recon
        .iter()
        .zip(batch.images())
        .map(|(r, x)| r.zip_map(x, |a, b| two_eta * (a - b)))
        .collect::<Result<Vec<_>>>()?;
    let up = UpstreamGrads {
        recon,
        y_tilde: rg.y.map(|g| g * lam),
        sigma: rg.sigma.map(|g| g * lam),
        z_tilde: rg.z.map(|g| g * lam),
        prior_loc: rg.loc.iter().map(|&g| g * lam).collect(),
        prior_scale: rg.scale.iter().map(|&g| g * lam).collect(),
    };
    Ok((loss, backward(model, &trace, &up)?))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// One row of the loss curve, averaged over the dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub rate_bits: f64,
    pub mse: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<LossRecord>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.curve.first().map_or(f64::NAN, |r| r.total)
    }

    /// Mean total loss over the last `window` steps.
    pub fn final_loss(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.curve.len().max(1));
        let tail = &self.curve[self.curve.len() - w..];
        tail.iter().map(|r| r.total).sum::<f64>() / w as f64
    }

    /// Writes `step,rate_bits,mse,total`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "rate_bits", "mse", "total"])?;
        for r in &self.curve {
            out.write_record([
                r.step.to_string(),
                fmt_sig(r.rate_bits),
                fmt_sig(r.mse),
                fmt_sig(r.total),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn nonfinite_report(model: &SystemModel<f64>, grad: &[f64]) -> String {
    let bad: Vec<String> = model
        .param_layout()
        .into_iter()
        .filter(|(_, off, len)| grad[*off..off + len].iter().any(|g| !g.is_finite()))
        .map(|(name, _, _)| name)
        .collect();
    format!("non-finite gradient in {}", if bad.is_empty() { "no parameter array".into() } else { bad.join(", ") })
}

/// Dataset-averaged loss and gradient for one step.
pub fn dataset_loss_and_grad(
    model: &SystemModel<f64>,
    data: &[ImageBatch<f64>],
    weights: LossWeights,
    settings: &PipelineSettings,
    step_seed: u64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let parts = data
        .par_iter()
        .enumerate()
        .map(|(g, batch)| {
            let (loss, grad) = loss_and_grad(model, batch, weights, settings, derive_seed(step_seed, &[g as u64]))?;
            Ok((loss, grad.to_flat()))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / data.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = LossBreakdown::default();
    for (l, g) in &parts {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b * inv;
        }
        loss.rate_nats += l.rate_nats * inv;
        loss.sse += l.sse * inv;
        loss.mse += l.mse * inv;
        loss.total += l.total * inv;
    }
    Ok((loss, grad))
}

/// Full-batch training: every step uses the whole dataset once. The loss
/// recorded for a step is evaluated before that step's update.
pub fn train(model: &mut SystemModel<f64>, data: &[ImageBatch<f64>], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let weights = LossWeights { lambda: config.lambda, eta: config.eta_for(model.arch.image_height, model.arch.image_width) };
    let settings = config.settings()?;
    let mut params = model.to_flat();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut initial = None;
    for step in 0..config.epochs {
        let (loss, grad) = dataset_loss_and_grad(model, data, weights, &settings, derive_seed(config.seed, &[1, step as u64]))?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("loss is {} at step {step} (rate {} nats, sse {})", loss.total, loss.rate_nats, loss.sse)));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("step {step}: {}", nonfinite_report(model, &grad))));
        }
        let init = *initial.get_or_insert(loss.total);
        if loss.total > config.divergence_factor * init {
            return Err(Error::Numeric(format!(
                "diverged at step {step}: loss {:.6e} exceeds {:.0e} x initial {:.6e}",
                loss.total, config.divergence_factor, init
            )));
        }
        log::debug!("step {step}: total {:.6e} rate {:.3} bits mse {:.3e}", loss.total, loss.rate_bits(), loss.mse);
        curve.push(LossRecord { step, rate_bits: loss.rate_bits(), mse: loss.mse, total: loss.total });
        adam.step(&mut params, &grad);
        model.set_flat(&params)?;
    }
    Ok(TrainReport { curve })
}

/// Fresh model initialized from `config.seed`.
pub fn init_model(arch: &crate::codec::ArchConfig, seed: u64) -> Result<SystemModel<f64>> {
    SystemModel::init(arch, &mut stream(seed, &[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ArchConfig;
    use crate::hyperprior::{likelihood_y, prior_z};
    use crate::synthetic::synthetic_groups;

    #[test]
    fn rate_loss_examples() {
        // σ chosen so every box has mass exactly ½
        let s = 0.5 / 0.674_489_750_196_081_7;
        let y = FeatureTensor::<f64>::zeros(10, 1, 1);
        let sigma = FeatureTensor::filled(10, 1, 1, s);
        let z = FeatureTensor::<f64>::zeros(0, 1, 1);
        let r = rate_loss(&y, &sigma, &z, &[], &[]).unwrap();
        assert!((r - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn rate_loss_matches_elementwise_oracle() {
        let mut rng = stream(3, &[]);
        use rand::Rng;
        let y = FeatureTensor::from_fn(3, 4, 5, |_, _, _| rng.random_range(-6i32..6) as f64);
        let sigma = FeatureTensor::from_fn(3, 4, 5, |_, _, _| rng.random_range(0.05..8.0));
        let z = FeatureTensor::from_fn(2, 2, 3, |_, _, _| rng.random_range(-4i32..4) as f64);
        let loc = [0.3, -0.2];
        let scale = [0.7, 2.5];
        let mut oracle = 0.0;
        for i in 0..y.len() {
            oracle -= likelihood_y(y.data()[i], sigma.data()[i]).unwrap().ln();
        }
        for c in 0..2 {
            for v in z.channel(c).unwrap() {
                oracle -= prior_z(*v, loc[c], scale[c]).unwrap().ln();
            }
        }
        let r = rate_loss(&y, &sigma, &z, &loc, &scale).unwrap();
        assert!((r - oracle).abs() < 1e-10);
        assert!(r >= 0.0);
        assert!(rate_loss(&y, &sigma, &z, &loc[..1], &scale).is_err());
    }

    fn tiny_setup() -> (SystemModel<f64>, ImageBatch<f64>, PipelineSettings) {
        let arch = ArchConfig::tiny();
        let model = init_model(&arch, 4).unwrap();
        let batch = synthetic_groups(1, 2, 32, 32, 2).unwrap().remove(0);
        (model, batch, TrainConfig::default().settings().unwrap())
    }

    #[test]
    fn loss_weights_select_terms() {
        let (model, batch, settings) = tiny_setup();
        let full = total_loss(&model, &batch, LossWeights { lambda: 2.0, eta: 3.0 }, &settings, 1).unwrap();
        let d = total_loss(&model, &batch, LossWeights { lambda: 0.0, eta: 3.0 }, &settings, 1).unwrap();
        let r = total_loss(&model, &batch, LossWeights { lambda: 2.0, eta: 0.0 }, &settings, 1).unwrap();
        assert_eq!(d.total, 3.0 * full.sse);
        assert_eq!(r.total, 2.0 * full.rate_nats);
        assert!((full.total - d.total - r.total).abs() < 1e-9 * full.total);
    }

    #[test]
    fn gradient_spot_check() {
        let (model, batch, settings) = tiny_setup();
        let w = LossWeights { lambda: 1e-3, eta: 1.0 / 3072.0 };
        let (_, grad) = loss_and_grad(&model, &batch, w, &settings, 7).unwrap();
        let g = grad.to_flat();
        let base = model.to_flat();
        let h = 1e-4;
        for &i in &[0usize, 17, base.len() / 2, base.len() - 3] {
            let eval = |d: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[i] += d;
                m.set_flat(&p).unwrap();
                total_loss(&m, &batch, w, &settings, 7).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-8);
            assert!((fd - g[i]).abs() / denom < 1e-3, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut model, batch, _) = tiny_setup();
        let before = model.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 2, ..TrainConfig::default() };
        train(&mut model, &[batch], &cfg).unwrap();
        assert_eq!(model.to_flat(), before.to_flat());
    }

    #[test]
    fn training_is_deterministic() {
        let (model, batch, _) = tiny_setup();
        let cfg = TrainConfig { lambda: 1e-3, learning_rate: 1e-2, epochs: 3, seed: 5, ..TrainConfig::default() };
        let (mut a, mut b) = (model.clone(), model);
        let ra = train(&mut a, std::slice::from_ref(&batch), &cfg).unwrap();
        let rb = train(&mut b, std::slice::from_ref(&batch), &cfg).unwrap();
        assert_eq!(ra.curve, rb.curve);
        assert_eq!(a, b);
        let mut buf = Vec::new();
        ra.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn divergence_aborts() {
        let (mut model, batch, _) = tiny_setup();
        let cfg = TrainConfig { lambda: 1e-3, learning_rate: 50.0, epochs: 30, divergence_factor: 1.5, ..TrainConfig::default() };
        let r = train(&mut model, &[batch], &cfg);
        assert!(matches!(r, Err(Error::Numeric(_))), "{r:?}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { v1: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { distance_m: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().eta_for(512, 1024), 1.0 / (3.0 * 512.0 * 1024.0));
    }
}
