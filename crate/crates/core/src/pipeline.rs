//! Source → relay → destination pipeline with a recorded forward pass and
//! its reverse pass.

use crate::channel::{hop, HopRecord, LinkParams};
use crate::codec::CodecParams;
use crate::error::{Error, Result};
use crate::hec::{compress_c1, compress_c2, reshape_c1_inv, reshape_c2_inv, CompressedPayload, MaskPlan};
use crate::hyperprior::{importance, positive_scale_grad, quantize, HyperParams, ImportanceMap, QuantMode};
use crate::model::SystemModel;
use crate::nn::{Stack, Tape};
use crate::rng::{stream, StreamRng};
use crate::scalar::Scalar;
use crate::shared::{merge, merge_backward, pairwise_min_rho, partition, split_canonical, split_canonical_backward};
use crate::shared::{ChannelPartition, PearsonVector};
use crate::tensor::{FeatureTensor, ImageBatch};

/// Both hops of the relay link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelayLinks {
    pub source_relay: LinkParams,
    pub relay_destination: LinkParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineSettings {
    pub v1: f64,
    pub v2: f64,
    pub quant: QuantMode,
    /// `None` bypasses both channels (payloads arrive unchanged).
    pub links: Option<RelayLinks>,
}

/// What happened on one hop.
#[derive(Clone, Debug, PartialEq)]
pub enum HopState<T> {
    Bypassed,
    /// Nothing to send: empty or all-zero payload; the receiver sees zeros.
    Silent,
    Sent(HopRecord<T>),
    /// Gain below the deep-fade threshold; the payload is replaced by zeros.
    DeepFade { gain: f64 },
}

impl<T: Scalar> HopState<T> {
    pub fn snr_db(&self) -> Option<f64> {
        match self {
            HopState::Sent(r) => Some(r.snr_db),
            _ => None,
        }
    }

    pub fn gain(&self) -> Option<f64> {
        match self {
            HopState::Sent(r) => Some(r.gain),
            HopState::DeepFade { gain } => Some(*gain),
            _ => None,
        }
    }
}

/// Everything the forward pass produced, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub partition: ChannelPartition,
    pub y: FeatureTensor<T>,
    pub z_tilde: FeatureTensor<T>,
    pub sigma: FeatureTensor<T>,
    pub y_tilde: FeatureTensor<T>,
    pub importance: ImportanceMap<T>,
    pub plan1: MaskPlan<T>,
    pub plan2: MaskPlan<T>,
    pub payload1: CompressedPayload<T>,
    pub payload2: CompressedPayload<T>,
    pub hop1: HopState<T>,
    pub hop2: HopState<T>,
    pub y_hat: FeatureTensor<T>,
    pub recon: Vec<FeatureTensor<T>>,
    sigma_raw: FeatureTensor<T>,
    lt_e_tapes: Vec<Tape<T>>,
    a_e_tape: Tape<T>,
    h_a_tape: Tape<T>,
    h_s_tape: Tape<T>,
    a_d_tape: Tape<T>,
    lt_d_tapes: Vec<Tape<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn deep_fade(&self) -> bool {
        matches!(self.hop1, HopState::DeepFade { .. }) || matches!(self.hop2, HopState::DeepFade { .. })
    }

    /// Payload sizes `(K1, K2)`.
    pub fn payload_sizes(&self) -> (usize, usize) {
        (self.payload1.len(), self.payload2.len())
    }

    pub fn recon_batch(&self) -> Result<ImageBatch<T>> {
        ImageBatch::new(self.recon.clone())
    }
}

fn send<T: Scalar>(
    payload: &CompressedPayload<T>,
    link: Option<&LinkParams>,
    rng: &mut StreamRng,
) -> Result<(CompressedPayload<T>, HopState<T>)> {
    let Some(link) = link else {
        return Ok((payload.clone(), HopState::Bypassed));
    };
    let zeros = CompressedPayload { values: vec![T::zero(); payload.len()], shape: payload.shape };
    if payload.values.iter().all(|&v| v == T::zero()) {
        return Ok((zeros, HopState::Silent));
    }
    match hop(&payload.values, link, rng) {
        Ok((values, rec)) => Ok((CompressedPayload { values, shape: payload.shape }, HopState::Sent(rec))),
        Err(Error::DeepFade { gain }) => {
            log::warn!("deep fade (|h| = {:.3e}); payload lost", gain.abs());
            Ok((zeros, HopState::DeepFade { gain }))
        }
        Err(e) => Err(e),
    }
}

fn check_batch<T: Scalar>(model: &SystemModel<T>, batch: &ImageBatch<T>) -> Result<()> {
    let a = &model.arch;
    if batch.len() != a.n_images || batch.height() != a.image_height || batch.width() != a.image_width {
        return Err(Error::Shape(format!(
            "batch of {} images at {}x{} does not match model ({} images at {}x{})",
            batch.len(),
            batch.height(),
            batch.width(),
            a.n_images,
            a.image_height,
            a.image_width
        )));
    }
    Ok(())
}

/// Runs the full pipeline. `seed` fixes the quantization noise and both
/// hop realizations through three independent streams.
pub fn forward<T: Scalar>(
    model: &SystemModel<T>,
    batch: &ImageBatch<T>,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<Trace<T>> {
    check_batch(model, batch)?;
    let arch = &model.arch;
    let (codec, hyper) = (&model.codec, &model.hyper);
    let mut quant_rng = stream(seed, &[0]);
    let mut sr_rng = stream(seed, &[1]);
    let mut rd_rng = stream(seed, &[2]);

    let mut lt_e_tapes = Vec::with_capacity(batch.len());
    let mut latents = Vec::with_capacity(batch.len());
    for img in batch.images() {
        let mut tape = Tape::new();
        latents.push(codec.latent_transform_recorded(img, &mut tape)?);
        lt_e_tapes.push(tape);
    }
    let rho = if latents.len() >= 2 {
        pairwise_min_rho(&latents)?
    } else {
        PearsonVector(vec![T::one(); arch.latent_channels])
    };
    let part = partition(&rho, arch.gamma_p)?;
    let s = merge(&latents, &part)?;

    let mut a_e_tape = Tape::new();
    let y = codec.a_e.forward_recorded(&s, &mut a_e_tape)?;
    let mut h_a_tape = Tape::new();
    let z = hyper.hyper_encode_recorded(&y, &mut h_a_tape)?;
    let z_tilde = quantize(&z, settings.quant, &mut quant_rng);
    let mut h_s_tape = Tape::new();
    let (sigma, sigma_raw) = hyper.hyper_decode_recorded(&z_tilde, &mut h_s_tape)?;
    let y_tilde = quantize(&y, settings.quant, &mut quant_rng);
    let imp = importance(&y_tilde, &sigma)?;

    let links = settings.links.as_ref();
    let (payload1, plan1) = compress_c1(&y_tilde, &imp, settings.v1)?;
    let (received1, hop1) = send(&payload1, links.map(|l| &l.source_relay), &mut sr_rng)?;
    let y1_hat = reshape_c1_inv(&received1, &imp)?;
    let (payload2, plan2) = compress_c2(&y1_hat, &imp, received1.inferred_rate(), settings.v2)?;
    let (received2, hop2) = send(&payload2, links.map(|l| &l.relay_destination), &mut rd_rng)?;
    let y_hat = reshape_c2_inv(&received2, &imp)?;

    let mut a_d_tape = Tape::new();
    let s_hat = codec.a_d.forward_recorded(&y_hat, &mut a_d_tape)?;
    let parts = split_canonical(&s_hat, arch.latent_channels, part.shared_count(), batch.len())?;
    let mut lt_d_tapes = Vec::with_capacity(parts.len());
    let mut recon = Vec::with_capacity(parts.len());
    for p in &parts {
        let mut tape = Tape::new();
        recon.push(codec.latent_inverse_recorded(p, &mut tape)?);
        lt_d_tapes.push(tape);
    }

    Ok(Trace {
        partition: part,
        y,
        z_tilde,
        sigma,
        y_tilde,
        importance: imp,
        plan1,
        plan2,
        payload1,
        payload2,
        hop1,
        hop2,
        y_hat,
        recon,
        sigma_raw,
        lt_e_tapes,
        a_e_tape,
        h_a_tape,
        h_s_tape,
        a_d_tape,
        lt_d_tapes,
    })
}

/// Upstream gradients entering the reverse pass.
#[derive(Clone, Debug)]
pub struct UpstreamGrads<T> {
    /// Per reconstructed image.
    pub recon: Vec<FeatureTensor<T>>,
    /// Direct dependence of the loss on `Ỹ` (rate term).
    pub y_tilde: FeatureTensor<T>,
    pub sigma: FeatureTensor<T>,
    pub z_tilde: FeatureTensor<T>,
    pub prior_loc: Vec<T>,
    /// With respect to the positive prior scales.
    pub prior_scale: Vec<T>,
}

fn hop_grad<T: Scalar>(state: &HopState<T>, sent: &[T], g: Vec<T>) -> Vec<T> {
    match state {
        HopState::Bypassed => g,
        HopState::Sent(rec) => crate::channel::hop_backward(sent, rec, &g),
        HopState::Silent | HopState::DeepFade { .. } => vec![T::zero(); g.len()],
    }
}

fn add<T: Scalar>(a: &FeatureTensor<T>, b: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

fn sum_stacks<T: Scalar>(parts: Vec<Stack<T>>) -> Stack<T> {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one image");
    for s in it {
        acc.add_assign(&s);
    }
    acc
}

/// Reverse pass. Quantization passes gradients straight through; the
/// channel partition and compression masks are treated as constants.
pub fn backward<T: Scalar>(model: &SystemModel<T>, trace: &Trace<T>, up: &UpstreamGrads<T>) -> Result<SystemModel<T>> {
    let arch = &model.arch;
    let (codec, hyper) = (&model.codec, &model.hyper);
    if up.recon.len() != trace.recon.len() {
        return Err(Error::Shape("one reconstruction gradient per image is required".into()));
    }

    let mut g_lat = Vec::with_capacity(up.recon.len());
    let mut g_lt_d = Vec::with_capacity(up.recon.len());
    for (tape, g) in trace.lt_d_tapes.iter().zip(&up.recon) {
        let (gl, gs) = codec.latent_inverse_backward(tape, g)?;
        g_lat.push(gl);
        g_lt_d.push(gs);
    }
    let g_s_hat = split_canonical_backward(&g_lat, arch.latent_channels, trace.partition.shared_count())?;
    let (g_y_hat, g_a_d) = codec.a_d.backward(&trace.a_d_tape, &g_s_hat)?;

    let g2 = hop_grad(&trace.hop2, &trace.payload2.values, trace.plan2.gather(&g_y_hat));
    let g_y1 = trace.plan2.scatter(&g2);
    let g1 = hop_grad(&trace.hop1, &trace.payload1.values, trace.plan1.gather(&g_y1));
    let g_y_tilde = add(&trace.plan1.scatter(&g1), &up.y_tilde)?;

    let g_sigma_raw = up.sigma.zip_map(&trace.sigma_raw, |g, r| g * positive_scale_grad(r))?;
    let (g_z_tilde, g_h_s) = hyper.h_s.backward(&trace.h_s_tape, &g_sigma_raw)?;
    let g_z = add(&g_z_tilde, &up.z_tilde)?;
    let (g_y_from_z, g_h_a) = hyper.h_a.backward(&trace.h_a_tape, &g_z)?;
    let g_y = add(&g_y_tilde, &g_y_from_z)?;

    let (g_s, g_a_e) = codec.a_e.backward(&trace.a_e_tape, &g_y)?;
    let g_lats = merge_backward(&g_s, &trace.partition, trace.lt_e_tapes.len())?;
    let mut g_lt_e = Vec::with_capacity(g_lats.len());
    for (tape, g) in trace.lt_e_tapes.iter().zip(&g_lats) {
        g_lt_e.push(codec.lt_e.backward(tape, g)?.1);
    }

    let prior_scale_raw = up
        .prior_scale
        .iter()
        .zip(&hyper.prior_scale_raw)
        .map(|(&g, &r)| g * positive_scale_grad(r))
        .collect();
    Ok(SystemModel {
        arch: arch.clone(),
        codec: CodecParams { lt_e: sum_stacks(g_lt_e), a_e: g_a_e, a_d: g_a_d, lt_d: sum_stacks(g_lt_d) },
        hyper: HyperParams { h_a: g_h_a, h_s: g_h_s, prior_loc: up.prior_loc.clone(), prior_scale_raw },
    })
}
