//! Pearson-correlation shared-feature extraction.
//!
//! Channels whose content correlates most strongly across the N latents are
//! averaged and sent once; the rest stay per-image. The merged layout is
//! `[X_1p, X_s, X_2p, ..., X_Np]` with `C2 = N(C - C1) + C1` channels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, mean_channels, FeatureTensor};

/// Absolute sample Pearson correlation of two equally long vectors.
///
/// Returns 0 when either vector has zero variance.
pub fn pearson_abs<T: Scalar>(x1: &[T], x2: &[T]) -> Result<T> {
    if x1.len() != x2.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", x1.len(), x2.len())));
    }
    if x1.len() < 2 {
        return Err(Error::Argument("Pearson correlation needs at least 2 samples".into()));
    }
    let n = T::from_usize_lossy(x1.len());
    let m1 = x1.iter().copied().sum::<T>() / n;
    let m2 = x2.iter().copied().sum::<T>() / n;
    let (mut cov, mut v1, mut v2) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x1.iter().zip(x2) {
        let (da, db) = (a - m1, b - m2);
        cov += da * db;
        v1 += da * da;
        v2 += db * db;
    }
    if v1 == T::zero() || v2 == T::zero() {
        return Ok(T::zero());
    }
    Ok((cov / (v1.sqrt() * v2.sqrt())).abs().min(T::one()))
}

/// Per-channel absolute correlations, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PearsonVector<T>(pub Vec<T>);

impl<T: Scalar> PearsonVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::Argument("correlations must lie in [0, 1]".into()));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-channel correlation between two latents.
pub fn channel_pearson<T: Scalar>(a: &FeatureTensor<T>, b: &FeatureTensor<T>) -> Result<PearsonVector<T>> {
    a.check_same_shape(b)?;
    let rho = (0..a.channels())
        .map(|c| pearson_abs(a.channel(c)?, b.channel(c)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(PearsonVector(rho))
}

/// Element-wise minimum of the channel correlations over all image pairs.
pub fn pairwise_min_rho<T: Scalar>(latents: &[FeatureTensor<T>]) -> Result<PearsonVector<T>> {
    if latents.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 latents, got {}", latents.len())));
    }
    let mut rho = vec![T::one(); latents[0].channels()];
    for i in 0..latents.len() {
        for j in i + 1..latents.len() {
            let pair = channel_pearson(&latents[i], &latents[j])?;
            for (r, p) in rho.iter_mut().zip(pair.0) {
                *r = r.min(p);
            }
        }
    }
    Ok(PearsonVector(rho))
}

/// Shared channel indices `is` and personalized indices `ip`, both ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelPartition {
    pub channels: usize,
    pub shared: Vec<usize>,
    pub personal: Vec<usize>,
}

impl ChannelPartition {
    pub fn shared_count(&self) -> usize {
        self.shared.len()
    }

    pub fn personal_count(&self) -> usize {
        self.personal.len()
    }

    pub fn merged_channels(&self, n_images: usize) -> usize {
        merged_channels(n_images, self.channels, self.shared.len())
    }
}

/// `C2 = N(C - C1) + C1`.
pub fn merged_channels(n_images: usize, channels: usize, shared: usize) -> usize {
    n_images * (channels - shared) + shared
}

/// Selects the `floor(gamma_p * C)` most correlated channels as shared.
/// Ties go to the lower channel index.
pub fn partition<T: Scalar>(rho: &PearsonVector<T>, gamma_p: f64) -> Result<ChannelPartition> {
    if !(gamma_p > 0.0 && gamma_p < 1.0) {
        return Err(Error::Argument(format!("gamma_p = {gamma_p} must lie in (0, 1)")));
    }
    let c = rho.len();
    let c1 = (gamma_p * c as f64).floor() as usize;
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| rho.0[b].partial_cmp(&rho.0[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut shared = order[..c1].to_vec();
    let mut personal = order[c1..].to_vec();
    shared.sort_unstable();
    personal.sort_unstable();
    Ok(ChannelPartition { channels: c, shared, personal })
}

fn check_latents<T: Scalar>(latents: &[FeatureTensor<T>], part: &ChannelPartition) -> Result<()> {
    let first = latents.first().ok_or_else(|| Error::Argument("no latents to merge".into()))?;
    for l in latents {
        first.check_same_shape(l)?;
    }
    if first.channels() != part.channels {
        return Err(Error::Shape(format!(
            "partition covers {} channels but latents have {}",
            part.channels,
            first.channels()
        )));
    }
    Ok(())
}

/// Merges N latents into `[X_1p, X_s, X_2p, ..., X_Np]`, where `X_s` is the
/// element-wise mean of the shared channels.
pub fn merge<T: Scalar>(latents: &[FeatureTensor<T>], part: &ChannelPartition) -> Result<FeatureTensor<T>> {
    check_latents(latents, part)?;
    let shared = latents.iter().map(|l| l.select_channels(&part.shared)).collect::<Result<Vec<_>>>()?;
    let x_s = mean_channels(&shared)?;
    let mut blocks = Vec::with_capacity(latents.len() + 1);
    for (i, l) in latents.iter().enumerate() {
        blocks.push(l.select_channels(&part.personal)?);
        if i == 0 {
            blocks.push(x_s.clone());
        }
    }
    concat_channels(&blocks)
}

/// Channel offset of image `i`'s personalized block and of the shared block.
fn block_offsets(i: usize, personal: usize, shared: usize) -> (usize, usize) {
    let p_off = if i == 0 { 0 } else { personal + shared + (i - 1) * personal };
    (p_off, personal)
}

fn check_merged<T: Scalar>(s: &FeatureTensor<T>, n: usize, c: usize, c1: usize) -> Result<()> {
    let c2 = merged_channels(n, c, c1);
    if s.channels() != c2 {
        return Err(Error::Shape(format!("merged latent has {} channels, expected C2 = {c2}", s.channels())));
    }
    Ok(())
}

/// Splits a merged latent and restores every channel to its original
/// position given by `part`.
pub fn split_combine<T: Scalar>(s_hat: &FeatureTensor<T>, part: &ChannelPartition, n: usize) -> Result<Vec<FeatureTensor<T>>> {
    let (c, c1) = (part.channels, part.shared.len());
    check_merged(s_hat, n, c, c1)?;
    let pc = c - c1;
    let (_, h, w) = s_hat.shape();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (p_off, _) = block_offsets(i, pc, c1);
        let mut x = FeatureTensor::zeros(c, h, w);
        for (k, &ch) in part.personal.iter().enumerate() {
            x.channel_mut(ch)?.copy_from_slice(s_hat.channel(p_off + k)?);
        }
        for (k, &ch) in part.shared.iter().enumerate() {
            x.channel_mut(ch)?.copy_from_slice(s_hat.channel(pc + k)?);
        }
        out.push(x);
    }
    Ok(out)
}

/// Splits a merged latent into the canonical per-image layout
/// `[personalized channels, shared channels]`. Needs only `(C, C1, N)`, so the
/// destination reconstructs without knowing the shared index vector.
pub fn split_canonical<T: Scalar>(s_hat: &FeatureTensor<T>, c: usize, c1: usize, n: usize) -> Result<Vec<FeatureTensor<T>>> {
    check_merged(s_hat, n, c, c1)?;
    let pc = c - c1;
    let shared = s_hat.slice_channels(pc, pc + c1)?;
    (0..n)
        .map(|i| {
            let (p_off, _) = block_offsets(i, pc, c1);
            concat_channels(&[s_hat.slice_channels(p_off, p_off + pc)?, shared.clone()])
        })
        .collect()
}

/// Gradient of [`merge`] with respect to each input latent.
pub fn merge_backward<T: Scalar>(grad_s: &FeatureTensor<T>, part: &ChannelPartition, n: usize) -> Result<Vec<FeatureTensor<T>>> {
    // merge and split_combine are adjoint up to the 1/N on shared channels
    let (c, c1) = (part.channels, part.shared.len());
    check_merged(grad_s, n, c, c1)?;
    let mut grads = split_combine(grad_s, part, n)?;
    let inv_n = T::one() / T::from_usize_lossy(n);
    for g in &mut grads {
        for &ch in &part.shared {
            g.channel_mut(ch)?.iter_mut().for_each(|v| *v *= inv_n);
        }
    }
    Ok(grads)
}

/// Gradient of [`split_canonical`] with respect to the merged latent.
pub fn split_canonical_backward<T: Scalar>(grads: &[FeatureTensor<T>], c: usize, c1: usize) -> Result<FeatureTensor<T>> {
    let n = grads.len();
    let first = grads.first().ok_or_else(|| Error::Argument("no gradients".into()))?;
    let (_, h, w) = first.shape();
    let pc = c - c1;
    let mut out = FeatureTensor::zeros(merged_channels(n, c, c1), h, w);
    for (i, g) in grads.iter().enumerate() {
        let (p_off, _) = block_offsets(i, pc, c1);
        for k in 0..pc {
            out.channel_mut(p_off + k)?.copy_from_slice(g.channel(k)?);
        }
        for k in 0..c1 {
            for (dst, src) in out.channel_mut(pc + k)?.iter_mut().zip(g.channel(pc + k)?) {
                *dst += *src;
            }
        }
    }
    Ok(out)
}
