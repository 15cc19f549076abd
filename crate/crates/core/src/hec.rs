//! Importance-driven compression and reshaping at both hops.
//!
//! Every node derives the same mask from the shared importance map and a
//! keep-count, so only payload values travel over the channel. Ordering is
//! descending importance with ties broken by flat `(channel, row, col)` index.

use std::cmp::Ordering;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::hyperprior::ImportanceMap;
use crate::scalar::Scalar;
use crate::tensor::FeatureTensor;

/// `⌊(1 − rate)·len⌋`, guarded against representation error in `rate`.
pub fn keep_count(rate: f64, len: usize) -> usize {
    let exact = (1.0 - rate) * len as f64;
    ((exact + 1e-9 * len.max(1) as f64).floor() as usize).min(len)
}

/// Overall rate after two sequential compressions: `1 − (1−v1)(1−v2)`.
pub fn combined_rate(v1: f64, v2: f64) -> f64 {
    1.0 - (1.0 - v1) * (1.0 - v2)
}

fn check_rate(v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Argument(format!("compression rate {v} must lie in [0, 1)")));
    }
    Ok(())
}

// Rates derived from a received payload may reach 1 (nothing kept).
fn check_derived_rate(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Argument(format!("derived rate {v} must lie in [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan<T> {
    pub mask: Vec<bool>,
    pub keep_count: usize,
    /// Importance of the last kept element (the threshold `I_S`); `None` when
    /// nothing is kept.
    pub threshold: Option<T>,
    /// Flat indices of kept elements in extraction order.
    pub order: Vec<usize>,
    pub shape: (usize, usize, usize),
}

impl<T: Scalar> MaskPlan<T> {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Values of `t` at the kept positions, in extraction order.
    pub fn gather(&self, t: &FeatureTensor<T>) -> Vec<T> {
        self.order.iter().map(|&i| t.data()[i]).collect()
    }

    /// Places `values` at the kept positions of a zero tensor.
    pub fn scatter(&self, values: &[T]) -> FeatureTensor<T> {
        let (c, h, w) = self.shape;
        let mut out = vec![T::zero(); c * h * w];
        for (&i, &v) in self.order.iter().zip(values) {
            out[i] = v;
        }
        FeatureTensor::from_raw(c, h, w, out)
    }

    /// Mask as a 0/1 tensor.
    pub fn mask_tensor(&self) -> FeatureTensor<T> {
        let (c, h, w) = self.shape;
        FeatureTensor::from_raw(c, h, w, self.mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect())
    }
}

/// Flat indices sorted by descending importance, ties by ascending index.
pub fn extraction_order<T: Scalar>(imp: &ImportanceMap<T>) -> Vec<usize> {
    let v = imp.values();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

fn plan_for_count<T: Scalar>(imp: &ImportanceMap<T>, keep: usize) -> MaskPlan<T> {
    let order = extraction_order(imp);
    let kept = order[..keep].to_vec();
    let mut mask = vec![false; imp.len()];
    for &i in &kept {
        mask[i] = true;
    }
    MaskPlan {
        threshold: kept.last().map(|&i| imp.values()[i]),
        mask,
        keep_count: keep,
        order: kept,
        shape: imp.tensor().shape(),
    }
}

/// Mask keeping the `⌊(1−v)L⌋` most important elements.
pub fn build_mask<T: Scalar>(imp: &ImportanceMap<T>, v: f64) -> Result<MaskPlan<T>> {
    check_rate(v)?;
    Ok(plan_for_count(imp, keep_count(v, imp.len())))
}

/// Transmitted values in extraction order plus the source feature shape.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedPayload<T> {
    pub values: Vec<T>,
    pub shape: (usize, usize, usize),
}

impl<T: Scalar> CompressedPayload<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of elements `L` of the source feature.
    pub fn source_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    /// Rate implied by the payload length, `1 − K/L`.
    pub fn inferred_rate(&self) -> f64 {
        1.0 - self.values.len() as f64 / self.source_len() as f64
    }

    /// Writes `u64` LE length followed by `f64` LE values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, shape: (usize, usize, usize)) -> Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        if n > shape.0 * shape.1 * shape.2 {
            return Err(Error::Payload(format!("payload length {n} exceeds feature size")));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(T::lit(f64::from_le_bytes(buf)));
        }
        Ok(Self { values, shape })
    }
}

fn gather<T: Scalar>(y: &FeatureTensor<T>, plan: &MaskPlan<T>) -> CompressedPayload<T> {
    CompressedPayload { values: plan.gather(y), shape: y.shape() }
}

fn scatter<T: Scalar>(payload: &CompressedPayload<T>, plan: &MaskPlan<T>) -> FeatureTensor<T> {
    plan.scatter(&payload.values)
}

/// Source-side compression of `Ỹ`.
pub fn compress_c1<T: Scalar>(
    y_tilde: &FeatureTensor<T>,
    imp: &ImportanceMap<T>,
    v1: f64,
) -> Result<(CompressedPayload<T>, MaskPlan<T>)> {
    y_tilde.check_same_shape(imp.tensor())?;
    let plan = build_mask(imp, v1)?;
    Ok((gather(y_tilde, &plan), plan))
}

/// Rebuilds the sparse feature from a received payload. The rate is inferred
/// from the payload length alone.
fn reshape_inv<T: Scalar>(payload: &CompressedPayload<T>, imp: &ImportanceMap<T>) -> Result<FeatureTensor<T>> {
    if payload.shape != imp.tensor().shape() {
        return Err(Error::Shape(format!(
            "payload shape {:?} does not match importance map {:?}",
            payload.shape,
            imp.tensor().shape()
        )));
    }
    let l = imp.len();
    if payload.len() > l {
        return Err(Error::Payload(format!("payload length {} exceeds L = {l}", payload.len())));
    }
    let plan = plan_for_count(imp, keep_count(payload.inferred_rate(), l));
    if plan.keep_count != payload.len() {
        return Err(Error::Payload(format!(
            "inferred keep count {} disagrees with payload length {}",
            plan.keep_count,
            payload.len()
        )));
    }
    Ok(scatter(payload, &plan))
}

/// Relay-side reshaping `Ŷ1 = C1⁻¹(Ŝ1, I)`.
pub fn reshape_c1_inv<T: Scalar>(s1_hat: &CompressedPayload<T>, imp: &ImportanceMap<T>) -> Result<FeatureTensor<T>> {
    reshape_inv(s1_hat, imp)
}

/// Relay-side recompression at the combined rate `1 − (1−v1)(1−v2)`.
pub fn compress_c2<T: Scalar>(
    y1_hat: &FeatureTensor<T>,
    imp: &ImportanceMap<T>,
    v1_inferred: f64,
    v2: f64,
) -> Result<(CompressedPayload<T>, MaskPlan<T>)> {
    check_rate(v2)?;
    check_derived_rate(v1_inferred)?;
    y1_hat.check_same_shape(imp.tensor())?;
    let v = combined_rate(v1_inferred, v2);
    let plan = plan_for_count(imp, keep_count(v, imp.len()));
    Ok((gather(y1_hat, &plan), plan))
}

/// Destination-side reshaping `Ŷ = C2⁻¹(Ŝ2, I)`.
pub fn reshape_c2_inv<T: Scalar>(s2_hat: &CompressedPayload<T>, imp: &ImportanceMap<T>) -> Result<FeatureTensor<T>> {
    reshape_inv(s2_hat, imp)
}
