//! Generalized divisive normalization and its inverse.
//!
//! `y[i,p] = x[i,p] / sqrt(beta[i] + sum_j gamma[i][j] * x[j,p]^2)` at every
//! pixel `p`. The inverse form multiplies by the same norm instead.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureTensor;

fn check_params<T: Scalar>(channels: usize, beta: &[T], gamma: &[T]) -> Result<()> {
    if beta.len() != channels || gamma.len() != channels * channels {
        return Err(Error::Shape(format!(
            "GDN expects {channels} betas and {}x{} gammas, got {} and {}",
            channels,
            channels,
            beta.len(),
            gamma.len()
        )));
    }
    if let Some(b) = beta.iter().find(|b| !(**b > T::zero())) {
        return Err(Error::Parameter(format!("GDN beta must be positive, got {b}")));
    }
    if gamma.iter().any(|g| *g < T::zero()) {
        return Err(Error::Parameter("GDN gamma must be non-negative".into()));
    }
    Ok(())
}

/// Squared norm `beta[i] + sum_j gamma[i][j] x[j,p]^2` for every element.
fn norms<T: Scalar>(x: &FeatureTensor<T>, beta: &[T], gamma: &[T]) -> Vec<T> {
    let c = x.channels();
    let p = x.plane();
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    let sq: Vec<T> = xd.iter().map(|v| *v * *v).collect();
    for i in 0..c {
        let row = &mut out[i * p..(i + 1) * p];
        row.iter_mut().for_each(|v| *v = beta[i]);
        for j in 0..c {
            let gij = gamma[i * c + j];
            if gij == T::zero() {
                continue;
            }
            for (r, s) in row.iter_mut().zip(&sq[j * p..(j + 1) * p]) {
                *r += gij * *s;
            }
        }
    }
    out
}

pub fn gdn_forward<T: Scalar>(x: &FeatureTensor<T>, beta: &[T], gamma: &[T]) -> Result<FeatureTensor<T>> {
    check_params(x.channels(), beta, gamma)?;
    Ok(gdn_unchecked(x, beta, gamma, false).0)
}

pub fn igdn_forward<T: Scalar>(x: &FeatureTensor<T>, beta: &[T], gamma: &[T]) -> Result<FeatureTensor<T>> {
    check_params(x.channels(), beta, gamma)?;
    Ok(gdn_unchecked(x, beta, gamma, true).0)
}

/// Returns the output and the per-element squared norms for reuse in backward.
pub(crate) fn gdn_unchecked<T: Scalar>(
    x: &FeatureTensor<T>,
    beta: &[T],
    gamma: &[T],
    inverse: bool,
) -> (FeatureTensor<T>, Vec<T>) {
    let n2 = norms(x, beta, gamma);
    let y = x
        .data()
        .iter()
        .zip(&n2)
        .map(|(&v, &n)| if inverse { v * n.sqrt() } else { v / n.sqrt() })
        .collect();
    (x.with_data(y), n2)
}

/// Gradients with respect to `x`, `beta` and `gamma`.
pub(crate) fn gdn_backward<T: Scalar>(
    x: &FeatureTensor<T>,
    gamma: &[T],
    norms_sq: &[T],
    grad_out: &FeatureTensor<T>,
    inverse: bool,
) -> (FeatureTensor<T>, Vec<T>, Vec<T>) {
    let c = x.channels();
    let p = x.plane();
    let xd = x.data();
    let gd = grad_out.data();
    let half = T::lit(0.5);
    // coefficient a[i,p] = d y_i / d (norm_sq_i) divided by x_i:
    //   GDN:  -1/2 * n^{-3},  IGDN: 1/2 * n^{-1}
    let coef: Vec<T> = norms_sq
        .iter()
        .map(|&n2| if inverse { half / n2.sqrt() } else { -half / (n2 * n2.sqrt()) })
        .collect();
    // t[i,p] = g_i * x_i * a_i
    let t: Vec<T> = (0..xd.len()).map(|k| gd[k] * xd[k] * coef[k]).collect();

    let mut gx: Vec<T> = (0..xd.len())
        .map(|k| {
            let n = norms_sq[k].sqrt();
            if inverse {
                gd[k] * n
            } else {
                gd[k] / n
            }
        })
        .collect();
    let mut gbeta = vec![T::zero(); c];
    let mut ggamma = vec![T::zero(); c * c];
    for i in 0..c {
        let ti = &t[i * p..(i + 1) * p];
        gbeta[i] = ti.iter().copied().sum();
        for j in 0..c {
            let xj = &xd[j * p..(j + 1) * p];
            let mut acc = T::zero();
            for (tv, xv) in ti.iter().zip(xj) {
                acc += *tv * *xv * *xv;
            }
            ggamma[i * c + j] = acc;
            let gij = gamma[i * c + j];
            if gij != T::zero() {
                let two_g = gij + gij;
                let gxj = &mut gx[j * p..(j + 1) * p];
                for ((g, tv), xv) in gxj.iter_mut().zip(ti).zip(xj) {
                    *g += two_g * *tv * *xv;
                }
            }
        }
    }
    (x.with_data(gx), gbeta, ggamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_beta_zero_gamma_is_identity() {
        let x = FeatureTensor::from_fn(3, 2, 2, |c, y, xx| (c as f64 - 1.0) * 0.7 + y as f64 - xx as f64);
        let y = gdn_forward(&x, &[1.0; 3], &[0.0; 9]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn tiny_beta_unit_gamma_halves() {
        let x = FeatureTensor::new(1, 1, 1, vec![2.0f64]).unwrap();
        let y = gdn_forward(&x, &[1e-12], &[1.0]).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_positive_beta_rejected() {
        let x = FeatureTensor::<f64>::zeros(1, 1, 1);
        assert!(matches!(gdn_forward(&x, &[0.0], &[1.0]), Err(Error::Parameter(_))));
        assert!(matches!(gdn_forward(&x, &[-1.0], &[1.0]), Err(Error::Parameter(_))));
        assert!(matches!(gdn_forward(&x, &[1.0], &[-1.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn output_bounded_by_beta() {
        let beta = [0.5, 2.0];
        let gamma = [0.3, 0.1, 0.2, 0.4];
        let x = FeatureTensor::from_fn(2, 3, 3, |c, y, xx| ((c * 9 + y * 3 + xx) as f64 - 8.0) * 3.1);
        let y = gdn_forward(&x, &beta, &gamma).unwrap();
        for c in 0..2 {
            for (yo, xi) in y.channel(c).unwrap().iter().zip(x.channel(c).unwrap()) {
                assert!(yo.abs() <= xi.abs() / beta[c].sqrt() + 1e-12);
                assert!(yo.is_finite());
            }
        }
    }

    #[test]
    fn igdn_inverts_gdn_for_diagonal_gamma() {
        // With diagonal gamma and beta=1, igdn(gdn(x)) is not exact in general,
        // but igdn with gamma=0 is plain scaling by sqrt(beta).
        let x = FeatureTensor::from_fn(2, 2, 2, |c, y, xx| (c + y + xx) as f64);
        let y = igdn_forward(&x, &[4.0, 4.0], &[0.0; 4]).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
