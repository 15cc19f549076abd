//! Direct 2-D convolution and transposed convolution with zero padding.
//!
//! Weights use the usual layouts: `[out][in][k][k]` for convolution and
//! `[in][out][k][k]` for transposed convolution.

use crate::scalar::Scalar;
use crate::tensor::FeatureTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvGeometry {
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel;
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < k || wp < k {
            return None;
        }
        Some(((hp - k) / self.stride + 1, (wp - k) / self.stride + 1))
    }

    pub fn conv_transpose_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h == 0 || w == 0 {
            return None;
        }
        let grow = |n: usize| ((n - 1) * self.stride + self.kernel + self.output_padding).checked_sub(2 * self.padding);
        Some((grow(h)?, grow(w)?))
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }
}

/// Range of output coordinates `o` with `0 <= o*stride + offset < n_in`,
/// where `offset = k_index - padding`, clipped to `[0, n_out)`.
#[inline]
fn valid_range(n_in: usize, n_out: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    // smallest o with o*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    // largest o with o*s + offset <= n_in - 1
    let top = n_in as isize - 1 - offset;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top / s + 1).min(n_out as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

pub fn conv2d<T: Scalar>(
    x: &FeatureTensor<T>,
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
    out_h: usize,
    out_w: usize,
) -> FeatureTensor<T> {
    let (_, in_h, in_w) = x.shape();
    let k = g.kernel;
    let s = g.stride;
    let xd = x.data();
    let mut out = vec![T::zero(); g.out_channels * out_h * out_w];
    for co in 0..g.out_channels {
        let oplane = &mut out[co * out_h * out_w..(co + 1) * out_h * out_w];
        oplane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..g.in_channels {
            let xplane = &xd[ci * in_h * in_w..(ci + 1) * in_h * in_w];
            for ky in 0..k {
                let oy_off = ky as isize - g.padding as isize;
                let (y0, y1) = valid_range(in_h, out_h, s, oy_off);
                for kx in 0..k {
                    let wv = weight[((co * g.in_channels + ci) * k + ky) * k + kx];
                    let ox_off = kx as isize - g.padding as isize;
                    let (x0, x1) = valid_range(in_w, out_w, s, ox_off);
                    for oy in y0..y1 {
                        let iy = (oy * s) as isize + oy_off;
                        let xrow = &xplane[iy as usize * in_w..];
                        let orow = &mut oplane[oy * out_w..(oy + 1) * out_w];
                        for ox in x0..x1 {
                            let ix = ((ox * s) as isize + ox_off) as usize;
                            orow[ox] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    FeatureTensor::from_raw(g.out_channels, out_h, out_w, out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &FeatureTensor<T>,
    weight: &[T],
    g: &ConvGeometry,
    grad_out: &FeatureTensor<T>,
) -> (FeatureTensor<T>, Vec<T>, Vec<T>) {
    let (_, in_h, in_w) = x.shape();
    let (_, out_h, out_w) = grad_out.shape();
    let k = g.kernel;
    let s = g.stride;
    let xd = x.data();
    let gd = grad_out.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.out_channels];
    for co in 0..g.out_channels {
        let gplane = &gd[co * out_h * out_w..(co + 1) * out_h * out_w];
        gb[co] = gplane.iter().copied().sum();
        for ci in 0..g.in_channels {
            let xplane = &xd[ci * in_h * in_w..(ci + 1) * in_h * in_w];
            let gxplane = &mut gx[ci * in_h * in_w..(ci + 1) * in_h * in_w];
            for ky in 0..k {
                let oy_off = ky as isize - g.padding as isize;
                let (y0, y1) = valid_range(in_h, out_h, s, oy_off);
                for kx in 0..k {
                    let widx = ((co * g.in_channels + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let ox_off = kx as isize - g.padding as isize;
                    let (x0, x1) = valid_range(in_w, out_w, s, ox_off);
                    let mut acc = T::zero();
                    for oy in y0..y1 {
                        let iy = ((oy * s) as isize + oy_off) as usize;
                        let grow = &gplane[oy * out_w..(oy + 1) * out_w];
                        let base = iy * in_w;
                        for ox in x0..x1 {
                            let ix = ((ox * s) as isize + ox_off) as usize;
                            let gv = grow[ox];
                            acc += gv * xplane[base + ix];
                            gxplane[base + ix] += gv * wv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (FeatureTensor::from_raw(x.channels(), in_h, in_w, gx), gw, gb)
}

pub fn conv_transpose2d<T: Scalar>(
    x: &FeatureTensor<T>,
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
    out_h: usize,
    out_w: usize,
) -> FeatureTensor<T> {
    let (_, in_h, in_w) = x.shape();
    let k = g.kernel;
    let s = g.stride;
    let xd = x.data();
    let mut out = vec![T::zero(); g.out_channels * out_h * out_w];
    for co in 0..g.out_channels {
        out[co * out_h * out_w..(co + 1) * out_h * out_w]
            .iter_mut()
            .for_each(|v| *v = bias[co]);
    }
    for ci in 0..g.in_channels {
        let xplane = &xd[ci * in_h * in_w..(ci + 1) * in_h * in_w];
        for co in 0..g.out_channels {
            let oplane = &mut out[co * out_h * out_w..(co + 1) * out_h * out_w];
            for ky in 0..k {
                let off_y = ky as isize - g.padding as isize;
                // output row oy = iy*s + off_y must lie in [0, out_h)
                let (y0, y1) = valid_range(out_h, in_h, s, off_y);
                for kx in 0..k {
                    let wv = weight[((ci * g.out_channels + co) * k + ky) * k + kx];
                    let off_x = kx as isize - g.padding as isize;
                    let (x0, x1) = valid_range(out_w, in_w, s, off_x);
                    for iy in y0..y1 {
                        let oy = ((iy * s) as isize + off_y) as usize;
                        let xrow = &xplane[iy * in_w..(iy + 1) * in_w];
                        let orow = &mut oplane[oy * out_w..(oy + 1) * out_w];
                        for ix in x0..x1 {
                            let ox = ((ix * s) as isize + off_x) as usize;
                            orow[ox] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    FeatureTensor::from_raw(g.out_channels, out_h, out_w, out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &FeatureTensor<T>,
    weight: &[T],
    g: &ConvGeometry,
    grad_out: &FeatureTensor<T>,
) -> (FeatureTensor<T>, Vec<T>, Vec<T>) {
    let (_, in_h, in_w) = x.shape();
    let (_, out_h, out_w) = grad_out.shape();
    let k = g.kernel;
    let s = g.stride;
    let xd = x.data();
    let gd = grad_out.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let gb: Vec<T> = (0..g.out_channels)
        .map(|co| gd[co * out_h * out_w..(co + 1) * out_h * out_w].iter().copied().sum())
        .collect();
    for ci in 0..g.in_channels {
        let xplane = &xd[ci * in_h * in_w..(ci + 1) * in_h * in_w];
        let gxplane = &mut gx[ci * in_h * in_w..(ci + 1) * in_h * in_w];
        for co in 0..g.out_channels {
            let gplane = &gd[co * out_h * out_w..(co + 1) * out_h * out_w];
            for ky in 0..k {
                let off_y = ky as isize - g.padding as isize;
                let (y0, y1) = valid_range(out_h, in_h, s, off_y);
                for kx in 0..k {
                    let widx = ((ci * g.out_channels + co) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let off_x = kx as isize - g.padding as isize;
                    let (x0, x1) = valid_range(out_w, in_w, s, off_x);
                    let mut acc = T::zero();
                    for iy in y0..y1 {
                        let oy = ((iy * s) as isize + off_y) as usize;
                        let grow = &gplane[oy * out_w..(oy + 1) * out_w];
                        let base = iy * in_w;
                        for ix in x0..x1 {
                            let ox = ((ix * s) as isize + off_x) as usize;
                            let gv = grow[ox];
                            acc += gv * xplane[base + ix];
                            gxplane[base + ix] += gv * wv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (FeatureTensor::from_raw(x.channels(), in_h, in_w, gx), gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(i: usize, o: usize, k: usize, s: usize, p: usize, op: usize) -> ConvGeometry {
        ConvGeometry { in_channels: i, out_channels: o, kernel: k, stride: s, padding: p, output_padding: op }
    }

    /// Textbook convolution used as an oracle.
    fn naive_conv(x: &FeatureTensor<f64>, w: &[f64], b: &[f64], g: &ConvGeometry) -> FeatureTensor<f64> {
        let (oh, ow) = g.conv_out(x.height(), x.width()).unwrap();
        FeatureTensor::from_fn(g.out_channels, oh, ow, |co, oy, ox| {
            let mut acc = b[co];
            for ci in 0..g.in_channels {
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < x.height() && (ix as usize) < x.width() {
                            acc += w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx]
                                * x.get(ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    /// Scatter-form transposed convolution oracle.
    fn naive_conv_t(x: &FeatureTensor<f64>, w: &[f64], b: &[f64], g: &ConvGeometry) -> FeatureTensor<f64> {
        let (oh, ow) = g.conv_transpose_out(x.height(), x.width()).unwrap();
        let mut out = FeatureTensor::from_fn(g.out_channels, oh, ow, |co, _, _| b[co]);
        for ci in 0..g.in_channels {
            for iy in 0..x.height() {
                for ix in 0..x.width() {
                    for co in 0..g.out_channels {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                                let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let v = out.get(co, oy as usize, ox as usize)
                                        + x.get(ci, iy, ix)
                                            * w[((ci * g.out_channels + co) * g.kernel + ky) * g.kernel + kx];
                                    out.set(co, oy as usize, ox as usize, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive() {
        for g in [geom(3, 4, 3, 1, 1, 0), geom(2, 3, 3, 2, 1, 0), geom(2, 2, 5, 2, 2, 0)] {
            let x = FeatureTensor::new(g.in_channels, 7, 10, pseudo(g.in_channels * 70, 1)).unwrap();
            let w = pseudo(g.weight_len(), 2);
            let b = pseudo(g.out_channels, 3);
            let (oh, ow) = g.conv_out(7, 10).unwrap();
            let fast = conv2d(&x, &w, &b, &g, oh, ow);
            let slow = naive_conv(&x, &w, &b, &g);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_matches_naive() {
        for g in [geom(3, 2, 3, 2, 1, 1), geom(2, 2, 5, 2, 2, 1), geom(2, 3, 3, 1, 1, 0)] {
            let x = FeatureTensor::new(g.in_channels, 3, 5, pseudo(g.in_channels * 15, 4)).unwrap();
            let w = pseudo(g.weight_len(), 5);
            let b = pseudo(g.out_channels, 6);
            let (oh, ow) = g.conv_transpose_out(3, 5).unwrap();
            let fast = conv_transpose2d(&x, &w, &b, &g, oh, ow);
            let slow = naive_conv_t(&x, &w, &b, &g);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_sizes_follow_padding_rules() {
        assert_eq!(geom(3, 8, 3, 2, 1, 0).conv_out(32, 64), Some((16, 32)));
        assert_eq!(geom(3, 8, 5, 2, 2, 0).conv_out(4, 8), Some((2, 4)));
        assert_eq!(geom(8, 8, 3, 2, 1, 1).conv_transpose_out(4, 8), Some((8, 16)));
        assert_eq!(geom(4, 4, 5, 2, 2, 1).conv_transpose_out(1, 2), Some((2, 4)));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv^T(g)> for zero bias
        let g = geom(2, 3, 3, 2, 1, 0);
        let x = FeatureTensor::new(2, 6, 6, pseudo(72, 7)).unwrap();
        let w = pseudo(g.weight_len(), 8);
        let (oh, ow) = g.conv_out(6, 6).unwrap();
        let y = conv2d(&x, &w, &[0.0; 3], &g, oh, ow);
        let go = FeatureTensor::new(3, oh, ow, pseudo(3 * oh * ow, 9)).unwrap();
        let (gx, _, _) = conv2d_backward(&x, &w, &g, &go);
        let lhs: f64 = y.data().iter().zip(go.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
