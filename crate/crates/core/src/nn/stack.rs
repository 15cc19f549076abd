use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::conv::{self, ConvGeometry};
use super::gdn;
use crate::error::{Error, Result};
use crate::scalar::{softplus, softplus_grad, softplus_inv, Scalar};
use crate::tensor::FeatureTensor;

/// Floor added to the softplus-parameterized GDN beta.
pub const GDN_BETA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gdn,
    Igdn,
    Relu,
    Tanh,
    None,
}

/// One row of an architecture table:
/// `(in-channels, out-channels, kernel-size, stride, padding, output-padding)`
/// plus the activation applied after the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kind: LayerKind,
    pub geometry: ConvGeometry,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn conv(i: usize, o: usize, k: usize, s: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv,
            geometry: ConvGeometry {
                in_channels: i,
                out_channels: o,
                kernel: k,
                stride: s,
                padding: (k - 1) / 2,
                output_padding: 0,
            },
            activation,
        }
    }

    pub fn conv_t(i: usize, o: usize, k: usize, s: usize, output_padding: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::ConvTranspose,
            geometry: ConvGeometry {
                in_channels: i,
                out_channels: o,
                kernel: k,
                stride: s,
                padding: (k - 1) / 2,
                output_padding,
            },
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.kernel % 2 == 0 {
            return Err(Error::Parameter(format!("kernel size {} must be odd", g.kernel)));
        }
        if !(g.stride == 1 || g.stride == 2) {
            return Err(Error::Parameter(format!("stride {} must be 1 or 2", g.stride)));
        }
        if g.padding != (g.kernel - 1) / 2 {
            return Err(Error::Parameter("padding must equal (kernel - 1) / 2".into()));
        }
        if g.in_channels == 0 || g.out_channels == 0 {
            return Err(Error::Parameter("channel counts must be positive".into()));
        }
        if self.kind == LayerKind::Conv && g.output_padding != 0 {
            return Err(Error::Parameter("output padding only applies to transposed layers".into()));
        }
        Ok(())
    }

    pub fn output_shape(&self, shape: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = shape;
        let g = &self.geometry;
        if c != g.in_channels {
            return Err(Error::Shape(format!("layer expects {} input channels, got {c}", g.in_channels)));
        }
        let hw = match self.kind {
            LayerKind::Conv => g.conv_out(h, w),
            LayerKind::ConvTranspose => g.conv_transpose_out(h, w),
        };
        let (oh, ow) = hw.ok_or_else(|| Error::Shape(format!("input {h}x{w} too small for layer")))?;
        Ok((g.out_channels, oh, ow))
    }
}

/// Convolution weights plus optional GDN parameters for one layer.
///
/// GDN parameters are stored raw: `beta = softplus(beta_raw) + 1e-6` and
/// `gamma = gamma_raw^2`, which keeps the constraints satisfied for any raw
/// value the optimizer produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub spec: ConvLayerSpec,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub beta_raw: Vec<T>,
    pub gamma_raw: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(spec: ConvLayerSpec) -> Self {
        let g = spec.geometry;
        let has_gdn = matches!(spec.activation, Activation::Gdn | Activation::Igdn);
        let c = g.out_channels;
        Self {
            spec,
            weight: vec![T::zero(); g.weight_len()],
            bias: vec![T::zero(); c],
            beta_raw: if has_gdn { vec![T::zero(); c] } else { Vec::new() },
            gamma_raw: if has_gdn { vec![T::zero(); c * c] } else { Vec::new() },
        }
    }

    /// Uniform fan-in weight initialization; GDN starts near identity
    /// (beta = 1, gamma = 0.1 on the diagonal, small off-diagonal coupling).
    pub fn init<R: Rng + ?Sized>(spec: ConvLayerSpec, rng: &mut R) -> Self {
        let mut layer = Self::zeros(spec);
        let g = spec.geometry;
        let fan_in = match spec.kind {
            LayerKind::Conv => g.in_channels * g.kernel * g.kernel,
            LayerKind::ConvTranspose => (g.in_channels * g.kernel * g.kernel / (g.stride * g.stride)).max(1),
        };
        let bound = (1.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid uniform bounds");
        for w in &mut layer.weight {
            *w = T::lit(dist.sample(rng));
        }
        for b in &mut layer.bias {
            *b = T::lit(dist.sample(rng) * 0.1);
        }
        if !layer.beta_raw.is_empty() {
            let c = g.out_channels;
            let b0 = softplus_inv(T::lit(1.0 - GDN_BETA_FLOOR));
            layer.beta_raw.iter_mut().for_each(|b| *b = b0);
            for i in 0..c {
                for j in 0..c {
                    layer.gamma_raw[i * c + j] = if i == j { T::lit(0.1f64.sqrt()) } else { T::lit(0.01) };
                }
            }
        }
        layer
    }

    pub fn gdn_beta(&self) -> Vec<T> {
        self.beta_raw.iter().map(|&b| softplus(b) + T::lit(GDN_BETA_FLOOR)).collect()
    }

    pub fn gdn_gamma(&self) -> Vec<T> {
        self.gamma_raw.iter().map(|&g| g * g).collect()
    }

    fn linear(&self, x: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        let (_, oh, ow) = self.spec.output_shape(x.shape())?;
        let g = &self.spec.geometry;
        Ok(match self.spec.kind {
            LayerKind::Conv => conv::conv2d(x, &self.weight, &self.bias, g, oh, ow),
            LayerKind::ConvTranspose => conv::conv_transpose2d(x, &self.weight, &self.bias, g, oh, ow),
        })
    }

    fn param_arrays(&self) -> [(&'static str, &Vec<T>); 4] {
        [
            ("weight", &self.weight),
            ("bias", &self.bias),
            ("gdn_beta_raw", &self.beta_raw),
            ("gdn_gamma_raw", &self.gamma_raw),
        ]
    }

    fn param_arrays_mut(&mut self) -> [(&'static str, &mut Vec<T>); 4] {
        [
            ("weight", &mut self.weight),
            ("bias", &mut self.bias),
            ("gdn_beta_raw", &mut self.beta_raw),
            ("gdn_gamma_raw", &mut self.gamma_raw),
        ]
    }

    fn param_dims(&self, name: &str) -> Vec<usize> {
        let g = &self.spec.geometry;
        match name {
            "weight" => match self.spec.kind {
                LayerKind::Conv => vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
                LayerKind::ConvTranspose => vec![g.in_channels, g.out_channels, g.kernel, g.kernel],
            },
            "gdn_gamma_raw" => vec![g.out_channels, g.out_channels],
            _ => vec![g.out_channels],
        }
    }
}

/// Activations recorded by [`Stack::forward_recorded`] for one layer.
#[derive(Clone, Debug)]
struct LayerRecord<T> {
    input: FeatureTensor<T>,
    pre_activation: FeatureTensor<T>,
    output: FeatureTensor<T>,
    gdn_norms: Vec<T>,
}

/// Recorded forward pass; consumed by [`Stack::backward`].
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    records: Vec<LayerRecord<T>>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self { records: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A sequential convolutional stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Stack<T> {
    pub fn from_specs(specs: &[ConvLayerSpec]) -> Result<Self> {
        Self::check_chain(specs)?;
        Ok(Self { layers: specs.iter().map(|s| Layer::zeros(*s)).collect() })
    }

    pub fn init<R: Rng + ?Sized>(specs: &[ConvLayerSpec], rng: &mut R) -> Result<Self> {
        Self::check_chain(specs)?;
        Ok(Self { layers: specs.iter().map(|s| Layer::init(*s, rng)).collect() })
    }

    fn check_chain(specs: &[ConvLayerSpec]) -> Result<()> {
        for s in specs {
            s.validate()?;
        }
        for pair in specs.windows(2) {
            if pair[0].geometry.out_channels != pair[1].geometry.in_channels {
                return Err(Error::Shape(format!(
                    "layer chain broken: {} output channels feed {} input channels",
                    pair[0].geometry.out_channels, pair[1].geometry.in_channels
                )));
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<ConvLayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.geometry.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.geometry.out_channels)
    }

    pub fn output_shape(&self, shape: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        self.layers.iter().try_fold(shape, |s, l| l.spec.output_shape(s))
    }

    pub fn forward(&self, x: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = Self::layer_forward(layer, &cur)?.0;
        }
        Ok(cur)
    }

    fn layer_forward(layer: &Layer<T>, x: &FeatureTensor<T>) -> Result<(FeatureTensor<T>, FeatureTensor<T>, Vec<T>)> {
        let u = layer.linear(x)?;
        let (y, norms) = match layer.spec.activation {
            Activation::None => (u.clone(), Vec::new()),
            Activation::Relu => (u.map(|v| v.max(T::zero())), Vec::new()),
            Activation::Tanh => (u.map(T::tanh), Vec::new()),
            Activation::Gdn | Activation::Igdn => {
                let inverse = layer.spec.activation == Activation::Igdn;
                gdn::gdn_unchecked(&u, &layer.gdn_beta(), &layer.gdn_gamma(), inverse)
            }
        };
        Ok((y, u, norms))
    }

    /// Forward pass that records the activations needed by [`backward`](Self::backward).
    /// Any previous contents of `tape` are discarded.
    pub fn forward_recorded(&self, x: &FeatureTensor<T>, tape: &mut Tape<T>) -> Result<FeatureTensor<T>> {
        tape.records.clear();
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, u, norms) = Self::layer_forward(layer, &cur)?;
            tape.records.push(LayerRecord { input: cur, pre_activation: u, output: y.clone(), gdn_norms: norms });
            cur = y;
        }
        Ok(cur)
    }

    /// Reverse-mode pass over a recorded forward computation.
    ///
    /// Returns the gradient with respect to the stack input and a stack-shaped
    /// container holding the gradient of every parameter (raw GDN parameters
    /// included).
    pub fn backward(&self, tape: &Tape<T>, grad_out: &FeatureTensor<T>) -> Result<(FeatureTensor<T>, Stack<T>)> {
        if tape.records.is_empty() && !self.layers.is_empty() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if tape.records.len() != self.layers.len() {
            return Err(Error::State("tape was recorded on a different stack".into()));
        }
        let mut grads = Stack { layers: self.layers.iter().map(|l| Layer::zeros(l.spec)).collect() };
        let mut g = grad_out.clone();
        for (idx, (layer, rec)) in self.layers.iter().zip(&tape.records).enumerate().rev() {
            g.check_same_shape(&rec.output)?;
            let gl = &mut grads.layers[idx];
            let gu = match layer.spec.activation {
                Activation::None => g,
                Activation::Relu => g.zip_map(&rec.pre_activation, |gv, u| if u > T::zero() { gv } else { T::zero() })?,
                Activation::Tanh => g.zip_map(&rec.output, |gv, y| gv * (T::one() - y * y))?,
                Activation::Gdn | Activation::Igdn => {
                    let inverse = layer.spec.activation == Activation::Igdn;
                    let gamma = layer.gdn_gamma();
                    let (gu, gbeta, ggamma) = gdn::gdn_backward(&rec.pre_activation, &gamma, &rec.gdn_norms, &g, inverse);
                    for (dst, (gb, braw)) in gl.beta_raw.iter_mut().zip(gbeta.iter().zip(&layer.beta_raw)) {
                        *dst = *gb * softplus_grad(*braw);
                    }
                    for (dst, (gg, graw)) in gl.gamma_raw.iter_mut().zip(ggamma.iter().zip(&layer.gamma_raw)) {
                        *dst = *gg * (*graw + *graw);
                    }
                    gu
                }
            };
            let geom = &layer.spec.geometry;
            let (gx, gw, gb) = match layer.spec.kind {
                LayerKind::Conv => conv::conv2d_backward(&rec.input, &layer.weight, geom, &gu),
                LayerKind::ConvTranspose => conv::conv_transpose2d_backward(&rec.input, &layer.weight, geom, &gu),
            };
            gl.weight = gw;
            gl.bias = gb;
            g = gx;
        }
        Ok((g, grads))
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Layer::zeros(l.spec)).collect() }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, _, d| n += d.len());
        n
    }

    /// Calls `f(name, dims, values)` for every non-empty parameter array.
    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, arr) in layer.param_arrays() {
                if !arr.is_empty() {
                    f(&format!("{prefix}{i}.{name}"), &layer.param_dims(name), arr);
                }
            }
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let dims: Vec<_> = ["weight", "bias", "gdn_beta_raw", "gdn_gamma_raw"]
                .iter()
                .map(|n| layer.param_dims(n))
                .collect();
            for ((name, arr), d) in layer.param_arrays_mut().into_iter().zip(&dims) {
                if !arr.is_empty() {
                    f(&format!("{prefix}{i}.{name}"), d, arr);
                }
            }
        }
    }

    /// Adds `other` element-wise (used to accumulate gradients).
    pub fn add_assign(&mut self, other: &Stack<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
            for (x, y) in a.beta_raw.iter_mut().zip(&b.beta_raw) {
                *x += *y;
            }
            for (x, y) in a.gamma_raw.iter_mut().zip(&b.gamma_raw) {
                *x += *y;
            }
        }
    }
}
