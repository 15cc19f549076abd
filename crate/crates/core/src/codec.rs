//! The four learned transforms: latent transform, JSCC encoder, JSCC decoder
//! and latent inversion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayerSpec, Stack, Tape};
use crate::scalar::Scalar;
use crate::shared::merged_channels;
use crate::tensor::FeatureTensor;

/// Architecture sizes. The layer pattern is fixed; only widths and the
/// image geometry vary.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Images merged per transmission (N).
    pub n_images: usize,
    /// Shared information extraction rate.
    pub gamma_p: f64,
    /// Latent channels C emitted by the latent transform.
    pub latent_channels: usize,
    /// Hidden widths of the latent transform, innermost last.
    pub lt_widths: [usize; 3],
    pub jscc_hidden: usize,
    pub hyper_channels: usize,
}

impl ArchConfig {
    /// Full-size network: 3×512×1024 images, C = 64.
    pub fn full_scale() -> Self {
        Self {
            image_height: 512,
            image_width: 1024,
            n_images: 2,
            gamma_p: 0.5,
            latent_channels: 64,
            lt_widths: [64, 128, 256],
            jscc_hidden: 48,
            hyper_channels: 32,
        }
    }

    /// Same layer pattern with every width divided by 8 on 3×32×64 images.
    pub fn desk() -> Self {
        Self {
            image_height: 32,
            image_width: 64,
            n_images: 2,
            gamma_p: 0.5,
            latent_channels: 8,
            lt_widths: [8, 16, 32],
            jscc_hidden: 6,
            hyper_channels: 4,
        }
    }

    /// Single-channel widths on 3×32×32 images, small enough for
    /// parameter-by-parameter finite differences.
    pub fn tiny() -> Self {
        Self {
            image_height: 32,
            image_width: 32,
            n_images: 2,
            gamma_p: 0.5,
            latent_channels: 2,
            lt_widths: [1, 1, 1],
            jscc_hidden: 1,
            hyper_channels: 1,
        }
    }

    pub fn shared_channels(&self) -> usize {
        (self.gamma_p * self.latent_channels as f64).floor() as usize
    }

    /// Channel count C2 of the merged latent.
    pub fn merged_channels(&self) -> usize {
        merged_channels(self.n_images, self.latent_channels, self.shared_channels())
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.latent_channels, self.image_height / 8, self.image_width / 8)
    }

    pub fn merged_shape(&self) -> (usize, usize, usize) {
        (self.merged_channels(), self.image_height / 8, self.image_width / 8)
    }

    pub fn hyper_shape(&self) -> (usize, usize, usize) {
        (self.hyper_channels, self.image_height / 32, self.image_width / 32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 || self.image_height % 32 != 0 || self.image_width % 32 != 0
        {
            return Err(Error::Config(format!(
                "image size {}x{} must be a positive multiple of 32",
                self.image_height, self.image_width
            )));
        }
        if self.n_images == 0 {
            return Err(Error::Config("n_images must be at least 1".into()));
        }
        if !(self.gamma_p > 0.0 && self.gamma_p < 1.0) {
            return Err(Error::Config(format!("gamma_p = {} must lie in (0, 1)", self.gamma_p)));
        }
        if self.latent_channels == 0
            || self.lt_widths.contains(&0)
            || self.jscc_hidden == 0
            || self.hyper_channels == 0
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn lt_e_specs(&self) -> Vec<ConvLayerSpec> {
        let [w1, w2, w3] = self.lt_widths;
        vec![
            ConvLayerSpec::conv(3, w1, 3, 1, Activation::Gdn),
            ConvLayerSpec::conv(w1, w2, 3, 2, Activation::Gdn),
            ConvLayerSpec::conv(w2, w3, 3, 2, Activation::Gdn),
            ConvLayerSpec::conv(w3, self.latent_channels, 3, 2, Activation::None),
        ]
    }

    pub fn jscc_specs(&self) -> Vec<ConvLayerSpec> {
        let c2 = self.merged_channels();
        vec![
            ConvLayerSpec::conv(c2, self.jscc_hidden, 3, 1, Activation::Gdn),
            ConvLayerSpec::conv(self.jscc_hidden, c2, 3, 1, Activation::None),
        ]
    }

    pub fn lt_d_specs(&self) -> Vec<ConvLayerSpec> {
        let [w1, w2, w3] = self.lt_widths;
        vec![
            ConvLayerSpec::conv_t(self.latent_channels, w3, 3, 2, 1, Activation::Gdn),
            ConvLayerSpec::conv_t(w3, w2, 3, 2, 1, Activation::Gdn),
            ConvLayerSpec::conv_t(w2, w1, 3, 2, 1, Activation::Gdn),
            ConvLayerSpec::conv(w1, 3, 3, 1, Activation::Tanh),
        ]
    }

    pub fn h_a_specs(&self) -> Vec<ConvLayerSpec> {
        let hc = self.hyper_channels;
        vec![
            ConvLayerSpec::conv(self.merged_channels(), hc, 3, 1, Activation::Relu),
            ConvLayerSpec::conv(hc, hc, 5, 2, Activation::Relu),
            ConvLayerSpec::conv(hc, hc, 5, 2, Activation::None),
        ]
    }

    /// The last layer is linear; positivity comes from the softplus applied
    /// by the hyperprior module.
    pub fn h_s_specs(&self) -> Vec<ConvLayerSpec> {
        let hc = self.hyper_channels;
        vec![
            ConvLayerSpec::conv_t(hc, hc, 5, 2, 1, Activation::Relu),
            ConvLayerSpec::conv_t(hc, hc, 5, 2, 1, Activation::Relu),
            ConvLayerSpec::conv_t(hc, self.merged_channels(), 3, 1, 0, Activation::None),
        ]
    }
}

/// Parameters of the latent transform (`lt_e`), JSCC encoder (`a_e`),
/// JSCC decoder (`a_d`) and latent inversion (`lt_d`).
#[derive(Clone, Debug, PartialEq)]
pub struct CodecParams<T> {
    pub lt_e: Stack<T>,
    pub a_e: Stack<T>,
    pub a_d: Stack<T>,
    pub lt_d: Stack<T>,
}

impl<T: Scalar> CodecParams<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        Ok(Self {
            lt_e: Stack::from_specs(&arch.lt_e_specs())?,
            a_e: Stack::from_specs(&arch.jscc_specs())?,
            a_d: Stack::from_specs(&arch.jscc_specs())?,
            lt_d: Stack::from_specs(&arch.lt_d_specs())?,
        })
    }

    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            lt_e: Stack::init(&arch.lt_e_specs(), rng)?,
            a_e: Stack::init(&arch.jscc_specs(), rng)?,
            a_d: Stack::init(&arch.jscc_specs(), rng)?,
            lt_d: Stack::init(&arch.lt_d_specs(), rng)?,
        })
    }

    pub fn latent_transform(&self, img: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        check_image_dims(img)?;
        self.lt_e.forward(img)
    }

    pub fn latent_transform_recorded(&self, img: &FeatureTensor<T>, tape: &mut Tape<T>) -> Result<FeatureTensor<T>> {
        check_image_dims(img)?;
        self.lt_e.forward_recorded(img, tape)
    }

    /// Latent inversion with the final `tanh` output remapped to `[0, 1]`.
    pub fn latent_inverse(&self, lat: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        check_channels(lat, self.lt_d.in_channels(), "latent inversion")?;
        Ok(tanh_to_unit(&self.lt_d.forward(lat)?))
    }

    pub fn latent_inverse_recorded(&self, lat: &FeatureTensor<T>, tape: &mut Tape<T>) -> Result<FeatureTensor<T>> {
        check_channels(lat, self.lt_d.in_channels(), "latent inversion")?;
        Ok(tanh_to_unit(&self.lt_d.forward_recorded(lat, tape)?))
    }

    /// Backward through [`latent_inverse_recorded`](Self::latent_inverse_recorded),
    /// taking the gradient with respect to the `[0, 1]` image.
    pub fn latent_inverse_backward(
        &self,
        tape: &Tape<T>,
        grad_image: &FeatureTensor<T>,
    ) -> Result<(FeatureTensor<T>, Stack<T>)> {
        let half = T::lit(0.5);
        self.lt_d.backward(tape, &grad_image.map(|g| g * half))
    }

    pub fn jscc_encode(&self, s: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        check_channels(s, self.a_e.in_channels(), "JSCC encoder")?;
        self.a_e.forward(s)
    }

    pub fn jscc_decode(&self, y: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        check_channels(y, self.a_d.in_channels(), "JSCC decoder")?;
        self.a_d.forward(y)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lt_e: self.lt_e.zeros_like(),
            a_e: self.a_e.zeros_like(),
            a_d: self.a_d.zeros_like(),
            lt_d: self.lt_d.zeros_like(),
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.lt_e.visit_params("lt_e.", f);
        self.a_e.visit_params("a_e.", f);
        self.a_d.visit_params("a_d.", f);
        self.lt_d.visit_params("lt_d.", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.lt_e.visit_params_mut("lt_e.", f);
        self.a_e.visit_params_mut("a_e.", f);
        self.a_d.visit_params_mut("a_d.", f);
        self.lt_d.visit_params_mut("lt_d.", f);
    }
}

fn check_image_dims<T: Scalar>(img: &FeatureTensor<T>) -> Result<()> {
    let (c, h, w) = img.shape();
    if c != 3 {
        return Err(Error::Shape(format!("latent transform expects 3 channels, got {c}")));
    }
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("image dims {h}x{w} must be divisible by 8")));
    }
    Ok(())
}

fn check_channels<T: Scalar>(t: &FeatureTensor<T>, expected: usize, what: &str) -> Result<()> {
    if t.channels() != expected {
        return Err(Error::Shape(format!("{what} expects {expected} channels, got {}", t.channels())));
    }
    Ok(())
}

fn tanh_to_unit<T: Scalar>(t: &FeatureTensor<T>) -> FeatureTensor<T> {
    let half = T::lit(0.5);
    t.map(|v| (v + T::one()) * half)
}
