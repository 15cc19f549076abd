//! Complete set of trainable parameters.

use rand::Rng;

use crate::codec::{ArchConfig, CodecParams};
use crate::error::{Error, Result};
use crate::hyperprior::HyperParams;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel<T> {
    pub arch: ArchConfig,
    pub codec: CodecParams<T>,
    pub hyper: HyperParams<T>,
}

impl<T: Scalar> SystemModel<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch: arch.clone(), codec: CodecParams::zeros(arch)?, hyper: HyperParams::zeros(arch)? })
    }

    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch: arch.clone(), codec: CodecParams::init(arch, rng)?, hyper: HyperParams::init(arch, rng)? })
    }

    /// Same structure with every parameter set to zero.
    pub fn zeros_like(&self) -> Self {
        Self { arch: self.arch.clone(), codec: self.codec.zeros_like(), hyper: self.hyper.zeros_like() }
    }

    /// Visits every parameter array in a fixed order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.codec.visit_params(f);
        self.hyper.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.codec.visit_params_mut(f);
        self.hyper.visit_params_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, v| n += v.len());
        n
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::Shape(format!("expected {n} parameters, got {}", flat.len())));
        }
        let mut at = 0;
        self.visit_params_mut(&mut |_, _, v| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        Ok(())
    }

    /// `(name, offset, len)` for every parameter array in flat order.
    pub fn param_layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        self.visit_params(&mut |name, _, v| {
            out.push((name.to_string(), at, v.len()));
            at += v.len();
        });
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_roundtrip_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = SystemModel::<f64>::init(&ArchConfig::tiny(), &mut rng).unwrap();
        let flat = m.to_flat();
        assert_eq!(flat.len(), m.param_count());
        assert!(m.param_count() <= 500, "{}", m.param_count());
        let mut z = m.zeros_like();
        assert!(z.to_flat().iter().all(|&v| v == 0.0));
        z.set_flat(&flat).unwrap();
        assert_eq!(z, m);
        assert!(z.set_flat(&flat[1..]).is_err());
        let layout = m.param_layout();
        assert_eq!(layout.last().map(|(_, o, l)| o + l), Some(flat.len()));
    }
}
