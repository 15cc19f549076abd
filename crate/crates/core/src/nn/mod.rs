//! Convolutional building blocks with hand-written reverse-mode gradients.

pub mod conv;
pub mod gdn;
pub mod stack;

pub use conv::ConvGeometry;
pub use gdn::{gdn_forward, igdn_forward};
pub use stack::{Activation, ConvLayerSpec, Layer, LayerKind, Stack, Tape};
