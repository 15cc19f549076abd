//! Smooth synthetic image groups for training and tests.
//!
//! Images in a group share a low-frequency background and differ by a
//! weaker per-image pattern, so their latents are partly correlated.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{FeatureTensor, ImageBatch};

struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

fn waves<R: Rng>(rng: &mut R, count: usize, amp: (f64, f64)) -> Vec<Wave> {
    (0..count)
        .map(|_| Wave {
            amp: rng.random_range(amp.0..amp.1),
            fx: rng.random_range(0..3) as f64,
            fy: rng.random_range(0..3) as f64,
            phase: rng.random_range(0.0..TAU),
        })
        .collect()
}

fn eval(ws: &[Wave], y: usize, x: usize, h: usize, w: usize) -> f64 {
    ws.iter()
        .map(|v| v.amp * (TAU * (v.fx * x as f64 / w as f64 + v.fy * y as f64 / h as f64) + v.phase).cos())
        .sum()
}

/// `groups` batches of `n` images of size 3×`h`×`w`, values in `[0, 1]`.
pub fn synthetic_groups(groups: usize, n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<ImageBatch<f64>>> {
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Argument("group size and image dimensions must be positive".into()));
    }
    (0..groups)
        .map(|g| {
            let mut rng = stream(seed, &[g as u64]);
            let base: Vec<Vec<Wave>> = (0..3).map(|_| waves(&mut rng, 3, (0.05, 0.15))).collect();
            let offsets: Vec<f64> = (0..3).map(|_| rng.random_range(0.35..0.65)).collect();
            let images = (0..n)
                .map(|_| {
                    let own: Vec<Vec<Wave>> = (0..3).map(|_| waves(&mut rng, 2, (0.02, 0.08))).collect();
                    FeatureTensor::from_fn(3, h, w, |c, y, x| {
                        (offsets[c] + eval(&base[c], y, x, h, w) + eval(&own[c], y, x, h, w)).clamp(0.0, 1.0)
                    })
                })
                .collect();
            ImageBatch::new(images)
        })
        .collect()
}
