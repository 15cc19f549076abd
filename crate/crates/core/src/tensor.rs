//! Dense channel-major feature tensors.
//!
//! A [`FeatureTensor`] stores `channels × height × width` values with each
//! channel laid out contiguously in row-major order, so channel slicing and
//! channel concatenation are plain memory copies.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureTensor<T> {
    /// Wraps `data` as a `channels × height × width` tensor.
    ///
    /// Fails if the length does not match or any value is not finite.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {channels}x{height}x{width} = {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    /// Builds a tensor with the same shape as `self` from a flat vector
    /// without finiteness checks. Internal helper for shape-preserving maps.
    pub(crate) fn with_data(&self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { channels: self.channels, height: self.height, width: self.width, data }
    }

    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Number of values in one channel plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    /// Contiguous view of channel `c`.
    pub fn channel(&self, c: usize) -> Result<&[T]> {
        if c >= self.channels {
            return Err(Error::Index { index: c, len: self.channels });
        }
        let p = self.plane();
        Ok(&self.data[c * p..(c + 1) * p])
    }

    pub fn channel_mut(&mut self, c: usize) -> Result<&mut [T]> {
        if c >= self.channels {
            return Err(Error::Index { index: c, len: self.channels });
        }
        let p = self.plane();
        Ok(&mut self.data[c * p..(c + 1) * p])
    }

    /// Row-major scan of channel `c` as an owned vector of length `H·W`.
    pub fn flatten_channel(&self, c: usize) -> Result<Vec<T>> {
        self.channel(c).map(<[T]>::to_vec)
    }

    /// Inverse of [`flatten_channel`](Self::flatten_channel): a single-channel
    /// tensor from a row-major plane.
    pub fn from_plane(height: usize, width: usize, plane: Vec<T>) -> Result<Self> {
        Self::new(1, height, width, plane)
    }

    /// Copies channels `start..end` into a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.channels {
            return Err(Error::Shape(format!(
                "channel range {start}..{end} invalid for {} channels",
                self.channels
            )));
        }
        let p = self.plane();
        Ok(Self::from_raw(end - start, self.height, self.width, self.data[start * p..end * p].to_vec()))
    }

    /// Gathers the listed channels, in list order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        let p = self.plane();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &c in indices {
            data.extend_from_slice(self.channel(c)?);
        }
        Ok(Self::from_raw(indices.len(), self.height, self.width, data))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> FeatureTensor<U> {
        FeatureTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Concatenates tensors along the channel axis, preserving part order.
pub fn concat_channels<T: Scalar>(parts: &[FeatureTensor<T>]) -> Result<FeatureTensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat_channels needs at least one part".into()))?;
    let (h, w) = (first.height, first.width);
    let mut channels = 0;
    for p in parts {
        if (p.height, p.width) != (h, w) {
            return Err(Error::Shape(format!(
                "spatial dims {}x{} do not match {h}x{w}",
                p.height, p.width
            )));
        }
        channels += p.channels;
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(FeatureTensor::from_raw(channels, h, w, data))
}

/// Element-wise arithmetic mean of equally shaped tensors.
pub fn mean_channels<T: Scalar>(parts: &[FeatureTensor<T>]) -> Result<FeatureTensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("mean_channels needs at least one part".into()))?;
    // running mean: equal inputs give back the input bit-exactly
    let mut acc = first.data.clone();
    for (k, p) in parts.iter().enumerate().skip(1) {
        first.check_same_shape(p)?;
        let inv = T::one() / T::from_usize_lossy(k + 1);
        for (a, &b) in acc.iter_mut().zip(&p.data) {
            *a += (b - *a) * inv;
        }
    }
    Ok(first.with_data(acc))
}

/// A group of equally sized RGB images with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T> {
    images: Vec<FeatureTensor<T>>,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn new(images: Vec<FeatureTensor<T>>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("image batch must not be empty".into()))?;
        let (h, w) = (first.height(), first.width());
        for img in &images {
            if img.channels() != 3 {
                return Err(Error::Shape(format!("image has {} channels, expected 3", img.channels())));
            }
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::Shape("images in a batch must share height and width".into()));
            }
            if img.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
                return Err(Error::Data("image values must lie in [0, 1]".into()));
            }
        }
        Ok(Self { images })
    }

    pub fn images(&self) -> &[FeatureTensor<T>] {
        &self.images
    }

    pub fn into_images(self) -> Vec<FeatureTensor<T>> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    /// Total number of pixel values `N·3·H·W`.
    pub fn value_count(&self) -> usize {
        self.images.iter().map(FeatureTensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_is_row_major() {
        let t = FeatureTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.flatten_channel(0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn flatten_second_channel_of_single_row() {
        let t = FeatureTensor::new(2, 1, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.flatten_channel(1).unwrap(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn flatten_out_of_range_is_index_error() {
        let t = FeatureTensor::<f64>::zeros(2, 2, 2);
        assert!(matches!(t.flatten_channel(2), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(FeatureTensor::new(1, 2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            FeatureTensor::new(1, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn concat_counts_channels() {
        let a = FeatureTensor::<f64>::filled(4, 3, 5, 1.0);
        let out = concat_channels(&[a.clone(), a.clone(), a]).unwrap();
        assert_eq!(out.shape(), (12, 3, 5));
    }

    #[test]
    fn concat_single_is_identity() {
        let a = FeatureTensor::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(concat_channels(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = FeatureTensor::<f64>::zeros(1, 2, 2);
        let b = FeatureTensor::<f64>::zeros(1, 2, 3);
        assert!(matches!(concat_channels(&[a, b]), Err(Error::Shape(_))));
        assert!(matches!(concat_channels::<f64>(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn mean_examples() {
        let t = FeatureTensor::from_fn(2, 2, 2, |c, y, x| (c + y * x) as f64 * 0.3);
        assert_eq!(mean_channels(&[t.clone(), t.clone()]).unwrap(), t);
        let a = FeatureTensor::new(1, 1, 1, vec![2.0]).unwrap();
        let b = FeatureTensor::new(1, 1, 1, vec![4.0]).unwrap();
        assert_eq!(mean_channels(&[a, b]).unwrap().data(), &[3.0]);
        let z = FeatureTensor::<f64>::zeros(3, 2, 2);
        assert_eq!(mean_channels(&vec![z.clone(); 5]).unwrap(), z);
        assert!(matches!(mean_channels::<f64>(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn image_batch_validation() {
        let img = FeatureTensor::<f64>::filled(3, 4, 4, 0.5);
        assert!(ImageBatch::new(vec![img.clone(), img.clone()]).is_ok());
        let odd = FeatureTensor::<f64>::filled(3, 4, 5, 0.5);
        assert!(ImageBatch::new(vec![img.clone(), odd]).is_err());
        let bright = FeatureTensor::<f64>::filled(3, 4, 4, 1.5);
        assert!(ImageBatch::new(vec![bright]).is_err());
    }

    fn tensor_strategy() -> impl Strategy<Value = FeatureTensor<f64>> {
        (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-100.0f64..100.0, c * h * w)
                .prop_map(move |d| FeatureTensor::new(c, h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn concat_then_slice_recovers_parts(a in tensor_strategy(), extra in 1usize..3) {
            let b = FeatureTensor::from_fn(extra, a.height(), a.width(), |c, y, x| (c + y + x) as f64);
            let cat = concat_channels(&[a.clone(), b.clone()]).unwrap();
            prop_assert_eq!(cat.slice_channels(0, a.channels()).unwrap(), a.clone());
            prop_assert_eq!(cat.slice_channels(a.channels(), cat.channels()).unwrap(), b);
        }

        #[test]
        fn flatten_reshape_roundtrip(a in tensor_strategy()) {
            for c in 0..a.channels() {
                let plane = a.flatten_channel(c).unwrap();
                let back = FeatureTensor::from_plane(a.height(), a.width(), plane).unwrap();
                prop_assert_eq!(back.data(), a.channel(c).unwrap());
            }
        }

        #[test]
        fn mean_within_elementwise_bounds(a in tensor_strategy(), s in -3.0f64..3.0) {
            let b = a.map(|v| v * s + 1.0);
            let m = mean_channels(&[a.clone(), b.clone()]).unwrap();
            for i in 0..m.len() {
                let lo = a.data()[i].min(b.data()[i]);
                let hi = a.data()[i].max(b.data()[i]);
                prop_assert!(m.data()[i] >= lo && m.data()[i] <= hi);
            }
        }
    }
}
