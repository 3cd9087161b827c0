//! Channel concatenation/slicing and the 2x spatial resampling pair used by
//! the encoder-decoder backbone.

use crate::error::{Error, Result};
use crate::ops::{expect_inputs, DiffOp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stack `a` (C1) and `b` (C2) along channels; `a` comes first. A zero-channel
/// operand is allowed and acts as the identity.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ha, wa) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if ca > 0 && cb > 0 && (ha != hb || wa != wb) {
        return Err(Error::config(format!(
            "concat spatial mismatch: {}x{} vs {}x{}",
            ha, wa, hb, wb
        )));
    }
    let (h, w) = if ca > 0 { (ha, wa) } else { (hb, wb) };
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, h, w], data)
}

#[derive(Debug, Clone)]
pub struct Concat2;

impl<T: Scalar> DiffOp<T> for Concat2 {
    fn name(&self) -> String {
        "concat".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("concat", inputs, 2)?;
        concat(inputs[0], inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("concat", inputs, 2)?;
        let na = inputs[0].len();
        let da = Tensor::new(
            inputs[0].shape().to_vec(),
            upstream.data()[..na].to_vec(),
        )?;
        let db = Tensor::new(
            inputs[1].shape().to_vec(),
            upstream.data()[na..].to_vec(),
        )?;
        Ok(vec![da, db])
    }
}

/// View of channels `[from, to)` as an owned tensor.
#[derive(Debug, Clone)]
pub struct SliceChannels {
    pub from: usize,
    pub to: usize,
}

impl<T: Scalar> DiffOp<T> for SliceChannels {
    fn name(&self) -> String {
        format!("slice_channels({}..{})", self.from, self.to)
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("slice_channels", inputs, 1)?;
        let (c, h, w) = inputs[0].dims3()?;
        if self.from > self.to || self.to > c {
            return Err(Error::config(format!(
                "slice {}..{} out of range for {c} channels",
                self.from, self.to
            )));
        }
        let hw = h * w;
        Tensor::new(
            vec![self.to - self.from, h, w],
            inputs[0].data()[self.from * hw..self.to * hw].to_vec(),
        )
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("slice_channels", inputs, 1)?;
        let (_, h, w) = inputs[0].dims3()?;
        let hw = h * w;
        let mut dx = Tensor::zeros(inputs[0].shape().to_vec());
        dx.data_mut()[self.from * hw..self.to * hw].copy_from_slice(upstream.data());
        Ok(vec![dx])
    }
}

/// 2x2 average pooling; spatial dims must be even.
#[derive(Debug, Clone)]
pub struct AvgPool2;

impl<T: Scalar> DiffOp<T> for AvgPool2 {
    fn name(&self) -> String {
        "avg_pool2".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("avg_pool2", inputs, 1)?;
        avg_pool2(inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("avg_pool2", inputs, 1)?;
        let (c, h, w) = inputs[0].dims3()?;
        let (ho, wo) = (h / 2, w / 2);
        let q = T::from_f64_c(0.25);
        let mut dx = Tensor::zeros(vec![c, h, w]);
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let g = upstream.data()[(ch * ho + y) * wo + x] * q;
                    for (dy, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * y + dy) * w + 2 * x + dx_;
                        dx.data_mut()[idx] = dx.data_mut()[idx] + g;
                    }
                }
            }
        }
        Ok(vec![dx])
    }
}

pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!(
            "avg_pool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let q = T::from_f64_c(0.25);
    let mut out = Tensor::zeros(vec![c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let base = (ch * h + 2 * y) * w + 2 * xx;
                dst[(ch * ho + y) * wo + xx] =
                    (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * q;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2x upsampling.
#[derive(Debug, Clone)]
pub struct UpsampleNearest2;

impl<T: Scalar> DiffOp<T> for UpsampleNearest2 {
    fn name(&self) -> String {
        "upsample_nearest2".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("upsample_nearest2", inputs, 1)?;
        let (c, h, w) = inputs[0].dims3()?;
        let (ho, wo) = (h * 2, w * 2);
        let mut out = Tensor::zeros(vec![c, ho, wo]);
        let src = inputs[0].data();
        let dst = out.data_mut();
        for ch in 0..c {
            for y in 0..ho {
                let sy = y / 2;
                let srow = &src[(ch * h + sy) * w..(ch * h + sy) * w + w];
                let drow = &mut dst[(ch * ho + y) * wo..(ch * ho + y) * wo + wo];
                for x in 0..wo {
                    drow[x] = srow[x / 2];
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("upsample_nearest2", inputs, 1)?;
        let (c, h, w) = inputs[0].dims3()?;
        let (ho, wo) = (h * 2, w * 2);
        let mut dx = Tensor::zeros(vec![c, h, w]);
        let up = upstream.data();
        let dst = dx.data_mut();
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let d = (ch * h + y / 2) * w + x / 2;
                    dst[d] = dst[d] + up[(ch * ho + y) * wo + x];
                }
            }
        }
        Ok(vec![dx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_with_empty_is_identity() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 3], |i| i as f32);
        let empty = Tensor::<f32>::zeros(vec![0, 3, 3]);
        assert_eq!(concat(&x, &empty).unwrap(), x);
        assert_eq!(concat(&empty, &x).unwrap(), x);
    }

    #[test]
    fn concat_orders_channels() {
        let a = Tensor::<f32>::full(vec![2, 2, 2], 1.0);
        let b = Tensor::<f32>::from_fn(vec![3, 2, 2], |i| 10.0 + i as f32);
        let y = concat(&a, &b).unwrap();
        assert_eq!(y.shape(), &[5, 2, 2]);
        // channel 2 of the result equals channel 0 of b
        assert_eq!(y.at3(2, 0, 0), b.at3(0, 0, 0));
        assert_eq!(y.at3(2, 1, 1), b.at3(0, 1, 1));
    }

    #[test]
    fn concat_backward_splits_at_boundary() {
        let a = Tensor::<f64>::zeros(vec![1, 2, 2]);
        let b = Tensor::<f64>::zeros(vec![2, 2, 2]);
        let up = Tensor::<f64>::from_fn(vec![3, 2, 2], |i| i as f64);
        let grads = Concat2.backward(&[&a, &b], &up).unwrap();
        assert_eq!(grads[0].data(), &up.data()[..4]);
        assert_eq!(grads[1].data(), &up.data()[4..]);
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let a = Tensor::<f32>::zeros(vec![1, 2, 2]);
        let b = Tensor::<f32>::zeros(vec![1, 3, 2]);
        assert!(concat(&a, &b).is_err());
    }

    #[test]
    fn pool_then_upsample_shapes() {
        let x = Tensor::<f32>::from_fn(vec![2, 4, 6], |i| i as f32);
        let p = avg_pool2(&x).unwrap();
        assert_eq!(p.shape(), &[2, 2, 3]);
        let u = UpsampleNearest2.forward(&[&p]).unwrap();
        assert_eq!(u.shape(), &[2, 4, 6]);
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let x = Tensor::<f64>::full(vec![1, 4, 4], 0.7);
        let p = avg_pool2(&x).unwrap();
        for &v in p.data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }
}
