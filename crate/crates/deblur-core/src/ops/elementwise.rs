//! Pointwise nonlinearities, per-pixel softmax, masked blending, and the
//! Charbonnier distance.

use crate::error::{Error, Result};
use crate::ops::{expect_inputs, DiffOp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split by sign so neither branch exponentiates a large positive value.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[derive(Debug, Clone)]
pub struct Sigmoid;

impl<T: Scalar> DiffOp<T> for Sigmoid {
    fn name(&self) -> String {
        "sigmoid".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("sigmoid", inputs, 1)?;
        Ok(sigmoid(inputs[0]))
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("sigmoid", inputs, 1)?;
        let y = sigmoid(inputs[0]);
        Ok(vec![y.zip_map(upstream, |yv, g| g * yv * (T::one() - yv))?])
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
}

impl<T: Scalar> DiffOp<T> for LeakyRelu {
    fn name(&self) -> String {
        format!("leaky_relu({})", self.slope)
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("leaky_relu", inputs, 1)?;
        let a = T::from_f64_c(self.slope);
        Ok(inputs[0].map(|v| if v >= T::zero() { v } else { v * a }))
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("leaky_relu", inputs, 1)?;
        let a = T::from_f64_c(self.slope);
        Ok(vec![inputs[0].zip_map(upstream, |v, g| {
            if v >= T::zero() {
                g
            } else {
                g * a
            }
        })?])
    }
}

/// Smooth range limiter `y = bound * tanh(x / bound)`, used to keep
/// predicted flow inside `[-max_flow, max_flow]`.
#[derive(Debug, Clone)]
pub struct TanhClamp {
    pub bound: f64,
}

impl<T: Scalar> DiffOp<T> for TanhClamp {
    fn name(&self) -> String {
        format!("tanh_clamp({})", self.bound)
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("tanh_clamp", inputs, 1)?;
        let b = T::from_f64_c(self.bound);
        Ok(inputs[0].map(|v| b * (v / b).tanh()))
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("tanh_clamp", inputs, 1)?;
        let b = T::from_f64_c(self.bound);
        Ok(vec![inputs[0].zip_map(upstream, |v, g| {
            let t = (v / b).tanh();
            g * (T::one() - t * t)
        })?])
    }
}

/// Per-pixel softmax across channels of a `G x H x W` tensor.
pub fn channel_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (g, h, w) = x.dims3()?;
    if g == 0 {
        return Err(Error::config("channel_softmax needs at least one channel"));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(vec![g, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..hw {
        let mut m = src[p];
        for c in 1..g {
            m = m.max(src[c * hw + p]);
        }
        let mut sum = T::zero();
        for c in 0..g {
            let e = (src[c * hw + p] - m).exp();
            dst[c * hw + p] = e;
            sum = sum + e;
        }
        for c in 0..g {
            dst[c * hw + p] = dst[c * hw + p] / sum;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ChannelSoftmax;

impl<T: Scalar> DiffOp<T> for ChannelSoftmax {
    fn name(&self) -> String {
        "channel_softmax".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("channel_softmax", inputs, 1)?;
        channel_softmax(inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("channel_softmax", inputs, 1)?;
        let y = channel_softmax(inputs[0])?;
        let (g, h, w) = y.dims3()?;
        let hw = h * w;
        let mut dx = Tensor::zeros(vec![g, h, w]);
        let yv = y.data();
        let up = upstream.data();
        let dv = dx.data_mut();
        for p in 0..hw {
            let mut dot = T::zero();
            for c in 0..g {
                dot = dot + up[c * hw + p] * yv[c * hw + p];
            }
            for c in 0..g {
                dv[c * hw + p] = yv[c * hw + p] * (up[c * hw + p] - dot);
            }
        }
        Ok(vec![dx])
    }
}

/// `out = a + b` with identical shapes.
#[derive(Debug, Clone)]
pub struct Add;

impl<T: Scalar> DiffOp<T> for Add {
    fn name(&self) -> String {
        "add".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("add", inputs, 2)?;
        inputs[0].zip_map(inputs[1], |a, b| a + b)
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("add", inputs, 2)?;
        Ok(vec![upstream.clone(), upstream.clone()])
    }
}

/// Masked convex-style blend `out = m (*) a + (1 - m) (*) b`.
///
/// `m` is `1 x H x W` and broadcasts over the channels of `a` and `b`.
#[derive(Debug, Clone)]
pub struct Blend;

pub fn blend<T: Scalar>(m: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (mc, mh, mw) = m.dims3()?;
    let (c, h, w) = a.dims3()?;
    if mc != 1 || mh != h || mw != w || a.shape() != b.shape() {
        return Err(Error::config(format!(
            "blend shapes: m {:?}, a {:?}, b {:?}",
            m.shape(),
            a.shape(),
            b.shape()
        )));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(vec![c, h, w]);
    let (mv, av, bv) = (m.data(), a.data(), b.data());
    let ov = out.data_mut();
    for ch in 0..c {
        for p in 0..hw {
            let mm = mv[p];
            ov[ch * hw + p] = mm * av[ch * hw + p] + (T::one() - mm) * bv[ch * hw + p];
        }
    }
    Ok(out)
}

impl<T: Scalar> DiffOp<T> for Blend {
    fn name(&self) -> String {
        "blend".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("blend", inputs, 3)?;
        blend(inputs[0], inputs[1], inputs[2])
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("blend", inputs, 3)?;
        let (m, a, b) = (inputs[0], inputs[1], inputs[2]);
        let (c, h, w) = a.dims3()?;
        let hw = h * w;
        let mut dm = Tensor::zeros(vec![1, h, w]);
        let mut da = Tensor::zeros(vec![c, h, w]);
        let mut db = Tensor::zeros(vec![c, h, w]);
        let (mv, av, bv, up) = (m.data(), a.data(), b.data(), upstream.data());
        for ch in 0..c {
            for p in 0..hw {
                let g = up[ch * hw + p];
                dm.data_mut()[p] = dm.data_mut()[p] + g * (av[ch * hw + p] - bv[ch * hw + p]);
                da.data_mut()[ch * hw + p] = g * mv[p];
                db.data_mut()[ch * hw + p] = g * (T::one() - mv[p]);
            }
        }
        Ok(vec![dm, da, db])
    }
}

/// Mean Charbonnier distance `mean(sqrt((pred - target)^2 + eps^2))` as a
/// scalar-output op; the gradient w.r.t. `target` is also provided so the
/// op is a complete DiffOp, though training treats targets as constants.
#[derive(Debug, Clone)]
pub struct Charbonnier {
    pub eps: f64,
}

impl Default for Charbonnier {
    fn default() -> Self {
        Charbonnier { eps: 1e-3 }
    }
}

impl<T: Scalar> DiffOp<T> for Charbonnier {
    fn name(&self) -> String {
        "charbonnier".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("charbonnier", inputs, 2)?;
        let (p, t) = (inputs[0], inputs[1]);
        if p.shape() != t.shape() {
            return Err(Error::config(format!(
                "charbonnier shape mismatch {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let e2 = T::from_f64_c(self.eps * self.eps);
        let mut acc = T::zero();
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let d = a - b;
            acc = acc + (d * d + e2).sqrt();
        }
        Ok(Tensor::scalar(acc / T::from_f64_c(p.len() as f64)))
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("charbonnier", inputs, 2)?;
        let (p, t) = (inputs[0], inputs[1]);
        let e2 = T::from_f64_c(self.eps * self.eps);
        let g = upstream.data()[0] / T::from_f64_c(p.len() as f64);
        let dp = p.zip_map(t, |a, b| {
            let d = a - b;
            g * d / (d * d + e2).sqrt()
        })?;
        let dt = dp.scale(-T::one());
        Ok(vec![dp, dt])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::DiffOp;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 1]);
        assert_eq!(sigmoid(&x).data()[0], 0.5);
    }

    #[test]
    fn sigmoid_saturates() {
        let x = Tensor::<f64>::full(vec![2], 100.0);
        assert!((sigmoid(&x).data()[0] - 1.0).abs() < 1e-9);
        let x = Tensor::<f64>::full(vec![2], -100.0);
        assert!(sigmoid(&x).data()[0] < 1e-9);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        // Central difference with h = 1e-5 against the analytic backward.
        let x = Tensor::<f64>::zeros(vec![1]);
        let up = Tensor::<f64>::full(vec![1], 1.0);
        let analytic = Sigmoid.backward(&[&x], &up).unwrap()[0].data()[0];
        let h = 1e-5;
        let fd = (sigmoid(&Tensor::full(vec![1], h)).data()[0]
            - sigmoid(&Tensor::full(vec![1], -h)).data()[0])
            / (2.0 * h);
        assert!((analytic - 0.25).abs() < 1e-12);
        assert!((analytic - fd).abs() < 1e-9);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::<f64>::zeros(vec![4, 2, 2]);
        let y = channel_softmax(&x).unwrap();
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturates_on_large_logit() {
        let mut x = Tensor::<f64>::zeros(vec![4, 1, 1]);
        x.data_mut()[0] = 10.0;
        let y = channel_softmax(&x).unwrap();
        assert!(y.data()[0] > 0.9999);
    }

    #[test]
    fn charbonnier_of_equal_inputs_is_eps() {
        let p = Tensor::<f64>::full(vec![3, 4, 4], 0.3);
        let loss = Charbonnier { eps: 1e-3 }.forward(&[&p, &p]).unwrap();
        assert!((loss.data()[0] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn charbonnier_is_symmetric() {
        let a = Tensor::<f64>::from_fn(vec![2, 3], |i| (i as f64 * 1.7).sin());
        let b = Tensor::<f64>::from_fn(vec![2, 3], |i| (i as f64 * 0.9).cos());
        let op = Charbonnier::default();
        let l1 = op.forward(&[&a, &b]).unwrap().data()[0];
        let l2 = op.forward(&[&b, &a]).unwrap().data()[0];
        assert_eq!(l1, l2);
    }

    #[test]
    fn blend_with_saturated_mask_is_one_sided() {
        let a = Tensor::<f64>::from_fn(vec![2, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(vec![2, 2, 2], |i| -(i as f64));
        let ones = Tensor::full(vec![1, 2, 2], 1.0);
        assert_eq!(blend(&ones, &a, &b).unwrap(), a);
        let zeros = Tensor::zeros(vec![1, 2, 2]);
        assert_eq!(blend(&zeros, &a, &b).unwrap(), b);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_ignores_per_pixel_shift(
            vals in proptest::collection::vec(-8.0f64..8.0, 6 * 4),
            shift in -5.0f64..5.0,
        ) {
            let x = Tensor::new(vec![6, 2, 2], vals).unwrap();
            let y = channel_softmax(&x).unwrap();
            let hw = 4;
            for p in 0..hw {
                let s: f64 = (0..6).map(|c| y.data()[c * hw + p]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
            let shifted = x.map(|v| v + shift);
            let y2 = channel_softmax(&shifted).unwrap();
            prop_assert!(y.max_abs_diff(&y2) < 1e-9);
        }
    }
}
