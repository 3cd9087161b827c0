//! Bilinear spatial sampling and backward warping.
//!
//! Coordinates outside `[0, W-1] x [0, H-1]` are clamped (replicate
//! border), matching the border policy of every other spatial op. Both the
//! sampled tensor and the coordinates are differentiable.

use crate::error::{Error, Result};
use crate::ops::{expect_inputs, DiffOp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Resolved bilinear footprint: four corner indices, their weights, and the
/// coordinate derivative gates (zero where the clamp is active).
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTap {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
    /// d(clamped x)/dx: 1 inside the image, 0 where clamped.
    pub gate_x: f64,
    pub gate_y: f64,
}

#[inline]
pub(crate) fn resolve_tap(x: f64, y: f64, w: usize, h: usize) -> BilinearTap {
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let gate_x = if x > 0.0 && x < max_x { 1.0 } else { 0.0 };
    let gate_y = if y > 0.0 && y < max_y { 1.0 } else { 0.0 };
    let xc = x.clamp(0.0, max_x);
    let yc = y.clamp(0.0, max_y);
    let x0 = xc.floor();
    let y0 = yc.floor();
    let fx = xc - x0;
    let fy = yc - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    BilinearTap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx,
        fy,
        gate_x,
        gate_y,
    }
}

/// Sample all channels of a `C x H x W` tensor at real coordinates `(x, y)`;
/// returns a length-`C` tensor.
pub fn bilinear_sample<T: Scalar>(img: &Tensor<T>, x: f64, y: f64) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    let t = resolve_tap(x, y, w, h);
    let (w00, w01, w10, w11) = tap_weights::<T>(&t);
    let hw = h * w;
    let d = img.data();
    let mut out = Tensor::zeros(vec![c]);
    for ch in 0..c {
        let base = ch * hw;
        out.data_mut()[ch] = w00 * d[base + t.y0 * w + t.x0]
            + w01 * d[base + t.y0 * w + t.x1]
            + w10 * d[base + t.y1 * w + t.x0]
            + w11 * d[base + t.y1 * w + t.x1];
    }
    Ok(out)
}

#[inline]
pub(crate) fn tap_weights<T: Scalar>(t: &BilinearTap) -> (T, T, T, T) {
    let fx = T::from_f64_c(t.fx);
    let fy = T::from_f64_c(t.fy);
    let one = T::one();
    (
        (one - fx) * (one - fy),
        fx * (one - fy),
        (one - fx) * fy,
        fx * fy,
    )
}

/// `bilinear_sample` as a DiffOp over inputs `[img, coords]` where `coords`
/// is a 2-element tensor `(x, y)`.
#[derive(Debug, Clone)]
pub struct BilinearSample;

impl<T: Scalar> DiffOp<T> for BilinearSample {
    fn name(&self) -> String {
        "bilinear_sample".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("bilinear_sample", inputs, 2)?;
        let coords = inputs[1];
        if coords.len() != 2 {
            return Err(Error::config("coords must have 2 elements"));
        }
        bilinear_sample(
            inputs[0],
            coords.data()[0].to_f64_c(),
            coords.data()[1].to_f64_c(),
        )
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("bilinear_sample", inputs, 2)?;
        let img = inputs[0];
        let coords = inputs[1];
        let (c, h, w) = img.dims3()?;
        let t = resolve_tap(coords.data()[0].to_f64_c(), coords.data()[1].to_f64_c(), w, h);
        let (w00, w01, w10, w11) = tap_weights::<T>(&t);
        let hw = h * w;
        let d = img.data();

        let mut dimg = Tensor::zeros(img.shape().to_vec());
        let mut dx = T::zero();
        let mut dy = T::zero();
        let fx = T::from_f64_c(t.fx);
        let fy = T::from_f64_c(t.fy);
        let one = T::one();
        for ch in 0..c {
            let g = upstream.data()[ch];
            let base = ch * hw;
            let (v00, v01, v10, v11) = (
                d[base + t.y0 * w + t.x0],
                d[base + t.y0 * w + t.x1],
                d[base + t.y1 * w + t.x0],
                d[base + t.y1 * w + t.x1],
            );
            let dd = dimg.data_mut();
            dd[base + t.y0 * w + t.x0] = dd[base + t.y0 * w + t.x0] + g * w00;
            dd[base + t.y0 * w + t.x1] = dd[base + t.y0 * w + t.x1] + g * w01;
            dd[base + t.y1 * w + t.x0] = dd[base + t.y1 * w + t.x0] + g * w10;
            dd[base + t.y1 * w + t.x1] = dd[base + t.y1 * w + t.x1] + g * w11;
            dx = dx + g * ((one - fy) * (v01 - v00) + fy * (v11 - v10));
            dy = dy + g * ((one - fx) * (v10 - v00) + fx * (v11 - v01));
        }
        let mut dcoords = Tensor::zeros(coords.shape().to_vec());
        dcoords.data_mut()[0] = dx * T::from_f64_c(t.gate_x);
        dcoords.data_mut()[1] = dy * T::from_f64_c(t.gate_y);
        Ok(vec![dimg, dcoords])
    }
}

/// Backward warp: `out[c,y,x] = sample(X[c], x + flow[0,y,x], y + flow[1,y,x])`.
///
/// With `negate_flow` the displacement sign is flipped, giving the second
/// arm of the bidirectional alignment without materializing `-flow`.
#[derive(Debug, Clone)]
pub struct Warp {
    pub negate_flow: bool,
}

pub fn warp<T: Scalar>(x: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    warp_signed(x, flow, false)
}

pub fn warp_signed<T: Scalar>(x: &Tensor<T>, flow: &Tensor<T>, negate: bool) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let (fc, fh, fw) = flow.dims3()?;
    if fc != 2 || fh != h || fw != w {
        return Err(Error::config(format!(
            "warp flow shape {:?} does not match image {}x{}",
            flow.shape(),
            h,
            w
        )));
    }
    let sign = if negate { -1.0 } else { 1.0 };
    let hw = h * w;
    let fd = flow.data();
    let xd = x.data();
    let mut out = Tensor::zeros(vec![c, h, w]);
    let od = out.data_mut();
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            let sx = xx as f64 + sign * fd[p].to_f64_c();
            let sy = y as f64 + sign * fd[hw + p].to_f64_c();
            let t = resolve_tap(sx, sy, w, h);
            let (w00, w01, w10, w11) = tap_weights::<T>(&t);
            for ch in 0..c {
                let base = ch * hw;
                od[base + p] = w00 * xd[base + t.y0 * w + t.x0]
                    + w01 * xd[base + t.y0 * w + t.x1]
                    + w10 * xd[base + t.y1 * w + t.x0]
                    + w11 * xd[base + t.y1 * w + t.x1];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`warp_signed`] w.r.t. `(x, flow)`.
pub fn warp_signed_backward<T: Scalar>(
    x: &Tensor<T>,
    flow: &Tensor<T>,
    negate: bool,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = x.dims3()?;
    let sign = if negate { -1.0 } else { 1.0 };
    let signt = T::from_f64_c(sign);
    let hw = h * w;
    let fd = flow.data();
    let xd = x.data();
    let up = upstream.data();
    let mut dx = Tensor::zeros(vec![c, h, w]);
    let mut dflow = Tensor::zeros(vec![2, h, w]);
    let one = T::one();
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            let sx = xx as f64 + sign * fd[p].to_f64_c();
            let sy = y as f64 + sign * fd[hw + p].to_f64_c();
            let t = resolve_tap(sx, sy, w, h);
            let (w00, w01, w10, w11) = tap_weights::<T>(&t);
            let fx = T::from_f64_c(t.fx);
            let fy = T::from_f64_c(t.fy);
            let mut gx = T::zero();
            let mut gy = T::zero();
            for ch in 0..c {
                let g = up[ch * hw + p];
                let base = ch * hw;
                let (i00, i01, i10, i11) = (
                    base + t.y0 * w + t.x0,
                    base + t.y0 * w + t.x1,
                    base + t.y1 * w + t.x0,
                    base + t.y1 * w + t.x1,
                );
                let dd = dx.data_mut();
                dd[i00] = dd[i00] + g * w00;
                dd[i01] = dd[i01] + g * w01;
                dd[i10] = dd[i10] + g * w10;
                dd[i11] = dd[i11] + g * w11;
                gx = gx + g * ((one - fy) * (xd[i01] - xd[i00]) + fy * (xd[i11] - xd[i10]));
                gy = gy + g * ((one - fx) * (xd[i10] - xd[i00]) + fx * (xd[i11] - xd[i01]));
            }
            let dfd = dflow.data_mut();
            dfd[p] = signt * gx * T::from_f64_c(t.gate_x);
            dfd[hw + p] = signt * gy * T::from_f64_c(t.gate_y);
        }
    }
    Ok((dx, dflow))
}

impl<T: Scalar> DiffOp<T> for Warp {
    fn name(&self) -> String {
        if self.negate_flow {
            "warp(-flow)".into()
        } else {
            "warp".into()
        }
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("warp", inputs, 2)?;
        warp_signed(inputs[0], inputs[1], self.negate_flow)
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("warp", inputs, 2)?;
        let (dx, dflow) = warp_signed_backward(inputs[0], inputs[1], self.negate_flow, upstream)?;
        Ok(vec![dx, dflow])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn integer_coordinates_return_exact_pixels() {
        let img = Tensor::<f64>::from_fn(vec![2, 4, 5], |i| (i as f64) * 0.731);
        let s = bilinear_sample(&img, 3.0, 2.0).unwrap();
        assert_eq!(s.data()[0], img.at3(0, 2, 3));
        assert_eq!(s.data()[1], img.at3(1, 2, 3));
    }

    #[test]
    fn midpoint_is_average_of_neighbours() {
        let img = Tensor::<f64>::from_fn(vec![1, 2, 2], |i| i as f64);
        let s = bilinear_sample(&img, 0.5, 0.0).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
        let s = bilinear_sample(&img, 0.0, 0.5).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_coordinates_clamp() {
        let img = Tensor::<f64>::from_fn(vec![1, 3, 3], |i| i as f64);
        let s = bilinear_sample(&img, -5.0, 10.0).unwrap();
        assert_eq!(s.data()[0], img.at3(0, 2, 0));
    }

    #[test]
    fn zero_flow_warp_is_bit_exact_identity() {
        let x = Tensor::<f32>::from_fn(vec![3, 6, 7], |i| (i as f32 * 0.177).sin());
        let flow = Tensor::zeros(vec![2, 6, 7]);
        let y = warp(&x, &flow).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn unit_shift_on_ramp_shifts_with_clamp() {
        // r(x) = x; flow (1, 0) samples at x+1, clamped at the right edge.
        let w = 5;
        let x = Tensor::<f64>::from_fn(vec![1, 1, w], |i| i as f64);
        let mut flow = Tensor::zeros(vec![2, 1, w]);
        for v in flow.data_mut()[..w].iter_mut() {
            *v = 1.0;
        }
        let y = warp(&x, &flow).unwrap();
        for i in 0..w {
            let expect = (i + 1).min(w - 1) as f64;
            assert_eq!(y.data()[i], expect);
        }
    }

    #[test]
    fn warp_matches_per_pixel_sampling_oracle() {
        let mut rng = rng_from(99);
        let x = Tensor::<f64>::from_fn(vec![3, 8, 8], |_| rng.random_range(0.0..1.0));
        let flow = Tensor::<f64>::from_fn(vec![2, 8, 8], |_| rng.random_range(-2.0..2.0));
        let y = warp(&x, &flow).unwrap();
        for yy in 0..8 {
            for xx in 0..8 {
                let sx = xx as f64 + flow.at3(0, yy, xx);
                let sy = yy as f64 + flow.at3(1, yy, xx);
                let s = bilinear_sample(&x, sx, sy).unwrap();
                for c in 0..3 {
                    assert!((y.at3(c, yy, xx) - s.data()[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn double_negated_flow_round_trips_bit_exact() {
        let mut rng = rng_from(3);
        let x = Tensor::<f32>::from_fn(vec![2, 6, 6], |_| rng.random_range(0.0..1.0));
        let flow = Tensor::<f32>::from_fn(vec![2, 6, 6], |_| rng.random_range(-1.5..1.5));
        let neg_neg = flow.map(|v| -(-v));
        let a = warp(&x, &flow).unwrap();
        let b = warp(&x, &neg_neg).unwrap();
        assert_eq!(a, b);
        // and warp_signed(negate) on -flow equals warp on flow
        let c = warp_signed(&x, &flow.map(|v| -v), true).unwrap();
        assert_eq!(a, c);
    }
}
