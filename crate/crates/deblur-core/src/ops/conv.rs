//! Same-padding 2D cross-correlation with replicate borders.
//!
//! The forward and both weight/input backward passes are lowered to a
//! single dense matrix multiply over an im2col buffer, which is where the
//! training loop spends most of its time.

use crate::error::{Error, Result};
use crate::ops::{expect_inputs, DiffOp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Safe wrapper over the strided gemm kernel for row-major operands.
///
/// `a` is `m x k` with strides `(rsa, csa)`, `b` is `k x n` with
/// `(rsb, csb)`, `c` is `m x n` row-major contiguous.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    beta: T,
    c: &mut [T],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let max_a = (m - 1) as isize * rsa + (k - 1) as isize * csa;
    let max_b = (k - 1) as isize * rsb + (n - 1) as isize * csb;
    assert!(max_a >= 0 && (max_a as usize) < a.len());
    assert!(max_b >= 0 && (max_b as usize) < b.len());
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Replicate-pad a `C x H x W` tensor by `r` on each spatial side.
pub fn replicate_pad<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (c, h, w) = x.dims3().expect("replicate_pad wants rank 3");
    let (hp, wp) = (h + 2 * r, w + 2 * r);
    let mut out = Tensor::zeros(vec![c, hp, wp]);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for yy in 0..hp {
            let sy = yy.saturating_sub(r).min(h - 1);
            let src_row = &src[(ch * h + sy) * w..(ch * h + sy) * w + w];
            let dst_row = &mut dst[(ch * hp + yy) * wp..(ch * hp + yy) * wp + wp];
            for (xx, d) in dst_row.iter_mut().enumerate() {
                let sx = xx.saturating_sub(r).min(w - 1);
                *d = src_row[sx];
            }
        }
    }
    out
}

/// Adjoint of [`replicate_pad`]: fold gradients of padded cells back onto
/// the source cells they replicate.
pub fn replicate_unpad_fold<T: Scalar>(g: &Tensor<T>, r: usize) -> Tensor<T> {
    let (c, hp, wp) = g.dims3().expect("unpad wants rank 3");
    let (h, w) = (hp - 2 * r, wp - 2 * r);
    let mut out = Tensor::zeros(vec![c, h, w]);
    let src = g.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for yy in 0..hp {
            let sy = yy.saturating_sub(r).min(h - 1);
            let src_row = &src[(ch * hp + yy) * wp..(ch * hp + yy) * wp + wp];
            let dst_row = &mut dst[(ch * h + sy) * w..(ch * h + sy) * w + w];
            for (xx, &gv) in src_row.iter().enumerate() {
                let sx = xx.saturating_sub(r).min(w - 1);
                dst_row[sx] = dst_row[sx] + gv;
            }
        }
    }
    out
}

/// im2col over the already-padded input: output is `(C*k*k) x (H*W)`.
fn im2col<T: Scalar>(xp: &Tensor<T>, k: usize, h: usize, w: usize) -> Vec<T> {
    let (c, hp, wp) = xp.dims3().expect("im2col wants rank 3");
    debug_assert_eq!(hp, h + k - 1);
    let mut col = vec![T::zero(); c * k * k * h * w];
    let src = xp.data();
    for ch in 0..c {
        for i in 0..k {
            for j in 0..k {
                let row = ((ch * k + i) * k + j) * (h * w);
                for y in 0..h {
                    let s = (ch * hp + y + i) * wp + j;
                    let d = row + y * w;
                    col[d..d + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im<T: Scalar>(col: &[T], c: usize, k: usize, h: usize, w: usize) -> Tensor<T> {
    let (hp, wp) = (h + k - 1, w + k - 1);
    let mut xp = Tensor::zeros(vec![c, hp, wp]);
    let dst = xp.data_mut();
    for ch in 0..c {
        for i in 0..k {
            for j in 0..k {
                let row = ((ch * k + i) * k + j) * (h * w);
                for y in 0..h {
                    let s = row + y * w;
                    let d = (ch * hp + y + i) * wp + j;
                    for x in 0..w {
                        dst[d + x] = dst[d + x] + col[s + x];
                    }
                }
            }
        }
    }
    xp
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = x.dims3()?;
    let ws = weights.shape();
    if ws.len() != 4 {
        return Err(Error::config(format!(
            "conv2d weights must be O x C x k x k, got {:?}",
            ws
        )));
    }
    let (o, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kh != kw {
        return Err(Error::config(format!("conv2d kernel must be square, got {kh}x{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::config(format!("conv2d kernel size must be odd, got {kh}")));
    }
    if wc != c {
        return Err(Error::config(format!(
            "conv2d input has {c} channels, weights expect {wc}"
        )));
    }
    if bias.shape() != [o] {
        return Err(Error::config(format!(
            "conv2d bias shape {:?} does not match {o} output channels",
            bias.shape()
        )));
    }
    Ok((c, h, w, o, kh))
}

/// `out[o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] * pad(x)[c, y+i, x+j]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, o, k) = check_conv_shapes(x, weights, bias)?;
    let hw = h * w;
    let mut out = Tensor::zeros(vec![o, h, w]);
    if k == 1 {
        // 1x1: gemm straight over the input, no padding or col buffer.
        gemm(
            o, c, hw,
            T::one(),
            weights.data(), c as isize, 1,
            x.data(), hw as isize, 1,
            T::zero(),
            out.data_mut(),
        );
    } else {
        let r = k / 2;
        let xp = replicate_pad(x, r);
        let col = im2col(&xp, k, h, w);
        gemm(
            o, c * k * k, hw,
            T::one(),
            weights.data(), (c * k * k) as isize, 1,
            &col, hw as isize, 1,
            T::zero(),
            out.data_mut(),
        );
    }
    let ob = out.data_mut();
    for oc in 0..o {
        let b = bias.data()[oc];
        for v in &mut ob[oc * hw..(oc + 1) * hw] {
            *v = *v + b;
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. `(x, weights, bias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, h, w, o, k) = check_conv_shapes(x, weights, bias)?;
    let hw = h * w;
    if upstream.shape() != [o, h, w] {
        return Err(Error::config(format!(
            "conv2d upstream shape {:?} != [{o}, {h}, {w}]",
            upstream.shape()
        )));
    }

    let mut dbias = Tensor::zeros(vec![o]);
    for oc in 0..o {
        let mut s = T::zero();
        for &g in &upstream.data()[oc * hw..(oc + 1) * hw] {
            s = s + g;
        }
        dbias.data_mut()[oc] = s;
    }

    let mut dweights = Tensor::zeros(weights.shape().to_vec());
    let dx;
    if k == 1 {
        // dW = up (o x hw) * x^T (hw x c)
        gemm(
            o, hw, c,
            T::one(),
            upstream.data(), hw as isize, 1,
            x.data(), 1, hw as isize,
            T::zero(),
            dweights.data_mut(),
        );
        // dx = W^T (c x o) * up (o x hw)
        let mut dxt = Tensor::zeros(vec![c, h, w]);
        gemm(
            c, o, hw,
            T::one(),
            weights.data(), 1, c as isize,
            upstream.data(), hw as isize, 1,
            T::zero(),
            dxt.data_mut(),
        );
        dx = dxt;
    } else {
        let r = k / 2;
        let xp = replicate_pad(x, r);
        let col = im2col(&xp, k, h, w);
        let ckk = c * k * k;
        // dW = up (o x hw) * col^T (hw x ckk)
        gemm(
            o, hw, ckk,
            T::one(),
            upstream.data(), hw as isize, 1,
            &col, 1, hw as isize,
            T::zero(),
            dweights.data_mut(),
        );
        // dcol = W^T (ckk x o) * up (o x hw)
        let mut dcol = vec![T::zero(); ckk * hw];
        gemm(
            ckk, o, hw,
            T::one(),
            weights.data(), 1, ckk as isize,
            upstream.data(), hw as isize, 1,
            T::zero(),
            &mut dcol,
        );
        let dxp = col2im(&dcol, c, k, h, w);
        dx = replicate_unpad_fold(&dxp, r);
    }
    Ok((dx, dweights, dbias))
}

/// Single conv layer as a graph op; inputs are `[x, weights, bias]`.
#[derive(Debug, Clone)]
pub struct Conv2d;

impl<T: Scalar> DiffOp<T> for Conv2d {
    fn name(&self) -> String {
        "conv2d".into()
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("conv2d", inputs, 3)?;
        conv2d(inputs[0], inputs[1], inputs[2])
    }

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("conv2d", inputs, 3)?;
        let (dx, dw, db) = conv2d_backward(inputs[0], inputs[1], inputs[2], upstream)?;
        Ok(vec![dx, dw, db])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, Stream};
    use rand::Rng;

    /// Direct nested-loop oracle, kept free of the gemm/im2col machinery.
    fn conv_oracle<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let (c, h, wd) = x.dims3().unwrap();
        let o = w.shape()[0];
        let k = w.shape()[2];
        let r = (k / 2) as isize;
        let mut out = Tensor::zeros(vec![o, h, wd]);
        for oc in 0..o {
            for y in 0..h as isize {
                for xx in 0..wd as isize {
                    let mut acc = b.data()[oc];
                    for ci in 0..c {
                        for i in 0..k as isize {
                            for j in 0..k as isize {
                                let sy = (y + i - r).clamp(0, h as isize - 1) as usize;
                                let sx = (xx + j - r).clamp(0, wd as isize - 1) as usize;
                                let wv = w.data()
                                    [((oc * c + ci) * k + i as usize) * k + j as usize];
                                acc = acc + wv * x.at3(ci, sy, sx);
                            }
                        }
                    }
                    out.set3(oc, y as usize, xx as usize, acc);
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel_passes_input_through() {
        let x = Tensor::<f32>::from_fn(vec![2, 4, 5], |i| i as f32 * 0.1);
        let mut w = Tensor::zeros(vec![2, 2, 1, 1]);
        w.data_mut()[0] = 1.0; // out0 <- in0
        w.data_mut()[3] = 1.0; // out1 <- in1
        let b = Tensor::zeros(vec![2]);
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn all_ones_3x3_on_constant_is_9c_with_replicate_border() {
        let c = 0.37f32;
        let x = Tensor::full(vec![1, 6, 6], c);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d(&x, &w, &b).unwrap();
        for &v in y.data() {
            assert!((v - 9.0 * c).abs() < 1e-5, "got {v}");
        }
    }

    #[test]
    fn matches_nested_loop_oracle_on_random_input() {
        let mut rng = rng_from(crate::rng::derive_seed(11, Stream::GradCheck));
        for k in [1usize, 3, 5] {
            let x = Tensor::<f32>::from_fn(vec![3, 5, 5], |_| rng.random_range(-1.0..1.0));
            let w = Tensor::from_fn(vec![2, 3, k, k], |_| rng.random_range(-1.0..1.0));
            let b = Tensor::from_fn(vec![2], |_| rng.random_range(-1.0..1.0));
            let fast = conv2d(&x, &w, &b).unwrap();
            let slow = conv_oracle(&x, &w, &b);
            assert!(
                fast.max_abs_diff(&slow) <= 1e-5,
                "k={k} diff {}",
                fast.max_abs_diff(&slow)
            );
        }
    }

    #[test]
    fn linear_in_input_with_zero_bias() {
        let mut rng = rng_from(42);
        let a = Tensor::<f64>::from_fn(vec![2, 4, 4], |_| rng.random_range(-1.0..1.0));
        let bt = Tensor::<f64>::from_fn(vec![2, 4, 4], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::from_fn(vec![3, 2, 3, 3], |_| rng.random_range(-1.0..1.0));
        let zero_b = Tensor::zeros(vec![3]);
        let (alpha, beta) = (0.7, -1.3);
        let lhs = conv2d(
            &a.zip_map(&bt, |av, bv| alpha * av + beta * bv).unwrap(),
            &w,
            &zero_b,
        )
        .unwrap();
        let fa = conv2d(&a, &w, &zero_b).unwrap();
        let fb = conv2d(&bt, &w, &zero_b).unwrap();
        let rhs = fa.zip_map(&fb, |av, bv| alpha * av + beta * bv).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let x = Tensor::<f32>::zeros(vec![2, 4, 4]);
        let w = Tensor::zeros(vec![1, 3, 3, 3]);
        let b = Tensor::zeros(vec![1]);
        assert_eq!(conv2d(&x, &w, &b).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn pad_unpad_are_adjoint() {
        // <pad(x), g> == <x, unpad_fold(g)> for random x, g.
        let mut rng = rng_from(5);
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4], |_| rng.random_range(-1.0..1.0));
        let r = 2;
        let g = Tensor::<f64>::from_fn(vec![2, 3 + 2 * r, 4 + 2 * r], |_| rng.random_range(-1.0..1.0));
        let px = replicate_pad(&x, r);
        let fg = replicate_unpad_fold(&g, r);
        let lhs: f64 = px.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(fg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
