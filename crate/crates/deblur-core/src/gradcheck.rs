//! Central-difference gradient checking, always in 64-bit.
//!
//! The check projects the op output onto a random direction `u`, giving the
//! scalar `L(inputs) = <u, f(inputs)>`. The analytic gradient of `L` is one
//! `backward` call with upstream `u`; the numeric gradient perturbs each
//! input element by `+/- h`. Pass/fail uses a relative error with a floor
//! scaled to the gradient magnitude so that near-zero entries do not
//! dominate.

use crate::error::{Error, Result};
use crate::ops::DiffOp;
use crate::rng::rng_from;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Re-estimate failing elements with `h/4` and discard those whose two
    /// finite-difference estimates disagree (the estimate itself is
    /// unreliable there, e.g. next to a piecewise-linear kink). At most
    /// [`Self::max_unreliable_frac`] of elements may be discarded.
    pub validate_unreliable: bool,
    pub max_unreliable_frac: f64,
    /// Seed for the projection direction.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tolerance: 1e-3,
            validate_unreliable: false,
            max_unreliable_frac: 0.01,
            seed: 0x9d5c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub input: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub inputs: Vec<InputReport>,
    pub max_rel: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max_rel={:.3e} tol={:.1e} [{}]",
            self.op,
            self.max_rel,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

fn scalar_eval(op: &dyn DiffOp<f64>, inputs: &[Tensor<f64>], u: &Tensor<f64>) -> Result<f64> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = op.forward(&refs)?;
    if !out.all_finite() {
        return Err(Error::numeric(format!(
            "non-finite forward output in gradcheck of {}",
            op.name()
        )));
    }
    Ok(out
        .data()
        .iter()
        .zip(u.data())
        .map(|(&a, &b)| a * b)
        .sum())
}

/// Check every input of `op` at the given base point.
pub fn gradcheck(
    op: &dyn DiffOp<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = op.forward(&refs)?;
    out.ensure_finite(&format!("gradcheck forward of {}", op.name()))?;

    let mut rng = rng_from(cfg.seed);
    let u = Tensor::from_fn(out.shape().to_vec(), |_| rng.random_range(-1.0..1.0));

    let analytic = op.backward(&refs, &u)?;
    if analytic.len() != inputs.len() {
        return Err(Error::config(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }
    for (g, x) in analytic.iter().zip(inputs) {
        if g.shape() != x.shape() {
            return Err(Error::config(format!(
                "{}: gradient shape {:?} != input shape {:?}",
                op.name(),
                g.shape(),
                x.shape()
            )));
        }
        g.ensure_finite(&format!("analytic gradient of {}", op.name()))?;
    }

    let mut reports = Vec::new();
    let mut max_rel = 0.0f64;
    for (idx, grad) in analytic.iter().enumerate() {
        let scale = grad.max_abs().max(1e-8);
        let floor = 1e-3 * scale;
        let mut rep = InputReport {
            input: idx,
            max_rel: 0.0,
            max_abs: 0.0,
            checked: 0,
            discarded: 0,
        };
        let mut work = inputs.to_vec();
        for e in 0..inputs[idx].len() {
            let x0 = inputs[idx].data()[e];
            let fd = |step: f64, work: &mut Vec<Tensor<f64>>| -> Result<f64> {
                work[idx].data_mut()[e] = x0 + step;
                let lp = scalar_eval(op, work, &u)?;
                work[idx].data_mut()[e] = x0 - step;
                let lm = scalar_eval(op, work, &u)?;
                work[idx].data_mut()[e] = x0;
                Ok((lp - lm) / (2.0 * step))
            };
            let numeric = fd(cfg.h, &mut work)?;
            let a = grad.data()[e];
            let abs = (a - numeric).abs();
            let mut rel = abs / (a.abs().max(numeric.abs()) + floor);
            if rel > cfg.tolerance && cfg.validate_unreliable {
                // Richardson-style sanity check of the estimate itself.
                let numeric2 = fd(cfg.h / 4.0, &mut work)?;
                let drift = (numeric2 - numeric).abs()
                    / (numeric.abs().max(numeric2.abs()) + floor);
                if drift > 0.1 {
                    rep.discarded += 1;
                    continue;
                }
                rel = (a - numeric2).abs() / (a.abs().max(numeric2.abs()) + floor);
            }
            rep.checked += 1;
            rep.max_abs = rep.max_abs.max(abs);
            rep.max_rel = rep.max_rel.max(rel);
        }
        let total = inputs[idx].len().max(1);
        if rep.discarded as f64 / total as f64 > cfg.max_unreliable_frac {
            return Err(Error::numeric(format!(
                "{}: {} of {} finite-difference probes unreliable for input {}",
                op.name(),
                rep.discarded,
                total,
                idx
            )));
        }
        max_rel = max_rel.max(rep.max_rel);
        reports.push(rep);
    }

    Ok(GradCheckReport {
        op: op.name(),
        inputs: reports,
        max_rel,
        passed: max_rel <= cfg.tolerance,
        tolerance: cfg.tolerance,
    })
}

/// Convenience: run [`gradcheck`] and turn a failed report into an error.
pub fn assert_gradcheck(
    op: &dyn DiffOp<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let rep = gradcheck(op, inputs, cfg)?;
    if rep.passed {
        Ok(rep)
    } else {
        Err(Error::numeric(format!("gradient check failed: {rep}")))
    }
}
