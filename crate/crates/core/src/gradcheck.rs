//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values on constant tapes, so
//! it shares no code with the backward rules it audits.

use crate::error::Result;
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
/// Absolute error below which a component passes regardless of relative error.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Largest relative error over components that were above the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub failures: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Reduces a non-scalar output to a scalar with fixed pseudo-random weights so
/// every output component contributes a distinct cotangent.
fn scalarize(tape: &mut Tape, out: Var) -> Result<Var> {
    let n = tape.numel(out);
    if n == 1 {
        return Ok(out);
    }
    let mut r = rng::seeded(0x6772_6164 ^ n as u64);
    let w = rng::uniform(&mut r, tape.shape(out), 0.5, 1.5);
    let w = tape.constant(&w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn forward_value<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = build(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    Ok(tape.item(loss))
}

/// Analytic gradients of the scalarized output w.r.t. every input.
pub fn analytic_grads<F>(inputs: &[Tensor], build: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t)).collect();
    let out = build(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    tape.backward(loss)?;
    Ok(vars.iter().map(|&v| tape.grad_or_zeros(v)).collect())
}

/// Central-difference gradients with step `h`.
pub fn numeric_grads<F>(inputs: &[Tensor], build: &F, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].len()];
        for (e, ge) in g.iter_mut().enumerate() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + h;
            let up = forward_value(&work, build)?;
            work[k].data_mut()[e] = orig - h;
            let down = forward_value(&work, build)?;
            work[k].data_mut()[e] = orig;
            *ge = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>], rel_tol: f64, abs_floor: f64) -> GradReport {
    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        failures: 0,
    };
    for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
        let abs = (a - n).abs();
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if abs <= abs_floor {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel >= rel_tol || !rel.is_finite() {
            report.failures += 1;
        }
    }
    report
}

/// Runs the full check with the default step and tolerances.
pub fn check<F>(inputs: &[Tensor], build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let a = analytic_grads(inputs, &build)?;
    let n = numeric_grads(inputs, &build, DEFAULT_STEP)?;
    Ok(compare(&a, &n, DEFAULT_REL_TOL, DEFAULT_ABS_FLOOR))
}
