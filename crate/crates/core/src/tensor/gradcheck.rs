//! Central-difference gradient verification.

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which coordinates of each input to probe.
#[derive(Clone, Copy)]
pub enum CoordSelection {
    All,
    /// Probe `count` coordinates sampled without replacement across all
    /// inputs, from the given seed.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input index, coordinate, tape gradient, finite difference) of the
    /// worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` must build a scalar from the given leaf tensors and be deterministic:
/// it is evaluated twice up front and any bitwise difference is an error.
/// Relative error uses the denominator `max(|tape|, |fd|, floor)` with
/// `floor = 0.05`. For gradients below the floor this degrades into an
/// absolute tolerance of `tol * 0.05`; a central difference of an f32 scalar
/// at `delta = 1e-3` carries roundoff noise near `eps_f32 * |f| / (2 delta)`,
/// around 1.5e-5 for unit-scale losses, so without the floor near-zero
/// gradients turn that noise into spurious failures. Real defects (dropped
/// terms, sign flips, wrong factors) sit orders of magnitude above it.
pub fn finite_diff_check(
    inputs: &[Tensor],
    delta: f32,
    select: CoordSelection,
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> Result<GradCheckReport> {
    const REL_FLOOR: f64 = 0.05;
    if inputs.is_empty() {
        return Err(Error::shape("finite_diff_check: no inputs".to_string()));
    }
    for (i, t) in inputs.iter().enumerate() {
        if !t.requires_grad() {
            return Err(Error::shape(format!(
                "finite_diff_check: input {} does not require gradients",
                i
            )));
        }
    }

    let out_a = f(inputs)?;
    let out_b = f(inputs)?;
    if out_a.numel() != 1 {
        return Err(Error::shape(format!(
            "finite_diff_check: f must return a scalar, got {:?}",
            out_a.shape()
        )));
    }
    if out_a.to_vec() != out_b.to_vec() {
        return Err(Error::numeric(
            "finite_diff_check: f is not deterministic (two evaluations differ)".to_string(),
        ));
    }

    for t in inputs {
        t.zero_grad();
    }
    out_a.backward()?;
    let tape_grads: Vec<Vec<f32>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    // (input index, coordinate) pairs to probe
    let mut coords: Vec<(usize, usize)> = Vec::new();
    match select {
        CoordSelection::All => {
            for (i, t) in inputs.iter().enumerate() {
                for c in 0..t.numel() {
                    coords.push((i, c));
                }
            }
        }
        CoordSelection::Sample { count, seed } => {
            let mut all: Vec<(usize, usize)> = Vec::new();
            for (i, t) in inputs.iter().enumerate() {
                for c in 0..t.numel() {
                    all.push((i, c));
                }
            }
            let mut rng = Rng::seed_from(seed);
            rng.shuffle(&mut all);
            all.truncate(count.min(all.len()));
            coords = all;
        }
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (i, c) in coords {
        let base = inputs[i].to_vec();
        let mut bumped = base.clone();

        bumped[c] = base[c] + delta;
        inputs[i].set_data(&bumped)?;
        let plus = f(inputs)?.item()? as f64;

        bumped[c] = base[c] - delta;
        inputs[i].set_data(&bumped)?;
        let minus = f(inputs)?.item()? as f64;

        inputs[i].set_data(&base)?;

        let fd = (plus - minus) / (2.0 * delta as f64);
        let tape = tape_grads[i][c] as f64;
        let rel = (tape - fd).abs() / tape.abs().max(fd.abs()).max(REL_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((i, c, tape, fd));
        }
    }
    Ok(report)
}
