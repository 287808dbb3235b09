//! Finite-difference gradient verification and the closed-form gradient of
//! the one-layer softmax model `Y = softmax(A X W)`.

use crate::error::Result;
use crate::filters::Operator;
use crate::mat::Mat;
use crate::nn::tape::{softmax_rows_value, Tape, VarId};
use crate::scalar::RealScalar;

/// Closed-form `d/dW` of the summed cross entropy of `softmax(A X W)`
/// against one-hot targets: `X^T A^T (Y - Z)`. No tape involved.
pub fn analytic_gcn_grad<T: RealScalar>(
    a_hat: &Operator<T>,
    x: &Mat<T>,
    w: &Mat<T>,
    z: &Mat<T>,
) -> Result<Mat<T>> {
    let ax = a_hat.apply(x)?;
    let y = softmax_rows_value(&ax.matmul(w));
    if y.shape() != z.shape() {
        return Err(crate::error::Error::DimMismatch(format!(
            "targets are {:?}, model output is {:?}",
            z.shape(),
            y.shape()
        )));
    }
    Ok(ax.transpose().matmul(&y.sub(z)))
}

/// Worst-case comparison of tape gradients against central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked_entries: usize,
}

/// Runs `build` (a pure, deterministic forward returning a scalar loss) once
/// with tape gradients and then perturbs every parameter entry by `+-eps`.
///
/// The relative error uses a unit floor: `|a - n| / max(|a|, |n|, 1)`.
pub fn grad_check<F>(build: F, params: &[Mat<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Mat<f64>> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(tape.value(id).rows(), tape.value(id).cols()))
        })
        .collect();

    let eval = |perturbed: &[Mat<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<VarId> = perturbed.iter().map(|p| t.leaf(p.clone())).collect();
        let loss = build(&mut t, &ids)?;
        Ok(t.value(loss)[(0, 0)])
    };

    let mut worst = 0.0_f64;
    let mut checked = 0usize;
    let mut work: Vec<Mat<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                let orig = p[(r, c)];
                work[pi][(r, c)] = orig + eps;
                let up = eval(&work)?;
                work[pi][(r, c)] = orig - eps;
                let down = eval(&work)?;
                work[pi][(r, c)] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[pi][(r, c)];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked_entries: checked,
    })
}
