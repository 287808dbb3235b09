//! End-to-end gradient verification: runs central finite differences against
//! every tape primitive and every model family, and compares the recorded
//! one-layer gradient with its closed form. Used by the `nn gradcheck` CLI
//! subcommand and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::filters::Operator;
use crate::graph::Graph;
use crate::harness::mix_seed;
use crate::mat::Mat;
use crate::metrics::{similarity_matrix, SignalTag};
use crate::models::{Model, ModelConfig};
use crate::nn::{analytic_gcn_grad, grad_check, Tape};
use crate::synth::{generate, FeatureMode, SynthConfig};

/// One named check with its measured error and the bound it must satisfy.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub error: f64,
    pub bound: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error < self.bound
    }
}

const FD_EPS: f64 = 1e-6;
const PRIMITIVE_BOUND: f64 = 1e-5;
const ACM_BOUND: f64 = 1e-4;
const ANALYTIC_BOUND: f64 = 1e-10;

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Finite-difference checks for each primitive; the scalar loss is a fixed
/// random weighting of the op output so every entry receives signal.
fn primitive_checks(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1]));
    let weights = random_mat(&mut rng, 5, 4);

    let check = |name: &str,
                     params: &[Mat<f64>],
                     f: &dyn Fn(&mut Tape<f64>, &[crate::nn::VarId]) -> Result<crate::nn::VarId>|
     -> Result<CheckResult> {
        let report = grad_check(f, params, FD_EPS)?;
        Ok(CheckResult {
            name: name.into(),
            error: report.max_relative_error,
            bound: PRIMITIVE_BOUND,
        })
    };

    let a = random_mat(&mut rng, 5, 3);
    let b = random_mat(&mut rng, 3, 4);
    let w = weights.clone();
    out.push(check("matmul", &[a, b], &move |t, p| {
        let m = t.matmul(p[0], p[1])?;
        let wid = t.leaf(w.clone());
        let prod = t.mul_elem(m, wid)?;
        Ok(t.sum(prod))
    })?);

    let a = random_mat(&mut rng, 5, 4);
    let b = random_mat(&mut rng, 5, 4);
    let w = weights.clone();
    out.push(check("add", &[a, b], &move |t, p| {
        let m = t.add(p[0], p[1])?;
        let wid = t.leaf(w.clone());
        let prod = t.mul_elem(m, wid)?;
        Ok(t.sum(prod))
    })?);

    let a = random_mat(&mut rng, 5, 4);
    let w = weights.clone();
    out.push(check("relu", &[a], &move |t, p| {
        let m = t.relu(p[0]);
        let wid = t.leaf(w.clone());
        let prod = t.mul_elem(m, wid)?;
        Ok(t.sum(prod))
    })?);

    let a = random_mat(&mut rng, 5, 4);
    let w = weights.clone();
    out.push(check("sigmoid", &[a], &move |t, p| {
        let m = t.sigmoid(p[0]);
        let wid = t.leaf(w.clone());
        let prod = t.mul_elem(m, wid)?;
        Ok(t.sum(prod))
    })?);

    let a = random_mat(&mut rng, 5, 4);
    let w = weights.clone();
    out.push(check("softmax_rows", &[a], &move |t, p| {
        let m = t.softmax_rows(p[0]);
        let wid = t.leaf(w.clone());
        let prod = t.mul_elem(m, wid)?;
        Ok(t.sum(prod))
    })?);

    let scale = random_mat(&mut rng, 5, 1);
    let m = random_mat(&mut rng, 5, 4);
    let w = weights.clone();
    out.push(check("row_scale", &[scale, m], &move |t, p| {
        let m = t.row_scale(p[0], p[1])?;
        let wid = t.leaf(w.clone());
        let prod = t.mul_elem(m, wid)?;
        Ok(t.sum(prod))
    })?);

    let a = random_mat(&mut rng, 5, 2);
    let b = random_mat(&mut rng, 5, 2);
    let w = weights.clone();
    out.push(check("concat_cols+slice_cols", &[a, b], &move |t, p| {
        let cat = t.concat_cols(&[p[0], p[1]])?;
        let left = t.slice_cols(cat, 1, 3)?;
        let wid = t.leaf(w.slice_cols(0, 2));
        let prod = t.mul_elem(left, wid)?;
        Ok(t.sum(prod))
    })?);

    let a = random_mat(&mut rng, 5, 4);
    let b = random_mat(&mut rng, 5, 4);
    out.push(check("mul_elem+scale_const+sum", &[a, b], &move |t, p| {
        let prod = t.mul_elem(p[0], p[1])?;
        let scaled = t.scale_const(prod, 0.37);
        Ok(t.sum(scaled))
    })?);

    // Dropout with a fixed seed is a deterministic masked scaling.
    let a = random_mat(&mut rng, 6, 5);
    let w6 = random_mat(&mut rng, 6, 5);
    out.push(check("dropout(p=0.4, fixed mask)", &[a], &move |t, p| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(42);
        let d = t.dropout(p[0], 0.4, true, &mut mask_rng)?;
        let wid = t.leaf(w6.clone());
        let prod = t.mul_elem(d, wid)?;
        Ok(t.sum(prod))
    })?);

    // Cross entropy on probabilities, reached through a softmax so the
    // row-stochastic precondition survives perturbation.
    let logits = random_mat(&mut rng, 6, 3);
    let targets = Mat::from_fn(6, 3, {
        let picks: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        move |i, j| if picks[i] == j { 1.0 } else { 0.0 }
    });
    let tg = targets.clone();
    out.push(check("cross_entropy(softmax probs)", &[logits.clone()], &move |t, p| {
        let probs = t.softmax_rows(p[0]);
        t.cross_entropy(probs, &tg)
    })?);

    let tg = targets.clone();
    out.push(check("softmax_cross_entropy", &[logits.clone()], &move |t, p| {
        t.softmax_cross_entropy(p[0], &tg, None)
    })?);

    let tg = targets;
    out.push(check(
        "softmax_cross_entropy(row subset)",
        &[logits],
        &move |t, p| t.softmax_cross_entropy(p[0], &tg, Some(&[0, 2, 5])),
    )?);

    Ok(())
}

fn toy_graph(seed: u64) -> Result<Graph> {
    let mut cfg = SynthConfig::new(0.4, 3, 4, mix_seed(&[seed, 7]));
    cfg.feature_mode = FeatureMode::GaussianMeans {
        dim: 5,
        separation: 2.0,
    };
    generate(&cfg)
}

/// Finite-difference checks over whole model families (dropout disabled);
/// ACM/ACMII variants get the looser bound.
fn model_checks(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let g = toy_graph(seed)?;
    let z = g.labels_one_hot::<f64>();
    for id in [
        "mlp-1",
        "mlp-2",
        "sgc-1",
        "sgc-2",
        "gcn-2",
        "snowball-2",
        "snowball-3",
        "acm-sgc-1",
        "acm-gcn-2",
        "acmii-gcn-2",
        "acm-snowball-2",
    ] {
        let cfg = ModelConfig::parse_id(id)?;
        let model = Model::build(&cfg, &g, mix_seed(&[seed, 11]))?;
        let zc = z.clone();
        let features = g.features().clone();
        let build = move |t: &mut Tape<f64>, p: &[crate::nn::VarId]| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let pass = model.forward_with(t, p.to_vec(), &features, false, &mut rng)?;
            t.softmax_cross_entropy(pass.logits, &zc, None)
        };
        let model_for_params = Model::build(&cfg, &g, mix_seed(&[seed, 11]))?;
        let report = grad_check(build, model_for_params.params(), FD_EPS)?;
        let bound = if cfg.acm == crate::models::AcmVariant::None {
            PRIMITIVE_BOUND
        } else {
            ACM_BOUND
        };
        out.push(CheckResult {
            name: id.into(),
            error: report.max_relative_error,
            bound,
        });
    }
    Ok(())
}

/// Tape gradient of the one-layer softmax model against `X^T A^T (Y - Z)`,
/// plus the similarity-matrix form of the induced logit update.
fn analytic_checks(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut worst = 0.0_f64;
    let mut worst_update = 0.0_f64;
    for trial in 0..10u64 {
        let mut cfg = SynthConfig::new(0.5, 2, mix_seed(&[seed, trial]) as usize % 3 + 3, trial);
        cfg.feature_mode = FeatureMode::GaussianMeans {
            dim: 4,
            separation: 2.0,
        };
        let g = generate(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 13, trial]));
        let a = Operator::<f64>::random_walk_affinity(&g, true)?;
        let w = random_mat(&mut rng, g.feature_dim(), g.class_count());
        let z = g.labels_one_hot::<f64>();

        let mut tape = Tape::new();
        let wid = tape.param(w.clone());
        let aid = tape.leaf(a.matrix().clone());
        let xid = tape.leaf(g.features().clone());
        let ax = tape.matmul(aid, xid)?;
        let logits = tape.matmul(ax, wid)?;
        let loss = tape.softmax_cross_entropy(logits, &z, None)?;
        tape.backward(loss)?;
        let tape_grad = tape.grad(wid).expect("parameter gradient").clone();
        let closed = analytic_gcn_grad(&a, g.features(), &w, &z)?;
        worst = worst.max(tape_grad.max_abs_diff(&closed));

        // The logit update A X dL/dW equals S(A, X) (Y - Z) by Gram identity.
        let ax_mat = a.apply(g.features())?;
        let via_grad = ax_mat.matmul(&tape_grad);
        let s = similarity_matrix(&a, g.features(), SignalTag::Features)?;
        let y = crate::nn::softmax_rows_value(&ax_mat.matmul(&w));
        let via_similarity = s.matrix().matmul(&y.sub(&z));
        worst_update = worst_update.max(via_grad.max_abs_diff(&via_similarity));
    }
    out.push(CheckResult {
        name: "analytic one-layer gradient vs tape".into(),
        error: worst,
        bound: ANALYTIC_BOUND,
    });
    out.push(CheckResult {
        name: "similarity-matrix logit update identity".into(),
        error: worst_update,
        bound: ANALYTIC_BOUND,
    });
    Ok(())
}

/// The full verification battery.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    primitive_checks(seed, &mut out)?;
    model_checks(seed, &mut out)?;
    analytic_checks(seed, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_bounds() {
        let results = gradcheck_suite(0).unwrap();
        assert!(results.len() >= 20);
        for r in &results {
            assert!(r.passed(), "{}: {:.3e} !< {:.3e}", r.name, r.error, r.bound);
        }
    }
}
