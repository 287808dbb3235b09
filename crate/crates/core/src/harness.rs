//! Experiment driver: random splits, the Adam training loop with
//! patience-based early stopping, homophily sweeps over generated graphs,
//! and the channel/mixing ablation matrix. All stochastic pieces are
//! seeded; identical seeds give identical results (and byte-identical CSV).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::metrics;
use crate::models::{AcmVariant, Channel, Family, Mixing, Model, ModelConfig};
use crate::nn::{AdamState, Tape};
use crate::synth::{generate, SynthConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniform random partition with sizes within one node of the requested
/// ratios, deterministic per seed.
pub fn split(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    let (a, b, c) = ratios;
    if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be nonnegative and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = (((n as f64) * b).round() as usize).min(n - n_train);
    let mut train: Vec<usize> = nodes[..n_train].to_vec();
    let mut val: Vec<usize> = nodes[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = nodes[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMasks { train, val, test })
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 1000,
            patience: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub best_val_acc: f64,
    /// Validation loss at the selected checkpoint (run-comparison tiebreak).
    pub val_loss_at_best: f64,
    pub test_acc_at_best_val: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    /// Final node-wise mixing weights per adaptive ACM block, if any.
    pub mixing_weights: Option<Vec<Mat<f64>>>,
    pub wall_time_per_epoch_ms: f64,
}

/// Mean cross entropy of the logits over `rows`, computed stably.
fn mean_cross_entropy(logits: &Mat<f64>, class_ids: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &v in rows {
        let row = logits.row(v);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        acc += lse - row[class_ids[v]];
    }
    acc / rows.len() as f64
}

fn accuracy(logits: &Mat<f64>, class_ids: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for &v in rows {
        let row = logits.row(v);
        let mut arg = 0usize;
        for (j, &x) in row.iter().enumerate() {
            if x > row[arg] {
                arg = j;
            }
        }
        if arg == class_ids[v] {
            hits += 1;
        }
    }
    hits as f64 / rows.len() as f64
}

/// Adam training with early stopping on validation accuracy: stop once the
/// best value has not strictly improved for more than `patience` epochs.
/// Reported test accuracy belongs to the checkpoint with maximal validation
/// accuracy; ties are broken by lower validation loss, then by the earlier
/// epoch, so selection stays meaningful after the validation accuracy
/// saturates and runs remain fully deterministic. Per-epoch wall time covers
/// forward + backward + optimizer step only.
pub fn train(
    cfg: &ModelConfig,
    g: &Graph,
    masks: &SplitMasks,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    let mut model = Model::build(cfg, g, opts.seed)?;
    let mut adam = AdamState::new(model.params());
    let z = g.labels_one_hot::<f64>();
    let features = g.features().clone();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x9e37_79b9));
    let decayed = model.decayed_param_indices();
    let train_scale = 1.0 / masks.train.len().max(1) as f64;

    let mut result = TrainResult {
        best_val_acc: f64::NEG_INFINITY,
        val_loss_at_best: f64::INFINITY,
        test_acc_at_best_val: 0.0,
        best_epoch: 0,
        epochs_run: 0,
        train_loss: Vec::new(),
        val_acc: Vec::new(),
        test_acc: Vec::new(),
        mixing_weights: None,
        wall_time_per_epoch_ms: 0.0,
    };
    let mut stale = 0usize;
    let mut train_time = 0.0f64;

    for epoch in 0..opts.max_epochs {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &features, true, &mut dropout_rng)?;
        let ce = tape.softmax_cross_entropy(pass.logits, &z, Some(&masks.train))?;
        let mut loss = tape.scale_const(ce, train_scale);
        if cfg.weight_decay > 0.0 {
            let mut penalty = None;
            for &idx in &decayed {
                let w = pass.param_ids[idx];
                let sq = tape.mul_elem(w, w)?;
                let s = tape.sum(sq);
                penalty = Some(match penalty {
                    None => s,
                    Some(p) => tape.add(p, s)?,
                });
            }
            if let Some(p) = penalty {
                let scaled = tape.scale_const(p, cfg.weight_decay * 0.5);
                loss = tape.add(loss, scaled)?;
            }
        }
        tape.backward(loss)?;
        let grads: Vec<Mat<f64>> = pass
            .param_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                tape.grad(id).cloned().unwrap_or_else(|| {
                    Mat::zeros(model.params()[i].rows(), model.params()[i].cols())
                })
            })
            .collect();
        adam.step(model.params_mut(), &grads, cfg.lr)?;
        train_time += t0.elapsed().as_secs_f64() * 1e3;

        let loss_value = tape.value(loss)[(0, 0)];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {loss_value} at epoch {epoch}"
            )));
        }

        // Evaluation pass without dropout; reusing the training logits would
        // lag one optimizer step, so always rerun.
        let mut eval_tape = Tape::new();
        let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
        let eval_pass = model.forward(&mut eval_tape, &features, false, &mut eval_rng)?;
        let logits = eval_tape.value(eval_pass.logits);
        let val = accuracy(logits, g.class_ids(), &masks.val);
        let test = accuracy(logits, g.class_ids(), &masks.test);
        let val_loss = mean_cross_entropy(logits, g.class_ids(), &masks.val);

        result.train_loss.push(loss_value);
        result.val_acc.push(val);
        result.test_acc.push(test);
        result.epochs_run = epoch + 1;

        if val > result.best_val_acc
            || (val == result.best_val_acc && val_loss < result.val_loss_at_best)
        {
            result.test_acc_at_best_val = test;
            result.best_epoch = epoch;
            result.val_loss_at_best = val_loss;
        }
        // Patience counts epochs without strict accuracy improvement.
        if val > result.best_val_acc {
            result.best_val_acc = val;
            stale = 0;
        } else {
            stale += 1;
            if stale > opts.patience {
                break;
            }
        }
    }

    result.wall_time_per_epoch_ms = train_time / result.epochs_run.max(1) as f64;

    if cfg.acm != AcmVariant::None && cfg.mixing == Mixing::Adaptive {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = model.forward(&mut tape, &features, false, &mut rng)?;
        if !pass.mixings.is_empty() {
            result.mixing_weights = Some(
                pass.mixings
                    .iter()
                    .map(|&id| tape.value(id).clone())
                    .collect(),
            );
        }
    }
    Ok(result)
}

/// Deterministic seed derivation (splitmix64 over the concatenated parts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// The 28-level homophily grid: 0.005..0.045 by 0.005, then 0.05..0.95 by 0.05.
pub fn default_h_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (1..10).map(|i| i as f64 * 0.005).collect();
    grid.extend((1..=19).map(|i| i as f64 * 0.05));
    grid
}

/// Training protocol for sweeps and ablations: a small per-family search
/// set over input dropout and weight decay (inside the ranges the tuned
/// configurations use), selected per run on validation accuracy with
/// validation loss breaking ties. Plain sgc stays dropout-free.
pub fn protocol_variants(cfg: &ModelConfig) -> Vec<ModelConfig> {
    let grid: &[(f64, f64)] = match (cfg.family, cfg.acm) {
        (Family::Sgc, AcmVariant::None) => &[(0.0, 5e-5), (0.0, 5e-4)],
        (_, AcmVariant::None) => &[(0.5, 5e-4), (0.5, 5e-3)],
        _ => &[(0.6, 5e-3), (0.5, 5e-3), (0.5, 5e-4)],
    };
    grid.iter()
        .map(|&(dropout, wd)| {
            let mut v = cfg.clone();
            v.input_dropout = dropout;
            v.weight_decay = wd;
            v
        })
        .collect()
}

/// Trains every variant and keeps the one with the best validation accuracy
/// (ties: lower validation loss at the checkpoint, then earlier variant).
/// Variant seeds are derived from `opts.seed` by index.
pub fn train_best_variant(
    variants: &[ModelConfig],
    g: &Graph,
    masks: &SplitMasks,
    opts: &TrainOptions,
) -> Result<(TrainResult, usize)> {
    if variants.is_empty() {
        return Err(Error::Config("no model variants to train".into()));
    }
    let mut best: Option<(TrainResult, usize)> = None;
    for (i, cfg) in variants.iter().enumerate() {
        let v_opts = TrainOptions {
            seed: mix_seed(&[opts.seed, i as u64]),
            ..*opts
        };
        let res = train(cfg, g, masks, &v_opts)?;
        let better = match &best {
            None => true,
            Some((b, _)) => {
                res.best_val_acc > b.best_val_acc
                    || (res.best_val_acc == b.best_val_acc
                        && res.val_loss_at_best < b.val_loss_at_best)
            }
        };
        if better {
            best = Some((res, i));
        }
    }
    Ok(best.expect("at least one variant"))
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub d_intra: usize,
    pub feature_dim: usize,
    pub feature_separation: f64,
    pub repeats: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub parallel: bool,
    /// Train the per-family protocol search set and keep the run that
    /// validates best; with `false` each config is trained exactly as given.
    pub variant_search: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            classes: 5,
            nodes_per_class: 100,
            d_intra: 2,
            feature_dim: 32,
            feature_separation: 2.0,
            repeats: 3,
            seed: 0,
            max_epochs: 200,
            patience: 30,
            parallel: true,
            variant_search: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub h_target: f64,
    pub h_edge: f64,
    pub h_node: f64,
    pub h_class: f64,
    pub h_agg: f64,
    pub h_agg_mod: f64,
    pub model: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub repeats: usize,
}

pub const SWEEP_CSV_HEADER: &str =
    "h_target,h_edge,h_node,h_class,h_agg,h_agg_mod,model,mean_acc,std_acc,repeats";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{}",
            self.h_target,
            self.h_edge,
            self.h_node,
            self.h_class,
            self.h_agg,
            self.h_agg_mod,
            self.model,
            self.mean_acc,
            self.std_acc,
            self.repeats
        )
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

struct SweepCell {
    metrics: [f64; 5],
    accs: Vec<f64>, // one per model
}

/// For each homophily level and repeat: generate a fresh graph (shared by all
/// models of that cell), split 60/20/20, train every model, and collect the
/// graph's homophily metrics. Cells are independent and may run in a worker
/// pool; aggregation order is fixed by (level, model), so the emitted rows do
/// not depend on thread scheduling.
pub fn sweep(
    grid: &[f64],
    models: &[ModelConfig],
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || models.is_empty() {
        return Err(Error::Config("sweep needs a grid and at least one model".into()));
    }
    for cfg in models {
        cfg.validate()?;
    }
    let cells: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|h| (0..opts.repeats).map(move |r| (h, r)))
        .collect();

    let run_cell = |&(h_idx, rep): &(usize, usize)| -> Result<SweepCell> {
        let h = grid[h_idx];
        let mut synth = SynthConfig::new(
            h,
            opts.classes,
            opts.nodes_per_class,
            mix_seed(&[opts.seed, h_idx as u64, rep as u64, 0]),
        );
        synth.d_intra = opts.d_intra;
        synth.feature_mode = crate::synth::FeatureMode::GaussianMeans {
            dim: opts.feature_dim,
            separation: opts.feature_separation,
        };
        let g = generate(&synth)?;
        let op = crate::filters::Operator::<f64>::affinity(&g, metrics::DEFAULT_OP)?;
        let (h_agg, h_agg_mod) = metrics::aggregation_homophily(&g, &op)?;
        let cell_metrics = [
            metrics::edge_homophily(&g)?,
            metrics::node_homophily(&g)?,
            metrics::class_homophily(&g)?,
            h_agg,
            h_agg_mod,
        ];
        let masks = split(
            g.n_nodes(),
            (0.6, 0.2, 0.2),
            mix_seed(&[opts.seed, h_idx as u64, rep as u64, 1]),
        )?;
        let mut accs = Vec::with_capacity(models.len());
        for (mi, cfg) in models.iter().enumerate() {
            let t_opts = TrainOptions {
                max_epochs: opts.max_epochs,
                patience: opts.patience,
                seed: mix_seed(&[opts.seed, h_idx as u64, rep as u64, 2 + mi as u64]),
            };
            let res = if opts.variant_search {
                train_best_variant(&protocol_variants(cfg), &g, &masks, &t_opts)?.0
            } else {
                train(cfg, &g, &masks, &t_opts)?
            };
            accs.push(res.test_acc_at_best_val);
        }
        Ok(SweepCell {
            metrics: cell_metrics,
            accs,
        })
    };

    let results: Vec<Result<SweepCell>> = if opts.parallel {
        cells.par_iter().map(run_cell).collect()
    } else {
        cells.iter().map(run_cell).collect()
    };
    let mut by_cell = Vec::with_capacity(results.len());
    for r in results {
        by_cell.push(r?);
    }

    let mut rows = Vec::new();
    for (h_idx, &h) in grid.iter().enumerate() {
        let cell_range: Vec<&SweepCell> = (0..opts.repeats)
            .map(|r| &by_cell[h_idx * opts.repeats + r])
            .collect();
        let metric_means: Vec<f64> = (0..5)
            .map(|mi| {
                cell_range.iter().map(|c| c.metrics[mi]).sum::<f64>() / opts.repeats as f64
            })
            .collect();
        for (mi, cfg) in models.iter().enumerate() {
            let accs: Vec<f64> = cell_range.iter().map(|c| c.accs[mi]).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            rows.push(SweepRow {
                h_target: h,
                h_edge: metric_means[0],
                h_node: metric_means[1],
                h_class: metric_means[2],
                h_agg: metric_means[3],
                h_agg_mod: metric_means[4],
                model: cfg.id(),
                mean_acc,
                std_acc,
                repeats: opts.repeats,
            });
        }
    }
    Ok(rows)
}

/// The five channel/mixing configurations of the ablation matrix.
pub fn ablation_configs() -> [(&'static [Channel], Mixing, &'static str); 5] {
    use Channel::{HighPass, Identity, LowPass};
    [
        (&[LowPass], Mixing::Sum, "lp"),
        (&[LowPass, HighPass], Mixing::Adaptive, "lp+hp+mix"),
        (&[LowPass, Identity], Mixing::Adaptive, "lp+identity+mix"),
        (&[LowPass, HighPass, Identity], Mixing::Sum, "lp+hp+identity"),
        (
            &[LowPass, HighPass, Identity],
            Mixing::Adaptive,
            "lp+hp+identity+mix",
        ),
    ]
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub family: Family,
    pub lp: bool,
    pub hp: bool,
    pub identity: bool,
    pub mixing: bool,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub repeats: usize,
    /// Mean wall time per epoch in milliseconds. Reported on stdout, not in
    /// the CSV (timings are not reproducible byte-for-byte).
    pub epoch_ms: f64,
}

pub const ABLATION_CSV_HEADER: &str = "family,lp,hp,identity,mixing,mean_acc,std_acc,repeats";

impl AblationRow {
    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Mlp => "mlp",
            Family::Sgc => "sgc",
            Family::Gcn => "gcn",
            Family::Snowball => "snowball",
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{}",
            self.family_name(),
            u8::from(self.lp),
            u8::from(self.hp),
            u8::from(self.identity),
            u8::from(self.mixing),
            self.mean_acc,
            self.std_acc,
            self.repeats
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AblationOptions {
    pub repeats: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub parallel: bool,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            repeats: 5,
            seed: 0,
            max_epochs: 200,
            patience: 30,
            parallel: true,
        }
    }
}

/// Runs the five-row ablation per family on one graph with fresh random
/// splits per repeat.
pub fn ablation(
    families: &[Family],
    g: &Graph,
    opts: &AblationOptions,
) -> Result<Vec<AblationRow>> {
    if families.is_empty() {
        return Err(Error::Config("ablation needs at least one family".into()));
    }
    if families.iter().any(|f| *f == Family::Mlp) {
        return Err(Error::Config(
            "mlp has no filter channels to ablate".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..families.len())
        .flat_map(|f| (0..ablation_configs().len()).map(move |c| (f, c)))
        .collect();

    let run = |&(fi, ci): &(usize, usize)| -> Result<AblationRow> {
        let family = families[fi];
        let (channels, mixing, _) = ablation_configs()[ci];
        let depth = if family == Family::Sgc { 1 } else { 2 };
        let cfg = ModelConfig::new(family, depth)
            .with_acm(AcmVariant::Acm)
            .with_channels(channels)
            .with_mixing(mixing);
        let cfg = protocol_variants(&cfg).remove(0);
        cfg.validate()?;
        let mut accs = Vec::with_capacity(opts.repeats);
        let mut times = Vec::with_capacity(opts.repeats);
        for rep in 0..opts.repeats {
            let masks = split(
                g.n_nodes(),
                (0.6, 0.2, 0.2),
                mix_seed(&[opts.seed, fi as u64, rep as u64, 77]),
            )?;
            let t_opts = TrainOptions {
                max_epochs: opts.max_epochs,
                patience: opts.patience,
                seed: mix_seed(&[opts.seed, fi as u64, ci as u64, rep as u64]),
            };
            let res = train(&cfg, g, &masks, &t_opts)?;
            accs.push(res.test_acc_at_best_val);
            times.push(res.wall_time_per_epoch_ms);
        }
        let (mean_acc, std_acc) = mean_std(&accs);
        let channel_set: Vec<Channel> = channels.to_vec();
        Ok(AblationRow {
            family,
            lp: channel_set.contains(&Channel::LowPass),
            hp: channel_set.contains(&Channel::HighPass),
            identity: channel_set.contains(&Channel::Identity),
            mixing: mixing == Mixing::Adaptive && channels.len() > 1,
            mean_acc,
            std_acc,
            repeats: opts.repeats,
            epoch_ms: times.iter().sum::<f64>() / times.len().max(1) as f64,
        })
    };

    let results: Vec<Result<AblationRow>> = if opts.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    results.into_iter().collect()
}
