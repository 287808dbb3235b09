//! Seeded synthetic graph generation with controllable edge homophily, the
//! closed-form similarity gap `g(h)` with its minimizer, a Monte-Carlo
//! oracle for both, and the small-clusters-on-a-big-cluster scenario where
//! the highpass channel stops being informative.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::graph::{load_graph_dir, Graph};
use crate::mat::Mat;
use crate::scalar::Rational;

/// How node features are produced.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureMode {
    /// Class k features ~ Normal(mu_k, I) with per-class means drawn once on
    /// a sphere of radius `separation`.
    GaussianMeans { dim: usize, separation: f64 },
    /// Sample features uniformly from nodes of the matching class in a base
    /// graph directory (falls back on an error if a class is missing there).
    FromBaseGraph { dir: std::path::PathBuf },
}

impl Default for FeatureMode {
    fn default() -> Self {
        FeatureMode::GaussianMeans {
            dim: 32,
            separation: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Target edge homophily in (0, 1].
    pub h_target: f64,
    pub classes: usize,
    pub nodes_per_class: usize,
    /// Intra-class edges drawn per node; the inter-class count is
    /// `floor(d_intra / h - d_intra)` (truncation, not rounding).
    pub d_intra: usize,
    pub seed: u64,
    pub feature_mode: FeatureMode,
}

impl SynthConfig {
    pub fn new(h_target: f64, classes: usize, nodes_per_class: usize, seed: u64) -> Self {
        SynthConfig {
            h_target,
            classes,
            nodes_per_class,
            d_intra: 2,
            seed,
            feature_mode: FeatureMode::default(),
        }
    }

    pub fn inter_per_node(&self) -> usize {
        (self.d_intra as f64 / self.h_target - self.d_intra as f64).floor() as usize
    }

    fn check(&self) -> Result<()> {
        if !(self.h_target > 0.0 && self.h_target <= 1.0) {
            return Err(Error::Config(format!(
                "h_target must lie in (0, 1], got {}",
                self.h_target
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.nodes_per_class < 2 {
            return Err(Error::Config("need at least 2 nodes per class".into()));
        }
        if self.d_intra == 0 {
            return Err(Error::Config("d_intra must be positive".into()));
        }
        Ok(())
    }
}

/// Generates a simple undirected graph: per node, `d_intra` endpoints drawn
/// uniformly among same-class nodes (self excluded) and
/// `floor(d_intra/h - d_intra)` among all other-class nodes; the directed
/// stubs are symmetrized and deduplicated. Deterministic for a given seed.
pub fn generate(cfg: &SynthConfig) -> Result<Graph> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.classes * cfg.nodes_per_class;
    let class_of = |v: usize| v / cfg.nodes_per_class;
    let n_inter = cfg.inter_per_node();

    let mut edges: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
    let add = |edges: &mut std::collections::BTreeSet<(usize, usize)>, u: usize, v: usize| {
        if u != v {
            edges.insert(if u < v { (u, v) } else { (v, u) });
        }
    };

    let draw_stubs = |rng: &mut ChaCha8Rng,
                          edges: &mut std::collections::BTreeSet<(usize, usize)>,
                          v: usize| {
        let class = class_of(v);
        let base = class * cfg.nodes_per_class;
        let v_off = v - base;
        // Same-class draws exclude v by skipping its offset.
        let intra = Uniform::from(0..cfg.nodes_per_class - 1);
        for _ in 0..cfg.d_intra {
            let mut off = intra.sample(rng);
            if off >= v_off {
                off += 1;
            }
            add(edges, v, base + off);
        }
        if n_inter > 0 {
            let inter = Uniform::from(0..n - cfg.nodes_per_class);
            for _ in 0..n_inter {
                let mut u = inter.sample(rng);
                if u >= base {
                    u += cfg.nodes_per_class;
                }
                add(edges, v, u);
            }
        }
    };

    for v in 0..n {
        draw_stubs(&mut rng, &mut edges, v);
    }

    // Extreme configs can leave a node isolated after deduplication; redraw
    // its stubs a bounded number of times.
    for _ in 0..100 {
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let isolated: Vec<usize> = (0..n).filter(|&v| degree[v] == 0).collect();
        if isolated.is_empty() {
            break;
        }
        for v in isolated {
            draw_stubs(&mut rng, &mut edges, v);
        }
    }
    {
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        if let Some(v) = (0..n).find(|&v| degree[v] == 0) {
            return Err(Error::Numeric(format!(
                "node {v} still isolated after 100 redraws"
            )));
        }
    }

    let class_ids: Vec<usize> = (0..n).map(class_of).collect();
    let features = sample_features(cfg, &class_ids, &mut rng)?;
    Graph::new(edges.into_iter().collect(), features, &class_ids, cfg.classes)
}

fn sample_features(
    cfg: &SynthConfig,
    class_ids: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Mat<f64>> {
    match &cfg.feature_mode {
        FeatureMode::GaussianMeans { dim, separation } => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            // Class means drawn once, scaled onto a sphere of the requested radius.
            let mut means = Vec::with_capacity(cfg.classes);
            for _ in 0..cfg.classes {
                let raw: Vec<f64> = (0..*dim).map(|_| normal.sample(rng)).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                means.push(raw.iter().map(|x| x / norm * separation).collect::<Vec<_>>());
            }
            let mut features = Mat::zeros(class_ids.len(), *dim);
            for (v, &k) in class_ids.iter().enumerate() {
                for j in 0..*dim {
                    features[(v, j)] = means[k][j] + normal.sample(rng);
                }
            }
            Ok(features)
        }
        FeatureMode::FromBaseGraph { dir } => {
            let base = load_graph_dir(dir)?;
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); cfg.classes];
            for v in 0..base.n_nodes() {
                let k = base.label_of(v);
                if k < cfg.classes {
                    pools[k].push(v);
                }
            }
            if let Some(k) = pools.iter().position(Vec::is_empty) {
                return Err(Error::Config(format!(
                    "base graph has no nodes of class {k}"
                )));
            }
            let dim = base.feature_dim();
            let mut features = Mat::zeros(class_ids.len(), dim);
            for (v, &k) in class_ids.iter().enumerate() {
                let src = pools[k][rng.gen_range(0..pools[k].len())];
                for j in 0..dim {
                    features[(v, j)] = base.features()[(src, j)];
                }
            }
            Ok(features)
        }
    }
}

/// Closed-form expected similarity gap between a same-class and an
/// other-class node under the d-regular generative model:
/// `((c-1)(hd+1) - (1-h)d)^2 / ((c-1)(d+1))^2`.
pub fn g_of_h(h: f64, d: usize, c: usize) -> Result<f64> {
    if d < 1 || c < 2 || !(0.0..=1.0).contains(&h) {
        return Err(Error::Config(format!(
            "g(h) needs d >= 1, c >= 2, h in [0,1]; got h={h}, d={d}, c={c}"
        )));
    }
    let (d, c) = (d as f64, c as f64);
    let num = (c - 1.0) * (h * d + 1.0) - (1.0 - h) * d;
    let den = (c - 1.0) * (d + 1.0);
    Ok((num / den).powi(2))
}

/// Exact minimizer of `g(h)` at fixed intra-class degree:
/// `d_intra / (c * d_intra + c - 1)`.
pub fn optimal_h(d_intra: usize, c: usize) -> Result<Rational> {
    if d_intra < 1 || c < 2 {
        return Err(Error::Config(format!(
            "optimal_h needs d_intra >= 1, c >= 2; got d_intra={d_intra}, c={c}"
        )));
    }
    let num = d_intra as i64;
    let den = (c * d_intra + c - 1) as i64;
    Ok(Rational::new(num.into(), den.into()))
}

/// Monte-Carlo estimate of the similarity gap under the Theorem-1 model.
///
/// Each trial draws the class-count profiles of a node v, a same-class node
/// u1 and an other-class node u2 (d edges each, intra with probability h,
/// inter uniform over the other c-1 classes), forms the renormalized
/// random-walk rows and returns the mean and standard error of
/// `<w_v, w_u1> - <w_v, w_u2>`.
pub fn monte_carlo_g(
    h: f64,
    d: usize,
    c: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials < 1 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    if d < 1 || c < 2 || !(0.0..=1.0).contains(&h) {
        return Err(Error::Config(format!(
            "monte_carlo_g needs d >= 1, c >= 2, h in [0,1]; got h={h}, d={d}, c={c}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv = 1.0 / (d as f64 + 1.0);

    // Aggregated row of a node in `class`: counts of neighbors per class
    // plus the self-loop, scaled by 1/(d+1).
    let sample_row = |rng: &mut ChaCha8Rng, class: usize| -> Vec<f64> {
        let mut counts = vec![0usize; c];
        counts[class] += 1; // self-loop from the renormalization
        for _ in 0..d {
            if rng.gen::<f64>() < h {
                counts[class] += 1;
            } else {
                let mut k = rng.gen_range(0..c - 1);
                if k >= class {
                    k += 1;
                }
                counts[k] += 1;
            }
        }
        counts.into_iter().map(|x| x as f64 * inv).collect()
    };

    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..trials {
        let wv = sample_row(&mut rng, 0);
        let wu1 = sample_row(&mut rng, 0);
        let wu2 = sample_row(&mut rng, 1);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let x = dot(&wv, &wu1) - dot(&wv, &wu2);
        // Welford update keeps the variance single-pass and stable.
        let delta = x - mean;
        mean += delta / (t as f64 + 1.0);
        m2 += delta * (x - mean);
    }
    let stderr = if trials > 1 {
        (m2 / (trials as f64 - 1.0) / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, stderr))
}

/// Ten (h, d, C) triples for the gap oracle, including the theorem's zero
/// point (1/7, 14, 5).
pub fn default_oracle_grid() -> Vec<(f64, usize, usize)> {
    vec![
        (0.05, 40, 5),
        (0.1, 20, 5),
        (1.0 / 7.0, 14, 5),
        (0.2, 10, 5),
        (0.3, 8, 4),
        (0.5, 4, 2),
        (0.5, 6, 3),
        (0.7, 6, 5),
        (0.9, 10, 3),
        (1.0, 5, 4),
    ]
}

/// Several small cliques, each with its own label, all densely attached to
/// one big cluster: the scenario where neighborhood differences of the small
/// clusters look alike and diversification stops separating them.
pub fn limitation_scenario(
    small_clusters: usize,
    small_size: usize,
    big_size: usize,
    seed: u64,
) -> Result<Graph> {
    if small_clusters < 2 {
        return Err(Error::Config("need at least 2 small clusters".into()));
    }
    if small_size < 2 || big_size < small_size {
        return Err(Error::Config(
            "cluster sizes must satisfy small >= 2 and big >= small".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_small = small_clusters * small_size;
    let n = n_small + big_size;
    let mut edges = Vec::new();
    // Small clusters are cliques.
    for k in 0..small_clusters {
        let base = k * small_size;
        for i in 0..small_size {
            for j in (i + 1)..small_size {
                edges.push((base + i, base + j));
            }
        }
    }
    // Big cluster: clique as well ("densely connected" inside).
    for i in 0..big_size {
        for j in (i + 1)..big_size {
            edges.push((n_small + i, n_small + j));
        }
    }
    // Every small-cluster node attaches to `small_size` random big-cluster
    // nodes, so about half of its edges leave the cluster; heavier
    // attachment lets the big cluster dominate every highpass row and the
    // scenario stops biting.
    let attach = small_size.min(big_size);
    for v in 0..n_small {
        let mut targets: Vec<usize> = (0..big_size).collect();
        for _ in 0..attach {
            let idx = rng.gen_range(0..targets.len());
            let t = targets.swap_remove(idx);
            edges.push((v, n_small + t));
        }
    }
    let class_ids: Vec<usize> = (0..n)
        .map(|v| {
            if v < n_small {
                v / small_size
            } else {
                small_clusters
            }
        })
        .collect();
    let classes = small_clusters + 1;
    let features = Mat::from_fn(n, classes, |i, j| {
        if class_ids[i] == j {
            1.0
        } else {
            0.0
        }
    });
    Graph::new(edges, features, &class_ids, classes)
}
