//! Homophily metrics.
//!
//! Three classical label/structure consistency ratios (edge, node, class
//! homophily), the post-aggregation similarity matrix `S(A, X) = (AX)(AX)^T`
//! with the aggregation similarity score built on it, diversification
//! distinguishability for the highpass channel, and estimation of all of the
//! above from a training subset of labels.
//!
//! Everything is generic over the scalar so the theorem-level statements
//! (`DD = 1` for binary labels, tie handling in the score) can be evaluated
//! in exact rational arithmetic instead of trusting float rounding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::{AffinityKind, Operator, OperatorKind};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Which signal a similarity matrix was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalTag {
    Labels,
    Features,
}

/// Post-aggregation node similarity matrix `(AX)(AX)^T`.
#[derive(Clone, Debug)]
pub struct SimMatrix<T> {
    matrix: Mat<T>,
    operator_kind: OperatorKind,
    signal_tag: SignalTag,
}

impl<T: Scalar> SimMatrix<T> {
    pub fn matrix(&self) -> &Mat<T> {
        &self.matrix
    }

    pub fn operator_kind(&self) -> OperatorKind {
        self.operator_kind
    }

    pub fn signal_tag(&self) -> SignalTag {
        self.signal_tag
    }
}

/// `S(op, signal) = (op signal)(op signal)^T`; symmetric by construction.
pub fn similarity_matrix<T: Scalar>(
    op: &Operator<T>,
    signal: &Mat<T>,
    tag: SignalTag,
) -> Result<SimMatrix<T>> {
    let propagated = op.apply(signal)?;
    Ok(SimMatrix {
        matrix: propagated.gram(),
        operator_kind: op.kind(),
        signal_tag: tag,
    })
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    if g.n_edges() == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    let same = g
        .edges()
        .iter()
        .filter(|&&(u, v)| g.same_label(u, v))
        .count();
    Ok(same as f64 / g.n_edges() as f64)
}

/// Mean over nodes of (same-label neighbors) / degree.
pub fn node_homophily(g: &Graph) -> Result<f64> {
    if let Some(v) = g.degrees().first_isolated() {
        return Err(Error::IsolatedNode(v));
    }
    let mut acc = 0.0;
    for v in 0..g.n_nodes() {
        let nbrs = g.neighbors(v);
        let same = nbrs.iter().filter(|&&u| g.same_label(u, v)).count();
        acc += same as f64 / nbrs.len() as f64;
    }
    Ok(acc / g.n_nodes() as f64)
}

/// Class-balanced homophily: `(1/(C-1)) sum_k [h_k - |class k|/N]_+` where
/// `h_k` is class k's share of same-label edge endpoints over its degree mass.
pub fn class_homophily(g: &Graph) -> Result<f64> {
    let c = g.class_count();
    if c < 2 {
        return Err(Error::DegenerateClass(
            "class homophily needs at least 2 classes".into(),
        ));
    }
    if let Some(v) = g.degrees().first_isolated() {
        return Err(Error::IsolatedNode(v));
    }
    let n = g.n_nodes();
    let mut same_by_class = vec![0usize; c];
    let mut degree_by_class = vec![0usize; c];
    let mut size_by_class = vec![0usize; c];
    for v in 0..n {
        let k = g.label_of(v);
        size_by_class[k] += 1;
        degree_by_class[k] += g.neighbors(v).len();
        same_by_class[k] += g
            .neighbors(v)
            .iter()
            .filter(|&&u| g.same_label(u, v))
            .count();
    }
    let mut acc = 0.0;
    for k in 0..c {
        // Empty classes contribute nothing: h_k and the size share are both 0.
        let h_k = if degree_by_class[k] == 0 {
            0.0
        } else {
            same_by_class[k] as f64 / degree_by_class[k] as f64
        };
        acc += (h_k - size_by_class[k] as f64 / n as f64).max(0.0);
    }
    Ok(acc / (c - 1) as f64)
}

/// Shared engine for the aggregation similarity score, optionally restricted
/// to a node subset (rows and columns of `S` in the subset).
///
/// For every node v the mean of `S[v, u]` over same-label u (v itself
/// included) is compared with the mean over other-label u; ties count toward
/// the numerator. Signs and comparisons are taken on sums scaled by positive
/// counts, so exact scalars stay exact.
fn aggregation_score_on<T: Scalar>(
    s: &Mat<T>,
    class_ids: &[usize],
    nodes: &[usize],
) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::DegenerateClass(
            "aggregation similarity needs at least 2 nodes".into(),
        ));
    }
    let mut hits = 0usize;
    for &v in nodes {
        let mut same_sum = T::zero();
        let mut diff_sum = T::zero();
        let mut same_n = 0usize;
        let mut diff_n = 0usize;
        for &u in nodes {
            let x = s[(v, u)].clone();
            if class_ids[u] == class_ids[v] {
                same_sum = same_sum + x;
                same_n += 1;
            } else {
                diff_sum = diff_sum + x;
                diff_n += 1;
            }
        }
        if diff_n == 0 {
            return Err(Error::DegenerateClass(format!(
                "node {v} has no node of another class"
            )));
        }
        let mean_same = same_sum / T::from_usize(same_n).expect("count fits scalar");
        let mean_diff = diff_sum / T::from_usize(diff_n).expect("count fits scalar");
        if mean_same >= mean_diff {
            hits += 1;
        }
    }
    Ok(hits as f64 / nodes.len() as f64)
}

/// Aggregation similarity score over all nodes.
pub fn aggregation_similarity<T: Scalar>(s: &SimMatrix<T>, class_ids: &[usize]) -> Result<f64> {
    let all: Vec<usize> = (0..s.matrix.rows()).collect();
    aggregation_score_on(&s.matrix, class_ids, &all)
}

/// `[2 s - 1]_+`, the practical rescaling of the score.
pub fn modified_aggregation_similarity(s_agg: f64) -> f64 {
    (2.0 * s_agg - 1.0).max(0.0)
}

/// Label-signal aggregation homophily `(H_agg, H_agg^M)` under `op`.
pub fn aggregation_homophily<T: Scalar>(g: &Graph, op: &Operator<T>) -> Result<(f64, f64)> {
    let z = g.labels_one_hot::<T>();
    let s = similarity_matrix(op, &z, SignalTag::Labels)?;
    let h = aggregation_similarity(&s, g.class_ids())?;
    Ok((h, modified_aggregation_similarity(h)))
}

/// Fraction of nodes whose highpass similarity `S(I - A, X)` has nonnegative
/// same-label mean and nonpositive other-label mean (both must hold).
pub fn diversification_distinguishability<T: Scalar>(
    op: &Operator<T>,
    signal: &Mat<T>,
    class_ids: &[usize],
) -> Result<f64> {
    let all: Vec<usize> = (0..signal.rows()).collect();
    diversification_score_on(op, signal, class_ids, &all)
}

fn diversification_score_on<T: Scalar>(
    op: &Operator<T>,
    signal: &Mat<T>,
    class_ids: &[usize],
    nodes: &[usize],
) -> Result<f64> {
    let hp = op.highpass()?;
    let s = similarity_matrix(&hp, signal, SignalTag::Features)?;
    if nodes.len() < 2 {
        return Err(Error::DegenerateClass(
            "diversification distinguishability needs at least 2 nodes".into(),
        ));
    }
    let mut hits = 0usize;
    for &v in nodes {
        let mut same_sum = T::zero();
        let mut diff_sum = T::zero();
        let mut diff_n = 0usize;
        for &u in nodes {
            let x = s.matrix[(v, u)].clone();
            if class_ids[u] == class_ids[v] {
                same_sum = same_sum + x;
            } else {
                diff_sum = diff_sum + x;
                diff_n += 1;
            }
        }
        if diff_n == 0 {
            return Err(Error::DegenerateClass(format!(
                "node {v} has no node of another class"
            )));
        }
        // Division by a positive count cannot change the sign of a mean.
        if same_sum >= T::zero() && diff_sum <= T::zero() {
            hits += 1;
        }
    }
    Ok(hits as f64 / nodes.len() as f64)
}

/// All homophily statistics of one graph under one aggregation operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomophilyReport {
    pub h_edge: f64,
    pub h_node: f64,
    pub h_class: f64,
    pub h_agg: f64,
    pub h_agg_mod: f64,
    /// Aggregation similarity of the aggregated features, `S_agg(S(A, X))`.
    pub s_agg_ax: f64,
    /// Aggregation similarity of the raw features, `S_agg(S(I, X))`.
    pub s_agg_ix: f64,
    /// Diversification distinguishability of the features, `DD_{A,X}`.
    pub dd: f64,
}

impl HomophilyReport {
    pub const FIELD_NAMES: [&'static str; 8] = [
        "h_edge",
        "h_node",
        "h_class",
        "h_agg",
        "h_agg_mod",
        "s_agg_ax",
        "s_agg_ix",
        "dd",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.h_edge,
            self.h_node,
            self.h_class,
            self.h_agg,
            self.h_agg_mod,
            self.s_agg_ax,
            self.s_agg_ix,
            self.dd,
        ]
    }
}

/// Default aggregation operator of the artifact: the renormalized random
/// walk matrix.
pub const DEFAULT_OP: AffinityKind = AffinityKind::RandomWalkRenorm;

/// Full-graph report under `op` (pass [`DEFAULT_OP`] for the standard one).
pub fn report(g: &Graph, kind: AffinityKind) -> Result<HomophilyReport> {
    let op = Operator::<f64>::affinity(g, kind)?;
    let identity = Operator::<f64>::identity(g.n_nodes());
    let (h_agg, h_agg_mod) = aggregation_homophily(g, &op)?;
    let s_ax = similarity_matrix(&op, g.features(), SignalTag::Features)?;
    let s_ix = similarity_matrix(&identity, g.features(), SignalTag::Features)?;
    Ok(HomophilyReport {
        h_edge: edge_homophily(g)?,
        h_node: node_homophily(g)?,
        h_class: class_homophily(g)?,
        h_agg,
        h_agg_mod,
        s_agg_ax: aggregation_similarity(&s_ax, g.class_ids())?,
        s_agg_ix: aggregation_similarity(&s_ix, g.class_ids())?,
        dd: diversification_distinguishability(&op, g.features(), g.class_ids())?,
    })
}

/// Report estimated from the labels of `mask` only.
///
/// Structure and features are treated as fully observed: the similarity
/// matrices are built on the whole graph and only their label-dependent
/// means are restricted to masked rows/columns. The edge-based ratios are
/// computed on the induced subgraph of the mask; nodes left isolated by the
/// masking are skipped in the node/class means there (the full-graph metrics
/// still reject isolated nodes outright).
pub fn estimate_metrics(g: &Graph, mask: &[usize], kind: AffinityKind) -> Result<HomophilyReport> {
    if mask.is_empty() {
        return Err(Error::DegenerateMask("empty mask".into()));
    }
    let classes_seen: std::collections::BTreeSet<usize> =
        mask.iter().map(|&v| g.label_of(v)).collect();
    if classes_seen.len() < 2 {
        return Err(Error::DegenerateMask(
            "mask covers fewer than 2 classes".into(),
        ));
    }
    let (sub, _) = g.induced_subgraph(mask)?;

    let op = Operator::<f64>::affinity(g, kind)?;
    let identity = Operator::<f64>::identity(g.n_nodes());
    let s_az = similarity_matrix(&op, &g.labels_one_hot::<f64>(), SignalTag::Labels)?;
    let s_ax = similarity_matrix(&op, g.features(), SignalTag::Features)?;
    let s_ix = similarity_matrix(&identity, g.features(), SignalTag::Features)?;
    let mut sorted: Vec<usize> = mask.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let h_agg = aggregation_score_on(&s_az.matrix, g.class_ids(), &sorted)?;
    let all_masked: Vec<usize> = sorted.clone();
    Ok(HomophilyReport {
        h_edge: edge_homophily(&sub)?,
        h_node: node_homophily_skipping_isolated(&sub)?,
        h_class: class_homophily_skipping_isolated(&sub)?,
        h_agg,
        h_agg_mod: modified_aggregation_similarity(h_agg),
        s_agg_ax: aggregation_score_on(&s_ax.matrix, g.class_ids(), &all_masked)?,
        s_agg_ix: aggregation_score_on(&s_ix.matrix, g.class_ids(), &all_masked)?,
        dd: diversification_score_on(&op, g.features(), g.class_ids(), &all_masked)?,
    })
}

fn node_homophily_skipping_isolated(g: &Graph) -> Result<f64> {
    let mut acc = 0.0;
    let mut counted = 0usize;
    for v in 0..g.n_nodes() {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs.iter().filter(|&&u| g.same_label(u, v)).count();
        acc += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::DegenerateMask("all masked nodes isolated".into()));
    }
    Ok(acc / counted as f64)
}

fn class_homophily_skipping_isolated(g: &Graph) -> Result<f64> {
    let c = g.class_count();
    if c < 2 {
        return Err(Error::DegenerateClass(
            "class homophily needs at least 2 classes".into(),
        ));
    }
    let n: usize = (0..g.n_nodes())
        .filter(|&v| !g.neighbors(v).is_empty())
        .count();
    if n == 0 {
        return Err(Error::DegenerateMask("all masked nodes isolated".into()));
    }
    let mut same_by_class = vec![0usize; c];
    let mut degree_by_class = vec![0usize; c];
    let mut size_by_class = vec![0usize; c];
    for v in 0..g.n_nodes() {
        if g.neighbors(v).is_empty() {
            continue;
        }
        let k = g.label_of(v);
        size_by_class[k] += 1;
        degree_by_class[k] += g.neighbors(v).len();
        same_by_class[k] += g
            .neighbors(v)
            .iter()
            .filter(|&&u| g.same_label(u, v))
            .count();
    }
    let mut acc = 0.0;
    for k in 0..c {
        let h_k = if degree_by_class[k] == 0 {
            0.0
        } else {
            same_by_class[k] as f64 / degree_by_class[k] as f64
        };
        acc += (h_k - size_by_class[k] as f64 / n as f64).max(0.0);
    }
    Ok(acc / (c - 1) as f64)
}

/// Draws a uniformly random mask of `floor(frac * N)` nodes.
pub fn random_mask(n: usize, frac: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let take = ((n as f64) * frac).floor() as usize;
    let mut mask: Vec<usize> = nodes.into_iter().take(take.max(1)).collect();
    mask.sort_unstable();
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::complete_bipartite;
    use crate::scalar::Rational;

    fn triangle_graph() -> Graph {
        Graph::new(
            vec![(0, 1), (1, 2), (0, 2)],
            Mat::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]),
            &[0, 0, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn triangle_edge_node_class_homophily() {
        let g = triangle_graph();
        assert_eq!(edge_homophily(&g).unwrap(), 1.0 / 3.0);
        assert!((node_homophily(&g).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(class_homophily(&g).unwrap(), 0.0);
    }

    #[test]
    fn uniform_labels_make_edge_homophily_one() {
        let g = Graph::new(
            vec![(0, 1), (1, 2)],
            Mat::zeros(3, 1),
            &[1, 1, 1],
            2,
        )
        .unwrap();
        assert_eq!(edge_homophily(&g).unwrap(), 1.0);
        assert_eq!(node_homophily(&g).unwrap(), 1.0);
    }

    #[test]
    fn empty_edge_set_rejected() {
        let g = Graph::new(vec![], Mat::zeros(2, 1), &[0, 1], 2).unwrap();
        assert!(matches!(edge_homophily(&g), Err(Error::EmptyEdgeSet)));
    }

    #[test]
    fn k33_classical_metrics_vanish() {
        let g = complete_bipartite(3, 3);
        assert_eq!(edge_homophily(&g).unwrap(), 0.0);
        assert_eq!(node_homophily(&g).unwrap(), 0.0);
        assert_eq!(class_homophily(&g).unwrap(), 0.0);
    }

    #[test]
    fn k33_similarity_entries_and_aggregation_homophily() {
        let g = complete_bipartite(3, 3);
        let op = Operator::<Rational>::random_walk_affinity(&g, true).unwrap();
        let z = g.labels_one_hot::<Rational>();
        let s = similarity_matrix(&op, &z, SignalTag::Labels).unwrap();
        assert_eq!(s.matrix()[(0, 1)], crate::scalar::ratio(10, 16));
        assert_eq!(s.matrix()[(0, 4)], crate::scalar::ratio(6, 16));
        let (h_agg, h_agg_mod) = aggregation_homophily(&g, &op).unwrap();
        assert_eq!((h_agg, h_agg_mod), (1.0, 1.0));
    }

    #[test]
    fn identity_similarity_of_one_hot_is_class_indicator() {
        let g = triangle_graph();
        let op = Operator::<f64>::identity(3);
        let z = g.labels_one_hot::<f64>();
        let s = similarity_matrix(&op, &z, SignalTag::Labels).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if g.same_label(i, j) { 1.0 } else { 0.0 };
                assert_eq!(s.matrix()[(i, j)], expect);
            }
        }
        assert_eq!(aggregation_similarity(&s, g.class_ids()).unwrap(), 1.0);
    }

    #[test]
    fn constant_similarity_ties_count_as_hits() {
        let s = SimMatrix {
            matrix: Mat::fill(4, 4, 1.0),
            operator_kind: OperatorKind::Identity,
            signal_tag: SignalTag::Labels,
        };
        assert_eq!(aggregation_similarity(&s, &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn zero_signal_similarity() {
        let g = triangle_graph();
        let op = Operator::<f64>::random_walk_affinity(&g, true).unwrap();
        let zero = Mat::zeros(3, 2);
        let s = similarity_matrix(&op, &zero, SignalTag::Features).unwrap();
        assert!(s.matrix().iter().all(|&x| x == 0.0));
        // Zero highpass similarity satisfies both weak inequalities.
        assert_eq!(
            diversification_distinguishability(&op, &zero, g.class_ids()).unwrap(),
            1.0
        );
    }

    #[test]
    fn modified_score_formula() {
        assert_eq!(modified_aggregation_similarity(1.0), 1.0);
        assert_eq!(modified_aggregation_similarity(0.5), 0.0);
        assert_eq!(modified_aggregation_similarity(0.75), 0.5);
        assert_eq!(modified_aggregation_similarity(0.25), 0.0);
    }

    #[test]
    fn all_labels_equal_is_degenerate() {
        let g = Graph::new(vec![(0, 1)], Mat::zeros(2, 1), &[0, 0], 1).unwrap();
        let op = Operator::<f64>::random_walk_affinity(&g, true).unwrap();
        assert!(matches!(
            aggregation_homophily(&g, &op),
            Err(Error::DegenerateClass(_))
        ));
    }

    #[test]
    fn isolated_node_rejected_by_node_and_class_homophily() {
        let g = Graph::new(vec![(0, 1)], Mat::zeros(3, 1), &[0, 1, 0], 2).unwrap();
        assert!(matches!(node_homophily(&g), Err(Error::IsolatedNode(2))));
        assert!(matches!(class_homophily(&g), Err(Error::IsolatedNode(2))));
    }

    #[test]
    fn full_mask_estimate_matches_report() {
        let g = complete_bipartite(3, 3);
        let full = report(&g, DEFAULT_OP).unwrap();
        let mask: Vec<usize> = (0..6).collect();
        let est = estimate_metrics(&g, &mask, DEFAULT_OP).unwrap();
        assert_eq!(full, est);
    }

    #[test]
    fn one_class_mask_is_degenerate() {
        let g = complete_bipartite(3, 3);
        assert!(matches!(
            estimate_metrics(&g, &[0, 1, 2], DEFAULT_OP),
            Err(Error::DegenerateMask(_))
        ));
    }
}
