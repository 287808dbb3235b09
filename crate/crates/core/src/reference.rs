//! Straight-from-definition reference implementations, kept deliberately
//! independent of the optimized metric paths (adjacency matrices and
//! per-node loops instead of neighbor lists and Gram products). They exist
//! solely for the verification suites; nothing else should call them.
//!
//! Generic over the scalar: instantiated at `f64` for the ratio metrics and
//! at `Rational` where score equivalence must be checked exactly (weak
//! inequalities against zero are knife-edge in floating point whenever a
//! node's neighborhood is label-pure).

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Fraction of same-label edges, counted off the adjacency matrix upper
/// triangle.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    let a = g.adjacency::<f64>();
    let n = g.n_nodes();
    let mut total = 0usize;
    let mut same = 0usize;
    for u in 0..n {
        for v in (u + 1)..n {
            if a[(u, v)] != 0.0 {
                total += 1;
                if g.label_of(u) == g.label_of(v) {
                    same += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    Ok(same as f64 / total as f64)
}

/// Mean per-node label consistency, everything read off the adjacency matrix.
pub fn node_homophily(g: &Graph) -> Result<f64> {
    let a = g.adjacency::<f64>();
    let n = g.n_nodes();
    let mut acc = 0.0;
    for v in 0..n {
        let mut degree = 0.0;
        let mut same = 0.0;
        for u in 0..n {
            if a[(v, u)] != 0.0 {
                degree += 1.0;
                if g.label_of(u) == g.label_of(v) {
                    same += 1.0;
                }
            }
        }
        if degree == 0.0 {
            return Err(Error::IsolatedNode(v));
        }
        acc += same / degree;
    }
    Ok(acc / n as f64)
}

/// Class-balanced homophily from the published definition, per-class loops.
pub fn class_homophily(g: &Graph) -> Result<f64> {
    let c = g.class_count();
    if c < 2 {
        return Err(Error::DegenerateClass("need at least 2 classes".into()));
    }
    let a = g.adjacency::<f64>();
    let n = g.n_nodes();
    let mut acc = 0.0;
    for k in 0..c {
        let mut same = 0.0;
        let mut degree = 0.0;
        let mut size = 0.0;
        for v in 0..n {
            if g.label_of(v) != k {
                continue;
            }
            size += 1.0;
            for u in 0..n {
                if a[(v, u)] != 0.0 {
                    degree += 1.0;
                    if g.label_of(u) == g.label_of(v) {
                        same += 1.0;
                    }
                }
            }
        }
        if size > 0.0 && degree == 0.0 {
            let v = (0..n).find(|&v| g.label_of(v) == k).unwrap();
            return Err(Error::IsolatedNode(v));
        }
        let h_k = if degree == 0.0 { 0.0 } else { same / degree };
        acc += (h_k - size / n as f64).max(0.0);
    }
    Ok(acc / (c - 1) as f64)
}

/// Renormalized random-walk aggregation of a signal computed spatially:
/// row v is the mean of the signal over v's closed neighborhood.
pub fn rw_renorm_aggregate<T: Scalar>(g: &Graph, signal: &Mat<T>) -> Mat<T> {
    let n = g.n_nodes();
    let a = g.adjacency::<T>();
    Mat::from_fn(n, signal.cols(), |v, c| {
        let mut degree = T::one(); // self-loop
        let mut acc = signal[(v, c)].clone();
        for u in 0..n {
            if !a[(v, u)].is_zero() {
                degree = degree + T::one();
                acc = acc + signal[(u, c)].clone();
            }
        }
        acc / degree
    })
}

/// Post-aggregation similarity of the aggregated rows, entry by entry.
pub fn similarity<T: Scalar>(p: &Mat<T>) -> Mat<T> {
    let n = p.rows();
    Mat::from_fn(n, n, |v, u| {
        let mut acc = T::zero();
        for c in 0..p.cols() {
            acc = acc + p[(v, c)].clone() * p[(u, c)].clone();
        }
        acc
    })
}

fn class_means<T: Scalar>(
    s: &Mat<T>,
    class_ids: &[usize],
    v: usize,
) -> Result<(T, T)> {
    let n = s.rows();
    let mut same = T::zero();
    let mut diff = T::zero();
    let mut n_same = 0usize;
    let mut n_diff = 0usize;
    for u in 0..n {
        if class_ids[u] == class_ids[v] {
            same = same + s[(v, u)].clone();
            n_same += 1;
        } else {
            diff = diff + s[(v, u)].clone();
            n_diff += 1;
        }
    }
    if n_diff == 0 {
        return Err(Error::DegenerateClass(format!(
            "node {v} has no node of another class"
        )));
    }
    Ok((
        same / T::from_usize(n_same).expect("count fits scalar"),
        diff / T::from_usize(n_diff).expect("count fits scalar"),
    ))
}

/// Aggregation similarity score from the definition: per node, the mean of
/// the similarity over same-label nodes (itself included) versus the mean
/// over other-label nodes, ties counting as hits.
pub fn aggregation_similarity<T: Scalar>(s: &Mat<T>, class_ids: &[usize]) -> Result<f64> {
    let n = s.rows();
    let mut hits = 0usize;
    for v in 0..n {
        let (same, diff) = class_means(s, class_ids, v)?;
        if same >= diff {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Full aggregation homophily through the spatial route.
pub fn aggregation_homophily<T: Scalar>(g: &Graph) -> Result<(f64, f64)> {
    let z = g.labels_one_hot::<T>();
    let s = similarity(&rw_renorm_aggregate(g, &z));
    let h = aggregation_similarity(&s, g.class_ids())?;
    Ok((h, (2.0 * h - 1.0).max(0.0)))
}

/// Diversification distinguishability from the definition: highpass rows are
/// the signal minus its aggregate, and both conditions must hold.
pub fn diversification_distinguishability<T: Scalar>(
    g: &Graph,
    signal: &Mat<T>,
) -> Result<f64> {
    let p = rw_renorm_aggregate(g, signal);
    let hp = signal.sub(&p);
    let s = similarity(&hp);
    let n = g.n_nodes();
    let mut hits = 0usize;
    for v in 0..n {
        let (same, diff) = class_means(&s, g.class_ids(), v)?;
        if same >= T::zero() && diff <= T::zero() {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
