//! In-memory graph representation, validation and file I/O.
//!
//! A [`Graph`] is an undirected simple graph (no self-loops, no multi-edges)
//! with a dense real feature matrix and a one-hot label matrix. Instances are
//! immutable after construction and safe to share across threads.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;



use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Per-node neighbor counts. Sum of degrees equals twice the edge count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeVector(Vec<usize>);

impl DegreeVector {
    pub fn get(&self, node: usize) -> usize {
        self.0[node]
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn sum(&self) -> usize {
        self.0.iter().sum()
    }

    /// Lowest-numbered node of degree zero, if any.
    pub fn first_isolated(&self) -> Option<usize> {
        self.0.iter().position(|&d| d == 0)
    }
}

/// A named invariant violation; data, not an error.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NotOneHot { row: usize },
    SelfLoop { node: usize },
    EdgeOutOfRange { edge: (usize, usize) },
    RowCountMismatch { features: usize, labels: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotOneHot { row } => write!(f, "label row {row} does not sum to 1"),
            Violation::SelfLoop { node } => write!(f, "self-loop on node {node}"),
            Violation::EdgeOutOfRange { edge } => {
                write!(f, "edge ({}, {}) references a missing node", edge.0, edge.1)
            }
            Violation::RowCountMismatch { features, labels } => write!(
                f,
                "feature rows ({features}) and label rows ({labels}) disagree"
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Graph {
    /// Canonical unordered pairs (u < v), sorted and deduplicated.
    edges: Vec<(usize, usize)>,
    features: Mat<f64>,
    labels: Mat<u8>,
    class_ids: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Validated constructor from class ids; builds the one-hot matrix.
    pub fn new(
        edges: Vec<(usize, usize)>,
        features: Mat<f64>,
        class_ids: &[usize],
        class_count: usize,
    ) -> Result<Graph> {
        let n = features.rows();
        if class_ids.len() != n {
            return Err(Error::DimMismatch(format!(
                "{} feature rows vs {} labels",
                n,
                class_ids.len()
            )));
        }
        let mut labels = Mat::fill(n, class_count, 0u8);
        for (i, &c) in class_ids.iter().enumerate() {
            if c >= class_count {
                return Err(Error::DimMismatch(format!(
                    "label {c} on node {i} exceeds class count {class_count}"
                )));
            }
            labels[(i, c)] = 1u8;
        }
        Self::from_one_hot(edges, features, labels)
    }

    /// Validated constructor from an explicit one-hot matrix.
    pub fn from_one_hot(
        edges: Vec<(usize, usize)>,
        features: Mat<f64>,
        labels: Mat<u8>,
    ) -> Result<Graph> {
        let g = Self::assemble_unchecked(edges, features, labels)?;
        match g.validate().into_iter().next() {
            None => Ok(g),
            Some(Violation::NotOneHot { row }) => Err(Error::NotOneHot(row)),
            Some(Violation::SelfLoop { node }) => Err(Error::SelfLoop(node)),
            Some(Violation::EdgeOutOfRange { edge }) => Err(Error::NodeOutOfRange {
                index: edge.0.max(edge.1),
                n_nodes: g.n_nodes(),
            }),
            Some(v @ Violation::RowCountMismatch { .. }) => {
                Err(Error::DimMismatch(v.to_string()))
            }
        }
    }

    /// Builds without checking invariants, so `validate` can report them.
    /// Still canonicalizes edges; a self-loop survives as `(v, v)`.
    pub fn assemble_unchecked(
        edges: Vec<(usize, usize)>,
        features: Mat<f64>,
        labels: Mat<u8>,
    ) -> Result<Graph> {
        let n = features.rows();
        let set: BTreeSet<(usize, usize)> = edges
            .into_iter()
            .map(|(u, v)| if u <= v { (u, v) } else { (v, u) })
            .collect();
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            if u < n && v < n && u != v {
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let class_ids = (0..labels.rows())
            .map(|i| {
                labels
                    .row(i)
                    .iter()
                    .position(|&x| x == 1)
                    .unwrap_or(0)
            })
            .collect();
        Ok(Graph {
            edges,
            features,
            labels,
            class_ids,
            neighbors,
        })
    }

    /// Checks every invariant; empty iff the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.features.rows();
        if self.labels.rows() != n {
            out.push(Violation::RowCountMismatch {
                features: n,
                labels: self.labels.rows(),
            });
        }
        for &(u, v) in &self.edges {
            if u == v {
                out.push(Violation::SelfLoop { node: u });
            }
            if u >= n || v >= n {
                out.push(Violation::EdgeOutOfRange { edge: (u, v) });
            }
        }
        for i in 0..self.labels.rows() {
            let sum: u32 = self.labels.row(i).iter().map(|&x| u32::from(x)).sum();
            let all_01 = self.labels.row(i).iter().all(|&x| x <= 1);
            if sum != 1 || !all_01 {
                out.push(Violation::NotOneHot { row: i });
            }
        }
        out
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.labels.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Mat<f64> {
        &self.features
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn label_of(&self, v: usize) -> usize {
        self.class_ids[v]
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn same_label(&self, u: usize, v: usize) -> bool {
        self.class_ids[u] == self.class_ids[v]
    }

    /// One-hot label matrix lifted into scalar algebra.
    pub fn labels_one_hot<T: Scalar>(&self) -> Mat<T> {
        self.labels
            .cast(|&x| if x == 1 { T::one() } else { T::zero() })
    }

    pub fn labels_raw(&self) -> &Mat<u8> {
        &self.labels
    }

    pub fn degrees(&self) -> DegreeVector {
        DegreeVector(self.neighbors.iter().map(Vec::len).collect())
    }

    pub fn adjacency<T: Scalar>(&self) -> Mat<T> {
        let mut a = Mat::zeros(self.n_nodes(), self.n_nodes());
        for &(u, v) in &self.edges {
            a[(u, v)] = T::one();
            a[(v, u)] = T::one();
        }
        a
    }

    /// Induced subgraph on `nodes` (deduplicated, kept in sorted order).
    /// Returns the subgraph and the original index of each kept node.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<(Graph, Vec<usize>)> {
        let kept: BTreeSet<usize> = nodes.iter().copied().collect();
        if kept.is_empty() {
            return Err(Error::DegenerateMask("empty node subset".into()));
        }
        if let Some(&bad) = kept.iter().find(|&&v| v >= self.n_nodes()) {
            return Err(Error::NodeOutOfRange {
                index: bad,
                n_nodes: self.n_nodes(),
            });
        }
        let kept: Vec<usize> = kept.into_iter().collect();
        let mut remap = vec![usize::MAX; self.n_nodes()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| remap[u] != usize::MAX && remap[v] != usize::MAX)
            .map(|&(u, v)| (remap[u], remap[v]))
            .collect();
        let features = Mat::from_fn(kept.len(), self.feature_dim(), |i, j| {
            self.features[(kept[i], j)]
        });
        let labels = Mat::from_fn(kept.len(), self.class_count(), |i, j| {
            self.labels[(kept[i], j)]
        });
        let g = Graph::from_one_hot(edges, features, labels)?;
        Ok((g, kept))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses a whitespace-separated edge list. `#` starts a comment, blank lines
/// are skipped, each undirected edge may appear once or twice (either order).
pub fn parse_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    for (idx, raw) in read_lines(path)?.iter().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => {
                let u: usize = a
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad node index {a:?}")))?;
                let v: usize = b
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad node index {b:?}")))?;
                (u, v)
            }
            _ => return Err(parse_err(path, lineno, "expected exactly two node indices")),
        };
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        edges.insert(if u < v { (u, v) } else { (v, u) });
    }
    Ok(edges.into_iter().collect())
}

/// Parses a numeric CSV into a dense matrix; all rows must have equal width.
pub fn parse_feature_csv(path: &Path, has_header: bool) -> Result<Mat<f64>> {
    let lines = read_lines(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, raw) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() || (has_header && idx == 0) {
            continue;
        }
        let row: Vec<f64> = raw
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, lineno, format!("bad number {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {w} columns, found {}", row.len()),
                ));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(Mat::from_rows(rows))
}

/// Parses labels: a single column is interpreted as class ids, multiple
/// columns as explicit one-hot rows.
pub fn parse_label_csv(path: &Path) -> Result<Mat<u8>> {
    let lines = read_lines(path)?;
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut width = None;
    for (idx, raw) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split(',').map(str::trim).collect();
        if let Some(w) = width {
            if toks.len() != w {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {w} columns, found {}", toks.len()),
                ));
            }
        } else {
            width = Some(toks.len());
        }
        let row: Vec<u8> = toks
            .iter()
            .map(|tok| {
                tok.parse::<u8>()
                    .map_err(|_| parse_err(path, lineno, format!("bad label entry {tok:?}")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    if width == Some(1) {
        // Class-id column; infer class count from the maximum id.
        let ids: Vec<usize> = rows.iter().map(|r| r[0] as usize).collect();
        let classes = ids.iter().max().map_or(0, |m| m + 1);
        let mut one_hot = Mat::fill(ids.len(), classes, 0u8);
        for (i, &c) in ids.iter().enumerate() {
            one_hot[(i, c)] = 1;
        }
        Ok(one_hot)
    } else {
        Ok(Mat::from_rows(rows))
    }
}

/// Loads and validates a graph from its three files.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    features_have_header: bool,
) -> Result<Graph> {
    let edges = parse_edge_list(edge_path)?;
    let features = parse_feature_csv(feature_path, features_have_header)?;
    let labels = parse_label_csv(label_path)?;
    if labels.rows() != features.rows() {
        return Err(Error::DimMismatch(format!(
            "{} feature rows vs {} label rows",
            features.rows(),
            labels.rows()
        )));
    }
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u.max(v) >= features.rows()) {
        return Err(Error::NodeOutOfRange {
            index: u.max(v),
            n_nodes: features.rows(),
        });
    }
    Graph::from_one_hot(edges, features, labels)
}

/// Writes `edges.txt`, `features.csv` and `labels.csv` under `dir`.
/// Features use the shortest round-trip decimal form, so save/load is
/// bit-exact; labels are written as class ids.
pub fn save_graph(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        f.write_all(contents.as_bytes()).map_err(|source| Error::Io {
            path,
            source,
        })
    };
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        edges.push_str(&format!("{u} {v}\n"));
    }
    write("edges.txt", edges)?;
    let mut feats = String::new();
    for i in 0..g.n_nodes() {
        let row: Vec<String> = g.features().row(i).iter().map(f64::to_string).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write("features.csv", feats)?;
    let mut labels = String::new();
    for i in 0..g.n_nodes() {
        labels.push_str(&format!("{}\n", g.label_of(i)));
    }
    write("labels.csv", labels)
}

/// Loads a graph from a directory produced by [`save_graph`].
pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    load_graph(
        &dir.join("edges.txt"),
        &dir.join("features.csv"),
        &dir.join("labels.csv"),
        false,
    )
}

/// Returns the `n` node features as a column matrix of ones, used in tests.
pub fn ones_column<T: Scalar>(n: usize) -> Mat<T> {
    Mat::from_fn(n, 1, |_, _| T::one())
}

/// Small helper: the complete bipartite graph K_{a,b} with one class per side
/// and features equal to the one-hot labels.
pub fn complete_bipartite(a: usize, b: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..a {
        for v in 0..b {
            edges.push((u, a + v));
        }
    }
    let class_ids: Vec<usize> = (0..a + b).map(|v| usize::from(v >= a)).collect();
    let features = Mat::from_fn(a + b, 2, |i, j| {
        if (i >= a) == (j == 1) && (i < a) == (j == 0) {
            1.0
        } else {
            0.0
        }
    });
    Graph::new(edges, features, &class_ids, 2).expect("bipartite construction is valid")
}

/// Converts a `u64` into a scalar; panics if unrepresentable.
pub fn scalar_from_u64<T: Scalar>(x: u64) -> T {
    T::from_u64(x).expect("scalar conversion")
}
