//! The dense operator zoo: affinity (low-pass) matrices, Laplacians
//! (high-pass) and complementary highpass filters forming filterbank pairs
//! with exact reconstruction `H_LP + H_HP = I`.
//!
//! Random-walk flavors divide by integer degrees only, so they are available
//! for any [`Scalar`] including exact rationals. Symmetric flavors need a
//! square root and are restricted to [`RealScalar`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::scalar::{RealScalar, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffinityKind {
    /// `D^{-1} A`
    RandomWalk,
    /// `D^{-1/2} A D^{-1/2}`
    Symmetric,
    /// `(D+I)^{-1} (A+I)`, the renormalization trick
    RandomWalkRenorm,
    /// `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`
    SymmetricRenorm,
}

impl AffinityKind {
    pub fn renormalized(self) -> bool {
        matches!(
            self,
            AffinityKind::RandomWalkRenorm | AffinityKind::SymmetricRenorm
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaplacianKind {
    /// `D - A`
    Combinatorial,
    /// `I - D^{-1/2} A D^{-1/2}`
    Symmetric,
    /// `I - D^{-1} A`
    RandomWalk,
    /// `I - (D+I)^{-1/2} (A+I) (D+I)^{-1/2}`
    SymmetricRenorm,
    /// `I - (D+I)^{-1} (A+I)`
    RandomWalkRenorm,
}

/// What a highpass filter was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HighpassBase {
    Identity,
    Affinity(AffinityKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    Affinity(AffinityKind),
    Laplacian(LaplacianKind),
    Highpass(HighpassBase),
}

impl OperatorKind {
    pub const ALL_AFFINITIES: [AffinityKind; 4] = [
        AffinityKind::RandomWalk,
        AffinityKind::Symmetric,
        AffinityKind::RandomWalkRenorm,
        AffinityKind::SymmetricRenorm,
    ];

    pub fn name(&self) -> String {
        match self {
            OperatorKind::Identity => "identity".into(),
            OperatorKind::Affinity(a) => affinity_name(*a).into(),
            OperatorKind::Laplacian(l) => match l {
                LaplacianKind::Combinatorial => "l".into(),
                LaplacianKind::Symmetric => "l_sym".into(),
                LaplacianKind::RandomWalk => "l_rw".into(),
                LaplacianKind::SymmetricRenorm => "l_sym_renorm".into(),
                LaplacianKind::RandomWalkRenorm => "l_rw_renorm".into(),
            },
            OperatorKind::Highpass(HighpassBase::Identity) => "hp_identity".into(),
            OperatorKind::Highpass(HighpassBase::Affinity(a)) => format!("hp_{}", affinity_name(*a)),
        }
    }
}

fn affinity_name(a: AffinityKind) -> &'static str {
    match a {
        AffinityKind::RandomWalk => "a_rw",
        AffinityKind::Symmetric => "a_sym",
        AffinityKind::RandomWalkRenorm => "a_rw_renorm",
        AffinityKind::SymmetricRenorm => "a_sym_renorm",
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "identity" | "i" => OperatorKind::Identity,
            "a_rw" => OperatorKind::Affinity(AffinityKind::RandomWalk),
            "a_sym" => OperatorKind::Affinity(AffinityKind::Symmetric),
            "a_rw_renorm" => OperatorKind::Affinity(AffinityKind::RandomWalkRenorm),
            "a_sym_renorm" => OperatorKind::Affinity(AffinityKind::SymmetricRenorm),
            "l" => OperatorKind::Laplacian(LaplacianKind::Combinatorial),
            "l_sym" => OperatorKind::Laplacian(LaplacianKind::Symmetric),
            "l_rw" => OperatorKind::Laplacian(LaplacianKind::RandomWalk),
            "l_sym_renorm" => OperatorKind::Laplacian(LaplacianKind::SymmetricRenorm),
            "l_rw_renorm" => OperatorKind::Laplacian(LaplacianKind::RandomWalkRenorm),
            "hp_identity" => OperatorKind::Highpass(HighpassBase::Identity),
            "hp_a_rw" => OperatorKind::Highpass(HighpassBase::Affinity(AffinityKind::RandomWalk)),
            "hp_a_sym" => OperatorKind::Highpass(HighpassBase::Affinity(AffinityKind::Symmetric)),
            "hp_a_rw_renorm" => {
                OperatorKind::Highpass(HighpassBase::Affinity(AffinityKind::RandomWalkRenorm))
            }
            "hp_a_sym_renorm" => {
                OperatorKind::Highpass(HighpassBase::Affinity(AffinityKind::SymmetricRenorm))
            }
            other => {
                return Err(Error::KindError(format!("unknown operator kind {other:?}")))
            }
        };
        Ok(kind)
    }
}

/// A dense N x N linear filter with a provenance tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator<T> {
    kind: OperatorKind,
    matrix: Mat<T>,
}

impl<T: Scalar> Operator<T> {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn into_matrix(self) -> Mat<T> {
        self.matrix
    }

    pub fn identity(n: usize) -> Self {
        Operator {
            kind: OperatorKind::Identity,
            matrix: Mat::identity(n),
        }
    }

    /// Random-walk affinity, exact in any scalar. Non-renormalized form
    /// requires every node to have positive degree.
    pub fn random_walk_affinity(g: &Graph, renormalized: bool) -> Result<Self> {
        let degrees = g.degrees();
        if !renormalized {
            if let Some(v) = degrees.first_isolated() {
                return Err(Error::IsolatedNode(v));
            }
        }
        let n = g.n_nodes();
        let bump = usize::from(renormalized);
        let mut m = Mat::zeros(n, n);
        for v in 0..n {
            let inv_deg = T::one()
                / T::from_usize(degrees.get(v) + bump).expect("degree fits in scalar");
            for &u in g.neighbors(v) {
                m[(v, u)] = inv_deg.clone();
            }
            if renormalized {
                m[(v, v)] = inv_deg;
            }
        }
        let kind = if renormalized {
            AffinityKind::RandomWalkRenorm
        } else {
            AffinityKind::RandomWalk
        };
        Ok(Operator {
            kind: OperatorKind::Affinity(kind),
            matrix: m,
        })
    }

    /// Random-walk Laplacian `I - A_rw` (or its renormalized form).
    pub fn random_walk_laplacian(g: &Graph, renormalized: bool) -> Result<Self> {
        let a = Self::random_walk_affinity(g, renormalized)?;
        let kind = if renormalized {
            LaplacianKind::RandomWalkRenorm
        } else {
            LaplacianKind::RandomWalk
        };
        Ok(Operator {
            kind: OperatorKind::Laplacian(kind),
            matrix: complement(&a.matrix),
        })
    }

    /// Combinatorial Laplacian `D - A`; well defined with isolated nodes.
    pub fn combinatorial_laplacian(g: &Graph) -> Self {
        let n = g.n_nodes();
        let degrees = g.degrees();
        let mut m = Mat::zeros(n, n);
        for v in 0..n {
            m[(v, v)] = T::from_usize(degrees.get(v)).expect("degree fits in scalar");
            for &u in g.neighbors(v) {
                m[(v, u)] = -T::one();
            }
        }
        Operator {
            kind: OperatorKind::Laplacian(LaplacianKind::Combinatorial),
            matrix: m,
        }
    }

    /// Complementary highpass filter `I - self`. Only affinity and identity
    /// kinds admit one; Laplacians and highpasses are rejected.
    pub fn highpass(&self) -> Result<Self> {
        let base = match self.kind {
            OperatorKind::Identity => HighpassBase::Identity,
            OperatorKind::Affinity(a) => HighpassBase::Affinity(a),
            other => {
                return Err(Error::KindError(format!(
                    "highpass of {other} is not a filterbank pair"
                )))
            }
        };
        Ok(Operator {
            kind: OperatorKind::Highpass(base),
            matrix: complement(&self.matrix),
        })
    }

    /// Dense product `self.matrix * m`.
    pub fn apply(&self, m: &Mat<T>) -> Result<Mat<T>> {
        if m.rows() != self.n() {
            return Err(Error::DimMismatch(format!(
                "operator is {0}x{0}, signal has {1} rows",
                self.n(),
                m.rows()
            )));
        }
        Ok(self.matrix.matmul(m))
    }

    /// `self^k` as a plain matrix; `k = 0` gives the identity.
    pub fn matrix_power(&self, k: usize) -> Mat<T> {
        let mut acc = Mat::identity(self.n());
        for _ in 0..k {
            acc = self.matrix.matmul(&acc);
        }
        acc
    }
}

impl<T: RealScalar> Operator<T> {
    pub fn affinity(g: &Graph, kind: AffinityKind) -> Result<Self> {
        match kind {
            AffinityKind::RandomWalk => Self::random_walk_affinity(g, false),
            AffinityKind::RandomWalkRenorm => Self::random_walk_affinity(g, true),
            AffinityKind::Symmetric => Self::symmetric_affinity(g, false),
            AffinityKind::SymmetricRenorm => Self::symmetric_affinity(g, true),
        }
    }

    pub fn laplacian(g: &Graph, kind: LaplacianKind) -> Result<Self> {
        let (matrix, kind) = match kind {
            LaplacianKind::Combinatorial => return Ok(Self::combinatorial_laplacian(g)),
            LaplacianKind::RandomWalk => return Self::random_walk_laplacian(g, false),
            LaplacianKind::RandomWalkRenorm => return Self::random_walk_laplacian(g, true),
            LaplacianKind::Symmetric => (
                complement(&Self::symmetric_affinity(g, false)?.matrix),
                LaplacianKind::Symmetric,
            ),
            LaplacianKind::SymmetricRenorm => (
                complement(&Self::symmetric_affinity(g, true)?.matrix),
                LaplacianKind::SymmetricRenorm,
            ),
        };
        Ok(Operator {
            kind: OperatorKind::Laplacian(kind),
            matrix,
        })
    }

    /// Builds any operator in the zoo by kind.
    pub fn build(g: &Graph, kind: OperatorKind) -> Result<Self> {
        match kind {
            OperatorKind::Identity => Ok(Self::identity(g.n_nodes())),
            OperatorKind::Affinity(a) => Self::affinity(g, a),
            OperatorKind::Laplacian(l) => Self::laplacian(g, l),
            OperatorKind::Highpass(HighpassBase::Identity) => {
                Self::identity(g.n_nodes()).highpass()
            }
            OperatorKind::Highpass(HighpassBase::Affinity(a)) => {
                Self::affinity(g, a)?.highpass()
            }
        }
    }

    fn symmetric_affinity(g: &Graph, renormalized: bool) -> Result<Self> {
        let degrees = g.degrees();
        if !renormalized {
            if let Some(v) = degrees.first_isolated() {
                return Err(Error::IsolatedNode(v));
            }
        }
        let n = g.n_nodes();
        let bump = usize::from(renormalized);
        let inv_sqrt: Vec<T> = (0..n)
            .map(|v| {
                T::one()
                    / T::from_usize(degrees.get(v) + bump)
                        .expect("degree fits in scalar")
                        .sqrt()
            })
            .collect();
        let mut m = Mat::zeros(n, n);
        for v in 0..n {
            for &u in g.neighbors(v) {
                m[(v, u)] = inv_sqrt[v] * inv_sqrt[u];
            }
            if renormalized {
                m[(v, v)] = inv_sqrt[v] * inv_sqrt[v];
            }
        }
        let kind = if renormalized {
            AffinityKind::SymmetricRenorm
        } else {
            AffinityKind::Symmetric
        };
        Ok(Operator {
            kind: OperatorKind::Affinity(kind),
            matrix: m,
        })
    }
}

/// `I - M` entrywise. Off the diagonal this is exact negation; on the
/// diagonal `1 - a` followed by `a + (1 - a)` re-rounds to exactly 1 in IEEE
/// arithmetic, which the filterbank reconstruction tests rely on.
fn complement<T: Scalar>(m: &Mat<T>) -> Mat<T> {
    Mat::from_fn(m.rows(), m.cols(), |i, j| {
        if i == j {
            T::one() - m[(i, j)].clone()
        } else {
            -m[(i, j)].clone()
        }
    })
}
