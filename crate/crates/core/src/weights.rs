//! Per-round averaging weights `W_k`.
//!
//! Two constructions are provided. Metropolis weights are doubly stochastic on
//! any symmetric graph and need only neighbor degrees. Equal-neighbor weights
//! `1/d_i(k)` work on any digraph but are in general only row stochastic.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::graph::{Digraph, GraphSequence};
use crate::{Error, Result};

/// Tolerance on row and column sums.
pub const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticKind {
    DoublyStochastic,
    RowStochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Metropolis,
    EqualNeighbor,
}

impl WeightScheme {
    pub fn build(self, seq: &dyn GraphSequence, round: usize) -> Result<WeightMatrix> {
        let graph = seq.graph_at(round);
        match self {
            Self::Metropolis => metropolis_weights(&graph, round),
            Self::EqualNeighbor => Ok(equal_neighbor_weights(&graph, round)),
        }
    }

    pub fn kind(self) -> StochasticKind {
        match self {
            Self::Metropolis => StochasticKind::DoublyStochastic,
            Self::EqualNeighbor => StochasticKind::RowStochastic,
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Metropolis => "metropolis",
            Self::EqualNeighbor => "equal_neighbor",
        })
    }
}

impl FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(Self::Metropolis),
            "equal_neighbor" => Ok(Self::EqualNeighbor),
            other => Err(Error::InvalidParameter(format!("unknown weight scheme {other:?}"))),
        }
    }
}

/// Nonnegative `N×N` averaging matrix for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    round: usize,
    nu: f64,
    kind: StochasticKind,
}

impl WeightMatrix {
    /// Wraps a dense matrix. `nu` is set to the smallest positive entry.
    pub fn from_dense(entries: DMatrix<f64>, round: usize, kind: StochasticKind) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        let rows = (0..entries.nrows())
            .map(|i| {
                (0..entries.ncols())
                    .filter(|&j| entries[(i, j)] != 0.0)
                    .map(|j| (j, entries[(i, j)]))
                    .collect()
            })
            .collect();
        let nu = entries
            .iter()
            .copied()
            .filter(|&w| w > 0.0)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            entries,
            rows,
            round,
            nu,
            kind,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Nonzero entries of row `i` as `(column, weight)`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Lower bound on the nonzero entries. Reported for validation only; the
    /// algorithm never reads it.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kind(&self) -> StochasticKind {
        self.kind
    }

    /// Stacks agent vectors as rows of `X` and returns the rows of `W·X`.
    pub fn apply(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.size())
            .map(|i| {
                let mut out = vec![0.0; xs[0].len()];
                for &(j, w) in self.row(i) {
                    crate::linalg::axpy(w, &xs[j], &mut out);
                }
                out
            })
            .collect()
    }
}

/// `[W]_ij = 1/d_i(k)` on in-neighbors (self included), zero elsewhere.
pub fn equal_neighbor_weights(graph: &Digraph, round: usize) -> WeightMatrix {
    let n = graph.node_count();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs = graph.in_neighbors(i).expect("node in range");
        let share = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            w[(i, j)] = share;
        }
    }
    WeightMatrix::from_dense(w, round, StochasticKind::RowStochastic).expect("square")
}

/// Metropolis-Hastings weights `1/(1 + max(deg_i, deg_j))` on edges with the
/// diagonal taking the remainder. Requires a symmetric graph.
pub fn metropolis_weights(graph: &Digraph, round: usize) -> Result<WeightMatrix> {
    if let Some((from, to)) = graph.asymmetric_edge() {
        return Err(Error::AsymmetricGraph { round, from, to });
    }
    let n = graph.node_count();
    let degree: Vec<usize> = (0..n)
        .map(|i| graph.in_degree(i).expect("node in range") - 1)
        .collect();
    let mut w = DMatrix::zeros(n, n);
    for &(j, i) in graph.edges() {
        w[(i, j)] = 1.0 / (1 + degree[i].max(degree[j])) as f64;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_dense(w, round, StochasticKind::DoublyStochastic)
}

/// Result of one clause; `worst` holds the most offending `(row, col, value)`
/// or, for sum clauses, `(index, index, sum)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub pass: bool,
    pub worst: Option<(usize, usize, f64)>,
}

impl ClauseCheck {
    fn from_worst(worst: Option<(usize, usize, f64, f64)>) -> Self {
        match worst {
            Some((i, j, value, _)) => Self {
                pass: false,
                worst: Some((i, j, value)),
            },
            None => Self {
                pass: true,
                worst: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumption1Report {
    pub round: usize,
    /// Nonnegative, and positive only on in-neighbor pairs.
    pub graph_respected: ClauseCheck,
    /// Every in-neighbor entry is at least `nu > 0`.
    pub nu_bound: ClauseCheck,
    pub row_stochastic: ClauseCheck,
    pub column_stochastic: ClauseCheck,
}

impl Assumption1Report {
    pub fn all_pass(&self) -> bool {
        self.row_clauses_pass() && self.column_stochastic.pass
    }

    /// Clauses required by every regime: graph, nu and row sums.
    pub fn row_clauses_pass(&self) -> bool {
        self.graph_respected.pass && self.nu_bound.pass && self.row_stochastic.pass
    }
}

fn keep_worst(slot: &mut Option<(usize, usize, f64, f64)>, cand: (usize, usize, f64, f64)) {
    if slot.is_none_or(|s| cand.3 > s.3) {
        *slot = Some(cand);
    }
}

pub fn validate_assumption1(w: &WeightMatrix, graph: &Digraph) -> Assumption1Report {
    let n = graph.node_count();
    let m = w.entries();
    let mut graph_bad = None;
    let mut nu_bad = None;
    let nu_ok = w.nu() > 0.0 && w.nu().is_finite();
    for i in 0..n {
        for j in 0..n {
            let value = m[(i, j)];
            let edge = graph.has_edge(j, i);
            if value < 0.0 {
                keep_worst(&mut graph_bad, (i, j, value, -value));
            } else if value > 0.0 && !edge {
                keep_worst(&mut graph_bad, (i, j, value, value));
            }
            if edge && (!nu_ok || value < w.nu()) {
                keep_worst(&mut nu_bad, (i, j, value, w.nu() - value));
            }
        }
    }
    let mut row_bad = None;
    let mut col_bad = None;
    for i in 0..n {
        let row: f64 = m.row(i).sum();
        if (row - 1.0).abs() > SUM_TOLERANCE {
            keep_worst(&mut row_bad, (i, i, row, (row - 1.0).abs()));
        }
        let col: f64 = m.column(i).sum();
        if (col - 1.0).abs() > SUM_TOLERANCE {
            keep_worst(&mut col_bad, (i, i, col, (col - 1.0).abs()));
        }
    }
    Assumption1Report {
        round: w.round(),
        graph_respected: ClauseCheck::from_worst(graph_bad),
        nu_bound: ClauseCheck::from_worst(nu_bad),
        row_stochastic: ClauseCheck::from_worst(row_bad),
        column_stochastic: ClauseCheck::from_worst(col_bad),
    }
}

const POWER_ITERATION_CAP: usize = 1_000_000;

/// Normalized left eigenvector `π` with `πᵀW = πᵀ`, by power iteration on
/// `Wᵀ`. Fails with [`Error::Disconnected`] when the support of `W` is not
/// strongly connected, and with [`Error::NonConvergence`] when the iteration
/// does not settle within the cap.
pub fn stationary_left_eigenvector(w: &WeightMatrix) -> Result<DVector<f64>> {
    let n = w.size();
    let support = (0..n).flat_map(|i| w.row(i).iter().map(move |&(j, _)| (j, i)));
    if !Digraph::new(n, support)?.is_strongly_connected() {
        return Err(Error::Disconnected);
    }
    let wt = w.entries().transpose();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for iter in 0..POWER_ITERATION_CAP {
        let mut next = &wt * &pi;
        let total = next.sum();
        next /= total;
        let change = (&next - &pi).amax();
        pi = next;
        if change <= 1e-14 && iter > 0 {
            let residual = (&wt * &pi - &pi).amax();
            if residual <= 1e-10 && pi.iter().all(|&p| p > 0.0) {
                return Ok(pi);
            }
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: POWER_ITERATION_CAP,
    })
}
