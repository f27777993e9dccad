//! Problem definitions: separable objectives with per-agent constraint sets,
//! the epigraph transform, and the optimal gossip-averaging SDP.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithm::{estimate_subgradient_bound, Objective, ObjectiveOracle};
use crate::constraints::{
    Constraint, ConstraintOracle, DistanceConstraint, EpigraphConstraint, LinearBlock, LmiConstraint,
    SimpleSet,
};
use crate::graph::{Digraph, DigraphSequence, Edge};
use crate::linalg::norm;
use crate::{Error, Result};

/// What agent `i` privately knows: `f_i` and its finite constraint set `Ω_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProblem {
    pub objective: Objective,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    pub f: f64,
}

/// `min Σ_i f_i(x)` over `X0 ∩ {g(x, ω) <= 0 for every ω of every agent}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub dimension: usize,
    pub x0: SimpleSet,
    pub agents: Vec<AgentProblem>,
    #[serde(default)]
    pub optimum: Option<KnownOptimum>,
    /// Starting point for every agent (projected onto `X0`); origin if absent.
    #[serde(default)]
    pub initial_point: Option<Vec<f64>>,
    #[serde(default)]
    pub epigraph: bool,
    /// Modelling choices worth surfacing in run output.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ProblemSpec {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidProblem("problem has no agents".into()));
        }
        self.x0.validate()?;
        let n = self.dimension;
        let mismatch = |what: String, found: usize| {
            Error::InvalidProblem(format!("{what} has dimension {found}, problem has {n}"))
        };
        if self.x0.dim() != n {
            return Err(mismatch("X0".into(), self.x0.dim()));
        }
        for (i, agent) in self.agents.iter().enumerate() {
            if agent.objective.dim() > n {
                return Err(mismatch(format!("objective of agent {i}"), agent.objective.dim()));
            }
            for (w, c) in agent.constraints.iter().enumerate() {
                if c.dim() != n {
                    return Err(mismatch(format!("constraint {w} of agent {i}"), c.dim()));
                }
            }
        }
        if let Some(x) = &self.initial_point {
            if x.len() != n {
                return Err(mismatch("initial point".into(), x.len()));
            }
        }
        Ok(())
    }

    /// `f(x) = Σ_i f_i(x)`
    pub fn objective_value(&self, x: &[f64]) -> Result<f64> {
        self.agents.iter().map(|a| a.objective.value(x)).sum()
    }

    pub fn initial_point(&self) -> Vec<f64> {
        let start = self
            .initial_point
            .clone()
            .unwrap_or_else(|| vec![0.0; self.dimension]);
        let mut x = start;
        self.x0.project_in_place(&mut x);
        x
    }

    /// Whether every local objective is linear, the form required by the
    /// row-stochastic regime.
    pub fn has_linear_objectives(&self) -> bool {
        self.agents.iter().all(|a| a.objective.is_linear())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("problem serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientBounds {
    /// Largest `‖s‖` seen for any `f_i`.
    pub objective: f64,
    /// Largest `‖d‖` seen for any violated constraint.
    pub constraint: f64,
    pub samples: usize,
}

/// Empirical `C_f` and `C_g` from uniform samples of `X0`; `None` if `X0` is
/// unbounded.
pub fn estimate_bounds<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    samples: usize,
    rng: &mut R,
) -> Option<SubgradientBounds> {
    let mut objective: f64 = 0.0;
    let mut constraint: f64 = 0.0;
    for agent in &spec.agents {
        objective = objective.max(estimate_subgradient_bound(&agent.objective, &spec.x0, samples, rng)?);
    }
    for _ in 0..samples {
        let x = spec.x0.sample(rng)?;
        for c in spec.agents.iter().flat_map(|a| &a.constraints) {
            if let Ok(d) = c.subgradient(&x) {
                constraint = constraint.max(norm(&d));
            }
        }
    }
    Some(SubgradientBounds {
        objective,
        constraint,
        samples,
    })
}

/// Rewrites `min Σ f_i(y)` as `min Σ t_i` subject to `f_i(y) <= t_i`.
///
/// The new variable is `x = (y, t)` with one `t_i` per agent; agent `i`'s
/// objective becomes `t_i` and its constraint set gains `f_i(y) - t_i <= 0`.
/// The `t` block is unconstrained in `X0`.
pub fn epigraph_transform(spec: &ProblemSpec) -> Result<ProblemSpec> {
    spec.validate()?;
    let n = spec.dimension;
    let agents_n = spec.agent_count();
    let dim = n + agents_n;
    let agents = spec
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let mut c = vec![0.0; dim];
            c[n + i] = 1.0;
            let mut constraints = agent
                .constraints
                .iter()
                .map(|k| k.lift(dim))
                .collect::<Result<Vec<_>>>()?;
            constraints.push(Constraint::Epigraph(EpigraphConstraint {
                objective: agent.objective.clone(),
                t_index: n + i,
                dim,
            }));
            Ok(AgentProblem {
                objective: Objective::Linear { c },
                constraints,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let optimum = match &spec.optimum {
        Some(opt) => Some(KnownOptimum {
            x: match &opt.x {
                Some(y) => {
                    let mut x = y.clone();
                    for agent in &spec.agents {
                        x.push(agent.objective.value(y)?);
                    }
                    Some(x)
                }
                None => None,
            },
            f: opt.f,
        }),
        None => None,
    };
    let initial_point = spec.initial_point.as_ref().map(|y| {
        let mut x = y.clone();
        x.resize(dim, 0.0);
        x
    });
    let mut metadata = spec.metadata.clone();
    metadata.insert("epigraph".into(), format!("t block appended at coordinates {n}..{dim}"));
    Ok(ProblemSpec {
        name: format!("{}+epigraph", spec.name),
        dimension: dim,
        x0: SimpleSet::Product {
            blocks: vec![spec.x0.clone(), SimpleSet::FullSpace { dim: agents_n }],
        },
        agents,
        optimum,
        initial_point,
        epigraph: true,
        metadata,
    })
}

/// Averaging matrix of link `(i, j)`: identity except the `{i, j}` block,
/// which is `[[1/2, 1/2], [1/2, 1/2]]`.
pub fn averaging_matrix(i: usize, j: usize, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::identity(n, n);
    if i != j {
        for (r, c) in [(i, i), (i, j), (j, i), (j, j)] {
            a[(r, c)] = 0.5;
        }
    }
    a
}

/// Optimal gossip averaging:
///
/// ```text
/// min s  s.t.  Σ p_ij A(i,j) - 11ᵀ ⪯ sI,  p_ij >= 0,  p_ij = 0 off E,  Σ_j p_ij = 1
/// ```
///
/// The decision vector is `x = (s, p_e for every directed edge e)`.
#[derive(Debug, Clone)]
pub struct GossipProblem {
    graph: Digraph,
    /// Directed edges indexing `x[1..]`.
    edges: Vec<Edge>,
    spec: ProblemSpec,
}

impl GossipProblem {
    /// Builds the SDP on a fixed, connected, undirected graph.
    pub fn new(graph: &Digraph) -> Result<Self> {
        if let Some((from, to)) = graph.asymmetric_edge() {
            return Err(Error::AsymmetricGraph { round: 0, from, to });
        }
        if !graph.is_strongly_connected() {
            return Err(Error::Disconnected);
        }
        let n = graph.node_count();
        let edges = graph.edges().to_vec();
        let dim = 1 + edges.len();

        let mut matrices = Vec::with_capacity(dim + 1);
        matrices.push(-DMatrix::from_element(n, n, 1.0));
        matrices.push(-DMatrix::identity(n, n));
        matrices.extend(edges.iter().map(|&(i, j)| averaging_matrix(i, j, n)));
        let lmi = Arc::new(LmiConstraint::new(matrices)?);

        let share = 1.0 / n as f64;
        let mut c = vec![0.0; dim];
        c[0] = share;
        let agents = (0..n)
            .map(|i| {
                let coords: Vec<usize> = edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.0 == i)
                    .map(|(k, _)| k + 1)
                    .collect();
                let row = DistanceConstraint::on_coords(
                    SimpleSet::Simplex {
                        dim: coords.len(),
                        scale: 1.0,
                    },
                    coords,
                    dim,
                )?;
                Ok(AgentProblem {
                    objective: Objective::Linear { c: c.clone() },
                    constraints: vec![Constraint::Lmi(lmi.clone()), row.into()],
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut lower = vec![0.0; dim];
        let mut upper = vec![1.0; dim];
        lower[0] = -(n as f64);
        upper[0] = n as f64;

        let mut metadata = BTreeMap::new();
        metadata.insert(
            "objective_split".into(),
            "f_i = s/N so that the local objectives sum to s".into(),
        );
        metadata.insert("x0".into(), format!("box: s in [-{n}, {n}], p in [0, 1]"));

        let spec = ProblemSpec {
            name: format!("gossip-n{n}"),
            dimension: dim,
            x0: SimpleSet::Box { lower, upper },
            agents,
            optimum: None,
            initial_point: None,
            epigraph: false,
            metadata,
        };
        spec.validate()?;
        Ok(Self {
            graph: graph.clone(),
            edges,
            spec,
        })
    }

    /// Same as [`GossipProblem::new`] but rejects time-varying sequences.
    pub fn from_sequence(seq: &DigraphSequence) -> Result<Self> {
        if !seq.is_static() {
            return Err(Error::TimeVarying);
        }
        Self::new(&seq.schedule()[0])
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn into_spec(self) -> ProblemSpec {
        self.spec
    }

    pub fn variable_count(&self) -> usize {
        1 + self.edges.len()
    }

    /// Packs `s` and a dense probability matrix into a decision vector.
    pub fn pack(&self, s: f64, p: &DMatrix<f64>) -> Vec<f64> {
        std::iter::once(s)
            .chain(self.edges.iter().map(|&(i, j)| p[(i, j)]))
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.graph.node_count();
        let mut p = DMatrix::zeros(n, n);
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            p[(i, j)] = x[k + 1];
        }
        p
    }

    /// Smallest feasible `s` for the probabilities in `x`.
    pub fn min_feasible_s(&self, x: &[f64]) -> f64 {
        gossip_lmi_lambda_max(&self.probabilities(x))
    }
}

/// `λ_max(Σ p_ij A(i,j) - 11ᵀ)` for a dense probability matrix (diagonal
/// entries ignored).
pub fn gossip_lmi_lambda_max(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut m = -DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && p[(i, j)] != 0.0 {
                m += averaging_matrix(i, j, n) * p[(i, j)];
            }
        }
    }
    SymmetricEigen::new(m).eigenvalues.max()
}

pub fn gossip_sdp_problem(graph: &Digraph) -> Result<ProblemSpec> {
    GossipProblem::new(graph).map(GossipProblem::into_spec)
}

pub const BUILTIN_NAMES: [&str; 3] = ["median", "lp", "lmi"];

/// Small problems with known optima, spread over `agents` agents.
///
/// - `median`: `Σ_i (2/N)|x - c_i|` with `c_i` alternating between 0 and 2,
///   so `f = |x| + |x - 2|` for even `N`; optimal on `[0, 2]` with `f* = 2`.
///   `X0 = [-5, 5]`, no constraints.
/// - `lp`: every agent minimizes `x_1 + x_2`, with the halfspaces `x_1 >= 0`
///   and `x_2 >= 0` held by alternating agents; `f* = 0` at the origin.
///   `X0 = [-5, 5]²`.
/// - `lmi`: `min x_1` split evenly subject to
///   `diag(1, -1) - x_1 I ⪯ 0`, held by every agent; feasible iff
///   `x_1 >= 1`, so `f* = 1`. `X0 = [-5, 5]`.
pub fn builtin_problem(name: &str, agents: usize) -> Result<ProblemSpec> {
    if agents == 0 {
        return Err(Error::InvalidProblem("need at least one agent".into()));
    }
    let share = 1.0 / agents as f64;
    let cube = |n: usize| SimpleSet::Box {
        lower: vec![-5.0; n],
        upper: vec![5.0; n],
    };
    let spec = match name {
        "median" => {
            if agents % 2 == 1 {
                return Err(Error::InvalidProblem(
                    "median problem needs an even number of agents".into(),
                ));
            }
            ProblemSpec {
                name: "median".into(),
                dimension: 1,
                x0: cube(1),
                agents: (0..agents)
                    .map(|i| AgentProblem {
                        objective: Objective::L1Deviation {
                            target: vec![if i % 2 == 0 { 0.0 } else { 2.0 }],
                            weight: 2.0 * share,
                        },
                        constraints: vec![],
                    })
                    .collect(),
                optimum: Some(KnownOptimum {
                    x: Some(vec![1.0]),
                    f: 2.0,
                }),
                initial_point: Some(vec![4.0]),
                epigraph: false,
                metadata: BTreeMap::new(),
            }
        }
        "lp" => {
            let halfspace = |k: usize| {
                let mut row = vec![0.0; 2];
                row[k] = -1.0;
                Constraint::from(LinearBlock::from_rows(&[row], &[0.0]).expect("1x2 block"))
            };
            let constraints_for = |i: usize| {
                if agents == 1 {
                    vec![halfspace(0), halfspace(1)]
                } else {
                    vec![halfspace(i % 2)]
                }
            };
            ProblemSpec {
                name: "lp".into(),
                dimension: 2,
                x0: cube(2),
                agents: (0..agents)
                    .map(|i| AgentProblem {
                        objective: Objective::Linear { c: vec![1.0, 1.0] },
                        constraints: constraints_for(i),
                    })
                    .collect(),
                optimum: Some(KnownOptimum {
                    x: Some(vec![0.0, 0.0]),
                    f: 0.0,
                }),
                initial_point: Some(vec![2.0, 3.0]),
                epigraph: false,
                metadata: BTreeMap::new(),
            }
        }
        "lmi" => {
            let lmi = Arc::new(LmiConstraint::new(vec![
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, -1.0])),
                -DMatrix::identity(2, 2),
            ])?);
            ProblemSpec {
                name: "lmi".into(),
                dimension: 1,
                x0: cube(1),
                agents: (0..agents)
                    .map(|_| AgentProblem {
                        objective: Objective::Linear { c: vec![share] },
                        constraints: vec![Constraint::Lmi(lmi.clone())],
                    })
                    .collect(),
                optimum: Some(KnownOptimum {
                    x: Some(vec![1.0]),
                    f: 1.0,
                }),
                initial_point: Some(vec![-2.0]),
                epigraph: false,
                metadata: BTreeMap::new(),
            }
        }
        other => {
            return Err(Error::InvalidProblem(format!(
                "unknown builtin problem {other:?}; expected one of {BUILTIN_NAMES:?}"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn builtin_test_problems(agents: usize) -> Result<Vec<ProblemSpec>> {
    BUILTIN_NAMES
        .iter()
        .filter(|&&name| !(name == "median" && agents % 2 == 1))
        .map(|name| builtin_problem(name, agents))
        .collect()
}
