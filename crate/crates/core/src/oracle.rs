//! Centralized reference solutions used to check decentralized runs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algorithm::{feasibility_step, ObjectiveOracle};
use crate::constraints::{Constraint, ConstraintOracle};
use crate::graph::Digraph;
use crate::linalg::axpy;
use crate::problems::{averaging_matrix, GossipProblem, ProblemSpec};
use crate::{Error, Result};

/// Residual and stabilization threshold for a certified solution.
pub const CERTIFY_TOLERANCE: f64 = 1e-8;
/// Target residual of the feasibility sweeps after each objective step.
pub const SWEEP_TOLERANCE: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 500;
/// Largest grid `brute_force_gossip` will enumerate.
pub const MAX_GRID_POINTS: u128 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub family: String,
    pub points: u128,
    /// Step between neighbouring grid values of one parameter.
    pub spacing: f64,
    /// Sum over parameters of a Lipschitz bound of `λ_max` in that parameter.
    pub lipschitz: f64,
}

impl GridInfo {
    /// Bound on `f(best grid point) - f*`.
    pub fn error_bound(&self) -> f64 {
        self.spacing * self.lipschitz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub f: f64,
    /// Largest constraint violation at `x`.
    pub residual: f64,
    pub iterations: usize,
    pub tolerance: f64,
    /// `residual <= tolerance`, and for iterative solves `f` also moved by
    /// less than `tolerance` over the last tenth of the iterations.
    pub certified: bool,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
}

fn pooled_constraints(problem: &ProblemSpec) -> Vec<&Constraint> {
    let mut pool: Vec<&Constraint> = Vec::new();
    for c in problem.agents.iter().flat_map(|a| &a.constraints) {
        let seen = pool.iter().any(|p| match (p, c) {
            (Constraint::Lmi(a), Constraint::Lmi(b)) => std::sync::Arc::ptr_eq(a, b) || a == b,
            _ => *p == c,
        });
        if !seen {
            pool.push(c);
        }
    }
    pool
}

fn residual(pool: &[&Constraint], x: &[f64]) -> Result<f64> {
    pool.iter()
        .map(|c| c.violation(x))
        .try_fold(0.0, |m, v| v.map(|v| f64::max(m, v)))
}

fn total_subgradient(problem: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
    let mut s = vec![0.0; x.len()];
    for a in &problem.agents {
        let g = a.objective.subgradient(x)?;
        axpy(1.0, &g, &mut s[..g.len()]);
    }
    Ok(s)
}

/// Single-agent DAP on the pooled problem: a projected subgradient step with
/// `α_k = 1/(k+1)` on `Σ f_i`, then deterministic Polyak sweeps over every
/// distinct constraint until the residual drops below [`SWEEP_TOLERANCE`]
/// or [`MAX_SWEEPS`] sweeps have run.
pub fn centralized_solve(problem: &ProblemSpec, budget: usize) -> Result<ReferenceSolution> {
    problem.validate()?;
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let pool = pooled_constraints(problem);
    let x0 = &problem.x0;
    let mut x = problem.initial_point();
    let window = (budget / 10).max(1);
    let mut history = Vec::with_capacity(budget);

    for k in 1..=budget {
        let alpha = 1.0 / (k as f64 + 1.0);
        let s = total_subgradient(problem, &x)?;
        axpy(-alpha, &s, &mut x);
        x0.project_in_place(&mut x);
        for _ in 0..MAX_SWEEPS {
            for c in &pool {
                x = feasibility_step(&x, *c, x0)?.x;
            }
            if residual(&pool, &x)? <= SWEEP_TOLERANCE {
                break;
            }
        }
        history.push(problem.objective_value(&x)?);
    }

    let tail = &history[history.len() - window..];
    let spread = tail.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - tail.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let residual = residual(&pool, &x)?;
    Ok(ReferenceSolution {
        f: problem.objective_value(&x)?,
        x,
        residual,
        iterations: budget,
        tolerance: CERTIFY_TOLERANCE,
        certified: residual <= CERTIFY_TOLERANCE && spread < CERTIFY_TOLERANCE,
        method: "centralized projected subgradient with Polyak sweeps".into(),
        grid: None,
    })
}

/// `λ_max(Σ_{i≠j} p_ij A(i,j) + Σ_i (1 - Σ_j p_ij) I - 11ᵀ)`, the row slack
/// sitting on the identity.
fn lambda_max_with_slack(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut m = DMatrix::from_element(n, n, -1.0);
    for i in 0..n {
        let mut slack = 1.0;
        for j in 0..n {
            if i != j && p[(i, j)] != 0.0 {
                m += averaging_matrix(i, j, n) * p[(i, j)];
                slack -= p[(i, j)];
            }
        }
        for d in 0..n {
            m[(d, d)] += slack;
        }
    }
    SymmetricEigen::new(m).eigenvalues.max()
}

/// `‖Σ_{(i,j) ∈ group} (A(i,j) - I)‖₂`, a Lipschitz bound for moving all
/// entries of `group` together.
fn group_lipschitz(n: usize, group: &[(usize, usize)]) -> f64 {
    let mut d = DMatrix::zeros(n, n);
    for &(i, j) in group {
        d += averaging_matrix(i, j, n) - DMatrix::identity(n, n);
    }
    SymmetricEigen::new(d).eigenvalues.amax()
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Nodes of a cycle graph in walk order, or `None` if `graph` is not a cycle.
fn cycle_order(graph: &Digraph) -> Option<Vec<usize>> {
    let n = graph.node_count();
    if n < 3 || graph.edges().len() != 2 * n || !graph.is_strongly_connected() {
        return None;
    }
    let succ = |v: usize| -> Vec<usize> {
        graph.out_neighbors(v).map(|o| o.iter().copied().filter(|&u| u != v).collect()).unwrap_or_default()
    };
    if (0..n).any(|v| succ(v).len() != 2) {
        return None;
    }
    let mut order = vec![0, succ(0)[0]];
    while order.len() < n {
        let (prev, cur) = (order[order.len() - 2], order[order.len() - 1]);
        order.push(succ(cur).into_iter().find(|&u| u != prev)?);
    }
    Some(order)
}

/// Grid search for the optimal gossip probabilities.
///
/// Each row may leave slack `1 - Σ_j p_ij` on the identity; moving that slack
/// onto an edge never raises `λ_max`, so the optimum is unchanged. Cliques
/// search `p_ij = p ∈ [0, 1/(N-1)]` with `resolution` steps, cycles search
/// successor/predecessor weights `(p, q)` with `p + q <= 1` on a `1/resolution`
/// lattice, and any other graph with at most four nodes gets the full lattice
/// over every row.
pub fn brute_force_gossip(graph: &Digraph, resolution: usize) -> Result<ReferenceSolution> {
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be at least 1".into()));
    }
    let problem = GossipProblem::new(graph)?;
    let n = graph.node_count();
    let edges = problem.edges().to_vec();
    let r = resolution as f64;

    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut consider = |p: DMatrix<f64>| {
        let s = lambda_max_with_slack(&p);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, p));
        }
    };

    let is_clique = edges.len() == n * (n - 1);
    let grid = if is_clique {
        let top = 1.0 / (n as f64 - 1.0);
        for k in 0..=resolution {
            let p = k as f64 / r * top;
            consider(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { p }));
        }
        GridInfo {
            family: "clique: p_ij = p".into(),
            points: resolution as u128 + 1,
            spacing: top / r,
            lipschitz: group_lipschitz(n, &edges),
        }
    } else if let Some(order) = cycle_order(graph) {
        let fwd: Vec<_> = (0..n).map(|k| (order[k], order[(k + 1) % n])).collect();
        let bwd: Vec<_> = (0..n).map(|k| (order[(k + 1) % n], order[k])).collect();
        let mut points = 0u128;
        for a in 0..=resolution {
            for b in 0..=(resolution - a) {
                let mut p = DMatrix::zeros(n, n);
                for &(i, j) in &fwd {
                    p[(i, j)] = a as f64 / r;
                }
                for &(i, j) in &bwd {
                    p[(i, j)] = b as f64 / r;
                }
                consider(p);
                points += 1;
            }
        }
        GridInfo {
            family: "cycle: successor p, predecessor q".into(),
            points,
            spacing: 1.0 / r,
            lipschitz: group_lipschitz(n, &fwd) + group_lipschitz(n, &bwd),
        }
    } else {
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|i| edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect())
            .collect();
        let points = rows.iter().fold(1u128, |acc, row| {
            acc.saturating_mul(binomial(resolution as u128 + row.len() as u128, row.len() as u128))
        });
        if n > 4 || points > MAX_GRID_POINTS {
            return Err(Error::TooManyParameters { points });
        }
        // Lattice of each row: compositions of at most `resolution`.
        let row_grids: Vec<Vec<Vec<usize>>> = rows.iter().map(|row| compositions(row.len(), resolution)).collect();
        let mut idx = vec![0usize; n];
        loop {
            let mut p = DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                for (&j, &c) in row.iter().zip(&row_grids[i][idx[i]]) {
                    p[(i, j)] = c as f64 / r;
                }
            }
            consider(p);
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < row_grids[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        GridInfo {
            family: "full lattice".into(),
            points,
            spacing: 1.0 / r,
            lipschitz: edges.iter().map(|&e| group_lipschitz(n, &[e])).sum(),
        }
    };

    let (s, p) = best.expect("grid is never empty");
    let x = problem.pack(s, &p);
    let pool = pooled_constraints(problem.spec());
    let residual = residual(&pool, &x)?;
    Ok(ReferenceSolution {
        x,
        f: s,
        residual,
        iterations: 0,
        tolerance: CERTIFY_TOLERANCE,
        certified: residual <= CERTIFY_TOLERANCE,
        method: "brute-force eigenvalue grid".into(),
        grid: Some(grid),
    })
}

/// All vectors of `len` nonnegative integers with sum at most `total`.
fn compositions(len: usize, total: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(len - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Reference solutions stored as JSON files named by problem content hash.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    problem_hash: String,
    budget: usize,
    solution: ReferenceSolution,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, hash: &str, budget: usize) -> PathBuf {
        self.dir.join(format!("{hash}-{budget}.json"))
    }

    pub fn get(&self, problem: &ProblemSpec, budget: usize) -> Result<Option<ReferenceSolution>> {
        let hash = problem.content_hash();
        let path = self.path(&hash, budget);
        if !path.exists() {
            return Ok(None);
        }
        let entry: CacheEntry = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok((entry.problem_hash == hash).then_some(entry.solution))
    }

    pub fn get_or_solve(&self, problem: &ProblemSpec, budget: usize) -> Result<ReferenceSolution> {
        if let Some(hit) = self.get(problem, budget)? {
            return Ok(hit);
        }
        let solution = centralized_solve(problem, budget)?;
        let hash = problem.content_hash();
        fs::create_dir_all(&self.dir)?;
        let entry = CacheEntry {
            problem_hash: hash.clone(),
            budget,
            solution,
        };
        fs::write(self.path(&hash, budget), serde_json::to_string_pretty(&entry)?)?;
        Ok(entry.solution)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
