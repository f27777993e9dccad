//! The per-agent DAP update.
//!
//! Round `k` for agent `i`:
//!
//! ```text
//! p = Σ_j [W_k]_ij x_j           (previous-round iterates)
//! v = Π_X0[p - α_k s],            s ∈ ∂f_i(p)
//! x = Π_X0[v - g⁺(v,ω)/‖d‖² · d], d ∈ ∂g⁺(v,ω), ω sampled from Ω_i
//! ```
//!
//! The last step is skipped when the sampled constraint already holds at `v`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{sample_omega, ConstraintOracle, Evaluation, SimpleSet};
use crate::linalg::{axpy, dot, norm};
use crate::problems::{AgentProblem, ProblemSpec};
use crate::weights::{WeightMatrix, SUM_TOLERANCE};
use crate::{Error, Result};

/// Local objective `f_i`. Each variant reads only the leading `dim()`
/// coordinates of its argument, so it can be evaluated on lifted vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Objective {
    /// `cᵀx`
    Linear { c: Vec<f64> },
    /// `weight · ‖x - target‖₁`
    L1Deviation { target: Vec<f64>, weight: f64 },
    /// `weight/2 · ‖x - center‖²`
    Quadratic { center: Vec<f64>, weight: f64 },
    Zero { dim: usize },
}

pub trait ObjectiveOracle {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    /// Subgradient with `dim()` entries.
    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Objective {
    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear { .. } | Self::Zero { .. })
    }

    fn prefix<'a>(&self, x: &'a [f64]) -> Result<&'a [f64]> {
        let n = self.dim();
        if x.len() < n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        Ok(&x[..n])
    }
}

impl ObjectiveOracle for Objective {
    fn dim(&self) -> usize {
        match self {
            Self::Linear { c } => c.len(),
            Self::L1Deviation { target, .. } => target.len(),
            Self::Quadratic { center, .. } => center.len(),
            Self::Zero { dim } => *dim,
        }
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let y = self.prefix(x)?;
        Ok(match self {
            Self::Linear { c } => dot(c, y),
            Self::L1Deviation { target, weight } => {
                weight * y.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>()
            }
            Self::Quadratic { center, weight } => {
                0.5 * weight * y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            Self::Zero { .. } => 0.0,
        })
    }

    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.prefix(x)?;
        Ok(match self {
            Self::Linear { c } => c.clone(),
            Self::L1Deviation { target, weight } => y
                .iter()
                .zip(target)
                .map(|(a, b)| {
                    if a > b {
                        *weight
                    } else if a < b {
                        -weight
                    } else {
                        0.0
                    }
                })
                .collect(),
            Self::Quadratic { center, weight } => {
                y.iter().zip(center).map(|(a, b)| weight * (a - b)).collect()
            }
            Self::Zero { dim } => vec![0.0; *dim],
        })
    }
}

/// `α_k = a / (k + b)^γ` with `γ ∈ (1/2, 1]`, which makes the steps
/// nonincreasing, non-summable and square-summable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepSizeData", into = "StepSizeData")]
pub struct StepSize {
    a: f64,
    b: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct StepSizeData {
    a: f64,
    b: f64,
    gamma: f64,
}

impl TryFrom<StepSizeData> for StepSize {
    type Error = Error;
    fn try_from(d: StepSizeData) -> Result<Self> {
        StepSize::new(d.a, d.b, d.gamma)
    }
}

impl From<StepSize> for StepSizeData {
    fn from(s: StepSize) -> Self {
        StepSizeData {
            a: s.a,
            b: s.b,
            gamma: s.gamma,
        }
    }
}

impl Default for StepSize {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            gamma: 1.0,
        }
    }
}

impl StepSize {
    pub fn new(a: f64, b: f64, gamma: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("stepsize a must be positive, got {a}")));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("stepsize b must be nonnegative, got {b}")));
        }
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "stepsize exponent must lie in (0.5, 1], got {gamma}"
            )));
        }
        Ok(Self { a, b, gamma })
    }

    /// `α_k ≡ 0`. Not a valid schedule for convergence; used to check fixed
    /// points.
    pub fn zero() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            gamma: 1.0,
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Step for round `k >= 1`.
    pub fn alpha(&self, k: usize) -> f64 {
        if self.a == 0.0 {
            return 0.0;
        }
        self.a / (k as f64 + self.b).powf(self.gamma)
    }
}

/// One agent's iterates and its private random stream.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub rng: ChaCha8Rng,
}

/// Stream `agent` of the generator keyed by `seed`. Streams never overlap, so
/// draws do not depend on how agents are scheduled.
pub fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

impl AgentState {
    pub fn new(id: usize, x: Vec<f64>, seed: u64) -> Self {
        Self {
            id,
            p: x.clone(),
            v: x.clone(),
            x,
            rng: agent_rng(seed, id),
        }
    }

    /// `‖x - p‖`, the total correction applied after averaging.
    pub fn perturbation(&self) -> f64 {
        crate::linalg::dist(&self.x, &self.p)
    }
}

fn check_row_sum(row: &[(usize, f64)]) -> Result<()> {
    let sum: f64 = row.iter().map(|(_, w)| w).sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::NotStochastic { sum });
    }
    Ok(())
}

/// `p = Σ_j w_j x_j` over the supplied neighbor states.
pub fn consensus_step(weights_row: &[(usize, f64)], neighbors: &[(usize, &[f64])]) -> Result<Vec<f64>> {
    check_row_sum(weights_row)?;
    let dim = neighbors.first().map_or(0, |(_, x)| x.len());
    let mut p = vec![0.0; dim];
    for &(j, w) in weights_row {
        if w == 0.0 {
            continue;
        }
        let (_, xj) = neighbors
            .iter()
            .find(|(id, _)| *id == j)
            .ok_or(Error::MissingNeighbor { neighbor: j })?;
        if xj.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: xj.len(),
            });
        }
        axpy(w, xj, &mut p);
    }
    Ok(p)
}

/// `v = Π_X0[p - α s]` with `s ∈ ∂f(p)`.
pub fn objective_step(
    p: &[f64],
    objective: &dyn ObjectiveOracle,
    alpha: f64,
    set: &SimpleSet,
) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative stepsize {alpha}")));
    }
    let s = objective.subgradient(p)?;
    if s.len() > p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: s.len(),
        });
    }
    let mut v = p.to_vec();
    axpy(-alpha, &s, &mut v[..s.len()]);
    if set.dim() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: v.len(),
        });
    }
    set.project_in_place(&mut v);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityStep {
    pub x: Vec<f64>,
    /// `g⁺(v, ω)` before the step.
    pub violation: f64,
    pub taken: bool,
}

/// Polyak step `x = Π_X0[v - g⁺(v)/‖d‖² · d]` on one sampled constraint,
/// omitted when `g⁺(v) <= SATISFIED_TOLERANCE`.
pub fn feasibility_step(
    v: &[f64],
    constraint: &dyn ConstraintOracle,
    set: &SimpleSet,
) -> Result<FeasibilityStep> {
    match constraint.evaluate(v)? {
        Evaluation::Satisfied { violation } => Ok(FeasibilityStep {
            x: v.to_vec(),
            violation,
            taken: false,
        }),
        Evaluation::Violated {
            violation,
            subgradient,
        } => {
            let d2 = dot(&subgradient, &subgradient);
            if !(d2 > 0.0) {
                return Err(Error::ZeroSubgradient { violation });
            }
            let mut x = v.to_vec();
            axpy(-violation / d2, &subgradient, &mut x);
            set.project_in_place(&mut x);
            Ok(FeasibilityStep {
                x,
                violation,
                taken: true,
            })
        }
    }
}

/// Runs steps (consensus, objective, feasibility) for one agent against a
/// read-only snapshot of the previous-round iterates.
pub fn update_agent(
    state: &mut AgentState,
    snapshot: &[Vec<f64>],
    weights_row: &[(usize, f64)],
    alpha: f64,
    agent: &AgentProblem,
    x0: &SimpleSet,
) -> Result<bool> {
    let mut p = vec![0.0; state.x.len()];
    for &(j, w) in weights_row {
        let xj = snapshot.get(j).ok_or(Error::MissingNeighbor { neighbor: j })?;
        axpy(w, xj, &mut p);
    }
    let v = objective_step(&p, &agent.objective, alpha, x0)?;
    let (x, taken) = match sample_omega(agent.constraints.len(), &mut state.rng) {
        Some(omega) => {
            let step = feasibility_step(&v, &agent.constraints[omega.0], x0)?;
            (step.x, step.taken)
        }
        None => (v.clone(), false),
    };
    state.p = p;
    state.v = v;
    state.x = x;
    Ok(taken)
}

/// One synchronous round. Every agent reads only the iterates from the end of
/// the previous round, so the result does not depend on update order or on
/// `parallel`. Returns the number of feasibility steps taken.
pub fn dap_round(
    states: &mut [AgentState],
    w: &WeightMatrix,
    alpha: f64,
    problem: &ProblemSpec,
    parallel: bool,
) -> Result<usize> {
    if w.size() != states.len() || problem.agents.len() != states.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            found: w.size(),
        });
    }
    let snapshot: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let step = |state: &mut AgentState| {
        let i = state.id;
        update_agent(state, &snapshot, w.row(i), alpha, &problem.agents[i], &problem.x0)
    };
    let taken: Vec<bool> = if parallel {
        states.par_iter_mut().map(step).collect::<Result<_>>()?
    } else {
        states.iter_mut().map(step).collect::<Result<_>>()?
    };
    Ok(taken.into_iter().filter(|&t| t).count())
}

/// Empirical `max ‖s‖` over uniform samples of a bounded `X0`. Diagnostic
/// only; `None` when `X0` is unbounded.
pub fn estimate_subgradient_bound<R: rand::Rng + ?Sized>(
    objective: &dyn ObjectiveOracle,
    set: &SimpleSet,
    samples: usize,
    rng: &mut R,
) -> Option<f64> {
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let x = set.sample(rng)?;
        best = best.max(norm(&objective.subgradient(&x).ok()?));
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{distance_oracle, Constraint, LinearBlock};
    use approx::assert_abs_diff_eq;

    #[test]
    fn consensus_examples() {
        let x = [1.0, 2.0];
        assert_eq!(consensus_step(&[(3, 1.0)], &[(3, &x)]).unwrap(), vec![1.0, 2.0]);

        let (a, b) = ([0.0], [2.0]);
        let p = consensus_step(&[(0, 0.5), (1, 0.5)], &[(0, &a), (1, &b)]).unwrap();
        assert_eq!(p, vec![1.0]);

        let basis: Vec<Vec<f64>> = (0..4)
            .map(|j| (0..4).map(|k| if k == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let nbrs: Vec<(usize, &[f64])> = basis.iter().enumerate().map(|(j, v)| (j, v.as_slice())).collect();
        let row: Vec<(usize, f64)> = (0..4).map(|j| (j, 0.25)).collect();
        assert_eq!(consensus_step(&row, &nbrs).unwrap(), vec![0.25; 4]);

        assert!(matches!(
            consensus_step(&[(0, 0.5), (1, 0.5)], &[(0, &a)]),
            Err(Error::MissingNeighbor { neighbor: 1 })
        ));
        assert!(matches!(
            consensus_step(&[(0, 0.5)], &[(0, &a)]),
            Err(Error::NotStochastic { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let full1 = SimpleSet::FullSpace { dim: 1 };
        let quad = Objective::Quadratic {
            center: vec![0.0],
            weight: 1.0,
        };
        assert_eq!(objective_step(&[0.3], &quad, 0.0, &full1).unwrap(), vec![0.3]);
        assert_eq!(objective_step(&[2.0], &quad, 0.5, &full1).unwrap(), vec![1.0]);

        let unit = SimpleSet::Box {
            lower: vec![0.0],
            upper: vec![1.0],
        };
        let lin = Objective::Linear { c: vec![1.0] };
        assert_eq!(objective_step(&[0.1], &lin, 0.5, &unit).unwrap(), vec![0.0]);
        assert!(objective_step(&[0.1], &lin, -1.0, &unit).is_err());

        let wide = Objective::Linear { c: vec![1.0, 1.0, 1.0] };
        assert!(matches!(
            objective_step(&[0.1], &wide, 0.5, &unit),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn l1_subgradient_at_kink_is_zero() {
        let f = Objective::L1Deviation {
            target: vec![1.0, 2.0],
            weight: 3.0,
        };
        assert_eq!(f.subgradient(&[1.0, 0.0]).unwrap(), vec![0.0, -3.0]);
        assert_eq!(f.value(&[1.0, 0.0]).unwrap(), 6.0);
    }

    #[test]
    fn feasibility_examples() {
        let full1 = SimpleSet::FullSpace { dim: 1 };
        let half = LinearBlock::from_rows(&[vec![1.0]], &[0.0]).unwrap();
        let step = feasibility_step(&[-1.0], &half, &full1).unwrap();
        assert!(!step.taken);
        assert_eq!(step.x, vec![-1.0]);

        let step = feasibility_step(&[2.0], &half, &full1).unwrap();
        assert!(step.taken);
        assert_abs_diff_eq!(step.x[0], 0.0, epsilon = 1e-15);

        let ball = distance_oracle(SimpleSet::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        })
        .unwrap();
        let step = feasibility_step(&[2.0, 0.0], &ball, &SimpleSet::FullSpace { dim: 2 }).unwrap();
        assert_abs_diff_eq!(step.x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(step.x[1], 0.0, epsilon = 1e-15);
    }

    struct Flat;
    impl ConstraintOracle for Flat {
        fn dim(&self) -> usize {
            1
        }
        fn violation(&self, _: &[f64]) -> Result<f64> {
            Ok(1.0)
        }
        fn evaluate(&self, _: &[f64]) -> Result<Evaluation> {
            Ok(Evaluation::Violated {
                violation: 1.0,
                subgradient: vec![0.0],
            })
        }
    }

    #[test]
    fn zero_subgradient_is_a_hard_error() {
        let err = feasibility_step(&[0.0], &Flat, &SimpleSet::FullSpace { dim: 1 }).unwrap_err();
        assert!(matches!(err, Error::ZeroSubgradient { .. }));
    }

    #[test]
    fn stepsize_schedule() {
        let s = StepSize::default();
        assert_eq!(s.alpha(1), 0.5);
        assert_eq!(s.alpha(9), 0.1);
        assert!(StepSize::new(1.0, 0.0, 0.5).is_err());
        assert!(StepSize::new(0.0, 0.0, 1.0).is_err());
        assert!(StepSize::new(1.0, -1.0, 1.0).is_err());
        assert_eq!(StepSize::zero().alpha(3), 0.0);

        let s = StepSize::new(2.0, 3.0, 0.6).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..10_000 {
            let a = s.alpha(k);
            assert!(a >= 0.0 && a <= prev);
            prev = a;
        }
    }

    #[test]
    fn square_summable_tail() {
        // Σ_{k>K} 1/(k+1)² < 1/(K+1); the partial sums settle.
        let s = StepSize::default();
        let head: f64 = (1..=1_000_000).map(|k| s.alpha(k).powi(2)).sum();
        let more: f64 = (1_000_001..=2_000_000).map(|k| s.alpha(k).powi(2)).sum();
        assert!(more < 1e-6);
        assert!(s.alpha(1_000_000).powi(2) < 1e-8);
        assert!((head - (std::f64::consts::PI.powi(2) / 6.0 - 1.0)).abs() < 1e-5);
        // while Σ α_k keeps growing like ln k
        let sum: f64 = (1..=1_000_000).map(|k| s.alpha(k)).sum();
        assert!(sum > 12.0);
    }

    #[test]
    fn constraint_enum_dispatch() {
        let c: Constraint = LinearBlock::from_rows(&[vec![1.0, 0.0]], &[0.0]).unwrap().into();
        let step = feasibility_step(&[3.0, 1.0], &c, &SimpleSet::FullSpace { dim: 2 }).unwrap();
        assert_eq!(step.x, vec![0.0, 1.0]);
    }
}
