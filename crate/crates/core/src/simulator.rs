//! Round-synchronous execution of DAP over a network.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::algorithm::{dap_round, AgentState, StepSize};
use crate::constraints::ConstraintOracle;
use crate::graph::{smallest_connectivity_window, GraphSequence};
use crate::linalg::{axpy, dist, mean, norm};
use crate::problems::ProblemSpec;
use crate::weights::{
    stationary_left_eigenvector, validate_assumption1, Assumption1Report, WeightMatrix, WeightScheme,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminationMode {
    /// Compare each agent with the network-wide mean.
    #[default]
    Global,
    /// Compare each agent with the mean over its in-neighbors.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub consensus_rel_tol: f64,
    pub feasibility_tol: f64,
    #[serde(default)]
    pub mode: TerminationMode,
    /// Extra requirement `|f(x̄) - f*| <= tol`, only when `f*` is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_gap_tol: Option<f64>,
}

impl Default for Termination {
    fn default() -> Self {
        Self {
            consensus_rel_tol: 1e-4,
            feasibility_tol: 1e-3,
            mode: TerminationMode::Global,
            objective_gap_tol: None,
        }
    }
}

#[derive(Clone)]
pub struct RunConfig {
    pub problem: Arc<ProblemSpec>,
    pub topology: Arc<dyn GraphSequence>,
    pub weights: WeightScheme,
    pub stepsize: StepSize,
    pub seed: u64,
    pub max_rounds: usize,
    pub termination: Termination,
    /// Record every `metric_stride`-th round (plus the last one).
    pub metric_stride: usize,
    /// Update agents on the rayon pool within a round.
    pub parallel_agents: bool,
    /// Fill the `wallclock_ms` trace column. Off by default so traces are
    /// reproducible byte for byte.
    pub record_wallclock: bool,
    /// Largest connectivity window searched by [`regime_check`].
    pub max_connectivity_window: usize,
}

impl fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunConfig")
            .field("problem", &self.problem.name)
            .field("nodes", &self.topology.node_count())
            .field("weights", &self.weights)
            .field("stepsize", &self.stepsize)
            .field("seed", &self.seed)
            .field("max_rounds", &self.max_rounds)
            .field("termination", &self.termination)
            .finish_non_exhaustive()
    }
}

impl RunConfig {
    pub fn new(problem: Arc<ProblemSpec>, topology: Arc<dyn GraphSequence>, weights: WeightScheme) -> Self {
        Self {
            problem,
            topology,
            weights,
            stepsize: StepSize::default(),
            seed: 0,
            max_rounds: 100_000,
            termination: Termination::default(),
            metric_stride: 10,
            parallel_agents: false,
            record_wallclock: false,
            max_connectivity_window: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter("max_rounds must be at least 1".into()));
        }
        if self.metric_stride == 0 {
            return Err(Error::InvalidParameter("metric_stride must be at least 1".into()));
        }
        let t = &self.termination;
        if !(t.consensus_rel_tol > 0.0 && t.feasibility_tol > 0.0) {
            return Err(Error::InvalidParameter("termination tolerances must be positive".into()));
        }
        if self.problem.agent_count() != self.topology.node_count() {
            return Err(Error::InvalidProblem(format!(
                "problem has {} agents but the topology has {} nodes",
                self.problem.agent_count(),
                self.topology.node_count()
            )));
        }
        self.problem.validate()
    }
}

/// One sampled round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    /// `max_i ‖x_i - x̄‖`
    pub consensus_error: f64,
    pub max_violation: f64,
    pub total_violation: f64,
    /// `|f(x̄) - f*|` when `f*` is known.
    pub objective_gap: Option<f64>,
    pub alpha: f64,
    pub wallclock_ms: Option<f64>,
    /// `max_i ‖x_i - p_i‖`
    pub max_perturbation: f64,
    /// `max_i Σ_{r<=k} α_r ‖x_{i,r} - p_{i,r}‖`
    pub weighted_perturbation_sum: f64,
    /// `‖Σ π_i x_i - x̄‖` under a fixed row-stochastic `W`.
    pub weighted_mean_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub records: Vec<MetricsRecord>,
}

pub const TRACE_COLUMNS: [&str; 7] = [
    "k",
    "consensus_error",
    "max_violation",
    "total_violation",
    "objective_gap",
    "alpha_k",
    "wallclock_ms",
];

impl MetricsTrace {
    /// CSV with a header row. Missing values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.consensus_error.to_string(),
                r.max_violation.to_string(),
                r.total_violation.to_string(),
                opt(r.objective_gap),
                r.alpha.to_string(),
                opt(r.wallclock_ms),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// Whether increments of `Σ α_k ‖e_k‖` shrink: the last quarter of the
    /// trace adds less than the quarter before it.
    pub fn perturbation_tail_shrinks(&self) -> bool {
        let n = self.records.len();
        if n < 8 {
            return false;
        }
        let at = |i: usize| self.records[i].weighted_perturbation_sum;
        let q = n / 4;
        let late = at(n - 1) - at(n - 1 - q);
        let earlier = at(n - 1 - q) - at(n - 1 - 2 * q);
        late <= earlier
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityAudit {
    pub max_violation: f64,
    pub total_violation: f64,
    /// `per_agent[i][ω]` is `g⁺(x_i, ω)` over agent `i`'s own constraints.
    pub per_agent: Vec<Vec<f64>>,
}

/// Evaluates every constraint of every agent at that agent's iterate.
pub fn feasibility_audit(xs: &[Vec<f64>], problem: &ProblemSpec) -> Result<FeasibilityAudit> {
    if xs.len() != problem.agent_count() {
        return Err(Error::DimensionMismatch {
            expected: problem.agent_count(),
            found: xs.len(),
        });
    }
    let per_agent = xs
        .iter()
        .zip(&problem.agents)
        .map(|(x, a)| a.constraints.iter().map(|c| c.violation(x)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let all = per_agent.iter().flatten().copied();
    Ok(FeasibilityAudit {
        max_violation: all.clone().fold(0.0, f64::max),
        total_violation: all.fold(0.0, |acc, v| acc + v),
        per_agent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub pass: bool,
    pub failures: Vec<String>,
}

impl Hypotheses {
    fn from_failures(failures: Vec<String>) -> Self {
        Self {
            pass: failures.is_empty(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub scheme: WeightScheme,
    /// Rounds whose weights were validated.
    pub assumption1: Vec<Assumption1Report>,
    /// Smallest `Q` found for which the sequence is Q-strongly connected.
    pub connectivity_window: Option<usize>,
    /// Doubly stochastic weights over a Q-strongly connected sequence.
    pub doubly_stochastic_regime: Hypotheses,
    /// Equal-neighbor weights, 1-strongly connected, linear objectives.
    pub row_stochastic_regime: Hypotheses,
    pub warnings: Vec<String>,
}

impl RegimeReport {
    /// Hypotheses of the regime matching the configured weight scheme.
    pub fn selected(&self) -> &Hypotheses {
        match self.scheme {
            WeightScheme::Metropolis => &self.doubly_stochastic_regime,
            WeightScheme::EqualNeighbor => &self.row_stochastic_regime,
        }
    }

    /// Failures that make a run invalid. A nonlinear objective under
    /// equal-neighbor weights is only a warning.
    pub fn blocking_failures(&self) -> Vec<String> {
        self.selected()
            .failures
            .iter()
            .filter(|f| !f.starts_with(NONLINEAR_OBJECTIVE))
            .cloned()
            .collect()
    }
}

const NONLINEAR_OBJECTIVE: &str = "objective is not linear";

fn checked_rounds(config: &RunConfig) -> Vec<usize> {
    match config.topology.period() {
        Some(p) => (0..p).collect(),
        None => (1..=config.max_rounds.min(64)).collect(),
    }
}

/// Checks the weight scheme and topology against the hypotheses of the two
/// convergence regimes without running anything.
pub fn regime_check(config: &RunConfig) -> Result<RegimeReport> {
    let seq = config.topology.as_ref();
    let mut assumption1 = Vec::new();
    let mut build_errors = Vec::new();
    let mut row_fail = Vec::new();
    let mut column_fail = Vec::new();
    for k in checked_rounds(config) {
        match config.weights.build(seq, k) {
            Ok(w) => {
                let r = validate_assumption1(&w, &seq.graph_at(k));
                if !r.row_clauses_pass() {
                    row_fail.push(format!("weights at round {k} violate the graph, nu or row-sum clause"));
                }
                if !r.column_stochastic.pass {
                    column_fail.push(format!("weights at round {k} are not column stochastic"));
                }
                assumption1.push(r);
            }
            Err(e) => build_errors.push(format!("cannot build {} weights: {e}", config.weights)),
        }
    }
    let connectivity_window = smallest_connectivity_window(
        seq,
        config.max_connectivity_window,
        config.max_rounds.min(64),
    );

    let mut ds = build_errors.clone();
    ds.extend(row_fail.iter().cloned());
    ds.extend(column_fail.iter().take(1).cloned());
    if connectivity_window.is_none() {
        ds.push(format!(
            "no Q <= {} makes the sequence Q-strongly connected",
            config.max_connectivity_window
        ));
    }

    let mut rs = build_errors;
    rs.extend(row_fail);
    if config.weights != WeightScheme::EqualNeighbor {
        rs.push("weights are not the equal-neighbor construction".into());
    }
    if connectivity_window != Some(1) {
        rs.push("graph is not strongly connected at every round (Q = 1)".into());
    }
    let mut warnings = Vec::new();
    if !config.problem.has_linear_objectives() {
        rs.push(format!("{NONLINEAR_OBJECTIVE}; apply the epigraph transform"));
        if config.weights == WeightScheme::EqualNeighbor {
            warnings.push(
                "equal-neighbor weights with a nonlinear objective: iterates may converge to a \
                 reweighted problem; use the epigraph form"
                    .into(),
            );
        }
    }
    Ok(RegimeReport {
        scheme: config.weights,
        assumption1,
        connectivity_window,
        doubly_stochastic_regime: Hypotheses::from_failures(ds),
        row_stochastic_regime: Hypotheses::from_failures(rs),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationStatus {
    pub converged: bool,
    /// Round at which the rule fired, or the last round executed.
    pub round: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub states: Vec<AgentState>,
    pub trace: MetricsTrace,
    pub termination: TerminationStatus,
    pub final_mean: Vec<f64>,
    /// Per-agent `Σ_k α_k ‖x_{i,k} - p_{i,k}‖`.
    pub perturbation_sums: Vec<f64>,
    pub regime: RegimeReport,
}

impl RunOutcome {
    pub fn iterates(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.x.clone()).collect()
    }
}

struct WeightSource {
    cache: Vec<WeightMatrix>,
    period: Option<usize>,
}

impl WeightSource {
    fn new(config: &RunConfig) -> Result<Self> {
        let period = config.topology.period();
        let cache = match period {
            Some(p) => (0..p)
                .map(|k| config.weights.build(config.topology.as_ref(), k))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        Ok(Self { cache, period })
    }

    fn at<'a>(&'a self, config: &RunConfig, k: usize, scratch: &'a mut Option<WeightMatrix>) -> Result<&'a WeightMatrix> {
        match self.period {
            Some(p) => Ok(&self.cache[k % p]),
            None => Ok(scratch.insert(config.weights.build(config.topology.as_ref(), k)?)),
        }
    }
}

/// Whether every agent is within the consensus tolerance of its reference
/// point (global or local mean).
fn consensus_reached(config: &RunConfig, xs: &[Vec<f64>], mean_x: &[f64], k: usize) -> Result<bool> {
    let tol = config.termination.consensus_rel_tol;
    match config.termination.mode {
        TerminationMode::Global => {
            let bound = tol * norm(mean_x).max(1.0);
            Ok(xs.iter().all(|x| dist(x, mean_x) <= bound))
        }
        TerminationMode::Local => {
            let graph = config.topology.graph_at(k);
            for (i, x) in xs.iter().enumerate() {
                let nbrs = graph.in_neighbors(i)?;
                let local: Vec<Vec<f64>> = nbrs.iter().map(|&j| xs[j].clone()).collect();
                let m = mean(&local);
                if dist(x, &m) > tol * norm(&m).max(1.0) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

/// Runs DAP until the termination rule fires or `max_rounds` is reached.
///
/// The rule fires at round `k` when every agent is within
/// `consensus_rel_tol · max(‖x̄‖, 1)` of the mean and the summed violation of
/// all agents' constraints is at most `feasibility_tol`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let regime = regime_check(config)?;
    let blocking = regime.blocking_failures();
    if !blocking.is_empty() {
        return Err(Error::AssumptionsFailed(blocking));
    }
    let problem = config.problem.as_ref();
    let n_agents = problem.agent_count();
    let start = problem.initial_point();
    let mut states: Vec<AgentState> = (0..n_agents)
        .map(|i| AgentState::new(i, start.clone(), config.seed))
        .collect();

    let weights = WeightSource::new(config)?;
    let stationary = match (config.weights, config.topology.period()) {
        (WeightScheme::EqualNeighbor, Some(1)) => stationary_left_eigenvector(&weights.cache[0]).ok(),
        _ => None,
    };
    let f_star = problem.optimum.as_ref().map(|o| o.f);
    let clock = config.record_wallclock.then(Instant::now);

    let mut trace = MetricsTrace::default();
    let mut perturbation_sums = vec![0.0; n_agents];
    let mut scratch = None;
    let mut status = TerminationStatus {
        converged: false,
        round: 0,
    };
    let mut final_mean = start;

    for k in 1..=config.max_rounds {
        let alpha = config.stepsize.alpha(k);
        let w = weights.at(config, k, &mut scratch)?;
        dap_round(&mut states, w, alpha, problem, config.parallel_agents)?;

        let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
        let mean_x = mean(&xs);
        let mut max_perturbation: f64 = 0.0;
        for (sum, s) in perturbation_sums.iter_mut().zip(&states) {
            let e = s.perturbation();
            max_perturbation = max_perturbation.max(e);
            *sum += alpha * e;
        }
        let objective_gap = match f_star {
            Some(f) => Some((problem.objective_value(&mean_x)? - f).abs()),
            None => None,
        };

        // The audit dominates the cost of a round, so it only runs when the
        // other parts of the rule hold or the round is recorded.
        let sampled = k % config.metric_stride == 0 || k == config.max_rounds;
        let candidate = consensus_reached(config, &xs, &mean_x, k)?
            && match (config.termination.objective_gap_tol, objective_gap) {
                (Some(tol), Some(gap)) => gap <= tol,
                _ => true,
            };
        let audit = if candidate || sampled {
            Some(feasibility_audit(&xs, problem)?)
        } else {
            None
        };
        let converged =
            candidate && audit.as_ref().is_some_and(|a| a.total_violation <= config.termination.feasibility_tol);
        let last = converged || k == config.max_rounds;

        if sampled || last {
            let audit = audit.expect("recorded rounds are audited");
            let weighted_mean_gap = stationary.as_ref().map(|pi| {
                let mut hat = vec![0.0; mean_x.len()];
                for (x, p) in xs.iter().zip(pi.iter()) {
                    axpy(*p, x, &mut hat);
                }
                dist(&hat, &mean_x)
            });
            trace.records.push(MetricsRecord {
                round: k,
                consensus_error: xs.iter().map(|x| dist(x, &mean_x)).fold(0.0, f64::max),
                max_violation: audit.max_violation,
                total_violation: audit.total_violation,
                objective_gap,
                alpha,
                wallclock_ms: clock.map(|c| c.elapsed().as_secs_f64() * 1e3),
                max_perturbation,
                weighted_perturbation_sum: perturbation_sums.iter().copied().fold(0.0, f64::max),
                weighted_mean_gap,
            });
        }
        if last {
            status = TerminationStatus { converged, round: k };
            final_mean = mean_x;
            break;
        }
    }

    Ok(RunOutcome {
        states,
        trace,
        termination: status,
        final_mean,
        perturbation_sums,
        regime,
    })
}
