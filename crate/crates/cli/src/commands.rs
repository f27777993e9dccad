//! `run`, `table1` and `validate`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use dap_core::graph::TopologyKind;
use dap_core::simulator::{regime_check, run, RegimeReport, RunOutcome};
use dap_core::weights::ClauseCheck;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, ProblemSelector, TopologyChoice, TopologyConfig, WeightsConfig};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Error = 1,
    NotConverged = 2,
}

pub const THREADS_VAR: &str = "DAP_THREADS";

/// Worker cap from `DAP_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => anyhow::bail!("{THREADS_VAR} must be a positive integer, got {v:?}"),
            Ok(n) => Ok(Some(n)),
        },
        Err(_) => Ok(None),
    }
}

fn pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Runs `repeats` seeds starting at `run.seed`, at most `threads` at a time.
pub fn execute(config: &ExperimentConfig, threads: Option<usize>) -> anyhow::Result<Vec<(u64, RunOutcome)>> {
    let seeds: Vec<u64> = (0..config.run.repeats as u64).map(|r| config.run.seed + r).collect();
    let configs = seeds
        .iter()
        .map(|&s| config.run_config(s))
        .collect::<anyhow::Result<Vec<_>>>()?;
    pool(threads)?.install(|| {
        configs
            .par_iter()
            .map(|rc| Ok((rc.seed, run(rc)?)))
            .collect()
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub max_rounds: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub converged: bool,
    pub rounds: usize,
    pub consensus_error: f64,
    pub total_violation: f64,
    pub objective: f64,
    pub objective_gap: Option<f64>,
    pub trace: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub all_converged: bool,
    pub mean_rounds: f64,
    pub min_rounds: usize,
    pub max_rounds: usize,
}

fn trace_path(base: &Path, seed: u64, repeats: usize) -> PathBuf {
    if repeats == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}-seed{seed}.{ext}"))
}

fn meta_path(trace: &Path) -> PathBuf {
    let mut name = trace.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    trace.with_file_name(name)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

/// Applies overrides so that the returned config is exactly what ran.
pub fn resolve(mut config: ExperimentConfig, overrides: &RunOverrides) -> ExperimentConfig {
    if let Some(s) = overrides.seed {
        config.run.seed = s;
    }
    if let Some(m) = overrides.max_rounds {
        config.run.max_rounds = m;
    }
    if let Some(dir) = &overrides.out {
        let name = |p: &Path, default: &str| p.file_name().map(PathBuf::from).unwrap_or_else(|| default.into());
        config.output.trace_path = dir.join(name(&config.output.trace_path, "trace.csv"));
        config.output.summary_path = dir.join(name(&config.output.summary_path, "summary.json"));
    }
    config
}

/// Executes a resolved config, writing traces, sidecars and the summary.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
    log: &mut dyn Write,
) -> anyhow::Result<RunSummary> {
    let hash = config.content_hash();
    let outcomes = execute(config, threads)?;
    let mut runs = Vec::with_capacity(outcomes.len());
    for (seed, out) in &outcomes {
        let path = trace_path(&config.output.trace_path, *seed, config.run.repeats);
        let mut w = create(&path)?;
        out.trace.write_csv(&mut w)?;
        w.flush()?;

        let rc = config.run_config(*seed)?;
        let meta = json!({
            "config": config,
            "config_hash": hash,
            "seed": seed,
            "problem": rc.problem.name,
            "problem_hash": rc.problem.content_hash(),
            "problem_metadata": rc.problem.metadata,
            "total_violation": "sum over agents i of g+(x_i, w) for every w in agent i's own constraint set",
            "termination": out.termination,
            "regime": out.regime,
        });
        let mut m = create(&meta_path(&path))?;
        serde_json::to_writer_pretty(&mut m, &meta)?;
        m.flush()?;

        let last = out.trace.last().expect("a run records its last round");
        runs.push(RunRecord {
            seed: *seed,
            converged: out.termination.converged,
            rounds: out.termination.round,
            consensus_error: last.consensus_error,
            total_violation: last.total_violation,
            objective: rc.problem.objective_value(&out.final_mean)?,
            objective_gap: last.objective_gap,
            trace: path,
        });
        writeln!(
            log,
            "seed {seed}: {} after {} rounds",
            if out.termination.converged { "converged" } else { "not converged" },
            out.termination.round
        )?;
    }
    let rounds: Vec<usize> = runs.iter().map(|r| r.rounds).collect();
    let summary = RunSummary {
        config_hash: hash,
        config: config.clone(),
        all_converged: runs.iter().all(|r| r.converged),
        mean_rounds: rounds.iter().sum::<usize>() as f64 / rounds.len() as f64,
        min_rounds: rounds.iter().copied().min().unwrap_or(0),
        max_rounds: rounds.iter().copied().max().unwrap_or(0),
        runs,
    };
    let mut s = create(&config.output.summary_path)?;
    serde_json::to_writer_pretty(&mut s, &summary)?;
    s.flush()?;
    writeln!(
        log,
        "rounds: mean {:.1}, min {}, max {}",
        summary.mean_rounds, summary.min_rounds, summary.max_rounds
    )?;
    Ok(summary)
}

pub fn cmd_run(path: &Path, overrides: &RunOverrides, log: &mut dyn Write) -> anyhow::Result<Exit> {
    let config = resolve(ExperimentConfig::load(path)?, overrides);
    let summary = run_experiment(&config, threads_from_env()?, log)?;
    Ok(if summary.all_converged {
        Exit::Success
    } else {
        Exit::NotConverged
    })
}

pub const TABLE1_SIZES: [usize; 2] = [4, 15];
pub const TABLE1_TOPOLOGIES: [TopologyKind; 3] = [TopologyKind::Clique, TopologyKind::Cycle, TopologyKind::Star];
pub const TABLE1_MAX_ROUNDS: usize = 500_000;

/// Gossip SDP with Metropolis weights and `α_k = 0.25/(k+1)`.
pub fn table1_config(kind: TopologyKind, n: usize, repeats: usize) -> ExperimentConfig {
    let topology = match kind {
        TopologyKind::Clique => TopologyChoice::Clique,
        TopologyKind::Cycle => TopologyChoice::Cycle,
        TopologyKind::Star => TopologyChoice::Star,
        TopologyKind::Line => TopologyChoice::Line,
    };
    let mut config = ExperimentConfig {
        problem: ProblemSelector::Named("gossip".into()),
        topology: TopologyConfig {
            kind: topology,
            n,
            schedule: None,
        },
        weights: WeightsConfig {
            scheme: dap_core::weights::WeightScheme::Metropolis,
        },
        stepsize: dap_core::algorithm::StepSize::new(0.25, 1.0, 1.0).expect("valid schedule"),
        run: Default::default(),
        output: Default::default(),
    };
    config.run.repeats = repeats;
    config.run.max_rounds = TABLE1_MAX_ROUNDS;
    config.run.metric_stride = 100;
    config.output.trace_path = format!("table1-{kind}-n{n}.csv").into();
    config.output.summary_path = format!("table1-{kind}-n{n}.json").into();
    config
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub topology: TopologyKind,
    /// Rounds to convergence per seed; `None` if the run hit the round cap.
    pub rounds: Vec<Option<usize>>,
}

impl Cell {
    /// Mean rounds, counting capped runs at the cap.
    pub fn mean(&self) -> f64 {
        let total: usize = self.rounds.iter().map(|r| r.unwrap_or(TABLE1_MAX_ROUNDS)).sum();
        total as f64 / self.rounds.len() as f64
    }

    pub fn all_converged(&self) -> bool {
        self.rounds.iter().all(Option::is_some)
    }
}

/// All six cells, every (cell, seed) pair scheduled on one pool.
pub fn table1(repeats: usize, threads: Option<usize>) -> anyhow::Result<Vec<Cell>> {
    let mut jobs = Vec::new();
    for &n in &TABLE1_SIZES {
        for &kind in &TABLE1_TOPOLOGIES {
            let config = table1_config(kind, n, repeats);
            for r in 0..repeats as u64 {
                jobs.push((n, kind, config.run_config(config.run.seed + r)?));
            }
        }
    }
    let results: Vec<(usize, TopologyKind, Option<usize>)> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(n, kind, rc)| {
                let out = run(rc)?;
                Ok((*n, *kind, out.termination.converged.then_some(out.termination.round)))
            })
            .collect::<anyhow::Result<_>>()
    })?;
    Ok(TABLE1_SIZES
        .iter()
        .flat_map(|&n| {
            let results = &results;
            TABLE1_TOPOLOGIES.iter().map(move |&kind| Cell {
                n,
                topology: kind,
                rounds: results
                    .iter()
                    .filter(|r| r.0 == n && r.1 == kind)
                    .map(|r| r.2)
                    .collect(),
            })
        })
        .collect())
}

pub fn render_table1(cells: &[Cell]) -> String {
    let mut s = format!("{:<8}", "");
    for kind in TABLE1_TOPOLOGIES {
        s += &format!("{:>12}", kind.to_string());
    }
    s.push('\n');
    for n in TABLE1_SIZES {
        s += &format!("{:<8}", format!("N={n}"));
        for kind in TABLE1_TOPOLOGIES {
            let cell = cells.iter().find(|c| c.n == n && c.topology == kind);
            let text = match cell {
                Some(c) if c.all_converged() => format!("{:.0}", c.mean()),
                Some(c) => format!(">{:.0}", c.mean()),
                None => "-".into(),
            };
            s += &format!("{text:>12}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_table1(repeats: usize, out: Option<&Path>, log: &mut dyn Write) -> anyhow::Result<Exit> {
    if repeats == 0 {
        anyhow::bail!("--repeats must be at least 1");
    }
    let cells = table1(repeats, threads_from_env()?)?;
    let table = render_table1(&cells);
    write!(log, "{table}")?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = create(&dir.join("table1.csv"))?;
        writeln!(w, "n,topology,mean_rounds,min_rounds,max_rounds,converged_runs,runs")?;
        for c in &cells {
            let done: Vec<usize> = c.rounds.iter().flatten().copied().collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.n,
                c.topology,
                c.mean(),
                done.iter().min().map(|v| v.to_string()).unwrap_or_default(),
                done.iter().max().map(|v| v.to_string()).unwrap_or_default(),
                done.len(),
                c.rounds.len()
            )?;
        }
        w.flush()?;
        let configs: Vec<_> = TABLE1_SIZES
            .iter()
            .flat_map(|&n| TABLE1_TOPOLOGIES.iter().map(move |&k| table1_config(k, n, repeats)))
            .map(|c| json!({"config_hash": c.content_hash(), "config": c}))
            .collect();
        let mut m = create(&dir.join("table1.meta.json"))?;
        serde_json::to_writer_pretty(&mut m, &json!({"cells": cells, "configs": configs}))?;
        m.flush()?;
    }
    Ok(if cells.iter().all(Cell::all_converged) {
        Exit::Success
    } else {
        Exit::NotConverged
    })
}

fn clause_line(log: &mut dyn Write, label: &str, checks: &[(usize, ClauseCheck)]) -> anyhow::Result<bool> {
    let failing = checks.iter().find(|(_, c)| !c.pass);
    match failing {
        None if !checks.is_empty() => writeln!(log, "PASS  {label}")?,
        None => writeln!(log, "FAIL  {label}: weights could not be built")?,
        Some((round, c)) => {
            let detail = c
                .worst
                .map(|(i, j, v)| format!(" (round {round}, worst at ({i}, {j}): {v})"))
                .unwrap_or_default();
            writeln!(log, "FAIL  {label}{detail}")?;
        }
    }
    Ok(failing.is_none() && !checks.is_empty())
}

/// Prints one line per checked hypothesis. Returns the report and whether the
/// regime selected by the weight scheme holds.
pub fn validate_config(config: &ExperimentConfig, log: &mut dyn Write) -> anyhow::Result<(RegimeReport, bool)> {
    let rc = config.run_config(config.run.seed)?;
    let report = regime_check(&rc)?;
    let a = &report.assumption1;
    let pick = |f: fn(&dap_core::weights::Assumption1Report) -> ClauseCheck| {
        a.iter().map(|r| (r.round, f(r))).collect::<Vec<_>>()
    };
    writeln!(log, "weights: {}", config.weights.scheme)?;
    clause_line(log, "weights positive only on in-neighbors", &pick(|r| r.graph_respected))?;
    clause_line(log, "nonzero weights bounded below by nu", &pick(|r| r.nu_bound))?;
    clause_line(log, "rows sum to 1", &pick(|r| r.row_stochastic))?;
    clause_line(log, "columns sum to 1", &pick(|r| r.column_stochastic))?;
    match report.connectivity_window {
        Some(q) => writeln!(log, "PASS  Q-strongly connected (Q = {q})")?,
        None => writeln!(
            log,
            "FAIL  Q-strongly connected: no window up to {} works",
            rc.max_connectivity_window
        )?,
    }
    for (label, h) in [
        ("doubly stochastic regime", &report.doubly_stochastic_regime),
        ("equal-neighbor regime", &report.row_stochastic_regime),
    ] {
        writeln!(log, "{}  {label}", if h.pass { "PASS" } else { "FAIL" })?;
        for f in &h.failures {
            writeln!(log, "        {f}")?;
        }
    }
    for w in &report.warnings {
        writeln!(log, "warning: {w}")?;
    }
    let ok = report.selected().pass;
    Ok((report, ok))
}

pub fn cmd_validate(path: &Path, log: &mut dyn Write) -> anyhow::Result<Exit> {
    let config = ExperimentConfig::load(path)?;
    let (_, ok) = validate_config(&config, log)?;
    Ok(if ok { Exit::Success } else { Exit::NotConverged })
}
