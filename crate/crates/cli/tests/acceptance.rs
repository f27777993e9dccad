//! Acceptance suite. Each test prints one `PASS`/`FAIL` line; run with
//! `--nocapture` to see them.

use std::sync::{Arc, OnceLock};

use dap_cli::commands::{run_experiment, table1, Cell};
use dap_cli::config::ExperimentConfig;
use dap_core::algorithm::feasibility_step;
use dap_core::constraints::{distance_oracle, psd_part, ConstraintOracle, LinearBlock, LmiConstraint, SimpleSet};
use dap_core::graph::{builtin_topology, TopologyKind};
use dap_core::linalg::{dist, norm};
use dap_core::oracle::{brute_force_gossip, centralized_solve};
use dap_core::problems::{builtin_problem, builtin_test_problems, epigraph_transform, gossip_sdp_problem, ProblemSpec};
use dap_core::simulator::{feasibility_audit, run, RunConfig, RunOutcome};
use dap_core::weights::{equal_neighbor_weights, metropolis_weights, validate_assumption1};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion}: {detail}");
}

const SEEDS: usize = 10;

fn table() -> &'static [Cell] {
    static CELLS: OnceLock<Vec<Cell>> = OnceLock::new();
    CELLS.get_or_init(|| table1(SEEDS, None).expect("table runs"))
}

fn cell(n: usize, kind: TopologyKind) -> &'static Cell {
    table().iter().find(|c| c.n == n && c.topology == kind).expect("cell present")
}

fn static_config(problem: ProblemSpec, kind: TopologyKind, scheme: dap_core::weights::WeightScheme) -> RunConfig {
    let n = problem.agent_count();
    RunConfig::new(Arc::new(problem), Arc::new(builtin_topology(kind, n).unwrap()), scheme)
}

#[test]
fn criterion_1_table_bands() {
    let bands = [
        (TopologyKind::Clique, 434.0, 10_850.0),
        (TopologyKind::Cycle, 564.0, 14_095.0),
        (TopologyKind::Star, 1_438.0, 35_950.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, lo, hi) in bands {
        let c = cell(4, kind);
        let m = c.mean();
        pass &= c.all_converged() && (lo..=hi).contains(&m);
        parts.push(format!("{kind} {m:.0} in [{lo}, {hi}]"));
    }
    report(1, pass, &format!("N=4 mean rounds over {SEEDS} seeds: {}", parts.join(", ")));
}

#[test]
fn criterion_2_table_ordering() {
    let kinds = [TopologyKind::Clique, TopologyKind::Cycle, TopologyKind::Star];
    let small: Vec<f64> = kinds.iter().map(|&k| cell(4, k).mean()).collect();
    let large: Vec<f64> = kinds.iter().map(|&k| cell(15, k).mean()).collect();
    let ordered = small[0] <= small[1] && small[1] <= small[2];
    let growth = small.iter().zip(&large).all(|(s, l)| l >= s);
    report(
        2,
        ordered && growth,
        &format!(
            "N=4 clique {:.0} <= cycle {:.0} <= star {:.0}: {ordered}; N=15 ({:.0}, {:.0}, {:.0}) >= N=4: {growth}",
            small[0], small[1], small[2], large[0], large[1], large[2]
        ),
    );
}

#[test]
fn criterion_3_oracle_equivalence() {
    let mut pass = true;
    let mut parts = Vec::new();
    for problem in builtin_test_problems(4).unwrap() {
        let reference = centralized_solve(&problem, 5_000).unwrap();
        let name = problem.name.clone();
        let mut cfg = static_config(problem, TopologyKind::Cycle, dap_core::weights::WeightScheme::Metropolis);
        cfg.max_rounds = 100_000;
        cfg.termination.objective_gap_tol = Some(1e-3);
        let out = run(&cfg).unwrap();
        let gap = (cfg.problem.objective_value(&out.final_mean).unwrap() - reference.f).abs();
        let violation = feasibility_audit(&out.iterates(), &cfg.problem).unwrap().total_violation;
        pass &= out.termination.converged && gap <= 1e-3 && violation <= 1e-3;
        parts.push(format!("{name} gap {gap:.1e} violation {violation:.1e} after {} rounds", out.termination.round));
    }

    let g = builtin_topology(TopologyKind::Clique, 3).unwrap().schedule()[0].clone();
    let grid = brute_force_gossip(&g, 10_000).unwrap();
    let mut cfg = static_config(gossip_sdp_problem(&g).unwrap(), TopologyKind::Clique, dap_core::weights::WeightScheme::Metropolis);
    cfg.max_rounds = 100_000;
    let out = run(&cfg).unwrap();
    let diff = (out.final_mean[0] - grid.f).abs();
    pass &= out.termination.converged && diff <= 1e-2;
    parts.push(format!("triangle s {:.4} vs grid {:.4}", out.final_mean[0], grid.f));
    report(3, pass, &parts.join("; "));
}

fn random_set(rng: &mut ChaCha8Rng, dim: usize) -> SimpleSet {
    match rng.random_range(0..3) {
        0 => {
            let lower: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let upper = lower.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
            SimpleSet::Box { lower, upper }
        }
        1 => SimpleSet::Ball {
            center: (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
            radius: rng.random_range(0.1..3.0),
        },
        _ => SimpleSet::Simplex {
            dim,
            scale: rng.random_range(0.5..3.0),
        },
    }
}

#[test]
fn criterion_4_exact_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let dim = rng.random_range(1..6);
        let set = random_set(&mut rng, dim);
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect();
        let oracle = distance_oracle(set.clone()).unwrap();
        let step = feasibility_step(&v, &oracle, &SimpleSet::FullSpace { dim }).unwrap();
        worst = worst.max(dist(&step.x, &set.project(&v).unwrap()));
    }
    report(4, worst <= 1e-12, &format!("max distance to exact projection over 1000 instances {worst:.1e}"));
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale));
    (&m + m.transpose()) * 0.5
}

/// Largest gap between central differences and the subgradient.
fn fd_error(oracle: &dyn ConstraintOracle, x: &[f64]) -> f64 {
    const H: f64 = 1e-6;
    let d = oracle.subgradient(x).unwrap();
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += H;
            down[j] -= H;
            let fd = (oracle.violation(&up).unwrap() - oracle.violation(&down).unwrap()) / (2.0 * H);
            (fd - d[j]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_5_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut lmi_points, mut lin_points) = (0, 0);
    let (mut lmi_worst, mut lin_worst): (f64, f64) = (0.0, 0.0);
    while lmi_points < 500 {
        let n = rng.random_range(2..5);
        let dim = rng.random_range(1..4);
        let c = LmiConstraint::new((0..=dim).map(|_| random_symmetric(&mut rng, n, 2.0)).collect()).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        if c.violation(&x).unwrap() > 0.1 {
            lmi_worst = lmi_worst.max(fd_error(&c, &x));
            lmi_points += 1;
        }
    }
    while lin_points < 500 {
        let rows = rng.random_range(1..5);
        let dim = rng.random_range(1..5);
        let a: Vec<Vec<f64>> = (0..rows).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = LinearBlock::from_rows(&a, &b).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        if c.violation(&x).unwrap() > 0.1 {
            lin_worst = lin_worst.max(fd_error(&c, &x));
            lin_points += 1;
        }
    }
    report(
        5,
        lmi_worst <= 1e-5 && lin_worst <= 1e-5,
        &format!("max |fd - subgradient| lmi {lmi_worst:.1e}, linear block {lin_worst:.1e} over 500 points each"),
    );
}

#[test]
fn criterion_6_psd_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut beaten = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..7);
        let a = random_symmetric(&mut rng, n, 3.0);
        let plus = psd_part(&a).unwrap();
        let best = (&a - &plus).norm();
        for t in 0..100 {
            // Half the candidates are generic, half sit near the projection.
            let candidate = if t % 2 == 0 {
                let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
                &g * g.transpose()
            } else {
                let e = random_symmetric(&mut rng, n, 0.05);
                psd_part(&(&plus + e)).unwrap()
            };
            if (&a - candidate).norm() < best - 1e-12 {
                beaten += 1;
            }
        }
    }
    report(6, beaten == 0, &format!("{beaten} of 20000 random PSD candidates closer than psd_part"));
}

#[test]
fn criterion_7_weight_validation() {
    let mut pass = true;
    let mut checked = 0;
    for kind in TopologyKind::ALL {
        for n in 2..=8 {
            let g = builtin_topology(kind, n).unwrap().schedule()[0].clone();
            let w = metropolis_weights(&g, 0).unwrap();
            pass &= validate_assumption1(&w, &g).all_pass();
            checked += 1;
        }
    }
    let star = builtin_topology(TopologyKind::Star, 5).unwrap().schedule()[0].clone();
    let report_en = validate_assumption1(&equal_neighbor_weights(&star, 0), &star);
    let en_ok = report_en.row_clauses_pass() && !report_en.column_stochastic.pass;
    report(
        7,
        pass && en_ok,
        &format!(
            "metropolis passes all clauses on {checked} graphs: {pass}; equal-neighbor on star rows pass, columns fail: {en_ok}"
        ),
    );
}

#[test]
fn criterion_8_row_stochastic_regime() {
    let problem = epigraph_transform(&builtin_problem("lp", 5).unwrap()).unwrap();
    let cfg = static_config(problem, TopologyKind::Star, dap_core::weights::WeightScheme::EqualNeighbor);
    let out = run(&cfg).unwrap();
    let xs = out.iterates();
    let tol = 1e-4 * norm(&out.final_mean).max(1.0);
    let spread = xs.iter().map(|x| dist(x, &out.final_mean)).fold(0.0, f64::max);
    let violation = feasibility_audit(&xs, &cfg.problem).unwrap().total_violation;
    report(
        8,
        out.regime.row_stochastic_regime.pass && spread <= tol && violation <= 1e-3,
        &format!("star N=5 equal-neighbor: consensus {spread:.1e} (tol {tol:.1e}), violation {violation:.1e}"),
    );
}

fn traces(threads: usize) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::parse(
        r#"{
            "problem": "gossip",
            "topology": {"kind": "cycle", "n": 5},
            "weights": {"scheme": "metropolis"},
            "run": {"seed": 11, "max_rounds": 2000, "repeats": 4, "metric_stride": 1}
        }"#,
    )
    .unwrap();
    config.output.trace_path = dir.path().join("trace.csv");
    config.output.summary_path = dir.path().join("summary.json");
    let summary = run_experiment(&config, Some(threads), &mut std::io::sink()).unwrap();
    summary.runs.iter().map(|r| std::fs::read(&r.trace).unwrap()).collect()
}

#[test]
fn criterion_9_determinism() {
    let first = traces(1);
    let second = traces(1);
    let wide = traces(4);
    let distinct = first.windows(2).all(|w| w[0] != w[1]);
    report(
        9,
        first == second && first == wide && distinct,
        &format!(
            "{} traces identical across invocations: {}, across 1 and 4 threads: {}",
            first.len(),
            first == second,
            first == wide
        ),
    );
}

fn converged_runs() -> Vec<(String, RunOutcome)> {
    let mut out = Vec::new();
    for problem in builtin_test_problems(4).unwrap() {
        let name = problem.name.clone();
        let mut cfg = static_config(problem, TopologyKind::Cycle, dap_core::weights::WeightScheme::Metropolis);
        cfg.termination.objective_gap_tol = Some(1e-3);
        cfg.metric_stride = 1;
        out.push((name, run(&cfg).unwrap()));
    }
    for kind in [TopologyKind::Clique, TopologyKind::Cycle, TopologyKind::Star] {
        let g = builtin_topology(kind, 4).unwrap().schedule()[0].clone();
        let mut cfg = static_config(gossip_sdp_problem(&g).unwrap(), kind, dap_core::weights::WeightScheme::Metropolis);
        cfg.max_rounds = 50_000;
        out.push((format!("gossip {kind}"), run(&cfg).unwrap()));
    }
    let lifted = epigraph_transform(&builtin_problem("lp", 5).unwrap()).unwrap();
    let mut cfg = static_config(lifted, TopologyKind::Star, dap_core::weights::WeightScheme::EqualNeighbor);
    cfg.metric_stride = 1;
    out.push(("epigraph lp, equal-neighbor star".into(), run(&cfg).unwrap()));
    out
}

#[test]
fn criterion_10_perturbation_tail() {
    // Runs that stop within a few rounds leave no tail to inspect.
    const MIN_RECORDS: usize = 8;
    let runs = converged_runs();
    let (assessed, short): (Vec<_>, Vec<_>) = runs.iter().partition(|(_, o)| o.trace.records.len() >= MIN_RECORDS);
    let failing: Vec<&str> = assessed
        .iter()
        .filter(|(_, o)| !(o.termination.converged && o.trace.perturbation_tail_shrinks()))
        .map(|(name, _)| name.as_str())
        .collect();
    let short: Vec<String> = short
        .iter()
        .map(|(name, o)| format!("{name} ({} rounds)", o.termination.round))
        .collect();
    report(
        10,
        assessed.len() >= 4 && failing.is_empty(),
        &format!(
            "{} of {} converged runs show shrinking tail increments; failing: {failing:?}; too short to assess: {short:?}",
            assessed.len() - failing.len(),
            assessed.len()
        ),
    );
}
