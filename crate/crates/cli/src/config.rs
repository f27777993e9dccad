//! Experiment configuration documents.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use dap_core::algorithm::StepSize;
use dap_core::graph::{builtin_topology, DigraphSequence, Edge, GraphSequence, TopologyKind};
use dap_core::problems::{builtin_problem, epigraph_transform, GossipProblem, ProblemSpec};
use dap_core::simulator::{RunConfig, Termination};
use dap_core::weights::WeightScheme;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSelector,
    pub topology: TopologyConfig,
    pub weights: WeightsConfig,
    #[serde(default)]
    pub stepsize: StepSize,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// `"gossip"`, `"builtin:<name>"`, or a table naming one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSelector {
    Named(String),
    Detailed(ProblemSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default)]
    pub name: Option<String>,
    /// Path to a serialized problem.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub inline: Option<Box<ProblemSpec>>,
    #[serde(default)]
    pub epigraph: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyChoice {
    Clique,
    Cycle,
    Star,
    Line,
    /// Periodic sequence given by `schedule`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyChoice,
    #[serde(alias = "N")]
    pub n: usize,
    /// Directed edge lists, one per round of the period.
    #[serde(default)]
    pub schedule: Option<Vec<Vec<Edge>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub scheme: WeightScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub max_rounds: usize,
    pub repeats: usize,
    pub termination: Termination,
    pub metric_stride: usize,
    pub record_wallclock: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            max_rounds: 100_000,
            repeats: 1,
            termination: Termination::default(),
            metric_stride: 10,
            record_wallclock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            trace_path: "trace.csv".into(),
            summary_path: "summary.json".into(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a document; errors carry the line and column of the problem.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    /// Reads a config and resolves relative problem files against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let ProblemSelector::Detailed(ProblemSection { file: Some(f), .. }) = &mut config.problem {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        if let ProblemSelector::Detailed(ProblemSection { file: Some(f), .. }) = &config.problem {
            if !f.exists() {
                bail!("problem file {} does not exist", f.display());
            }
        }
        Ok(config)
    }

    fn check(&self) -> anyhow::Result<()> {
        if self.run.repeats == 0 {
            bail!("run.repeats must be at least 1");
        }
        if self.topology.n == 0 {
            bail!("topology.n must be at least 1");
        }
        match (&self.topology.kind, &self.topology.schedule) {
            (TopologyChoice::Custom, None) => bail!("topology.kind = custom needs a schedule"),
            (TopologyChoice::Custom, Some(s)) if s.is_empty() => bail!("topology.schedule is empty"),
            (TopologyChoice::Custom, Some(_)) => {}
            (_, Some(_)) => bail!("topology.schedule is only allowed with kind = custom"),
            (_, None) => {}
        }
        if let ProblemSelector::Detailed(section) = &self.problem {
            let sources = [section.name.is_some(), section.file.is_some(), section.inline.is_some()];
            if sources.iter().filter(|&&s| s).count() != 1 {
                bail!("problem needs exactly one of name, file, inline");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Git blob hash of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()));
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn build_topology(&self) -> anyhow::Result<DigraphSequence> {
        let n = self.topology.n;
        let kind = match self.topology.kind {
            TopologyChoice::Clique => TopologyKind::Clique,
            TopologyChoice::Cycle => TopologyKind::Cycle,
            TopologyChoice::Star => TopologyKind::Star,
            TopologyChoice::Line => TopologyKind::Line,
            TopologyChoice::Custom => {
                let schedule = self.topology.schedule.clone().unwrap_or_default();
                return Ok(DigraphSequence::periodic(n, schedule)?);
            }
        };
        Ok(builtin_topology(kind, n)?)
    }

    pub fn build_problem(&self, topology: &DigraphSequence) -> anyhow::Result<ProblemSpec> {
        let n = self.topology.n;
        let (base, epigraph) = match &self.problem {
            ProblemSelector::Named(name) => (named_problem(name, topology)?, false),
            ProblemSelector::Detailed(s) => {
                let base = if let Some(name) = &s.name {
                    named_problem(name, topology)?
                } else if let Some(path) = &s.file {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("cannot read problem {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("invalid problem {}", path.display()))?
                } else {
                    s.inline.as_deref().cloned().expect("checked in parse")
                };
                (base, s.epigraph)
            }
        };
        let spec = if epigraph { epigraph_transform(&base)? } else { base };
        spec.validate()?;
        if spec.agent_count() != n {
            bail!("problem has {} agents but topology.n = {n}", spec.agent_count());
        }
        Ok(spec)
    }

    /// Run configuration for one seed.
    pub fn run_config(&self, seed: u64) -> anyhow::Result<RunConfig> {
        let topology = self.build_topology()?;
        let problem = self.build_problem(&topology)?;
        let mut rc = RunConfig::new(Arc::new(problem), Arc::new(topology), self.weights.scheme);
        rc.stepsize = self.stepsize;
        rc.seed = seed;
        rc.max_rounds = self.run.max_rounds;
        rc.termination = self.run.termination;
        rc.metric_stride = self.run.metric_stride;
        rc.record_wallclock = self.run.record_wallclock;
        Ok(rc)
    }
}

fn named_problem(name: &str, topology: &DigraphSequence) -> anyhow::Result<ProblemSpec> {
    if name == "gossip" {
        return Ok(GossipProblem::from_sequence(topology)?.into_spec());
    }
    match name.strip_prefix("builtin:") {
        Some(b) => Ok(builtin_problem(b, topology.node_count())?),
        None => bail!("unknown problem {name:?}; expected \"gossip\" or \"builtin:<name>\""),
    }
}
