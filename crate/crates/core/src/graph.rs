//! Time-varying directed communication graphs.
//!
//! An edge `(j, i)` means agent `j` can send to agent `i`. Every per-round
//! graph implicitly contains the self-loop `(i, i)` for every node, so
//! neighborhoods are never empty.

use std::borrow::Cow;
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Directed edge `(from, to)`.
pub type Edge = (usize, usize);

/// One round's communication graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DigraphData", into = "DigraphData")]
pub struct Digraph {
    node_count: usize,
    /// Non-self edges, sorted.
    edges: Vec<Edge>,
    in_nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DigraphData {
    node_count: usize,
    edges: Vec<Edge>,
}

impl TryFrom<DigraphData> for Digraph {
    type Error = Error;
    fn try_from(d: DigraphData) -> Result<Self> {
        Digraph::new(d.node_count, d.edges)
    }
}

impl From<Digraph> for DigraphData {
    fn from(g: Digraph) -> Self {
        DigraphData {
            node_count: g.node_count,
            edges: g.edges,
        }
    }
}

impl Digraph {
    /// Builds a graph from directed edges. Explicit self-loops are accepted
    /// and ignored since every node has one anyway.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidParameter("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            for node in [from, to] {
                if node >= node_count {
                    return Err(Error::NodeOutOfRange { node, node_count });
                }
            }
            if from == to {
                continue;
            }
            if !set.insert((from, to)) {
                return Err(Error::DuplicateEdge { from, to });
            }
        }
        let edges: Vec<Edge> = set.into_iter().collect();
        let mut in_nbrs: Vec<Vec<usize>> = (0..node_count).map(|i| vec![i]).collect();
        let mut out_nbrs = in_nbrs.clone();
        for &(from, to) in &edges {
            in_nbrs[to].push(from);
            out_nbrs[from].push(to);
        }
        for list in in_nbrs.iter_mut().chain(out_nbrs.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges,
            in_nbrs,
            out_nbrs,
        })
    }

    /// Undirected graph: every pair is inserted in both directions.
    pub fn undirected(node_count: usize, pairs: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            edges.insert((a, b));
            edges.insert((b, a));
        }
        Self::new(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Non-self edges in sorted order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.node_count {
            Err(Error::NodeOutOfRange {
                node,
                node_count: self.node_count,
            })
        } else {
            Ok(())
        }
    }

    /// `{j | (j, i) ∈ E} ∪ {i}`, sorted.
    pub fn in_neighbors(&self, i: usize) -> Result<&[usize]> {
        self.check_node(i)?;
        Ok(&self.in_nbrs[i])
    }

    /// `{j | (i, j) ∈ E} ∪ {i}`, sorted.
    pub fn out_neighbors(&self, i: usize) -> Result<&[usize]> {
        self.check_node(i)?;
        Ok(&self.out_nbrs[i])
    }

    /// In-degree counting the self-loop, so always at least 1.
    pub fn in_degree(&self, i: usize) -> Result<usize> {
        Ok(self.in_neighbors(i)?.len())
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from == to || self.edges.binary_search(&(from, to)).is_ok()
    }

    /// First edge whose reverse is missing, if any.
    pub fn asymmetric_edge(&self) -> Option<Edge> {
        self.edges
            .iter()
            .copied()
            .find(|&(a, b)| !self.has_edge(b, a))
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetric_edge().is_none()
    }

    pub fn is_strongly_connected(&self) -> bool {
        strongly_connected(self.node_count, &self.edges)
    }
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

/// One forward and one reverse search from node 0.
fn strongly_connected(node_count: usize, edges: &[Edge]) -> bool {
    let mut fwd = vec![Vec::new(); node_count];
    let mut rev = vec![Vec::new(); node_count];
    for &(a, b) in edges {
        fwd[a].push(b);
        rev[b].push(a);
    }
    reaches_all(&fwd) && reaches_all(&rev)
}

/// A sequence of graphs `G_k` indexed by round.
pub trait GraphSequence: Send + Sync {
    fn node_count(&self) -> usize;

    fn graph_at(&self, round: usize) -> Cow<'_, Digraph>;

    /// `Some(p)` when `G_{k+p} = G_k` for all `k`.
    fn period(&self) -> Option<usize> {
        None
    }

    fn in_neighbors(&self, round: usize, i: usize) -> Result<Vec<usize>> {
        self.graph_at(round).in_neighbors(i).map(<[usize]>::to_vec)
    }

    fn out_neighbors(&self, round: usize, i: usize) -> Result<Vec<usize>> {
        self.graph_at(round).out_neighbors(i).map(<[usize]>::to_vec)
    }

    fn in_degree(&self, round: usize, i: usize) -> Result<usize> {
        self.graph_at(round).in_degree(i)
    }
}

/// Static or periodic schedule of graphs; this is the serializable form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SequenceData", into = "SequenceData")]
pub struct DigraphSequence {
    node_count: usize,
    schedule: Vec<Digraph>,
}

#[derive(Serialize, Deserialize)]
struct SequenceData {
    node_count: usize,
    schedule: Vec<Vec<Edge>>,
}

impl TryFrom<SequenceData> for DigraphSequence {
    type Error = Error;
    fn try_from(d: SequenceData) -> Result<Self> {
        DigraphSequence::periodic(d.node_count, d.schedule)
    }
}

impl From<DigraphSequence> for SequenceData {
    fn from(s: DigraphSequence) -> Self {
        SequenceData {
            node_count: s.node_count,
            schedule: s.schedule.into_iter().map(|g| g.edges).collect(),
        }
    }
}

impl DigraphSequence {
    pub fn fixed(graph: Digraph) -> Self {
        Self {
            node_count: graph.node_count(),
            schedule: vec![graph],
        }
    }

    /// Round `k` uses `schedule[k % schedule.len()]`.
    pub fn periodic(node_count: usize, schedule: Vec<Vec<Edge>>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidParameter("empty graph schedule".into()));
        }
        let schedule = schedule
            .into_iter()
            .map(|edges| Digraph::new(node_count, edges))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            node_count,
            schedule,
        })
    }

    pub fn is_static(&self) -> bool {
        self.schedule.len() == 1
    }

    pub fn schedule(&self) -> &[Digraph] {
        &self.schedule
    }
}

impl GraphSequence for DigraphSequence {
    fn node_count(&self) -> usize {
        self.node_count
    }

    fn graph_at(&self, round: usize) -> Cow<'_, Digraph> {
        Cow::Borrowed(&self.schedule[round % self.schedule.len()])
    }

    fn period(&self) -> Option<usize> {
        Some(self.schedule.len())
    }
}

/// Arbitrary per-round graphs produced by a callback.
pub struct FnSequence<F> {
    node_count: usize,
    generator: F,
}

impl<F: Fn(usize) -> Digraph + Send + Sync> FnSequence<F> {
    pub fn new(node_count: usize, generator: F) -> Self {
        Self {
            node_count,
            generator,
        }
    }
}

impl<F: Fn(usize) -> Digraph + Send + Sync> GraphSequence for FnSequence<F> {
    fn node_count(&self) -> usize {
        self.node_count
    }

    fn graph_at(&self, round: usize) -> Cow<'_, Digraph> {
        let g = (self.generator)(round);
        assert_eq!(g.node_count(), self.node_count, "generator changed node count");
        Cow::Owned(g)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub q: usize,
    pub horizon: usize,
    pub pass: bool,
    /// Start round of the first window whose union graph is not strongly
    /// connected.
    pub first_failing_window: Option<usize>,
}

/// Checks that every window `[k, k+Q-1]` inside `[0, horizon)` has a
/// strongly connected union graph.
pub fn check_q_strong_connectivity(
    seq: &dyn GraphSequence,
    q: usize,
    horizon: usize,
) -> Result<ConnectivityReport> {
    if q == 0 || horizon < q {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= Q <= horizon, got Q={q}, horizon={horizon}"
        )));
    }
    let n = seq.node_count();
    let mut first_failing_window = None;
    for start in 0..=horizon - q {
        let mut union = BTreeSet::new();
        for k in start..start + q {
            union.extend(seq.graph_at(k).edges().iter().copied());
        }
        let union: Vec<Edge> = union.into_iter().collect();
        if !strongly_connected(n, &union) {
            first_failing_window = Some(start);
            break;
        }
    }
    Ok(ConnectivityReport {
        q,
        horizon,
        pass: first_failing_window.is_none(),
        first_failing_window,
    })
}

/// Smallest `Q <= max_q` for which the sequence is Q-strongly connected over
/// `horizon` rounds. For periodic sequences the horizon is widened so every
/// phase of the period is covered.
pub fn smallest_connectivity_window(
    seq: &dyn GraphSequence,
    max_q: usize,
    horizon: usize,
) -> Option<usize> {
    (1..=max_q).find(|&q| {
        let h = match seq.period() {
            Some(p) => q + p - 1,
            None => horizon.max(q),
        };
        check_q_strong_connectivity(seq, q, h).is_ok_and(|r| r.pass)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Clique,
    Cycle,
    Star,
    Line,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [Self::Clique, Self::Cycle, Self::Star, Self::Line];
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Clique => "clique",
            Self::Cycle => "cycle",
            Self::Star => "star",
            Self::Line => "line",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clique" => Ok(Self::Clique),
            "cycle" => Ok(Self::Cycle),
            "star" => Ok(Self::Star),
            "line" => Ok(Self::Line),
            other => Err(Error::InvalidParameter(format!("unknown topology {other:?}"))),
        }
    }
}

/// Static undirected topology. The star is centered at node 0.
pub fn builtin_topology(kind: TopologyKind, node_count: usize) -> Result<DigraphSequence> {
    let n = node_count;
    let pairs: Vec<Edge> = match kind {
        TopologyKind::Clique => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
        TopologyKind::Cycle if n > 2 => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        TopologyKind::Cycle | TopologyKind::Line => (1..n).map(|i| (i - 1, i)).collect(),
        TopologyKind::Star => (1..n).map(|i| (0, i)).collect(),
    };
    Ok(DigraphSequence::fixed(Digraph::undirected(n, pairs)?))
}
