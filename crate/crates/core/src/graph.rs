//! Causal graphs: random DAG sampling, the canonical named structures, and
//! treatment/outcome designation.
//!
//! Variable indices are the topological order: every edge `u → v` has `u < v`,
//! so acyclicity holds by construction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Role a variable plays in a named structure. Random DAGs only use
/// `Treatment`, `Outcome` and `Covariate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Treatment,
    Outcome,
    Covariate,
    Confounder,
    Mediator,
    Instrument,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Treatment => "treatment",
            NodeRole::Outcome => "outcome",
            NodeRole::Covariate => "covariate",
            NodeRole::Confounder => "confounder",
            NodeRole::Mediator => "mediator",
            NodeRole::Instrument => "instrument",
        }
    }
}

/// Directed acyclic graph over `n` variables with designated treatment and
/// outcome and a mask of hidden (simulated but unobserved) variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dag {
    n: usize,
    /// Row-major `n × n`; `adj[u * n + v]` means `u → v`. Only `u < v` is ever set.
    adj: Vec<bool>,
    treatment: usize,
    outcome: usize,
    hidden: Vec<bool>,
    roles: Vec<NodeRole>,
}

impl Dag {
    /// Build a DAG from an edge list, checking every structural invariant.
    pub fn new(
        n: usize,
        edges: &[(usize, usize)],
        treatment: usize,
        outcome: usize,
        hidden: Vec<bool>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract(format!("a DAG needs at least 2 nodes, got {n}")));
        }
        if hidden.len() != n {
            return Err(Error::contract("hidden mask length differs from node count"));
        }
        let mut adj = vec![false; n * n];
        for &(u, v) in edges {
            if u >= v || v >= n {
                return Err(Error::contract(format!(
                    "edge {u}→{v} is not forward in the topological order"
                )));
            }
            adj[u * n + v] = true;
        }
        if treatment >= outcome || outcome >= n {
            return Err(Error::contract("treatment must precede outcome"));
        }
        if hidden[treatment] || hidden[outcome] {
            return Err(Error::contract("treatment and outcome cannot be hidden"));
        }
        let mut roles = vec![NodeRole::Covariate; n];
        roles[treatment] = NodeRole::Treatment;
        roles[outcome] = NodeRole::Outcome;
        Ok(Dag {
            n,
            adj,
            treatment,
            outcome,
            hidden,
            roles,
        })
    }

    fn with_roles(mut self, roles: &[(usize, NodeRole)]) -> Self {
        for &(v, r) in roles {
            self.roles[v] = r;
        }
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn treatment(&self) -> usize {
        self.treatment
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn hidden(&self) -> &[bool] {
        &self.hidden
    }

    pub fn is_hidden(&self, v: usize) -> bool {
        self.hidden[v]
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.adj[u * self.n + v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|u| (u + 1..self.n).map(move |v| (u, v)))
            .filter(|&(u, v)| self.adj[u * self.n + v])
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    /// Fraction of the `n(n-1)/2` possible forward edges that are present.
    pub fn edge_density(&self) -> f64 {
        let pairs = self.n * (self.n - 1) / 2;
        self.edge_count() as f64 / pairs as f64
    }

    /// Parents of `v` in increasing index order.
    pub fn parents(&self, v: usize) -> Vec<usize> {
        (0..v).filter(|&u| self.adj[u * self.n + v]).collect()
    }

    /// All variables reachable from `v` by a directed path, excluding `v`.
    pub fn descendants(&self, v: usize) -> Vec<bool> {
        let mut reach = vec![false; self.n];
        // Forward order suffices: a descendant's parents all have smaller indices.
        for w in v + 1..self.n {
            reach[w] = (v..w).any(|u| (u == v || reach[u]) && self.adj[u * self.n + w]);
        }
        reach
    }

    /// Indices of observed (non-hidden) variables, in order.
    pub fn observed(&self) -> Vec<usize> {
        (0..self.n).filter(|&v| !self.hidden[v]).collect()
    }

    /// Independent acyclicity check by depth-first search over the stored
    /// adjacency; does not rely on the forward-edge representation.
    pub fn is_acyclic(&self) -> bool {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        fn visit(dag: &Dag, u: usize, marks: &mut [Mark]) -> bool {
            marks[u] = Mark::Grey;
            for v in 0..dag.n {
                if dag.adj[u * dag.n + v] {
                    let mark = marks[v];
                    match mark {
                        Mark::Grey => return false,
                        Mark::White if !visit(dag, v, marks) => return false,
                        _ => {}
                    }
                }
            }
            marks[u] = Mark::Black;
            true
        }
        let mut marks = vec![Mark::White; self.n];
        (0..self.n).all(|u| marks[u] != Mark::White || visit(self, u, &mut marks))
    }
}

/// Random-DAG sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub n_max: usize,
    pub edge_prob_alpha: f64,
    pub edge_prob_beta: f64,
    pub hidden_prob: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            n_max: 16,
            edge_prob_alpha: 2.0,
            edge_prob_beta: 5.0,
            hidden_prob: 0.0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.n_max < 3 {
            return Err(Error::config(format!("{prefix}.n_max"), "must be at least 3"));
        }
        if !(self.edge_prob_alpha > 0.0) {
            return Err(Error::config(format!("{prefix}.edge_prob_alpha"), "must be positive"));
        }
        if !(self.edge_prob_beta > 0.0) {
            return Err(Error::config(format!("{prefix}.edge_prob_beta"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.hidden_prob) {
            return Err(Error::config(format!("{prefix}.hidden_prob"), "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Uniformly pick an ordered pair `(a, y)` with `a < y` from `n` nodes.
pub fn designate_roles(n: usize, rng: &mut RngStream) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::config("graph", format!("role designation needs 2 nodes, got {n}")));
    }
    let pairs = n * (n - 1) / 2;
    let mut k = rng.gen_range(0..pairs);
    // Enumerate pairs row by row: (0,1),(0,2),...,(1,2),...
    for a in 0..n - 1 {
        let row = n - 1 - a;
        if k < row {
            return Ok((a, a + 1 + k));
        }
        k -= row;
    }
    unreachable!("pair index within range")
}

/// Draw `N ~ Uniform{3..=n_max}`, one edge probability `p ~ Beta(α, β)`, then
/// every forward pair independently with probability `p`.
pub fn sample_random_dag(cfg: &GraphConfig, rng: &mut RngStream) -> Result<Dag> {
    sample_random_dag_with_p(cfg, rng).map(|(dag, _)| dag)
}

/// As [`sample_random_dag`], also returning the drawn edge probability.
pub fn sample_random_dag_with_p(cfg: &GraphConfig, rng: &mut RngStream) -> Result<(Dag, f64)> {
    cfg.validate("graph")?;
    let n = rng.gen_range(3..=cfg.n_max);
    let beta = Beta::new(cfg.edge_prob_alpha, cfg.edge_prob_beta)
        .map_err(|e| Error::config("graph.edge_prob_alpha", e.to_string()))?;
    let p = beta.sample(rng);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let (a, y) = designate_roles(n, rng)?;
    let hidden = (0..n)
        .map(|v| v != a && v != y && cfg.hidden_prob > 0.0 && rng.gen::<f64>() < cfg.hidden_prob)
        .collect();
    Ok((Dag::new(n, &edges, a, y, hidden)?, p))
}

/// The canonical named causal structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureKind {
    BackDoor,
    FrontDoor,
    InstrumentalVariable,
    ObservedConfounder,
    Mediator,
    ConfounderMediator,
    Bivariate,
    UnobservedConfounder,
}

impl StructureKind {
    pub const ALL: [StructureKind; 8] = [
        StructureKind::BackDoor,
        StructureKind::FrontDoor,
        StructureKind::InstrumentalVariable,
        StructureKind::ObservedConfounder,
        StructureKind::Mediator,
        StructureKind::ConfounderMediator,
        StructureKind::Bivariate,
        StructureKind::UnobservedConfounder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StructureKind::BackDoor => "back-door",
            StructureKind::FrontDoor => "front-door",
            StructureKind::InstrumentalVariable => "instrumental-variable",
            StructureKind::ObservedConfounder => "observed-confounder",
            StructureKind::Mediator => "mediator",
            StructureKind::ConfounderMediator => "confounder-mediator",
            StructureKind::Bivariate => "bivariate",
            StructureKind::UnobservedConfounder => "unobserved-confounder",
        }
    }

    /// The fixed template graph for this structure.
    pub fn template(self) -> Dag {
        use NodeRole::*;
        let build = |n, edges: &[(usize, usize)], a, y, hidden: &[usize], roles: &[(usize, NodeRole)]| {
            let mut mask = vec![false; n];
            for &h in hidden {
                mask[h] = true;
            }
            Dag::new(n, edges, a, y, mask)
                .expect("templates satisfy the DAG invariants")
                .with_roles(roles)
        };
        match self {
            // A ← C1 → C2 → Y, A → Y: the back-door path runs through two covariates.
            StructureKind::BackDoor => build(
                4,
                &[(0, 1), (0, 2), (2, 3), (1, 3)],
                1,
                3,
                &[],
                &[(0, Confounder), (2, Confounder)],
            ),
            // U → A, U → Y, A → M → Y.
            StructureKind::FrontDoor => build(
                4,
                &[(0, 1), (0, 3), (1, 2), (2, 3)],
                1,
                3,
                &[],
                &[(0, Confounder), (2, Mediator)],
            ),
            // Z → A → Y with U → A, U → Y.
            StructureKind::InstrumentalVariable => build(
                4,
                &[(0, 2), (1, 2), (1, 3), (2, 3)],
                2,
                3,
                &[],
                &[(0, Instrument), (1, Confounder)],
            ),
            StructureKind::ObservedConfounder => build(
                3,
                &[(0, 1), (0, 2), (1, 2)],
                1,
                2,
                &[],
                &[(0, Confounder)],
            ),
            StructureKind::Mediator => build(3, &[(0, 1), (1, 2)], 0, 2, &[], &[(1, Mediator)]),
            StructureKind::ConfounderMediator => build(
                4,
                &[(0, 1), (0, 3), (1, 2), (2, 3), (1, 3)],
                1,
                3,
                &[],
                &[(0, Confounder), (2, Mediator)],
            ),
            StructureKind::Bivariate => build(2, &[(0, 1)], 0, 1, &[], &[]),
            StructureKind::UnobservedConfounder => build(
                3,
                &[(0, 1), (0, 2), (1, 2)],
                1,
                2,
                &[0],
                &[(0, Confounder)],
            ),
        }
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StructureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("graph.structure", format!("unknown structure kind `{s}`")))
    }
}

/// Template DAG for `kind`.
pub fn sample_named_structure(kind: StructureKind) -> Dag {
    kind.template()
}

/// Template DAG for a uniformly chosen kind.
pub fn sample_any_named_structure(rng: &mut RngStream) -> Dag {
    let kind = StructureKind::ALL[rng.gen_range(0..StructureKind::ALL.len())];
    kind.template()
}
