//! Pipeline graphs: stages, edges and the per-edge tick lag.
//!
//! Node `0` is the raw observation buffer; nodes `1..=S` are compute stages
//! and node `S` is the action head. Every edge runs from a lower index to a
//! higher one. A lagged edge reads the buffer its source wrote on the previous
//! tick; a same-tick edge reads the value produced earlier in the current tick
//! and is only used by reference (instantaneous) actors and adversarial tests.
//!
//! # Text schema
//!
//! Topologies serialise to TOML:
//!
//! ```toml
//! variant = "proj_to_action"      # vanilla | proj_from_obs | proj_to_action
//!                                 # | proj_to_action_residual | all_skips | custom
//! depth = 3                       # layers K
//! exec_time = "1"                 # neuron execution time δ as "n" or "n/d"
//! obs_dim = 8
//! activation = "relu"             # relu | tanh | identity
//!
//! [[stages]]                      # one entry per pipeline stage
//! layers = 1
//! hidden_dim = 64
//! out_dim = 64
//!
//! [[edges]]
//! src = 0
//! dst = 1
//! kind = "feed"                   # feed | residual
//! same_tick = false
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    ProjFromObs,
    ProjToAction,
    ProjToActionResidual,
    AllSkips,
    /// Hand-built edge list.
    Custom,
}

impl Variant {
    pub const BUILT_IN: [Variant; 5] = [
        Variant::Vanilla,
        Variant::ProjFromObs,
        Variant::ProjToAction,
        Variant::ProjToActionResidual,
        Variant::AllSkips,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::ProjFromObs => "proj_from_obs",
            Variant::ProjToAction => "proj_to_action",
            Variant::ProjToActionResidual => "proj_to_action_residual",
            Variant::AllSkips => "all_skips",
            Variant::Custom => "custom",
        }
    }
}

impl FromStr for Variant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::BUILT_IN
            .into_iter()
            .chain([Variant::Custom])
            .find(|v| v.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown variant `{s}`")))
    }
}

/// Neuron execution time δ: environment steps elapsed while one layer computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ExecTime {
    num: u64,
    den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ExecTime {
    pub fn new(num: u64, den: u64) -> Result<Self, PipelineError> {
        if num == 0 || den == 0 {
            return Err(PipelineError::Config(format!(
                "execution time must be positive, got {num}/{den}"
            )));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn integer(steps: u64) -> Self {
        Self::new(steps, 1).expect("positive")
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// ⌈δ⌉
    pub fn ceil(&self) -> u64 {
        self.num.div_ceil(self.den)
    }

    pub fn is_sub_step(&self) -> bool {
        self.num < self.den
    }

    /// Layers fused into one pipeline slot: ⌈1/δ⌉ for δ < 1, else 1.
    pub fn layers_per_slot(&self) -> usize {
        if self.is_sub_step() {
            self.den.div_ceil(self.num) as usize
        } else {
            1
        }
    }

    /// Environment steps per tick of the pipeline.
    pub fn steps_per_tick(&self) -> u64 {
        if self.is_sub_step() {
            1
        } else {
            self.ceil()
        }
    }

    /// ⌊k / δ⌋ for integer `k`.
    pub fn floor_div(&self, k: u64) -> u64 {
        (k * self.den) / self.num
    }
}

impl fmt::Display for ExecTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for ExecTime {
    type Err = PipelineError;

    /// Accepts `"3"`, `"2/5"` or a decimal such as `"0.4"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PipelineError::Config(format!("invalid execution time `{s}`"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return ExecTime::new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10u64.pow(frac.len() as u32);
            let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
            let frac: u64 = frac.parse().map_err(|_| bad())?;
            return ExecTime::new(int * den + frac, den);
        }
        ExecTime::new(s.parse().map_err(|_| bad())?, 1)
    }
}

impl TryFrom<String> for ExecTime {
    type Error = PipelineError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ExecTime> for String {
    fn from(t: ExecTime) -> String {
        t.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Source buffer is concatenated into the stage input.
    Feed,
    /// Source buffer is added to the stage output after activation.
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    #[serde(default)]
    pub same_tick: bool,
}

impl Edge {
    pub fn feed(src: usize, dst: usize) -> Self {
        Self { src, dst, kind: EdgeKind::Feed, same_tick: false }
    }

    pub fn residual(src: usize, dst: usize) -> Self {
        Self { src, dst, kind: EdgeKind::Residual, same_tick: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// One pipeline slot: `layers` dense layers run back to back within a tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSpec {
    pub layers: usize,
    /// Width of the layers inside the stage (unused when `layers == 1`).
    pub hidden_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineTopology {
    pub variant: Variant,
    pub depth: usize,
    pub exec_time: ExecTime,
    pub obs_dim: usize,
    pub activation: Activation,
    pub stages: Vec<StageSpec>,
    pub edges: Vec<Edge>,
}

impl PipelineTopology {
    /// Builds a built-in variant with `depth` layers of width `hidden_dim`
    /// and a head of width `head_dim`, grouping layers into macro stages when
    /// δ < 1.
    pub fn build(
        variant: Variant,
        depth: usize,
        exec_time: ExecTime,
        obs_dim: usize,
        hidden_dim: usize,
        head_dim: usize,
    ) -> Result<Self, PipelineError> {
        if variant == Variant::Custom {
            return Err(PipelineError::Config("use `custom` for hand-built edge lists".into()));
        }
        if depth == 0 || obs_dim == 0 || hidden_dim == 0 || head_dim == 0 {
            return Err(PipelineError::Config("depth and all widths must be positive".into()));
        }
        let per_slot = exec_time.layers_per_slot();
        let n_stages = depth.div_ceil(per_slot);
        let stages: Vec<StageSpec> = (1..=n_stages)
            .map(|j| {
                let layers = if j < n_stages { per_slot } else { depth - per_slot * (n_stages - 1) };
                let out_dim = if j == n_stages { head_dim } else { hidden_dim };
                StageSpec { layers, hidden_dim, out_dim }
            })
            .collect();
        let edges = variant_edges(variant, n_stages);
        let topo = Self {
            variant,
            depth,
            exec_time,
            obs_dim,
            activation: Activation::Relu,
            stages,
            edges,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn custom(
        depth: usize,
        exec_time: ExecTime,
        obs_dim: usize,
        stages: Vec<StageSpec>,
        edges: Vec<Edge>,
    ) -> Result<Self, PipelineError> {
        let topo = Self {
            variant: Variant::Custom,
            depth,
            exec_time,
            obs_dim,
            activation: Activation::Relu,
            stages,
            edges,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// The same graph with every edge read on the tick it is produced: a
    /// reference actor whose full forward pass completes within one step.
    pub fn instantaneous(mut self) -> Self {
        for e in &mut self.edges {
            e.same_tick = true;
        }
        self
    }

    pub fn is_instantaneous(&self) -> bool {
        self.edges.iter().all(|e| e.same_tick)
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn head(&self) -> usize {
        self.stages.len()
    }

    pub fn head_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.out_dim)
    }

    /// Width of node `idx` (0 = observation).
    pub fn node_dim(&self, idx: usize) -> usize {
        if idx == 0 {
            self.obs_dim
        } else {
            self.stages[idx - 1].out_dim
        }
    }

    /// Edges entering `dst` in stored order (feeds sorted by source, then
    /// residuals).
    pub fn incoming(&self, dst: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.dst == dst)
    }

    /// Concatenated input width of stage `dst`.
    pub fn stage_input_dim(&self, dst: usize) -> usize {
        self.incoming(dst)
            .filter(|(_, e)| e.kind == EdgeKind::Feed)
            .map(|(_, e)| self.node_dim(e.src))
            .sum()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let s = self.stages.len();
        if s == 0 {
            return Err(PipelineError::Config("topology has no stages".into()));
        }
        let total_layers: usize = self.stages.iter().map(|st| st.layers).sum();
        if total_layers != self.depth {
            return Err(PipelineError::Config(format!(
                "stages hold {total_layers} layers but depth is {}",
                self.depth
            )));
        }
        if self.stages.iter().any(|st| st.layers == 0 || st.out_dim == 0 || st.hidden_dim == 0)
        {
            return Err(PipelineError::Config("every stage needs positive layers and widths".into()));
        }
        let mut sorted = self.edges.clone();
        sorted.sort_by_key(|e| (e.dst, e.kind == EdgeKind::Residual, e.src));
        if sorted != self.edges {
            return Err(PipelineError::Config(
                "edges must be sorted by (dst, kind, src); use `normalize_edges`".into(),
            ));
        }
        for w in self.edges.windows(2) {
            if w[0].src == w[1].src && w[0].dst == w[1].dst && w[0].kind == w[1].kind {
                return Err(PipelineError::Config(format!(
                    "duplicate edge {} -> {}",
                    w[0].src, w[0].dst
                )));
            }
        }
        for e in &self.edges {
            if e.dst == 0 || e.dst > s || e.src >= e.dst {
                return Err(PipelineError::Config(format!(
                    "edge {} -> {} does not point forward into a stage",
                    e.src, e.dst
                )));
            }
        }
        for j in 1..=s {
            if !self.incoming(j).any(|(_, e)| e.kind == EdgeKind::Feed) {
                return Err(PipelineError::Config(format!("stage {j} has no feed input")));
            }
        }
        let mut reach = vec![false; s + 1];
        reach[0] = true;
        for e in &self.edges {
            if reach[e.src] {
                reach[e.dst] = true;
            }
        }
        if !reach[s] {
            return Err(PipelineError::Config("action head is unreachable from obs".into()));
        }
        if self.variant == Variant::Vanilla {
            let chain = (1..=s).all(|j| {
                let inc: Vec<_> = self.incoming(j).collect();
                inc.len() == 1 && inc[0].1.src == j - 1 && inc[0].1.kind == EdgeKind::Feed
            });
            if !chain || self.edges.len() != s {
                return Err(PipelineError::Config("vanilla topology must be a single chain".into()));
            }
        }
        Ok(())
    }

    /// Every obs→head path as the list of edge indices it traverses.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        fn walk(
            topo: &PipelineTopology,
            node: usize,
            prefix: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if node == topo.head() {
                out.push(prefix.clone());
                return;
            }
            for (i, e) in topo.edges.iter().enumerate() {
                if e.src == node {
                    prefix.push(i);
                    walk(topo, e.dst, prefix, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, 0, &mut Vec::new(), &mut out);
        out
    }

    /// Shortest and longest obs→head path lengths, in edges.
    pub fn dependency_horizon(&self) -> (usize, usize) {
        let s = self.head();
        let mut shortest = vec![usize::MAX; s + 1];
        let mut longest = vec![0usize; s + 1];
        let mut reach = vec![false; s + 1];
        shortest[0] = 0;
        reach[0] = true;
        // edges are sorted by destination, so sources settle first
        for e in &self.edges {
            if reach[e.src] {
                reach[e.dst] = true;
                shortest[e.dst] = shortest[e.dst].min(shortest[e.src] + 1);
                longest[e.dst] = longest[e.dst].max(longest[e.src] + 1);
            }
        }
        (shortest[s], longest[s])
    }

    /// Checks the parallel-computation constraint under tick semantics: every
    /// obs→action path of `ℓ` slots must be consumed at age exactly
    /// `ℓ·steps_per_tick` env steps, and that age must allow `ℓ` slots at the
    /// slot's execution time.
    pub fn verify_constraint(&self) -> bool {
        let step = self.exec_time.steps_per_tick();
        self.paths().iter().all(|path| {
            let len = path.len() as u64;
            let lagged = path.iter().filter(|&&i| !self.edges[i].same_tick).count() as u64;
            let age = lagged * step;
            age == len * step && len <= self.exec_time.floor_div(age)
        })
    }

    /// Ticks between an observation arriving and the first action it can
    /// influence, (shortest, longest).
    pub fn delay_ticks(&self) -> (usize, usize) {
        let lags: Vec<usize> = self
            .paths()
            .iter()
            .map(|p| p.iter().filter(|&&i| !self.edges[i].same_tick).count())
            .collect();
        (
            lags.iter().copied().min().unwrap_or(0),
            lags.iter().copied().max().unwrap_or(0),
        )
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Serde(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let topo: Self = toml::from_str(text).map_err(|e| PipelineError::Serde(e.to_string()))?;
        topo.validate()?;
        Ok(topo)
    }
}

/// Sorts edges into the canonical order expected by [`PipelineTopology`].
pub fn normalize_edges(edges: &mut [Edge]) {
    edges.sort_by_key(|e| (e.dst, e.kind == EdgeKind::Residual, e.src));
}

fn variant_edges(variant: Variant, s: usize) -> Vec<Edge> {
    let mut edges: Vec<Edge> = (1..=s).map(|j| Edge::feed(j - 1, j)).collect();
    if s > 1 {
        match variant {
            Variant::Vanilla | Variant::Custom => {}
            Variant::ProjFromObs => edges.extend((2..=s).map(|j| Edge::feed(0, j))),
            Variant::ProjToAction => edges.extend((0..s - 1).map(|i| Edge::feed(i, s))),
            Variant::ProjToActionResidual => {
                edges.extend((0..s - 1).map(|i| Edge::feed(i, s)));
                edges.extend((2..s).map(|j| Edge::residual(j - 1, j)));
            }
            Variant::AllSkips => {
                for j in 2..=s {
                    edges.extend((0..j - 1).map(|i| Edge::feed(i, j)));
                }
            }
        }
    }
    normalize_edges(&mut edges);
    edges
}
