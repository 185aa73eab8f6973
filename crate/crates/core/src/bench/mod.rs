//! Throughput of one pipelined tick under three executors.
//!
//! The benchmark network is a plain chain of `depth` dense layers of equal
//! width. Every executor computes the same tick: each layer reads what its
//! predecessor wrote on the previous tick. They differ in how that work is
//! scheduled:
//!
//! * `sequential` runs the layers one after another on the calling thread;
//! * `pipelined_threads` gives each stage group a dedicated worker and hands
//!   buffers over at a barrier once per tick;
//! * `fused_blockdiag` concatenates every layer input and multiplies once by
//!   a block-diagonal weight matrix stored as its diagonal blocks.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{matmul_into, RngStream, Tensor};
use crate::pipeline::{
    advance, reset, ExecTime, PipelineError, PipelineParams, PipelineTopology, ResetMode, Variant,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error("{executor} diverged from the reference by {diff:e} at depth {depth}, tick {tick}")]
    GateFailed { executor: ExecutorKind, depth: usize, tick: usize, diff: f64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("bench output: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    Sequential,
    PipelinedThreads,
    FusedBlockdiag,
}

impl ExecutorKind {
    pub const ALL: [ExecutorKind; 3] =
        [ExecutorKind::Sequential, ExecutorKind::PipelinedThreads, ExecutorKind::FusedBlockdiag];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::PipelinedThreads => "pipelined_threads",
            Self::FusedBlockdiag => "fused_blockdiag",
        }
    }
}

impl fmt::Display for ExecutorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub depths: Vec<usize>,
    pub width: usize,
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Timed repetitions; the median is reported.
    pub runs: usize,
    /// Worker threads for the pipelined executor. Stages are split into this
    /// many contiguous groups when there are more stages than threads.
    pub threads: usize,
    pub executors: Vec<ExecutorKind>,
    pub seed: u64,
    /// Ticks compared by the correctness gate.
    pub gate_ticks: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            depths: vec![1, 2, 4, 8, 16],
            width: 256,
            batch: 32,
            warmup: 10,
            iters: 100,
            runs: 3,
            threads: 16,
            executors: ExecutorKind::ALL.to_vec(),
            seed: 0,
            gate_ticks: 24,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad("depths must be a nonempty list of positive values".into());
        }
        if self.width == 0 || self.batch == 0 || self.runs == 0 || self.gate_ticks == 0 {
            return bad("width, batch, runs and gate_ticks must be positive".into());
        }
        if self.iters < 100 {
            return bad(format!("iters must be at least 100, got {}", self.iters));
        }
        if self.warmup < 10 {
            return bad(format!("warmup must be at least 10, got {}", self.warmup));
        }
        if self.executors.is_empty() {
            return bad("no executors selected".into());
        }
        if self.executors.contains(&ExecutorKind::PipelinedThreads) && self.threads < 2 {
            return bad(format!("pipelined_threads needs at least 2 threads, got {}", self.threads));
        }
        Ok(())
    }
}

/// Weights of the benchmark chain, layer `j` mapping buffer `j` to `j + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainNet {
    pub topology: PipelineTopology,
    pub params: PipelineParams,
}

impl ChainNet {
    pub fn new(depth: usize, width: usize, seed: u64) -> Result<Self, BenchError> {
        let topology =
            PipelineTopology::build(Variant::Vanilla, depth, ExecTime::integer(1), width, width, width)?;
        let params = PipelineParams::init(&topology, &mut RngStream::new(seed).substream("bench-net"));
        Ok(Self { topology, params })
    }

    pub fn depth(&self) -> usize {
        self.params.stages.len()
    }

    pub fn width(&self) -> usize {
        self.topology.obs_dim
    }

    fn layer(&self, j: usize) -> (&Tensor, &Tensor) {
        let d = &self.params.stages[j].layers[0];
        (&d.w, &d.b)
    }
}

/// `relu(x·w + b)` for hidden layers, affine for the head, written into `out`.
fn dense_into(x: &[f64], w: &Tensor, b: &Tensor, rows: usize, head: bool, out: &mut [f64]) {
    let (k, n) = (w.rows(), w.cols());
    for (row, bias) in out.chunks_mut(n).zip(std::iter::repeat(b.data())) {
        row.copy_from_slice(bias);
    }
    matmul_into(x, w.data(), out, rows, k, n);
    if !head {
        for v in out.iter_mut() {
            *v = v.max(0.0);
        }
    }
}

pub trait TickExecutor {
    fn kind(&self) -> ExecutorKind;
    /// Feeds this tick's observation and returns the head output.
    fn tick(&mut self, obs: &Tensor) -> Tensor;
}

pub struct Sequential {
    net: ChainNet,
    buffers: Vec<Vec<f64>>,
    scratch: Vec<Vec<f64>>,
    rows: usize,
}

impl Sequential {
    pub fn new(net: &ChainNet, rows: usize) -> Self {
        let w = net.width();
        let n = net.depth() + 1;
        Self { net: net.clone(), buffers: vec![vec![0.0; rows * w]; n], scratch: vec![vec![0.0; rows * w]; n], rows }
    }
}

impl TickExecutor for Sequential {
    fn kind(&self) -> ExecutorKind {
        ExecutorKind::Sequential
    }

    fn tick(&mut self, obs: &Tensor) -> Tensor {
        let s = self.net.depth();
        self.scratch[0].copy_from_slice(obs.data());
        for j in 1..=s {
            let (w, b) = self.net.layer(j - 1);
            dense_into(&self.buffers[j - 1], w, b, self.rows, j == s, &mut self.scratch[j]);
        }
        std::mem::swap(&mut self.buffers, &mut self.scratch);
        Tensor::new(vec![self.rows, self.net.width()], self.buffers[s].clone()).expect("shape")
    }
}

// slots[parity][node]: tick t reads parity t % 2 and writes the other one.
struct Shared {
    slots: [Vec<Mutex<Vec<f64>>>; 2],
    start: Barrier,
    done: Barrier,
    stop: AtomicBool,
}

pub struct PipelinedThreads {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
    parity: usize,
    rows: usize,
    width: usize,
    depth: usize,
}

impl PipelinedThreads {
    pub fn new(net: &ChainNet, rows: usize, threads: usize) -> Result<Self, BenchError> {
        if threads < 2 {
            return Err(BenchError::Config(format!("pipelined_threads needs at least 2 threads, got {threads}")));
        }
        let (s, w) = (net.depth(), net.width());
        let n_workers = threads.min(s);
        let make = || (0..=s).map(|_| Mutex::new(vec![0.0; rows * w])).collect::<Vec<_>>();
        let shared = Arc::new(Shared {
            slots: [make(), make()],
            start: Barrier::new(n_workers + 1),
            done: Barrier::new(n_workers + 1),
            stop: AtomicBool::new(false),
        });
        let per = s.div_ceil(n_workers);
        let mut workers = Vec::with_capacity(n_workers);
        for g in 0..n_workers {
            let stages: Vec<usize> = (g * per + 1..=((g + 1) * per).min(s)).collect();
            let layers: Vec<(Tensor, Tensor)> = stages
                .iter()
                .map(|&j| {
                    let (w, b) = net.layer(j - 1);
                    (w.clone(), b.clone())
                })
                .collect();
            let shared = Arc::clone(&shared);
            workers.push(std::thread::spawn(move || {
                let mut out = vec![0.0; rows * w];
                let mut input = vec![0.0; rows * w];
                let mut parity = 0;
                loop {
                    shared.start.wait();
                    if shared.stop.load(Ordering::Acquire) {
                        break;
                    }
                    for (&j, (wt, b)) in stages.iter().zip(&layers) {
                        input.copy_from_slice(&shared.slots[parity][j - 1].lock().expect("slot"));
                        dense_into(&input, wt, b, rows, j == s, &mut out);
                        shared.slots[1 - parity][j].lock().expect("slot").copy_from_slice(&out);
                    }
                    parity = 1 - parity;
                    shared.done.wait();
                }
            }));
        }
        Ok(Self { shared, workers, parity: 0, rows, width: w, depth: s })
    }
}

impl TickExecutor for PipelinedThreads {
    fn kind(&self) -> ExecutorKind {
        ExecutorKind::PipelinedThreads
    }

    fn tick(&mut self, obs: &Tensor) -> Tensor {
        let next = 1 - self.parity;
        self.shared.slots[next][0].lock().expect("slot").copy_from_slice(obs.data());
        self.shared.start.wait();
        self.shared.done.wait();
        let head = self.shared.slots[next][self.depth].lock().expect("slot").clone();
        self.parity = next;
        Tensor::new(vec![self.rows, self.width], head).expect("shape")
    }
}

impl Drop for PipelinedThreads {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.start.wait();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

/// Block-diagonal matrix kept as its square diagonal blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiag {
    pub blocks: Vec<Tensor>,
    pub bias: Vec<f64>,
}

impl BlockDiag {
    pub fn from_net(net: &ChainNet) -> Self {
        let mut bias = Vec::new();
        let blocks = (0..net.depth())
            .map(|j| {
                let (w, b) = net.layer(j);
                bias.extend_from_slice(b.data());
                w.clone()
            })
            .collect();
        Self { blocks, bias }
    }

    /// `x · B + bias` for `x` of shape `[rows, Σ block rows]`, read from a
    /// row stride of `stride` columns.
    pub fn apply(&self, x: &[f64], stride: usize, rows: usize, out: &mut [f64]) {
        let n_out: usize = self.blocks.iter().map(|b| b.cols()).sum();
        for i in 0..rows {
            let x_row = &x[i * stride..];
            let out_row = &mut out[i * n_out..(i + 1) * n_out];
            out_row.copy_from_slice(&self.bias);
            let (mut r0, mut c0) = (0, 0);
            for blk in &self.blocks {
                let (k, n) = (blk.rows(), blk.cols());
                let dst = &mut out_row[c0..c0 + n];
                for p in 0..k {
                    let a = x_row[r0 + p];
                    if a == 0.0 {
                        continue;
                    }
                    for (o, &bv) in dst.iter_mut().zip(&blk.data()[p * n..(p + 1) * n]) {
                        *o += a * bv;
                    }
                }
                r0 += k;
                c0 += n;
            }
        }
    }
}

pub struct FusedBlockdiag {
    weights: BlockDiag,
    // [obs | h_1 | … | h_S] per row
    state: Vec<f64>,
    out: Vec<f64>,
    rows: usize,
    width: usize,
    depth: usize,
}

impl FusedBlockdiag {
    pub fn new(net: &ChainNet, rows: usize) -> Self {
        let (s, w) = (net.depth(), net.width());
        Self {
            weights: BlockDiag::from_net(net),
            state: vec![0.0; rows * (s + 1) * w],
            out: vec![0.0; rows * s * w],
            rows,
            width: w,
            depth: s,
        }
    }
}

impl TickExecutor for FusedBlockdiag {
    fn kind(&self) -> ExecutorKind {
        ExecutorKind::FusedBlockdiag
    }

    fn tick(&mut self, obs: &Tensor) -> Tensor {
        let (s, w) = (self.depth, self.width);
        let stride = (s + 1) * w;
        self.weights.apply(&self.state, stride, self.rows, &mut self.out);
        let mut head = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            let row = &mut self.state[i * stride..(i + 1) * stride];
            row[..w].copy_from_slice(obs.row_slice(i));
            let fresh = &self.out[i * s * w..(i + 1) * s * w];
            for (j, chunk) in fresh.chunks(w).enumerate() {
                let dst = &mut row[(j + 1) * w..(j + 2) * w];
                if j + 1 == s {
                    dst.copy_from_slice(chunk);
                    head.extend_from_slice(chunk);
                } else {
                    for (d, v) in dst.iter_mut().zip(chunk) {
                        *d = v.max(0.0);
                    }
                }
            }
        }
        Tensor::new(vec![self.rows, w], head).expect("shape")
    }
}

pub fn build_executor(
    kind: ExecutorKind,
    net: &ChainNet,
    rows: usize,
    threads: usize,
) -> Result<Box<dyn TickExecutor>, BenchError> {
    Ok(match kind {
        ExecutorKind::Sequential => Box::new(Sequential::new(net, rows)),
        ExecutorKind::PipelinedThreads => Box::new(PipelinedThreads::new(net, rows, threads)?),
        ExecutorKind::FusedBlockdiag => Box::new(FusedBlockdiag::new(net, rows)),
    })
}

pub const GATE_TOL: f64 = 1e-6;

fn random_obs(rows: usize, width: usize, ticks: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = RngStream::new(seed).substream("bench-obs");
    (0..ticks)
        .map(|_| {
            let data = (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![rows, width], data).expect("shape")
        })
        .collect()
}

/// Compares every executor's output stream against the generic pipeline
/// advance of `reference` from a zero state. Returns the largest deviation.
pub fn check_streams(
    reference: &ChainNet,
    executors: &mut [Box<dyn TickExecutor>],
    rows: usize,
    ticks: usize,
    seed: u64,
) -> Result<f64, BenchError> {
    let obs = random_obs(rows, reference.width(), ticks, seed);
    let topo = &reference.topology;
    let mut state = reset(topo, &reference.params, &obs[0], ResetMode::Zeros)?;
    let mut no_rng = RngStream::new(0).rng();
    let mut worst = 0.0f64;
    for (t, o) in obs.iter().enumerate() {
        let (want, next) = advance(topo, &reference.params, &state, o, None, 0.0, &mut no_rng)?;
        state = next;
        for ex in executors.iter_mut() {
            let got = ex.tick(o);
            let diff = got.max_abs_diff(&want).unwrap_or(f64::INFINITY);
            if !(diff <= GATE_TOL) {
                return Err(BenchError::GateFailed {
                    executor: ex.kind(),
                    depth: reference.depth(),
                    tick: t,
                    diff,
                });
            }
            worst = worst.max(diff);
        }
    }
    Ok(worst)
}

/// Runs every selected executor at every depth against the reference.
pub fn correctness_gate(cfg: &BenchConfig) -> Result<f64, BenchError> {
    cfg.validate()?;
    let mut worst = 0.0f64;
    for &depth in &cfg.depths {
        let net = ChainNet::new(depth, cfg.width, cfg.seed)?;
        let rows = cfg.batch.min(4);
        let mut ex = cfg
            .executors
            .iter()
            .map(|&k| build_executor(k, &net, rows, cfg.threads))
            .collect::<Result<Vec<_>, _>>()?;
        let ticks = cfg.gate_ticks.max(depth + 2);
        worst = worst.max(check_streams(&net, &mut ex, rows, ticks, cfg.seed)?);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub executor: ExecutorKind,
    pub depth: usize,
    pub actions_per_sec: f64,
    /// Seconds per tick; one tick emits `batch` actions.
    pub latency_per_action: f64,
    pub speedup_vs_sequential: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_once(
    kind: ExecutorKind,
    net: &ChainNet,
    cfg: &BenchConfig,
    obs: &Tensor,
) -> Result<f64, BenchError> {
    let mut ex = build_executor(kind, net, cfg.batch, cfg.threads)?;
    for _ in 0..cfg.warmup {
        std::hint::black_box(ex.tick(obs));
    }
    let start = Instant::now();
    for _ in 0..cfg.iters {
        std::hint::black_box(ex.tick(obs));
    }
    Ok(start.elapsed().as_secs_f64() / cfg.iters as f64)
}

/// Gate first, then median-of-runs latency per executor and depth. The
/// sequential executor is always timed so speed-ups have a baseline.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    correctness_gate(cfg)?;
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        let net = ChainNet::new(depth, cfg.width, cfg.seed)?;
        let obs = random_obs(cfg.batch, cfg.width, 1, cfg.seed).remove(0);
        let mut timings = Vec::new();
        let mut kinds = vec![ExecutorKind::Sequential];
        kinds.extend(cfg.executors.iter().copied().filter(|k| *k != ExecutorKind::Sequential));
        for &kind in &kinds {
            let runs = (0..cfg.runs)
                .map(|_| time_once(kind, &net, cfg, &obs))
                .collect::<Result<Vec<_>, _>>()?;
            timings.push((kind, median(runs)));
        }
        let seq = timings[0].1;
        for &kind in &cfg.executors {
            let lat = timings.iter().find(|(k, _)| *k == kind).expect("timed").1;
            rows.push(BenchRow {
                executor: kind,
                depth,
                actions_per_sec: cfg.batch as f64 / lat,
                latency_per_action: lat,
                speedup_vs_sequential: seq / lat,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| BenchError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| BenchError::Io(e.to_string()))
}

pub fn read_bench<R: Read>(input: R) -> Result<Vec<BenchRow>, BenchError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BenchError::Io(e.to_string()))
}

/// Throughput against depth, one line per executor, as SVG.
pub fn plot_throughput(rows: &[BenchRow], path: &Path) -> Result<(), BenchError> {
    use plotters::prelude::*;

    let io = |e: &dyn fmt::Display| BenchError::Io(e.to_string());
    let max_depth = rows.iter().map(|r| r.depth).max().unwrap_or(1) as f64;
    let max_rate = rows.iter().map(|r| r.actions_per_sec).fold(1.0, f64::max);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| io(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("throughput vs depth", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0.0..max_depth * 1.05, 0.0..max_rate * 1.1)
        .map_err(|e| io(&e))?;
    chart
        .configure_mesh()
        .x_desc("depth")
        .y_desc("actions / s")
        .draw()
        .map_err(|e| io(&e))?;
    for (i, kind) in ExecutorKind::ALL.iter().enumerate() {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.executor == *kind)
            .map(|r| (r.depth as f64, r.actions_per_sec))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| io(&e))?
            .label(kind.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| io(&e))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| io(&e))?;
    root.present().map_err(|e| io(&e))
}
