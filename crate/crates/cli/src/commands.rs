use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rtpipe::bench::{self, BenchConfig, BenchRow};
use rtpipe::envs::{DelayedEnv, Env, EnvConfig};
use rtpipe::numerics::RngStream;
use rtpipe::pipeline::{ExecTime, ResetMode};
use rtpipe::regret::{self, SweepConfig, SweepRow};
use rtpipe::rl::{
    evaluate, final_return, ppo_train, read_metrics, sac_train, write_metrics, ActMode, Agent, Algorithm,
    Checkpoint, EvalStats, PolicyHead, Preset,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, load_experiment, EvalConfig, ExperimentConfig, WrapperSpec};
use crate::{plot, CliError, Overrides};

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(run_err)?;
    }
    w.flush().map_err(run_err)
}

/// The wrapped environment seen by the agent. `label` separates training,
/// evaluation and any other consumer of the same seed.
pub fn make_env(
    env: &EnvConfig,
    wrapper: &WrapperSpec,
    exec_time: ExecTime,
    seed: u64,
    label: &str,
    index: u64,
) -> Result<DelayedEnv<Box<dyn Env>>, CliError> {
    let root = RngStream::new(seed);
    let inner = env.build(root.child(&format!("{label}-env"), index).seed()).map_err(run_err)?;
    DelayedEnv::new(inner, wrapper.delayed(exec_time), root.child(&format!("{label}-wrapper"), index).seed())
        .map_err(run_err)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub episodes: usize,
    pub env_steps: u64,
    pub final_return: Option<f64>,
    pub eval_mean: Option<f64>,
    pub eval_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub normalized_mean: Option<f64>,
    pub normalized_se: Option<f64>,
}

fn aggregate(metric: &str, values: &[f64], baseline: Option<&[AggregateRow]>) -> AggregateRow {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let se = mean.filter(|_| n > 1).map(|m| {
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    let base = baseline
        .and_then(|rows| rows.iter().find(|r| r.metric == metric))
        .and_then(|r| r.mean)
        .filter(|b| *b != 0.0);
    AggregateRow {
        metric: metric.into(),
        n,
        mean,
        se,
        normalized_mean: mean.zip(base).map(|(m, b)| m / b),
        normalized_se: se.zip(base).map(|(s, b)| s / b.abs()),
    }
}

fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult, CliError> {
    let exec = cfg.topology.exec_time;
    let probe = make_env(&cfg.env, &cfg.wrapper, exec, seed, "train", 0)?;
    let head = PolicyHead::for_space(&probe.spec().action_space);
    let topo = cfg.topology.build(probe.spec().obs_dim, head.output_dim())?;
    let reset = cfg.train.reset.unwrap_or(match cfg.algorithm {
        Algorithm::Sac => ResetMode::Zeros,
        Algorithm::Ppo => ResetMode::Instantaneous,
    });
    let agent = Agent::new(topo, head, reset, &mut RngStream::new(seed).substream("agent-init")).map_err(run_err)?;
    let out = match cfg.algorithm {
        Algorithm::Sac => sac_train(probe, agent, &cfg.train, cfg.total_steps, seed),
        Algorithm::Ppo => {
            let mut envs = vec![probe];
            for i in 1..cfg.train.ppo.n_envs as u64 {
                envs.push(make_env(&cfg.env, &cfg.wrapper, exec, seed, "train", i)?);
            }
            ppo_train(envs, agent, &cfg.train, cfg.total_steps, seed)
        }
    }
    .map_err(run_err)?;

    mkdir(dir)?;
    write_metrics(create(&dir.join("metrics.csv"))?, &out.metrics).map_err(run_err)?;
    Checkpoint::new(cfg.algorithm, out.env_steps, out.agent.clone(), cfg.train.clone())
        .save(&dir.join("checkpoint.json"))
        .map_err(run_err)?;
    let eval = if cfg.eval_episodes > 0 {
        let mut env = make_env(&cfg.env, &cfg.wrapper, exec, seed, "eval", 0)?;
        let stats = evaluate(&mut env, &out.agent, cfg.eval_episodes, cfg.eval_mode(), 0.0, seed).map_err(run_err)?;
        write_returns(&dir.join("eval.csv"), &stats)?;
        Some(stats)
    } else {
        None
    };
    Ok(SeedResult {
        seed,
        episodes: out.metrics.iter().filter(|r| r.episodic_return.is_some()).count(),
        env_steps: out.env_steps,
        final_return: final_return(&out.metrics, cfg.final_window),
        eval_mean: eval.as_ref().map(|s| s.mean),
        eval_se: eval.as_ref().map(|s| s.se),
    })
}

fn write_returns(path: &Path, stats: &EvalStats) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Row {
        episode: usize,
        episodic_return: f64,
    }
    let rows: Vec<Row> =
        stats.returns.iter().enumerate().map(|(episode, r)| Row { episode, episodic_return: *r }).collect();
    write_csv(path, &rows)
}

fn read_aggregate(dir: &Path) -> Result<Vec<AggregateRow>, CliError> {
    let path = dir.join("aggregate.csv");
    let file = File::open(&path).map_err(|e| CliError::Io(format!("baseline {}: {e}", path.display())))?;
    csv::Reader::from_reader(file).deserialize().collect::<Result<_, _>>().map_err(run_err)
}

fn resolve_out(flag: &Option<PathBuf>, file: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.clone().or_else(|| file.clone()).ok_or_else(|| CliError::Run("no output directory: pass --out".into()))
}

/// Trains every seed, then writes `config.toml`, `seed_<s>/{metrics.csv,
/// checkpoint.json,eval.csv}`, `seeds.csv`, `aggregate.csv` and `curve.svg`.
pub fn cmd_train(path: &Path, ov: &Overrides) -> Result<Vec<SeedResult>, CliError> {
    let mut cfg = load_experiment(path, ov.preset)?;
    if let Some(seeds) = &ov.seeds {
        cfg.seeds = seeds.clone();
    }
    let out = resolve_out(&ov.out, &cfg.out_dir)?;
    cfg.out_dir = Some(out.clone());
    let baseline = cfg.baseline.as_deref().map(read_aggregate).transpose()?;
    mkdir(&out)?;
    write_text(&out.join("config.toml"), &toml::to_string(&cfg).map_err(run_err)?)?;

    let results = cfg
        .seeds
        .par_iter()
        .map(|&s| train_seed(&cfg, s, &out.join(format!("seed_{s}"))))
        .collect::<Result<Vec<_>, _>>()?;
    write_csv(&out.join("seeds.csv"), &results)?;
    let finals: Vec<f64> = results.iter().filter_map(|r| r.final_return).collect();
    let evals: Vec<f64> = results.iter().filter_map(|r| r.eval_mean).collect();
    let agg = [
        aggregate("final_return", &finals, baseline.as_deref()),
        aggregate("eval_return", &evals, baseline.as_deref()),
    ];
    write_csv(&out.join("aggregate.csv"), &agg)?;

    let mut curves = Vec::new();
    for r in &results {
        let p = out.join(format!("seed_{}", r.seed)).join("metrics.csv");
        let rows = read_metrics(File::open(&p).map_err(|e| CliError::Io(e.to_string()))?).map_err(run_err)?;
        let pts = rows.iter().filter_map(|m| m.episodic_return.map(|v| (m.step as f64, v))).collect();
        curves.push((format!("seed {}", r.seed), pts));
    }
    plot::lines(&curves, "episodic return", "env steps", "return", &out.join("curve.svg"))?;
    Ok(results)
}

/// Evaluates a checkpoint; with `--out`, writes `eval.csv`.
pub fn cmd_eval(path: &Path, ov: &Overrides) -> Result<EvalStats, CliError> {
    let text = config::read(path)?;
    let mut cfg: EvalConfig = config::parse(path, &text)?;
    if let Some(s) = ov.seeds.as_ref().and_then(|s| s.first()) {
        cfg.seed = *s;
    }
    let ck_path = if cfg.checkpoint.is_relative() {
        path.parent().unwrap_or(Path::new(".")).join(&cfg.checkpoint)
    } else {
        cfg.checkpoint.clone()
    };
    let ck = Checkpoint::load(&ck_path).map_err(run_err)?;
    let mode = cfg.mode.unwrap_or(match ck.algorithm {
        Algorithm::Ppo => ActMode::Sample,
        Algorithm::Sac => ActMode::MeanAction,
    });
    let exec = ck.agent.topology.exec_time;
    let mut env = make_env(&cfg.env, &cfg.wrapper, exec, cfg.seed, "eval", 0)?;
    let stats = evaluate(&mut env, &ck.agent, cfg.episodes, mode, cfg.dropout_p, cfg.seed).map_err(run_err)?;
    if let Some(out) = &ov.out {
        mkdir(out)?;
        write_text(&out.join("eval_config.toml"), &toml::to_string(&cfg).map_err(run_err)?)?;
        write_returns(&out.join("eval.csv"), &stats)?;
    }
    Ok(stats)
}

/// Runs the regret sweep; writes `regret.csv` and `regret.svg`.
pub fn cmd_regret(path: Option<&Path>, ov: &Overrides) -> Result<Vec<SweepRow>, CliError> {
    let mut cfg = match path {
        Some(p) => config::parse::<SweepConfig>(p, &config::read(p)?)?,
        None => SweepConfig::default(),
    };
    if let Some(s) = ov.seeds.as_ref().and_then(|s| s.first()) {
        cfg.seed = *s;
    }
    let out = resolve_out(&ov.out, &None)?;
    mkdir(&out)?;
    write_text(&out.join("config.toml"), &toml::to_string(&cfg).map_err(run_err)?)?;
    let rows = regret::regret_sweep(&cfg).map_err(run_err)?;
    let csv_path = out.join("regret.csv");
    regret::write_sweep(create(&csv_path)?, &rows).map_err(run_err)?;
    plot::regret(&csv_path, &out.join("regret.svg"))?;
    Ok(rows)
}

fn bench_base(preset: Preset) -> BenchConfig {
    match preset {
        Preset::Desk => BenchConfig::default(),
        Preset::Full => BenchConfig { batch: 10_000, ..BenchConfig::default() },
    }
}

/// Runs the correctness gate and the timing grid; writes `bench.csv` and
/// `throughput.svg`.
pub fn cmd_bench(path: Option<&Path>, ov: &Overrides) -> Result<Vec<BenchRow>, CliError> {
    let base = bench_base(ov.preset.unwrap_or(Preset::Desk));
    let mut cfg = match path {
        Some(p) => {
            let text = config::read(p)?;
            let _: BenchConfig = config::parse(p, &text)?;
            let raw: toml::Table = config::parse(p, &text)?;
            config::with_defaults(p, &base, Some(&raw))?
        }
        None => base,
    };
    if let Some(s) = ov.seeds.as_ref().and_then(|s| s.first()) {
        cfg.seed = *s;
    }
    cfg.validate().map_err(run_err)?;
    let out = resolve_out(&ov.out, &None)?;
    mkdir(&out)?;
    write_text(&out.join("config.toml"), &toml::to_string(&cfg).map_err(run_err)?)?;
    let rows = bench::run_bench(&cfg).map_err(run_err)?;
    let csv_path = out.join("bench.csv");
    bench::write_bench(create(&csv_path)?, &rows).map_err(run_err)?;
    let back = bench::read_bench(File::open(&csv_path).map_err(|e| CliError::Io(e.to_string()))?)
        .map_err(run_err)?;
    bench::plot_throughput(&back, &out.join("throughput.svg")).map_err(run_err)?;
    Ok(rows)
}
