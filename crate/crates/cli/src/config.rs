use std::path::{Path, PathBuf};

use rtpipe::envs::{Augmentation, DefaultPolicy, DelayedEnvConfig, EnvConfig};
use rtpipe::pipeline::{ExecTime, PipelineTopology, Variant};
use rtpipe::rl::{ActMode, Algorithm, Preset, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Delayed-observation wrapper settings. The wrapper's step count per
/// decision is taken from the topology's execution time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WrapperSpec {
    pub default_policy: DefaultPolicy,
    pub sticky_prob: f64,
    pub aug: Augmentation,
}

impl Default for WrapperSpec {
    fn default() -> Self {
        Self { default_policy: DefaultPolicy::RepeatLastAction, sticky_prob: 0.0, aug: Augmentation::default() }
    }
}

impl WrapperSpec {
    pub fn delayed(&self, exec_time: ExecTime) -> DelayedEnvConfig {
        DelayedEnvConfig {
            delay: exec_time.steps_per_tick() as usize,
            default_policy: self.default_policy.clone(),
            sticky_prob: self.sticky_prob,
            aug: self.aug,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub variant: Variant,
    pub depth: usize,
    #[serde(default = "one_step")]
    pub exec_time: ExecTime,
    pub hidden: usize,
    /// Run every stage within one tick (the undelayed baseline).
    #[serde(default)]
    pub instantaneous: bool,
}

fn one_step() -> ExecTime {
    ExecTime::integer(1)
}

impl TopologySpec {
    pub fn build(&self, obs_dim: usize, head_dim: usize) -> Result<PipelineTopology, CliError> {
        let topo = PipelineTopology::build(self.variant, self.depth, self.exec_time, obs_dim, self.hidden, head_dim)
            .map_err(|e| CliError::Run(e.to_string()))?;
        Ok(if self.instantaneous { topo.instantaneous() } else { topo })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_eval_episodes() -> usize {
    10
}

fn default_final_window() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Environment steps per seed.
    pub total_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Defaults to `sample` for PPO and `mean_action` for SAC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_mode: Option<ActMode>,
    /// Episodes averaged for the final training return.
    #[serde(default = "default_final_window")]
    pub final_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Output directory of a finished run whose `aggregate.csv` is used to
    /// normalise this run's returns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    pub env: EnvConfig,
    #[serde(default)]
    pub wrapper: WrapperSpec,
    pub topology: TopologySpec,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn eval_mode(&self) -> ActMode {
        self.eval_mode.unwrap_or(match self.algorithm {
            Algorithm::Ppo => ActMode::Sample,
            Algorithm::Sac => ActMode::MeanAction,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub env: EnvConfig,
    #[serde(default)]
    pub wrapper: WrapperSpec,
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ActMode>,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default)]
    pub seed: u64,
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config { path: path.to_path_buf(), msg: e.to_string() })
}

fn overlay(base: &mut toml::Table, top: &toml::Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `base` with the keys written in `top` replaced.
pub(crate) fn with_defaults<T: Serialize + DeserializeOwned>(
    path: &Path,
    base: &T,
    top: Option<&toml::Table>,
) -> Result<T, CliError> {
    let cfg_err = |msg: String| CliError::Config { path: path.to_path_buf(), msg };
    let mut table = toml::Table::try_from(base).map_err(|e| cfg_err(e.to_string()))?;
    if let Some(top) = top {
        overlay(&mut table, top);
    }
    table.try_into().map_err(|e: toml::de::Error| cfg_err(e.to_string()))
}

/// Reads an experiment file. The `[train]` table is layered over `preset`.
pub fn load_experiment(path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig, CliError> {
    let text = read(path)?;
    let mut cfg: ExperimentConfig = parse(path, &text)?;
    let raw: toml::Table = parse(path, &text)?;
    let preset = preset.or(cfg.preset).unwrap_or(Preset::Desk);
    let train = raw.get("train").and_then(|v| v.as_table());
    cfg.train = with_defaults(path, &TrainConfig::preset(preset), train)?;
    cfg.preset = Some(preset);
    cfg.train.validate().map_err(|e| CliError::Config { path: path.to_path_buf(), msg: e.to_string() })?;
    if cfg.seeds.is_empty() {
        return Err(CliError::Config { path: path.to_path_buf(), msg: "seeds must not be empty".into() });
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithm = "ppo"
total_steps = 0

[env]
kind = "doorkey"

[topology]
variant = "vanilla"
depth = 3
hidden = 8
"#;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn preset_fills_train_defaults() {
        let (_d, path) = write(&format!("{MINIMAL}\n[train.ppo]\nepochs = 2\n"));
        let cfg = load_experiment(&path, Some(Preset::Full)).unwrap();
        assert_eq!(cfg.train.ppo.n_envs, 32);
        assert_eq!(cfg.train.ppo.epochs, 2);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.eval_mode(), ActMode::Sample);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let (_d, path) = write(&MINIMAL.replace("hidden = 8", "hidden = 8\nwidth = 3"));
        let err = load_experiment(&path, None).unwrap_err().to_string();
        assert!(err.contains("line 12"), "{err}");
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let (_d, path) = write(MINIMAL);
        let cfg = load_experiment(&path, None).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
