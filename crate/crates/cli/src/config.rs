//! Run configuration: one TOML tree binding every module's parameters.
//!
//! Unknown keys are hard errors so a typo cannot silently mis-run a long
//! training. Paths are interpreted relative to the config file's directory
//! and resolved at load time.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rampsim_core::eval::{ComplexityKs, ScoreWeights};
use rampsim_core::reward::RewardParams;
use rampsim_core::sim::SimConfig;
use rampsim_core::sut::SutParams;
use rampsim_core::td3::Td3Config;
use rampsim_core::train::{ConvergenceSpec, TrainingConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Map file path, relative to the config file.
    pub map: PathBuf,
    /// Output directory for logs, reports and training artifacts.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub a_max: f64,
    pub b_max: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub n_bvs: usize,
    pub policy_mix: [f64; 3],
    pub spawn_min_gap: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            dt: d.dt,
            a_max: d.a_max,
            b_max: d.b_max,
            vehicle_length: d.vehicle_length,
            vehicle_width: d.vehicle_width,
            n_bvs: d.n_bvs,
            policy_mix: d.policy_mix,
            spawn_min_gap: d.spawn_min_gap,
        }
    }
}

impl SimSection {
    pub fn to_sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            a_max: self.a_max,
            b_max: self.b_max,
            vehicle_length: self.vehicle_length,
            vehicle_width: self.vehicle_width,
            seed,
            n_bvs: self.n_bvs,
            policy_mix: self.policy_mix,
            spawn_min_gap: self.spawn_min_gap,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Subdirectory of `out_dir` holding training artifacts.
    pub dir: PathBuf,
    pub n_svs: usize,
    pub episode_cap_steps: u64,
    pub ramp_spawn_prob: f64,
    pub cf_max_steps: u64,
    pub decision_max_steps: u64,
    pub cf_td3: Td3Config,
    pub decision_td3: Td3Config,
    pub convergence: ConvergenceSpec,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            dir: PathBuf::from("train"),
            n_svs: 6,
            episode_cap_steps: 2000,
            ramp_spawn_prob: 0.4,
            cf_max_steps: 100_000,
            decision_max_steps: 60_000,
            cf_td3: Td3Config {
                hidden: vec![64, 64],
                ..Default::default()
            },
            decision_td3: Td3Config {
                hidden: vec![64, 64],
                ..Default::default()
            },
            convergence: ConvergenceSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BvChoice {
    /// Trained social policies from the bundle.
    Drl,
    Nilsson,
    Mobil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SutChoiceName {
    Nilsson,
    Mobil,
    Stackelberg,
}

impl SutChoiceName {
    pub fn to_kind(self) -> rampsim_core::sut::SutKind {
        match self {
            SutChoiceName::Nilsson => rampsim_core::sut::SutKind::Nilsson,
            SutChoiceName::Mobil => rampsim_core::sut::SutKind::Mobil,
            SutChoiceName::Stackelberg => rampsim_core::sut::SutKind::Stackelberg,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub bvs: BvChoice,
    pub sut: SutChoiceName,
    pub n_steps: u64,
    /// Bundle manifest path (required for DRL background vehicles),
    /// relative to the config file.
    pub bundle: Option<PathBuf>,
    /// Append SUT decision utilities as extra log columns.
    pub debug_columns: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            bvs: BvChoice::Drl,
            sut: SutChoiceName::Stackelberg,
            n_steps: 3000,
            bundle: None,
            debug_columns: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySection {
    /// Grid resolution per axis for the joint densities.
    pub bins: usize,
    /// Restrict simulation samples to background vehicles.
    pub bv_only: bool,
}

impl Default for FidelitySection {
    fn default() -> Self {
        FidelitySection {
            bins: 50,
            bv_only: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub sut_params: SutParams,
    #[serde(default)]
    pub eval: ScoreWeights,
    #[serde(default)]
    pub complexity: ComplexityKs,
    #[serde(default)]
    pub fidelity: FidelitySection,
}

impl RunConfig {
    /// Parse a config file, resolving relative paths against its directory
    /// and verifying that referenced input files exist.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::User(format!("config {}: {e}", path.display())))?;

        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        config.run.map = resolve(&config.run.map);
        config.run.out_dir = resolve(&config.run.out_dir);
        if !config.training.dir.is_absolute() {
            config.training.dir = config.run.out_dir.join(&config.training.dir);
        }
        if let Some(bundle) = &config.scenario.bundle {
            config.scenario.bundle = Some(resolve(bundle));
        }

        if !config.run.map.exists() {
            return Err(CliError::User(format!(
                "map file does not exist: {}",
                config.run.map.display()
            )));
        }
        let weight_sum = config.eval.i_s + config.eval.i_e + config.eval.i_i;
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(CliError::User(format!(
                "evaluation weights must sum to 1, got {weight_sum}"
            )));
        }
        config
            .sim
            .to_sim_config(config.run.seed)
            .validate()
            .map_err(|e| CliError::User(e.to_string()))?;
        Ok(config)
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            out_dir: self.training.dir.clone(),
            seed: self.run.seed,
            n_svs: self.training.n_svs,
            episode_cap_steps: self.training.episode_cap_steps,
            ramp_spawn_prob: self.training.ramp_spawn_prob,
            cf_max_steps: self.training.cf_max_steps,
            decision_max_steps: self.training.decision_max_steps,
            cf_td3: self.training.cf_td3.clone(),
            decision_td3: self.training.decision_td3.clone(),
            reward: self.reward.clone(),
            sim: self.sim.to_sim_config(self.run.seed),
            convergence: self.training.convergence,
        }
    }

    /// Serialize the resolved configuration; the output re-loads to an
    /// equivalent run (the simulate manifest uses this).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
