//! The level-k training curriculum.
//!
//! Stages run in dependency order: the shared longitudinal car-following
//! controller first, then the mutual decision policy against lane-keeping
//! surroundings (level 1), then against level-1 surroundings (level 2),
//! and finally the competitive and cooperative policies against level-2
//! surroundings. Finished stages are cached by content hash and skipped on
//! reruns; changing a prerequisite invalidates everything downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::log::fmt_sig;
use crate::map::{LaneId, RoadMap};
use crate::obs::{
    encode_decision_obs, encode_longitudinal_obs, DECISION_INPUT_DIM, LONGITUDINAL_INPUT_DIM,
};
use crate::reward::{control_reward, drivable_areas, individual_reward, social_reward, RewardParams};
use crate::sim::{
    drl_longitudinal_throttle, DrlPolicies, PolicyTag, SimConfig, StepControl, World,
    DECISION_PERIOD_STEPS,
};
use crate::sut::KraussParams;
use crate::td3::{
    act, decision_from_action, td3_update, Activation, NetError, PolicyNet, ReplayBuffer,
    Td3Agent, Td3Config, Td3Error, Transition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageName {
    CarFollowing,
    Level1Mutual,
    Level2Mutual,
    Competitive,
    Cooperative,
}

impl StageName {
    pub const ALL: [StageName; 5] = [
        StageName::CarFollowing,
        StageName::Level1Mutual,
        StageName::Level2Mutual,
        StageName::Competitive,
        StageName::Cooperative,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            StageName::CarFollowing => "car_following",
            StageName::Level1Mutual => "level1_mutual",
            StageName::Level2Mutual => "level2_mutual",
            StageName::Competitive => "competitive",
            StageName::Cooperative => "cooperative",
        }
    }

    /// Stages whose weight files this stage trains against or builds on.
    pub fn prerequisites(self) -> &'static [StageName] {
        match self {
            StageName::CarFollowing => &[],
            StageName::Level1Mutual => &[StageName::CarFollowing],
            StageName::Level2Mutual => &[StageName::CarFollowing, StageName::Level1Mutual],
            StageName::Competitive | StageName::Cooperative => {
                &[StageName::CarFollowing, StageName::Level2Mutual]
            }
        }
    }

    pub fn parse(s: &str) -> Option<StageName> {
        StageName::ALL.into_iter().find(|n| n.file_stem() == s)
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// Which policy drives the surrounding vehicles of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvSource {
    /// No surrounding decision policy (car-following training).
    ScriptedLeader,
    /// Lane keeping; only topology-forced merges.
    Level0,
    /// Frozen decision weights of a previous stage.
    Weights(StageName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Control,
    Social(PolicyTag),
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSpec {
    /// Moving-average window, environment steps.
    pub window_steps: u64,
    /// Span between the compared windows, environment steps.
    pub span_steps: u64,
    /// Converged when relative improvement falls below this fraction.
    pub min_improvement: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec {
            window_steps: 5000,
            span_steps: 20_000,
            min_improvement: 0.02,
        }
    }
}

/// One stage of the curriculum, fully resolved.
#[derive(Debug, Clone)]
pub struct CurriculumStage {
    pub name: StageName,
    pub sv_source: SvSource,
    pub reward_kind: RewardKind,
    pub max_steps: u64,
    pub convergence: ConvergenceSpec,
}

#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Surrounding vehicles in decision-training environments.
    pub n_svs: usize,
    /// Episode cap in simulation steps.
    pub episode_cap_steps: u64,
    /// Probability that the training ego spawns on the ramp.
    pub ramp_spawn_prob: f64,
    pub cf_max_steps: u64,
    pub decision_max_steps: u64,
    pub cf_td3: Td3Config,
    pub decision_td3: Td3Config,
    pub reward: RewardParams,
    pub sim: SimConfig,
    pub convergence: ConvergenceSpec,
}

impl TrainingConfig {
    pub fn desk_scale(out_dir: PathBuf, seed: u64) -> Self {
        TrainingConfig {
            out_dir,
            seed,
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
            reward: RewardParams::default(),
            sim: SimConfig::default(),
            convergence: ConvergenceSpec::default(),
        }
    }

    pub fn stage(&self, name: StageName) -> CurriculumStage {
        let (sv_source, reward_kind, max_steps) = match name {
            StageName::CarFollowing => (SvSource::ScriptedLeader, RewardKind::Control, self.cf_max_steps),
            StageName::Level1Mutual => (
                SvSource::Level0,
                RewardKind::Social(PolicyTag::Mutual),
                self.decision_max_steps,
            ),
            StageName::Level2Mutual => (
                SvSource::Weights(StageName::Level1Mutual),
                RewardKind::Social(PolicyTag::Mutual),
                self.decision_max_steps,
            ),
            StageName::Competitive => (
                SvSource::Weights(StageName::Level2Mutual),
                RewardKind::Social(PolicyTag::Competitive),
                self.decision_max_steps,
            ),
            StageName::Cooperative => (
                SvSource::Weights(StageName::Level2Mutual),
                RewardKind::Social(PolicyTag::Cooperative),
                self.decision_max_steps,
            ),
        };
        CurriculumStage {
            name,
            sv_source,
            reward_kind,
            max_steps,
            convergence: self.convergence,
        }
    }

    pub fn td3_for(&self, name: StageName) -> &Td3Config {
        match name {
            StageName::CarFollowing => &self.cf_td3,
            _ => &self.decision_td3,
        }
    }

    pub fn weights_path(&self, name: StageName) -> PathBuf {
        self.out_dir.join(format!("{}.policy", name.file_stem()))
    }

    pub fn curve_path(&self, name: StageName) -> PathBuf {
        self.out_dir.join(format!("{}.curve.csv", name.file_stem()))
    }

    pub fn manifest_path(&self, name: StageName) -> PathBuf {
        self.out_dir.join(format!("{}.manifest", name.file_stem()))
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.out_dir.join("bundle.txt")
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("missing prerequisite for stage {stage}: {missing} (expected at {path})")]
    MissingPrerequisite {
        stage: String,
        missing: String,
        path: PathBuf,
    },
    #[error("training diverged in stage {0}: non-finite parameters")]
    Diverged(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Td3(#[from] Td3Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle error: {0}")]
    Bundle(String),
}

/// One environment step as seen by the learner.
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Genuine terminal: the bootstrap term is masked.
    pub done: bool,
    /// Episode ended without a terminal (cap or map end).
    pub truncated: bool,
}

pub trait TrainEnv {
    fn obs_dim(&self) -> usize;
    fn reset(&mut self, episode_seed: u64) -> Vec<f64>;
    fn step(&mut self, action: f64) -> EnvStep;
}

/// Car-following training: the ego tracks a scripted leader whose target
/// speed is resampled every few seconds. Losing the leader beyond the
/// observation sector is terminal, as is a collision.
pub struct CarFollowingEnv {
    world: World,
    reward: RewardParams,
    leader_target_v: f64,
    resample_in: u64,
    rng: ChaCha12Rng,
    steps: u64,
    cap: u64,
    prev_obs: crate::obs::LongitudinalObservation,
}

const CF_EGO: u32 = 0;
const CF_LEADER: u32 = 1;
/// Losing the leader costs half a collision.
const LOST_LEADER_PENALTY_FRAC: f64 = 0.5;

impl CarFollowingEnv {
    pub fn new(map: std::sync::Arc<RoadMap>, sim: SimConfig, reward: RewardParams, cap: u64) -> Self {
        let world = World::new(map, sim);
        CarFollowingEnv {
            world,
            reward,
            leader_target_v: 28.0,
            resample_in: 0,
            rng: ChaCha12Rng::seed_from_u64(0),
            steps: 0,
            cap,
            prev_obs: crate::obs::LongitudinalObservation::empty(),
        }
    }

    fn leader_throttle(&mut self) -> f64 {
        if self.resample_in == 0 {
            let map = self.world.map();
            let lo = map.v_min * 0.8;
            let hi = map.v_max * 0.95;
            self.leader_target_v = self.rng.gen_range(lo..hi);
            self.resample_in = self.rng.gen_range(80..150);
        }
        self.resample_in -= 1;
        let v = self.world.states()[CF_LEADER as usize].v;
        let cfg = self.world.config();
        let a = ((self.leader_target_v - v) / cfg.dt).clamp(-cfg.b_max * 0.5, cfg.a_max * 0.5);
        if a >= 0.0 {
            a / cfg.a_max
        } else {
            a / cfg.b_max
        }
    }
}

impl TrainEnv for CarFollowingEnv {
    fn obs_dim(&self) -> usize {
        LONGITUDINAL_INPUT_DIM
    }

    fn reset(&mut self, episode_seed: u64) -> Vec<f64> {
        self.rng = ChaCha12Rng::seed_from_u64(episode_seed);
        let map = self.world.map_arc();
        let config = self.world.config().clone();
        self.world = World::new(map.clone(), config);
        let lane = LaneId(2);
        let v0 = self.rng.gen_range(map.v_min * 0.8..map.v_max * 0.9);
        let gap = self.rng.gen_range(15.0..60.0);
        self.world.spawn(lane, 100.0, v0, PolicyTag::Mutual);
        self.world.spawn(lane, 100.0 + gap, v0, PolicyTag::Level0);
        self.leader_target_v = v0;
        self.resample_in = self.rng.gen_range(40..120);
        self.steps = 0;
        self.prev_obs = encode_longitudinal_obs(&self.world, CF_EGO);
        self.prev_obs.to_input()
    }

    fn step(&mut self, action: f64) -> EnvStep {
        let leader_throttle = self.leader_throttle();
        let controls = vec![
            StepControl {
                throttle: action,
                decision: None,
            },
            StepControl {
                throttle: leader_throttle,
                decision: None,
            },
        ];
        let events = self.world.step(&controls);
        self.steps += 1;

        let collided = events
            .new_collisions
            .iter()
            .any(|(a, b)| *a == CF_EGO || *b == CF_EGO);
        let next_obs = encode_longitudinal_obs(&self.world, CF_EGO);
        let mut reward = control_reward(&self.prev_obs, &next_obs, collided, &self.reward);
        let lost_leader = !collided && next_obs.lambda == 0.0;
        if lost_leader {
            reward = -self.reward.collision_penalty * LOST_LEADER_PENALTY_FRAC;
        }
        self.prev_obs = next_obs;
        EnvStep {
            obs: next_obs.to_input(),
            reward,
            done: collided || lost_leader,
            truncated: self.steps >= self.cap,
        }
    }
}

/// Decision training: the ego takes a lane decision every five simulation
/// steps while a frozen controller drives its throttle; surrounding
/// vehicles follow the stage's policy.
pub struct DecisionEnv {
    world: World,
    map: std::sync::Arc<RoadMap>,
    sim: SimConfig,
    reward: RewardParams,
    reward_tag: PolicyTag,
    car_following: PolicyNet,
    sv_decision: Option<PolicyNet>,
    krauss: KraussParams,
    n_svs: usize,
    ramp_spawn_prob: f64,
    cap_sim_steps: u64,
    sim_steps: u64,
    rng: ChaCha12Rng,
    ego_prev_s: f64,
}

const EGO: u32 = 0;

impl DecisionEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        map: std::sync::Arc<RoadMap>,
        sim: SimConfig,
        reward: RewardParams,
        reward_tag: PolicyTag,
        car_following: PolicyNet,
        sv_decision: Option<PolicyNet>,
        n_svs: usize,
        ramp_spawn_prob: f64,
        cap_sim_steps: u64,
    ) -> Self {
        DecisionEnv {
            world: World::new(std::sync::Arc::clone(&map), sim.clone()),
            map,
            sim,
            reward,
            reward_tag,
            car_following,
            sv_decision,
            krauss: KraussParams::default(),
            n_svs,
            ramp_spawn_prob,
            cap_sim_steps,
            sim_steps: 0,
            rng: ChaCha12Rng::seed_from_u64(0),
            ego_prev_s: 0.0,
        }
    }

    /// Lane transitions of surrounding vehicles, for behavioral checks.
    pub fn world(&self) -> &World {
        &self.world
    }

    fn sv_control(&self, id: u32, decision_step: bool) -> StepControl {
        let throttle =
            drl_longitudinal_throttle(&self.world, id, &self.car_following, &self.krauss);
        let changing = self.world.is_changing_lane(id);
        let decision = (decision_step && !changing).then(|| match &self.sv_decision {
            Some(net) => {
                let obs = encode_decision_obs(&self.world, id);
                decision_from_action(net.forward_slice(&obs.to_input())[0])
            }
            None => 0,
        });
        StepControl { throttle, decision }
    }
}

impl DecisionEnv {
    fn reset_world(&mut self, episode_seed: u64) -> Vec<f64> {
        self.rng = ChaCha12Rng::seed_from_u64(episode_seed);
        self.world = World::new(std::sync::Arc::clone(&self.map), self.sim.clone());
        self.sim_steps = 0;

        let on_ramp = self.rng.gen_bool(self.ramp_spawn_prob);
        let mainline: Vec<LaneId> = self.map.mainline_lanes().map(|l| l.id).collect();
        let (ego_lane, ego_s) = if on_ramp {
            (self.map.merge_lane_id, self.rng.gen_range(5.0..40.0))
        } else {
            (
                mainline[self.rng.gen_range(0..mainline.len())],
                self.rng.gen_range(0.0..self.map.total_length - 200.0),
            )
        };
        let ego_v = self.rng.gen_range(self.map.v_min * 0.9..self.map.v_max * 0.9);
        self.world.spawn(ego_lane, ego_s, ego_v, self.reward_tag);
        self.ego_prev_s = ego_s;

        for _ in 0..self.n_svs {
            for _ in 0..200 {
                let lane = mainline[self.rng.gen_range(0..mainline.len())];
                let offset = self.rng.gen_range(-120.0..160.0);
                let mut s = ego_s + offset;
                while s < 0.0 {
                    s += self.map.total_length;
                }
                while s >= self.map.total_length {
                    s -= self.map.total_length;
                }
                let clear = self.world.states().iter().all(|o| {
                    o.lane_id != lane
                        || self.world.signed_delta_s(s, o.s).abs() >= self.sim.spawn_min_gap
                });
                if clear {
                    let v = self.rng.gen_range(self.map.v_min * 0.85..self.map.v_max * 0.92);
                    self.world.spawn(lane, s, v, PolicyTag::Level0);
                    break;
                }
            }
        }
        encode_decision_obs(&self.world, EGO).to_input()
    }

    /// Advance one decision window (5 simulation steps). Returns whether
    /// the ego collided and its per-window decision reward.
    fn roll_window(&mut self, requested: Option<i8>) -> (f64, bool, bool, bool) {
        let mut lc_started = false;
        let mut modified = false;
        let mut collided = false;
        for sub in 0..DECISION_PERIOD_STEPS {
            let decision_step = self.world.step_no() % DECISION_PERIOD_STEPS == 0;
            let mut controls = Vec::with_capacity(self.world.states().len());
            for st in self.world.states() {
                if st.id == EGO {
                    let throttle = drl_longitudinal_throttle(
                        &self.world,
                        EGO,
                        &self.car_following,
                        &self.krauss,
                    );
                    let decision = if sub == 0 { requested } else { None };
                    controls.push(StepControl { throttle, decision });
                } else {
                    controls.push(self.sv_control(st.id, decision_step));
                }
            }
            let events = self.world.step(&controls);
            if sub == 0 {
                lc_started = events.exec[EGO as usize].lc_started;
                modified = events.exec[EGO as usize].was_modified;
            }
            if events
                .new_collisions
                .iter()
                .any(|(a, b)| *a == EGO || *b == EGO)
            {
                collided = true;
            }
            self.sim_steps += 1;
        }

        // Drivable areas for the maneuver target (or own lane), on the
        // post-window world.
        let ego_lane = self.world.states()[EGO as usize].lane_id;
        let target_lane = self.world.maneuver_target(EGO).unwrap_or(ego_lane);
        let areas = drivable_areas(&self.world, EGO, target_lane, &self.reward);
        let r_i = individual_reward(&areas, lc_started, modified, &self.reward);
        let reward = social_reward(self.reward_tag, r_i, &self.world, EGO, &self.reward);
        let changing = self.world.is_changing_lane(EGO);
        (reward, collided, lc_started, changing)
    }
}

impl TrainEnv for DecisionEnv {
    fn obs_dim(&self) -> usize {
        DECISION_INPUT_DIM
    }

    fn reset(&mut self, episode_seed: u64) -> Vec<f64> {
        self.reset_world(episode_seed)
    }

    /// One learner step is one decision. A maintain decision spans one
    /// window; a lane-change decision spans windows until the maneuver
    /// completes, with the window rewards averaged, so the learner only
    /// ever observes states in which it can act.
    fn step(&mut self, action: f64) -> EnvStep {
        let requested = decision_from_action(action);

        let (mut reward_sum, mut collided, started, mut changing) =
            self.roll_window(Some(requested));
        let mut windows = 1u32;
        if started {
            // Follow the maneuver through; decisions are locked meanwhile.
            while changing && !collided && self.sim_steps < self.cap_sim_steps {
                let (r, c, _, still_changing) = self.roll_window(None);
                reward_sum += r;
                collided = c;
                changing = still_changing;
                windows += 1;
            }
        }
        let reward = reward_sum / windows as f64;

        let ego_s = self.world.states()[EGO as usize].s;
        let wrapped = ego_s + self.map.total_length / 2.0 < self.ego_prev_s;
        self.ego_prev_s = ego_s;

        EnvStep {
            obs: encode_decision_obs(&self.world, EGO).to_input(),
            reward,
            done: collided,
            truncated: wrapped || self.sim_steps >= self.cap_sim_steps,
        }
    }
}

/// Build the training environment of a stage, loading prerequisite weights.
pub fn make_env(
    stage: &CurriculumStage,
    map: std::sync::Arc<RoadMap>,
    config: &TrainingConfig,
) -> Result<Box<dyn TrainEnv>, TrainError> {
    let load_actor = |name: StageName, input_dim: usize| -> Result<PolicyNet, TrainError> {
        let path = config.weights_path(name);
        if !path.exists() {
            return Err(TrainError::MissingPrerequisite {
                stage: stage.name.to_string(),
                missing: name.to_string(),
                path,
            });
        }
        Ok(PolicyNet::load_expecting(&path, input_dim, 1, Activation::Tanh)?)
    };

    match stage.sv_source {
        SvSource::ScriptedLeader => Ok(Box::new(CarFollowingEnv::new(
            map,
            config.sim.clone(),
            config.reward.clone(),
            config.episode_cap_steps,
        ))),
        SvSource::Level0 | SvSource::Weights(_) => {
            let car_following = load_actor(StageName::CarFollowing, LONGITUDINAL_INPUT_DIM)?;
            let sv_decision = match stage.sv_source {
                SvSource::Weights(prev) => Some(load_actor(prev, DECISION_INPUT_DIM)?),
                _ => None,
            };
            let reward_tag = match stage.reward_kind {
                RewardKind::Social(tag) => tag,
                RewardKind::Control => PolicyTag::Mutual,
            };
            Ok(Box::new(DecisionEnv::new(
                map,
                config.sim.clone(),
                config.reward.clone(),
                reward_tag,
                car_following,
                sv_decision,
                config.n_svs,
                config.ramp_spawn_prob,
                config.episode_cap_steps,
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights_path: PathBuf,
    pub curve_path: PathBuf,
    pub converged: bool,
    pub env_steps: u64,
    pub episodes: u64,
}

struct ConvergenceDetector {
    spec: ConvergenceSpec,
    rewards: std::collections::VecDeque<f64>,
}

impl ConvergenceDetector {
    fn new(spec: ConvergenceSpec) -> Self {
        ConvergenceDetector {
            spec,
            rewards: std::collections::VecDeque::new(),
        }
    }

    fn push(&mut self, reward: f64) {
        self.rewards.push_back(reward);
        let keep = (self.spec.window_steps + self.spec.span_steps) as usize;
        while self.rewards.len() > keep {
            self.rewards.pop_front();
        }
    }

    fn converged(&self) -> bool {
        let w = self.spec.window_steps as usize;
        let keep = w + self.spec.span_steps as usize;
        if self.rewards.len() < keep {
            return false;
        }
        let now: f64 = self.rewards.iter().rev().take(w).sum::<f64>() / w as f64;
        let past: f64 = self.rewards.iter().take(w).sum::<f64>() / w as f64;
        now - past < self.spec.min_improvement * past.abs().max(0.01)
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn file_sha256(path: &Path) -> Result<String, std::io::Error> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Bumped whenever environment or learning semantics change, so stale
/// cached stages retrain.
const TRAIN_SEMANTICS_VERSION: u32 = 2;

fn config_fingerprint(config: &TrainingConfig, stage: &CurriculumStage, td3: &Td3Config) -> String {
    // Everything that influences the trained artifact.
    let blob = format!(
        "v{TRAIN_SEMANTICS_VERSION}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{}|{}|{}|{}|{}",
        stage.name,
        stage.sv_source,
        stage.reward_kind,
        td3,
        config.reward,
        config.sim,
        config.seed,
        config.n_svs,
        config.episode_cap_steps,
        config.ramp_spawn_prob,
        stage.max_steps,
    );
    let mut hasher = Sha256::new();
    hasher.update(blob.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Train one stage to its step budget or convergence, then write the
/// weights, the per-episode reward curve and the stage manifest.
pub fn train_stage(
    stage: &CurriculumStage,
    env: &mut dyn TrainEnv,
    td3: &Td3Config,
    config: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    let wall_start = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ stage_seed_salt(stage.name));
    let mut agent = Td3Agent::new(env.obs_dim(), 1, td3, &mut rng);
    let mut buffer = ReplayBuffer::new(td3.buffer_capacity);
    let mut detector = ConvergenceDetector::new(stage.convergence);

    let mut curve = String::from("episode,steps,mean_reward\n");
    let mut env_steps: u64 = 0;
    let mut updates: u64 = 0;
    let mut episodes: u64 = 0;
    let mut converged = false;

    'outer: while env_steps < stage.max_steps {
        let mut obs = env.reset(rng.gen());
        let mut ep_reward_sum = 0.0;
        let mut ep_steps: u64 = 0;
        loop {
            let action = if env_steps < td3.warmup_steps {
                rng.gen_range(-1.0..1.0)
            } else {
                act(&agent.actor, &obs, td3.exploration_sigma, &mut rng)[0]
            };
            let step = env.step(action);
            buffer.push(Transition {
                state: obs.clone(),
                action: vec![action],
                next_state: step.obs.clone(),
                reward: step.reward,
                done: step.done,
            });
            obs = step.obs;
            ep_reward_sum += step.reward;
            ep_steps += 1;
            env_steps += 1;
            detector.push(step.reward);

            if env_steps >= td3.warmup_steps && buffer.len() >= td3.batch_size {
                updates += 1;
                td3_update(&mut agent, &buffer, td3, updates, &mut rng)?;
                if updates % 1000 == 0 && !agent.all_finite() {
                    return Err(TrainError::Diverged(stage.name.to_string()));
                }
            }

            if step.done || step.truncated || env_steps >= stage.max_steps {
                break;
            }
        }
        episodes += 1;
        let mean = if ep_steps > 0 {
            ep_reward_sum / ep_steps as f64
        } else {
            0.0
        };
        curve.push_str(&format!("{episodes},{ep_steps},{}\n", fmt_sig(mean, 6)));

        if detector.converged() {
            converged = true;
            break 'outer;
        }
    }

    if !agent.all_finite() {
        return Err(TrainError::Diverged(stage.name.to_string()));
    }

    fs::create_dir_all(&config.out_dir)?;
    let weights_path = config.weights_path(stage.name);
    agent.actor.save(&weights_path)?;
    let curve_path = config.curve_path(stage.name);
    fs::write(&curve_path, curve)?;

    let mut manifest = String::new();
    manifest.push_str(&format!("stage {}\n", stage.name));
    manifest.push_str(&format!("seed {}\n", config.seed));
    manifest.push_str(&format!("git {}\n", git_describe()));
    manifest.push_str(&format!(
        "config_hash {}\n",
        config_fingerprint(config, stage, td3)
    ));
    manifest.push_str(&format!("env_steps {env_steps}\n"));
    manifest.push_str(&format!("episodes {episodes}\n"));
    manifest.push_str(&format!("converged {converged}\n"));
    manifest.push_str(&format!(
        "wall_seconds {}\n",
        wall_start.elapsed().as_secs_f64().round()
    ));
    for prereq in stage.name.prerequisites() {
        let hash = file_sha256(&config.weights_path(*prereq))?;
        manifest.push_str(&format!("prereq {} {hash}\n", prereq.file_stem()));
    }
    manifest.push_str(&format!("td3 {td3:?}\n"));
    manifest.push_str(&format!("reward {:?}\n", config.reward));
    fs::write(config.manifest_path(stage.name), manifest)?;

    Ok(TrainOutcome {
        weights_path,
        curve_path,
        converged,
        env_steps,
        episodes,
    })
}

fn stage_seed_salt(name: StageName) -> u64 {
    match name {
        StageName::CarFollowing => 0x00C0FFEE,
        StageName::Level1Mutual => 0x11C0FFEE,
        StageName::Level2Mutual => 0x22C0FFEE,
        StageName::Competitive => 0x33C0FFEE,
        StageName::Cooperative => 0x44C0FFEE,
    }
}

/// Is the stage's artifact current: weights exist, the manifest matches
/// this configuration and every prerequisite hash is unchanged.
fn stage_cached(config: &TrainingConfig, stage: &CurriculumStage, td3: &Td3Config) -> bool {
    let weights = config.weights_path(stage.name);
    let manifest_path = config.manifest_path(stage.name);
    if !weights.exists() || !manifest_path.exists() {
        return false;
    }
    let Ok(manifest) = fs::read_to_string(&manifest_path) else {
        return false;
    };
    let mut config_ok = false;
    let mut prereqs_ok = true;
    for line in manifest.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("config_hash") => {
                config_ok = parts.next() == Some(config_fingerprint(config, stage, td3).as_str());
            }
            Some("prereq") => {
                let (Some(name), Some(hash)) = (parts.next(), parts.next()) else {
                    prereqs_ok = false;
                    continue;
                };
                let Some(stage_name) = StageName::parse(name) else {
                    prereqs_ok = false;
                    continue;
                };
                let current = file_sha256(&config.weights_path(stage_name)).unwrap_or_default();
                if current != hash {
                    prereqs_ok = false;
                }
            }
            _ => {}
        }
    }
    config_ok && prereqs_ok
}

/// Paths and content hashes of the five stage artifacts.
///
/// On disk the paths are stored relative to the bundle file where
/// possible, so a training directory can be moved or mounted elsewhere.
#[derive(Debug, Clone, Default)]
pub struct PolicyBundle {
    pub entries: BTreeMap<String, (PathBuf, String)>,
}

impl PolicyBundle {
    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut out = String::new();
        for (stage, (p, hash)) in &self.entries {
            let stored = p.strip_prefix(base).unwrap_or(p);
            out.push_str(&format!("{stage} {} {hash}\n", stored.display()));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path)
            .map_err(|e| TrainError::Bundle(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(TrainError::Bundle(format!(
                    "{}:{}: expected `<stage> <path> <hash>`",
                    path.display(),
                    i + 1
                )));
            }
            let entry = PathBuf::from(parts[1]);
            let resolved = if entry.is_absolute() {
                entry
            } else {
                base.join(entry)
            };
            entries.insert(parts[0].to_string(), (resolved, parts[2].to_string()));
        }
        Ok(PolicyBundle { entries })
    }

    /// Verify that every referenced weight file still matches its recorded
    /// content hash.
    pub fn verify(&self) -> Result<(), TrainError> {
        for (stage, (path, hash)) in &self.entries {
            let current = file_sha256(path).map_err(|e| {
                TrainError::Bundle(format!("{stage}: cannot hash {}: {e}", path.display()))
            })?;
            if current != *hash {
                return Err(TrainError::Bundle(format!(
                    "{stage}: weight file {} does not match the bundle hash",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    fn path_of(&self, stage: StageName) -> Result<&PathBuf, TrainError> {
        self.entries
            .get(stage.file_stem())
            .map(|(p, _)| p)
            .ok_or_else(|| TrainError::Bundle(format!("bundle is missing stage {stage}")))
    }

    /// Load the nets a scenario needs: the car-following controller plus
    /// the three social decision policies (mutual = trained level-2).
    pub fn load_policies(&self) -> Result<DrlPolicies, TrainError> {
        let load = |stage: StageName, dim: usize| -> Result<PolicyNet, TrainError> {
            Ok(PolicyNet::load_expecting(
                self.path_of(stage)?,
                dim,
                1,
                Activation::Tanh,
            )?)
        };
        Ok(DrlPolicies {
            car_following: load(StageName::CarFollowing, LONGITUDINAL_INPUT_DIM)?,
            mutual: load(StageName::Level2Mutual, DECISION_INPUT_DIM)?,
            competitive: load(StageName::Competitive, DECISION_INPUT_DIM)?,
            cooperative: load(StageName::Cooperative, DECISION_INPUT_DIM)?,
        })
    }
}

/// The stage list with each stage's cache status, in dependency order.
pub fn curriculum_plan(config: &TrainingConfig) -> Vec<(StageName, bool)> {
    StageName::ALL
        .into_iter()
        .map(|name| {
            let stage = config.stage(name);
            (name, stage_cached(config, &stage, config.td3_for(name)))
        })
        .collect()
}

/// Execute the whole curriculum in dependency order. Stages with current
/// artifacts are skipped; `progress` is called once per stage with
/// (stage, skipped).
pub fn run_curriculum(
    map: std::sync::Arc<RoadMap>,
    config: &TrainingConfig,
    mut progress: impl FnMut(StageName, bool),
) -> Result<PolicyBundle, TrainError> {
    fs::create_dir_all(&config.out_dir)?;
    for name in StageName::ALL {
        let stage = config.stage(name);
        let td3 = config.td3_for(name);
        if stage_cached(config, &stage, td3) {
            progress(name, true);
            continue;
        }
        let mut env = make_env(&stage, std::sync::Arc::clone(&map), config)?;
        progress(name, false);
        train_stage(&stage, env.as_mut(), td3, config)?;
    }

    let mut bundle = PolicyBundle::default();
    for name in StageName::ALL {
        let path = config.weights_path(name);
        let hash = file_sha256(&path)?;
        bundle
            .entries
            .insert(name.file_stem().to_string(), (path, hash));
    }
    bundle.write(&config.bundle_path())?;
    Ok(bundle)
}

/// Windowed means over a training curve: average reward over consecutive
/// spans of roughly `window_steps` environment steps.
pub fn curve_window_means(curve_csv: &str, window_steps: u64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut acc_steps = 0u64;
    let mut acc_reward = 0.0;
    for line in curve_csv.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            continue;
        }
        let (Ok(steps), Ok(mean)) = (parts[1].parse::<u64>(), parts[2].parse::<f64>()) else {
            continue;
        };
        acc_steps += steps;
        acc_reward += mean * steps as f64;
        if acc_steps >= window_steps {
            out.push(acc_reward / acc_steps as f64);
            acc_steps = 0;
            acc_reward = 0.0;
        }
    }
    if acc_steps > 0 {
        out.push(acc_reward / acc_steps as f64);
    }
    out
}
