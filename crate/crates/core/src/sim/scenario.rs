//! Scenario execution: spawn a traffic mix plus one system under test,
//! advance the world in lock step and record the trajectory log.
//!
//! Three scenario families exist: DRL-driven background vehicles (the
//! trained social policies), or rule-based background vehicles using the
//! all-lane utility model or the adjacent-lane incentive model. The SUT
//! always starts on the ramp and respawns there after a collision.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::log::{LogRow, TrajectoryLog};
use crate::map::RoadMap;
use crate::obs::{encode_decision_obs, encode_longitudinal_obs};
use crate::sim::{
    PolicyTag, SimConfig, SimError, StepControl, World, DECISION_PERIOD_STEPS,
};
use crate::sut::{krauss_follow, sut_decide, SutKind, SutParams};
use crate::td3::{decision_from_action, NetError, PolicyNet};

/// Spawned vehicles start between v_min and this fraction of v_max.
pub const SPAWN_SPEED_MAX_FRAC: f64 = 0.95;

const SUT_ID: u32 = 0;
const SUT_SPAWN_S: f64 = 5.0;

/// Loaded decision and control policies for DRL background vehicles.
#[derive(Debug, Clone)]
pub struct DrlPolicies {
    pub car_following: PolicyNet,
    pub mutual: PolicyNet,
    pub competitive: PolicyNet,
    pub cooperative: PolicyNet,
}

impl DrlPolicies {
    fn decision_net(&self, tag: PolicyTag) -> Option<&PolicyNet> {
        match tag {
            PolicyTag::Competitive => Some(&self.competitive),
            PolicyTag::Mutual => Some(&self.mutual),
            PolicyTag::Cooperative => Some(&self.cooperative),
            _ => None,
        }
    }
}

/// Who drives the background vehicles.
pub enum BvBehavior {
    Drl(Box<DrlPolicies>),
    RuleBased(SutKind),
}

#[derive(Debug, Clone, Copy)]
pub struct SutChoice {
    pub kind: SutKind,
}

pub struct ScenarioSetup {
    pub bv: BvBehavior,
    pub sut: SutChoice,
    pub sut_params: SutParams,
    pub n_steps: u64,
    /// Append the SUT's per-candidate utilities as extra log columns.
    pub debug_columns: bool,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("policy load failure: {0}")]
    Weights(#[from] NetError),
    #[error("spawn failure: {0}")]
    Spawn(String),
}

/// Largest-remainder apportionment of `n` vehicles over the policy mix.
pub fn census(n: usize, mix: [f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0;
    for i in 0..3 {
        let exact = mix[i] * n as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(n - assigned) {
        counts[remainders[k % 3].0] += 1;
    }
    counts
}

fn spawn_traffic(
    world: &mut World,
    rng: &mut ChaCha12Rng,
    rule_based: bool,
) -> Result<(), ScenarioError> {
    let map = world.map_arc();
    let cfg = world.config().clone();

    world.spawn(map.merge_lane_id, SUT_SPAWN_S, map.v_min, PolicyTag::Sut);

    let counts = census(cfg.n_bvs, cfg.policy_mix);
    let mut tags = Vec::with_capacity(cfg.n_bvs);
    for (tag, count) in [
        (PolicyTag::Competitive, counts[0]),
        (PolicyTag::Mutual, counts[1]),
        (PolicyTag::Cooperative, counts[2]),
    ] {
        tags.extend(std::iter::repeat(tag).take(count));
    }
    if rule_based {
        tags.iter_mut().for_each(|t| *t = PolicyTag::Level0);
    }

    let mainline: Vec<_> = map.mainline_lanes().map(|l| l.id).collect();
    for tag in tags {
        let mut placed = false;
        for _ in 0..1000 {
            let lane = mainline[rng.gen_range(0..mainline.len())];
            let s = rng.gen_range(0.0..map.total_length);
            let clear = world.states().iter().all(|o| {
                o.lane_id != lane || world.signed_delta_s(s, o.s).abs() >= cfg.spawn_min_gap
            });
            if clear {
                let v = rng.gen_range(map.v_min..map.v_max * SPAWN_SPEED_MAX_FRAC);
                world.spawn(lane, s, v, tag);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Spawn(format!(
                "could not place {} background vehicles with gap {}",
                cfg.n_bvs, cfg.spawn_min_gap
            )));
        }
    }
    Ok(())
}

/// Throttle from the trained car-following controller when a leader
/// occupies the forward sector, free-road cruise otherwise. The learned
/// controller is defined over the car-following regime; outside it the
/// vehicle tracks the speed limit.
pub fn drl_longitudinal_throttle(
    world: &World,
    id: u32,
    car_following: &PolicyNet,
    krauss: &crate::sut::KraussParams,
) -> f64 {
    let obs = encode_longitudinal_obs(world, id);
    if obs.lambda != 0.0 {
        car_following.forward_slice(&obs.to_input())[0]
    } else {
        krauss_follow(world, id, krauss)
    }
}

fn bv_throttle(world: &World, id: u32, policies: &DrlPolicies, sut_params: &SutParams) -> f64 {
    drl_longitudinal_throttle(world, id, &policies.car_following, &sut_params.krauss)
}

fn log_state_rows(log: &mut TrajectoryLog, world: &World, step: u64, events: Option<&crate::sim::StepEvents>, collided: &[bool], debug: Option<&[f64]>) {
    let dt = world.config().dt;
    for st in world.states() {
        let idx = st.id as usize;
        let (decision, throttle, executed) = match events {
            Some(ev) => (
                ev.exec[idx].requested_decision,
                ev.exec[idx].throttle,
                ev.exec[idx].executed_decision,
            ),
            None => (0, 0.0, 0),
        };
        log.push(LogRow {
            step,
            time_s: step as f64 * dt,
            vehicle_id: st.id,
            policy: st.policy_tag,
            lane_id: st.lane_id,
            s_m: st.s,
            d_m: st.d,
            v_mps: st.v,
            a_mps2: st.a,
            yaw_rad: st.yaw,
            decision,
            throttle,
            executed_decision: executed,
            collision: collided[idx],
        });
        if !log.debug_header.is_empty() {
            let row = if st.id == SUT_ID {
                debug.map(|d| d.to_vec()).unwrap_or_else(|| vec![0.0; 3])
            } else {
                vec![0.0; 3]
            };
            log.debug_rows.push(row);
        }
    }
}

/// Run one scenario to completion and return the full trajectory log.
///
/// Identical (map, config, setup, weights) inputs produce a bit-identical
/// log: spawning is driven solely by the config seed and stepping consumes
/// no randomness.
pub fn run_scenario(
    map: Arc<RoadMap>,
    config: &SimConfig,
    setup: &ScenarioSetup,
) -> Result<TrajectoryLog, ScenarioError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut world = World::new(Arc::clone(&map), config.clone());
    spawn_traffic(
        &mut world,
        &mut rng,
        matches!(setup.bv, BvBehavior::RuleBased(_)),
    )?;

    let mut log = TrajectoryLog::new();
    if setup.debug_columns {
        log.debug_header = vec![
            "sut_util_left".to_string(),
            "sut_util_keep".to_string(),
            "sut_util_right".to_string(),
        ];
    }

    let n_vehicles = world.states().len();
    log_state_rows(&mut log, &world, 0, None, &vec![false; n_vehicles], None);

    for step in 1..=setup.n_steps {
        let decision_step = world.step_no() % DECISION_PERIOD_STEPS == 0;
        let mut controls = Vec::with_capacity(n_vehicles);
        let mut sut_debug = vec![0.0; 3];

        for st in world.states() {
            let id = st.id;
            let changing = world.is_changing_lane(id);
            let control = if id == SUT_ID {
                let throttle = krauss_follow(&world, id, &setup.sut_params.krauss);
                let decision = (decision_step && !changing).then(|| {
                    let d = sut_decide(setup.sut.kind, &world, id, &setup.sut_params);
                    sut_debug = d
                        .utilities
                        .iter()
                        .map(|u| u.unwrap_or(0.0))
                        .collect::<Vec<f64>>();
                    d.lane_offset
                });
                StepControl { throttle, decision }
            } else {
                match &setup.bv {
                    BvBehavior::Drl(policies) => {
                        let throttle = bv_throttle(&world, id, policies, &setup.sut_params);
                        let decision = (decision_step && !changing).then(|| {
                            match policies.decision_net(st.policy_tag) {
                                Some(net) => {
                                    let obs = encode_decision_obs(&world, id);
                                    decision_from_action(net.forward_slice(&obs.to_input())[0])
                                }
                                // Level-0: lane keeping; the rule filter
                                // still injects the mandatory merge.
                                None => 0,
                            }
                        });
                        StepControl { throttle, decision }
                    }
                    BvBehavior::RuleBased(kind) => {
                        let throttle = krauss_follow(&world, id, &setup.sut_params.krauss);
                        let decision = (decision_step && !changing)
                            .then(|| sut_decide(*kind, &world, id, &setup.sut_params).lane_offset);
                        StepControl { throttle, decision }
                    }
                }
            };
            controls.push(control);
        }

        let events = world.step(&controls);
        let mut collided = vec![false; n_vehicles];
        for (a, b) in &events.new_collisions {
            collided[*a as usize] = true;
            collided[*b as usize] = true;
        }
        log_state_rows(
            &mut log,
            &world,
            step,
            Some(&events),
            &collided,
            Some(&sut_debug),
        );

        if collided[SUT_ID as usize] {
            world.respawn(SUT_ID, map.merge_lane_id, SUT_SPAWN_S, map.v_min);
        }
    }

    Ok(log)
}
