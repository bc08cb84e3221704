//! Lock-step discrete-time vehicle simulation.
//!
//! Longitudinal motion integrates throttle kinematically; lateral motion
//! tracks a target lane reference through a dual-PID cascade. Rule
//! constraints rewrite unsafe lane decisions before execution, and contact
//! detection reports collision onsets edge-triggered.
//!
//! Lateral conventions: lanes are slotted left to right, the global lateral
//! coordinate grows to the right, and positive yaw steers toward larger
//! lateral offsets. A decision offset of +1 means one lane to the left,
//! -1 one lane to the right.

mod lateral;
mod scenario;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::map::{LaneId, RoadMap};

pub use lateral::LateralController;
pub use scenario::{
    census, drl_longitudinal_throttle, run_scenario, BvBehavior, DrlPolicies, ScenarioError,
    ScenarioSetup, SutChoice, SPAWN_SPEED_MAX_FRAC,
};

/// Distance from the ramp end at which a merge becomes mandatory.
pub const FORCED_MERGE_ZONE_M: f64 = 50.0;
/// Longitudinal no-go range for cut-ins, in meters.
pub const CUT_IN_RANGE_M: f64 = 10.0;
/// Simulation steps between successive decisions of any decision policy.
pub const DECISION_PERIOD_STEPS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolicyTag {
    Competitive,
    Mutual,
    Cooperative,
    Level0,
    Sut,
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyTag::Competitive => "competitive",
            PolicyTag::Mutual => "mutual",
            PolicyTag::Cooperative => "cooperative",
            PolicyTag::Level0 => "level0",
            PolicyTag::Sut => "sut",
        };
        f.write_str(s)
    }
}

impl FromStr for PolicyTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "competitive" => Ok(PolicyTag::Competitive),
            "mutual" => Ok(PolicyTag::Mutual),
            "cooperative" => Ok(PolicyTag::Cooperative),
            "level0" => Ok(PolicyTag::Level0),
            "sut" => Ok(PolicyTag::Sut),
            other => Err(format!("unknown policy tag `{other}`")),
        }
    }
}

/// Pose and motion of one vehicle in lane-arc-length coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    /// Arc length along the road, meters.
    pub s: f64,
    /// Signed lateral offset from the center of `lane_id`, meters,
    /// positive to the right.
    pub d: f64,
    /// Lane currently occupied by the vehicle center.
    pub lane_id: LaneId,
    /// Longitudinal speed, m/s.
    pub v: f64,
    /// Longitudinal acceleration realized over the last step, m/s^2.
    pub a: f64,
    /// Heading relative to the road axis, radians, positive toward
    /// larger lateral offsets.
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub policy_tag: PolicyTag,
}

impl VehicleState {
    /// Lateral position relative to the leftmost lane center.
    pub fn d_global(&self, map: &RoadMap) -> f64 {
        map.lane_center(self.lane_id).unwrap_or(0.0) + self.d
    }

    /// Lateral velocity, m/s.
    pub fn d_rate(&self) -> f64 {
        self.v * self.yaw.sin()
    }
}

/// One step worth of control: a throttle and a lane decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Dimensionless, clipped to [-1, 1]. Negative values brake.
    pub throttle: f64,
    /// Lane reference offset: +1 left, 0 maintain, -1 right.
    pub lane_offset_request: i8,
}

impl ControlInput {
    pub fn maintain(throttle: f64) -> Self {
        ControlInput {
            throttle,
            lane_offset_request: 0,
        }
    }
}

/// Per-step control as supplied by a driver. `decision` is `None` outside
/// decision steps and while a lane change is already in progress.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub throttle: f64,
    pub decision: Option<i8>,
}

impl StepControl {
    pub fn coast() -> Self {
        StepControl {
            throttle: 0.0,
            decision: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Step length, seconds.
    pub dt: f64,
    /// Full-throttle acceleration magnitude, m/s^2.
    pub a_max: f64,
    /// Full-brake deceleration magnitude, m/s^2.
    pub b_max: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub seed: u64,
    pub n_bvs: usize,
    /// Fractions of competitive, mutual, cooperative BVs; sums to 1.
    pub policy_mix: [f64; 3],
    pub spawn_min_gap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            a_max: 4.0,
            b_max: 8.0,
            vehicle_length: 4.5,
            vehicle_width: 2.0,
            seed: 0,
            n_bvs: 20,
            policy_mix: [0.4, 0.3, 0.3],
            spawn_min_gap: 15.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    Config(String),
    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u32),
    #[error("unknown target lane {0}")]
    UnknownLane(LaneId),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.dt <= 0.0 {
            return Err(SimError::Config("dt must be positive".into()));
        }
        let sum: f64 = self.policy_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "policy mix must sum to 1, got {sum}"
            )));
        }
        if self.a_max <= 0.0 || self.b_max <= 0.0 {
            return Err(SimError::Config("a_max and b_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Maneuver {
    target: LaneId,
}

#[derive(Debug, Clone)]
struct VehicleCtl {
    lateral: LateralController,
    maneuver: Option<Maneuver>,
}

/// Execution summary for one vehicle over one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExecInfo {
    pub requested_decision: i8,
    pub executed_decision: i8,
    pub was_modified: bool,
    /// A lane-change maneuver began this step.
    pub lc_started: bool,
    /// The vehicle center crossed into its target lane this step.
    pub lc_completed: bool,
    pub throttle: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StepEvents {
    /// Pairs entering contact this step, each reported once per onset.
    pub new_collisions: Vec<(u32, u32)>,
    pub exec: Vec<ExecInfo>,
}

/// The simulated world: one instance is single-threaded and deterministic.
#[derive(Debug, Clone)]
pub struct World {
    map: Arc<RoadMap>,
    config: SimConfig,
    step_no: u64,
    states: Vec<VehicleState>,
    ctls: Vec<VehicleCtl>,
    contacts: BTreeSet<(u32, u32)>,
    /// Ring topology: vehicles reaching the map end continue at s = 0.
    wrap: bool,
}

impl World {
    pub fn new(map: Arc<RoadMap>, config: SimConfig) -> Self {
        World {
            map,
            config,
            step_no: 0,
            states: Vec::new(),
            ctls: Vec::new(),
            contacts: BTreeSet::new(),
            wrap: true,
        }
    }

    /// Build a world directly from vehicle states (ids are reassigned to
    /// positions). Useful for snapshot-style queries and tests.
    pub fn from_states(map: Arc<RoadMap>, config: SimConfig, states: Vec<VehicleState>) -> Self {
        let mut w = World::new(map, config);
        for s in states {
            w.push_vehicle(s);
        }
        w
    }

    pub fn set_wrap(&mut self, wrap: bool) {
        self.wrap = wrap;
    }

    pub fn map(&self) -> &RoadMap {
        &self.map
    }

    pub fn map_arc(&self) -> Arc<RoadMap> {
        Arc::clone(&self.map)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn step_no(&self) -> u64 {
        self.step_no
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn state(&self, id: u32) -> Option<&VehicleState> {
        self.states.get(id as usize)
    }

    /// Target lane of an in-progress lane change, if any.
    pub fn maneuver_target(&self, id: u32) -> Option<LaneId> {
        self.ctls
            .get(id as usize)
            .and_then(|c| c.maneuver.map(|m| m.target))
    }

    pub fn is_changing_lane(&self, id: u32) -> bool {
        self.maneuver_target(id).is_some()
    }

    fn push_vehicle(&mut self, mut state: VehicleState) -> u32 {
        let id = self.states.len() as u32;
        state.id = id;
        self.states.push(state);
        self.ctls.push(VehicleCtl {
            lateral: LateralController::new(),
            maneuver: None,
        });
        id
    }

    pub fn spawn(
        &mut self,
        lane_id: LaneId,
        s: f64,
        v: f64,
        policy_tag: PolicyTag,
    ) -> u32 {
        self.push_vehicle(VehicleState {
            id: 0,
            s,
            d: 0.0,
            lane_id,
            v,
            a: 0.0,
            yaw: 0.0,
            length: self.config.vehicle_length,
            width: self.config.vehicle_width,
            policy_tag,
        })
    }

    /// Reset a vehicle in place (used for the SUT respawn after a collision).
    pub fn respawn(&mut self, id: u32, lane_id: LaneId, s: f64, v: f64) {
        let st = &mut self.states[id as usize];
        st.s = s;
        st.d = 0.0;
        st.lane_id = lane_id;
        st.v = v;
        st.a = 0.0;
        st.yaw = 0.0;
        let ctl = &mut self.ctls[id as usize];
        ctl.lateral.reset();
        ctl.maneuver = None;
        // Stale contacts for this vehicle would suppress the next onset.
        self.contacts.retain(|&(a, b)| a != id && b != id);
    }

    /// Longitudinal distance from `from_s` forward to `to_s`, respecting
    /// ring topology when enabled.
    pub fn forward_gap(&self, from_s: f64, to_s: f64) -> f64 {
        let mut gap = to_s - from_s;
        if self.wrap {
            let len = self.map.total_length;
            while gap < 0.0 {
                gap += len;
            }
            while gap >= len {
                gap -= len;
            }
        }
        gap
    }

    /// Signed longitudinal offset of `b` relative to `a`, wrapped into
    /// [-L/2, L/2) on ring topology.
    pub fn signed_delta_s(&self, a_s: f64, b_s: f64) -> f64 {
        let mut delta = b_s - a_s;
        if self.wrap {
            let len = self.map.total_length;
            if delta >= len / 2.0 {
                delta -= len;
            } else if delta < -len / 2.0 {
                delta += len;
            }
        }
        delta
    }

    /// Nearest leader of `id` in `lane`, returning (vehicle id, center gap).
    pub fn leader_in_lane(&self, id: u32, lane: LaneId) -> Option<(u32, f64)> {
        let ego = self.state(id)?;
        let mut best: Option<(u32, f64)> = None;
        for other in &self.states {
            if other.id == id || other.lane_id != lane {
                continue;
            }
            let gap = if self.wrap {
                let g = self.forward_gap(ego.s, other.s);
                if g <= 0.0 {
                    continue;
                }
                g
            } else {
                let g = other.s - ego.s;
                if g <= 0.0 {
                    continue;
                }
                g
            };
            if best.map_or(true, |(_, bg)| gap < bg) {
                best = Some((other.id, gap));
            }
        }
        best
    }

    /// Nearest follower of `id` in `lane`, returning (vehicle id, center gap > 0).
    pub fn follower_in_lane(&self, id: u32, lane: LaneId) -> Option<(u32, f64)> {
        let ego = self.state(id)?;
        let mut best: Option<(u32, f64)> = None;
        for other in &self.states {
            if other.id == id || other.lane_id != lane {
                continue;
            }
            let gap = if self.wrap {
                let g = self.forward_gap(other.s, ego.s);
                if g <= 0.0 {
                    continue;
                }
                g
            } else {
                let g = ego.s - other.s;
                if g <= 0.0 {
                    continue;
                }
                g
            };
            if best.map_or(true, |(_, bg)| gap < bg) {
                best = Some((other.id, gap));
            }
        }
        best
    }

    /// All pairs currently overlapping geometrically (unordered, a < b).
    pub fn overlap_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = Vec::new();
        for i in 0..self.states.len() {
            for j in (i + 1)..self.states.len() {
                let a = &self.states[i];
                let b = &self.states[j];
                let mean_w = 0.5 * (a.width + b.width);
                let mean_l = 0.5 * (a.length + b.length);
                let dd = (a.d_global(&self.map) - b.d_global(&self.map)).abs();
                let ds = self.signed_delta_s(a.s, b.s).abs();
                if dd < mean_w && ds < mean_l {
                    pairs.push((a.id, b.id));
                }
            }
        }
        pairs
    }
}

/// Pure longitudinal update: throttle scales to acceleration, speed is
/// clamped into [0, v_max], and arc length advances by exact piecewise
/// integration so that a clamped speed never drives `s` backwards.
pub fn step_longitudinal(
    state: &VehicleState,
    throttle: f64,
    dt: f64,
    config: &SimConfig,
    v_max: f64,
) -> VehicleState {
    let throttle = throttle.clamp(-1.0, 1.0);
    let a_cmd = if throttle >= 0.0 {
        throttle * config.a_max
    } else {
        throttle * config.b_max
    };
    let v0 = state.v;
    let v_unclamped = v0 + a_cmd * dt;
    let (v1, ds) = if a_cmd < 0.0 && v_unclamped < 0.0 {
        // Stops inside the step; hold at rest for the remainder.
        let t_stop = if a_cmd != 0.0 { v0 / (-a_cmd) } else { 0.0 };
        (0.0, v0 * t_stop + 0.5 * a_cmd * t_stop * t_stop)
    } else if a_cmd > 0.0 && v_unclamped > v_max {
        let t_sat = (v_max - v0) / a_cmd;
        let ds_accel = v0 * t_sat + 0.5 * a_cmd * t_sat * t_sat;
        (v_max, ds_accel + v_max * (dt - t_sat))
    } else {
        (v_unclamped, v0 * dt + 0.5 * a_cmd * dt * dt)
    };
    let mut next = state.clone();
    next.v = v1.max(0.0);
    next.s = state.s + ds.max(0.0);
    next.a = (next.v - v0) / dt;
    next
}

/// Apply the rule constraints to a requested control.
///
/// In order: a mandatory merge is injected for ramp vehicles near the ramp
/// end; lane changes off the road edge (including into a ramp lane) become
/// maintain; lane changes landing within 10 m longitudinal of any vehicle
/// in the target lane become maintain. Returns the executed control and
/// whether the request was modified.
pub fn filter_action(
    world: &World,
    ego_id: u32,
    requested: ControlInput,
) -> Result<(ControlInput, bool), SimError> {
    let ego = world
        .state(ego_id)
        .ok_or(SimError::UnknownVehicle(ego_id))?;
    let map = world.map();
    let mut decision = requested.lane_offset_request.clamp(-1, 1);

    if map.is_ramp(ego.lane_id) && map.merge_end_s - ego.s <= FORCED_MERGE_ZONE_M {
        decision = merge_direction(map, ego.lane_id);
    }

    if decision != 0 {
        decision = match map.neighbor(ego.lane_id, decision) {
            None => 0,
            Some(target) if !map.lane_exists_at(target, ego.s) => 0,
            // Merge-only ramp: voluntary changes into a ramp lane are
            // treated like driving off the road.
            Some(target) if map.is_ramp(target) => 0,
            Some(target) => {
                let blocked = world.states().iter().any(|other| {
                    other.id != ego_id
                        && other.lane_id == target
                        && world.signed_delta_s(ego.s, other.s).abs() < CUT_IN_RANGE_M
                });
                if blocked {
                    0
                } else {
                    decision
                }
            }
        };
    }

    let executed = ControlInput {
        throttle: requested.throttle.clamp(-1.0, 1.0),
        lane_offset_request: decision,
    };
    let modified = executed.lane_offset_request != requested.lane_offset_request;
    Ok((executed, modified))
}

/// Merge direction for a ramp lane: toward whichever side has a neighbor.
pub fn merge_direction(map: &RoadMap, ramp: LaneId) -> i8 {
    match map.lane(ramp) {
        Some(lane) if lane.right_neighbor.is_some() => -1,
        Some(lane) if lane.left_neighbor.is_some() => 1,
        _ => 0,
    }
}

/// Collision onsets: overlapping pairs not already in contact last step.
pub fn detect_collisions(world: &World) -> Vec<(u32, u32)> {
    world
        .overlap_pairs()
        .into_iter()
        .filter(|p| !world.contacts.contains(p))
        .collect()
}

impl World {
    /// Advance every vehicle one step. `controls` must be aligned with
    /// vehicle ids. Decisions are filtered through the rule constraints;
    /// requests arriving while a lane change is in progress are dropped.
    pub fn step(&mut self, controls: &[StepControl]) -> StepEvents {
        assert_eq!(
            controls.len(),
            self.states.len(),
            "one control per vehicle"
        );
        let dt = self.config.dt;
        let v_max = self.map.v_max;
        let mut exec = vec![ExecInfo::default(); self.states.len()];

        // Phase 1: resolve decisions against the frozen pre-step snapshot.
        for (idx, ctl_in) in controls.iter().enumerate() {
            let id = idx as u32;
            let info = &mut exec[idx];
            info.throttle = ctl_in.throttle.clamp(-1.0, 1.0);
            let Some(requested) = ctl_in.decision else {
                continue;
            };
            info.requested_decision = requested.clamp(-1, 1);
            if self.ctls[idx].maneuver.is_some() {
                // Locked until the current maneuver completes.
                continue;
            }
            let (executed, modified) = filter_action(
                self,
                id,
                ControlInput {
                    throttle: info.throttle,
                    lane_offset_request: requested,
                },
            )
            .expect("vehicle id is valid");
            info.executed_decision = executed.lane_offset_request;
            info.was_modified = modified;
            if executed.lane_offset_request != 0 {
                let target = self
                    .map
                    .neighbor(self.states[idx].lane_id, executed.lane_offset_request)
                    .expect("filter only passes existing lanes");
                self.ctls[idx].maneuver = Some(Maneuver { target });
                info.lc_started = true;
            }
        }

        // Phase 2: integrate motion from the frozen snapshot.
        let snapshot = self.states.clone();
        for idx in 0..self.states.len() {
            let pre = &snapshot[idx];
            let mut throttle = exec[idx].throttle;

            // Ramp-end guard: brake so the vehicle can stop before the
            // merge lane runs out if it has not merged yet.
            if self.map.is_ramp(pre.lane_id) {
                let remaining = self.map.merge_end_s - pre.s - 5.0;
                let stop_dist = pre.v * pre.v / (2.0 * self.config.b_max);
                if stop_dist >= remaining {
                    throttle = -1.0;
                    exec[idx].throttle = throttle;
                }
            }

            let mut next = step_longitudinal(pre, throttle, dt, &self.config, v_max);

            // Lateral tracking toward the maneuver target or own lane center.
            let target_lane = self.ctls[idx]
                .maneuver
                .map(|m| m.target)
                .unwrap_or(pre.lane_id);
            let target_center = self.map.lane_center(target_lane).unwrap_or(0.0);
            let d_global = pre.d_global(&self.map);
            let (d_global_next, yaw_next) = self.ctls[idx].lateral.step(
                d_global,
                next.v,
                pre.yaw,
                target_center,
                dt,
            );
            next.yaw = yaw_next;

            // Occupied lane switches when the center crosses the boundary
            // toward the maneuver target.
            let mut lane = pre.lane_id;
            if let Some(m) = self.ctls[idx].maneuver {
                let cur_center = self.map.lane_center(pre.lane_id).unwrap_or(0.0);
                let boundary = 0.5 * (cur_center + target_center);
                let crossed = if target_center > cur_center {
                    d_global_next >= boundary
                } else {
                    d_global_next <= boundary
                };
                if crossed {
                    lane = m.target;
                    self.ctls[idx].maneuver = None;
                    exec[idx].lc_completed = true;
                }
            }
            next.lane_id = lane;
            next.d = d_global_next - self.map.lane_center(lane).unwrap_or(0.0);

            // Ramp vehicles cannot travel past the merge end.
            if self.map.is_ramp(lane) && next.s > self.map.merge_end_s - 1.0 {
                next.s = self.map.merge_end_s - 1.0;
                next.v = 0.0;
            }

            if self.wrap && next.s >= self.map.total_length {
                next.s -= self.map.total_length;
            }
            next.s = next.s.clamp(0.0, self.map.total_length);

            self.states[idx] = next;
        }

        let new_collisions = detect_collisions(self);
        self.contacts = self.overlap_pairs().into_iter().collect();
        self.step_no += 1;

        StepEvents {
            new_collisions,
            exec,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::RoadMap;

    fn test_world(states: Vec<VehicleState>) -> World {
        let map = Arc::new(RoadMap::default_onramp());
        World::from_states(map, SimConfig::default(), states)
    }

    pub(crate) fn vehicle(lane: LaneId, s: f64, v: f64) -> VehicleState {
        VehicleState {
            id: 0,
            s,
            d: 0.0,
            lane_id: lane,
            v,
            a: 0.0,
            yaw: 0.0,
            length: 4.5,
            width: 2.0,
            policy_tag: PolicyTag::Mutual,
        }
    }

    #[test]
    fn coasting_advances_at_constant_speed() {
        let cfg = SimConfig::default();
        let state = vehicle(LaneId(2), 100.0, 30.0);
        let next = step_longitudinal(&state, 0.0, 0.1, &cfg, 33.33);
        assert!((next.v - 30.0).abs() < 1e-12);
        assert!((next.s - 103.0).abs() < 1e-12);
    }

    #[test]
    fn no_reverse_at_rest_under_full_brake() {
        let cfg = SimConfig::default();
        let state = vehicle(LaneId(2), 100.0, 0.0);
        let next = step_longitudinal(&state, -1.0, 0.1, &cfg, 33.33);
        assert_eq!(next.v, 0.0);
        assert_eq!(next.s, 100.0);
    }

    #[test]
    fn full_throttle_hand_integration() {
        // v' = v + a_max*dt, s' = s + v*dt + a_max*dt^2/2.
        let cfg = SimConfig::default();
        let state = vehicle(LaneId(2), 0.0, 30.0);
        let next = step_longitudinal(&state, 1.0, 0.1, &cfg, 33.33);
        assert!((next.v - 30.4).abs() < 1e-12);
        let expected_ds = 30.0 * 0.1 + 0.5 * 4.0 * 0.1 * 0.1;
        assert!((next.s - expected_ds).abs() < 1e-12, "s = {}", next.s);
        assert!((next.a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn speed_clamps_at_vmax_without_overshooting_s() {
        let cfg = SimConfig::default();
        let state = vehicle(LaneId(2), 0.0, 33.2);
        let next = step_longitudinal(&state, 1.0, 0.1, &cfg, 33.33);
        assert_eq!(next.v, 33.33);
        assert!(next.s < 33.33 * 0.1 + 1e-9);
        assert!(next.s > 33.2 * 0.1 - 1e-9);
    }

    #[test]
    fn leftmost_lane_left_request_is_modified_to_maintain() {
        // Lane 1 has the ramp on its left; beyond the ramp extent the left
        // change is off the road.
        let w = test_world(vec![vehicle(LaneId(1), 1000.0, 30.0)]);
        let (exec, modified) = filter_action(
            &w,
            0,
            ControlInput {
                throttle: 0.0,
                lane_offset_request: 1,
            },
        )
        .unwrap();
        assert_eq!(exec.lane_offset_request, 0);
        assert!(modified);
    }

    #[test]
    fn cut_in_within_ten_meters_blocked() {
        let w = test_world(vec![
            vehicle(LaneId(2), 500.0, 30.0),
            vehicle(LaneId(1), 509.5, 30.0),
        ]);
        let (exec, modified) = filter_action(
            &w,
            0,
            ControlInput {
                throttle: 0.0,
                lane_offset_request: 1,
            },
        )
        .unwrap();
        assert_eq!(exec.lane_offset_request, 0);
        assert!(modified);
    }

    #[test]
    fn clear_lane_change_passes_unmodified() {
        let w = test_world(vec![
            vehicle(LaneId(2), 500.0, 30.0),
            vehicle(LaneId(1), 560.0, 30.0),
            vehicle(LaneId(1), 440.0, 30.0),
        ]);
        let (exec, modified) = filter_action(
            &w,
            0,
            ControlInput {
                throttle: 0.0,
                lane_offset_request: 1,
            },
        )
        .unwrap();
        assert_eq!(exec.lane_offset_request, 1);
        assert!(!modified);
    }

    #[test]
    fn ramp_vehicle_near_end_is_forced_to_merge() {
        let map = RoadMap::default_onramp();
        let merge_end = map.merge_end_s;
        let w = test_world(vec![vehicle(LaneId(0), merge_end - 30.0, 25.0)]);
        let (exec, modified) = filter_action(&w, 0, ControlInput::maintain(0.0)).unwrap();
        assert_eq!(exec.lane_offset_request, -1);
        assert!(modified);
    }

    #[test]
    fn filter_is_idempotent() {
        let worlds = [
            test_world(vec![vehicle(LaneId(1), 1000.0, 30.0)]),
            test_world(vec![
                vehicle(LaneId(2), 500.0, 30.0),
                vehicle(LaneId(1), 505.0, 30.0),
            ]),
            test_world(vec![vehicle(LaneId(0), 400.0, 25.0)]),
        ];
        for w in &worlds {
            for req in [-1i8, 0, 1] {
                let (once, _) = filter_action(
                    &w.clone(),
                    0,
                    ControlInput {
                        throttle: 0.3,
                        lane_offset_request: req,
                    },
                )
                .unwrap();
                let (twice, _) = filter_action(&w.clone(), 0, once).unwrap();
                assert_eq!(once, twice);
            }
        }
    }

    #[test]
    fn same_lane_overlap_is_a_collision() {
        let w = test_world(vec![
            vehicle(LaneId(2), 500.0, 30.0),
            vehicle(LaneId(2), 503.0, 30.0),
        ]);
        assert_eq!(detect_collisions(&w), vec![(0, 1)]);
    }

    #[test]
    fn adjacent_lanes_centered_do_not_collide() {
        // Lateral gap is the 3.5 m lane width, wider than the 2.0 m mean width.
        let w = test_world(vec![
            vehicle(LaneId(2), 500.0, 30.0),
            vehicle(LaneId(3), 500.0, 30.0),
        ]);
        assert!(detect_collisions(&w).is_empty());
    }

    #[test]
    fn contact_onset_counted_once() {
        let mut w = test_world(vec![
            vehicle(LaneId(2), 500.0, 30.0),
            vehicle(LaneId(2), 503.0, 30.0),
        ]);
        let controls = vec![StepControl::coast(), StepControl::coast()];
        let first = w.step(&controls);
        assert_eq!(first.new_collisions.len(), 1);
        let second = w.step(&controls);
        assert!(second.new_collisions.is_empty(), "still overlapping, no re-count");
    }

    #[test]
    fn lateral_maneuver_flips_lane_within_envelope() {
        let mut w = test_world(vec![vehicle(LaneId(2), 100.0, 30.0)]);
        let mut flipped_at = None;
        let mut max_over = 0.0_f64;
        let target_center = w.map().lane_center(LaneId(1)).unwrap();
        for step in 0..1500 {
            let decision = if step == 0 { Some(1) } else { None };
            let ev = w.step(&[StepControl {
                throttle: 0.0,
                decision,
            }]);
            if step == 0 {
                assert_eq!(ev.exec[0].executed_decision, 1);
            }
            let st = &w.states()[0];
            if st.lane_id == LaneId(1) {
                flipped_at.get_or_insert(step);
                // Overshoot past the new center is toward smaller offsets.
                let over = target_center - st.d_global(w.map());
                max_over = max_over.max(over);
            }
        }
        let flipped_at = flipped_at.expect("lane change must complete") as f64 * 0.1;
        assert!(
            (2.0..=5.0).contains(&flipped_at),
            "center crossing at {flipped_at} s"
        );
        assert!(max_over <= 0.3, "overshoot {max_over} m");
    }

    #[test]
    fn lateral_error_decreases_monotonically_after_half_second() {
        let mut w = test_world(vec![vehicle(LaneId(2), 100.0, 30.0)]);
        let target_center = w.map().lane_center(LaneId(1)).unwrap();
        let mut errors = Vec::new();
        for step in 0..60 {
            let decision = if step == 0 { Some(1) } else { None };
            w.step(&[StepControl {
                throttle: 0.0,
                decision,
            }]);
            let st = &w.states()[0];
            errors.push((st.d_global(w.map()) - target_center).abs());
        }
        for pair in errors[5..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "error grew: {pair:?}");
        }
    }

    #[test]
    fn maintain_from_centered_state_is_a_fixed_point() {
        let mut w = test_world(vec![vehicle(LaneId(2), 100.0, 30.0)]);
        w.step(&[StepControl::coast()]);
        let st = &w.states()[0];
        assert_eq!(st.lane_id, LaneId(2));
        assert!(st.d.abs() < 1e-9);
        assert!(st.yaw.abs() < 1e-9);
    }
}
