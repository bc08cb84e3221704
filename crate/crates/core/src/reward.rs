//! Reward functions for car-following control and social lane decisions.
//!
//! The car-following reward tracks a target gap through a state value
//! function; the decision rewards trade the ego's drivable area against
//! penalties for lane changes and rule-filtered requests, with social
//! shaping terms summed over vehicles in the back view.

use crate::obs::{back_view_ids, LongitudinalObservation};
use crate::sim::{PolicyTag, World};

/// Every constant of the reward family lives here so retuning is a data
/// change. Defaults are recorded in the run manifest of every training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Constant collision punishment (applied negated).
    pub collision_penalty: f64,
    /// Balance coefficient on the next-state value.
    pub value_weight: f64,
    /// Balance coefficient on the value trend between steps.
    pub trend_weight: f64,
    /// Target car-following gap, meters.
    pub target_gap: f64,
    /// Normalizer of the gap-error value function.
    pub value_norm: f64,
    /// Factor encouraging the keep-side lane (applied to the target area).
    pub side_bias: f64,
    /// Normalization constant for the signed area-difference term, m^2.
    pub area_norm: f64,
    /// Punishment for executing a lane change (non-positive).
    pub lane_change_penalty: f64,
    /// Punishment when the executed decision differs from the request.
    pub mismatch_penalty: f64,
    /// Maximum drivable area: the front view distance, meters.
    pub area_max: f64,
    /// Competitive weight on rival drivable areas.
    pub rival_area_weight: f64,
    /// Competitive weight on rival speed terms.
    pub rival_speed_weight: f64,
    /// Cooperative weight on neighbor drivable areas.
    pub ally_area_weight: f64,
    /// Cooperative weight on neighbor speed terms.
    pub ally_speed_weight: f64,
    /// Bound on each competitive speed term.
    pub rival_speed_bound: f64,
    /// Bound on each cooperative speed term.
    pub ally_speed_bound: f64,
    /// Speed normalizer for the social terms, m/s.
    pub speed_norm: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            collision_penalty: 10.0,
            value_weight: 1.0,
            trend_weight: 5.0,
            target_gap: 25.0,
            value_norm: 100.0,
            side_bias: 1.1,
            area_norm: 1.0e4,
            lane_change_penalty: -0.1,
            mismatch_penalty: -0.2,
            area_max: 100.0,
            rival_area_weight: 0.25,
            rival_speed_weight: 0.25,
            ally_area_weight: 0.25,
            ally_speed_weight: 0.25,
            rival_speed_bound: 1.0,
            ally_speed_bound: 1.0,
            speed_norm: 33.33,
        }
    }
}

/// Drivable areas around one vehicle: free distance to the nearest leader
/// in the target and current lanes, plus the same quantity for every
/// vehicle in the ego's back view.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivableAreas {
    pub target: f64,
    pub current: f64,
    /// (vehicle id, its own-lane drivable area) for each back-view vehicle.
    pub back_view: Vec<(u32, f64)>,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn state_value(obs: &LongitudinalObservation, params: &RewardParams) -> f64 {
    match obs.gap_m() {
        // No leader in range: no gap to track.
        None => 0.0,
        Some(gap) => {
            let err = gap - params.target_gap;
            -(err * err) / (params.value_norm * params.value_norm)
        }
    }
}

/// Car-following control reward over one transition.
pub fn control_reward(
    prev_obs: &LongitudinalObservation,
    next_obs: &LongitudinalObservation,
    collided: bool,
    params: &RewardParams,
) -> f64 {
    if collided {
        return -params.collision_penalty;
    }
    let v_prev = state_value(prev_obs, params);
    let v_next = state_value(next_obs, params);
    params.value_weight * v_next + params.trend_weight * (v_next - v_prev)
}

fn lane_area(world: &World, ego_id: u32, lane: crate::map::LaneId, params: &RewardParams) -> f64 {
    match world.leader_in_lane(ego_id, lane) {
        Some((_, gap)) => gap.clamp(0.0, params.area_max),
        None => params.area_max,
    }
}

/// Compute the drivable areas used by the decision rewards.
pub fn drivable_areas(
    world: &World,
    ego_id: u32,
    target_lane: crate::map::LaneId,
    params: &RewardParams,
) -> DrivableAreas {
    let ego = world.state(ego_id).expect("ego exists");
    let current = lane_area(world, ego_id, ego.lane_id, params);
    let target = lane_area(world, ego_id, target_lane, params);
    let back_view = back_view_ids(world, ego_id)
        .into_iter()
        .map(|id| {
            let lane = world.state(id).expect("back view vehicle exists").lane_id;
            (id, lane_area(world, id, lane, params))
        })
        .collect();
    DrivableAreas {
        target,
        current,
        back_view,
    }
}

/// Individual decision reward: signed area advantage, lane-change and
/// request-mismatch punishments, and the current-lane area bonus.
pub fn individual_reward(
    areas: &DrivableAreas,
    lc_executed: bool,
    req_mismatch: bool,
    params: &RewardParams,
) -> f64 {
    let diff = params.side_bias * areas.target - areas.current;
    let mut r = sgn(diff) * diff * diff / params.area_norm;
    if lc_executed {
        r += params.lane_change_penalty;
    }
    if req_mismatch {
        r += params.mismatch_penalty;
    }
    r + (areas.current * areas.current) / (params.area_max * params.area_max)
}

/// Shape the individual reward by the social driving policy. The mutual
/// policy returns the individual reward unchanged; competitive subtracts
/// and cooperative adds the back-view utility sums.
pub fn social_reward(
    policy: PolicyTag,
    r_individual: f64,
    world: &World,
    ego_id: u32,
    params: &RewardParams,
) -> f64 {
    let (area_w, speed_w, speed_bound, sign) = match policy {
        PolicyTag::Competitive => (
            params.rival_area_weight,
            params.rival_speed_weight,
            params.rival_speed_bound,
            -1.0,
        ),
        PolicyTag::Cooperative => (
            params.ally_area_weight,
            params.ally_speed_weight,
            params.ally_speed_bound,
            1.0,
        ),
        _ => return r_individual,
    };

    let mut area_sum = 0.0;
    let mut speed_sum = 0.0;
    for id in back_view_ids(world, ego_id) {
        let other = world.state(id).expect("back view vehicle exists");
        let area = lane_area(world, id, other.lane_id, params);
        let scaled = params.side_bias * area;
        area_sum += (scaled * scaled) / (params.area_max * params.area_max);
        let v = other.v;
        speed_sum += (v * v.abs() / (params.speed_norm * params.speed_norm)).min(speed_bound);
    }
    r_individual + sign * (area_w * area_sum + speed_w * speed_sum)
}
