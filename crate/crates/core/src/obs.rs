//! Observation encodings consumed by the learned policies.
//!
//! Two spaces exist: a 4-channel x 5-lane x 25-bin decision grid of relative
//! vehicle information (500 cells), and a 4-tuple longitudinal control
//! observation describing the nearest same-lane leader.

use std::f64::consts::FRAC_PI_2;

use crate::sim::World;

pub const N_CHANNELS: usize = 4;
pub const N_LANES: usize = 5;
pub const N_BINS: usize = 25;
pub const GRID_CELLS: usize = N_CHANNELS * N_LANES * N_BINS;

/// Rear extent of the grid relative to the ego, meters.
pub const BACK_VIEW_M: f64 = 20.0;
/// Front view distance, meters; also the drivable-area cap.
pub const FRONT_VIEW_M: f64 = 100.0;
/// Longitudinal bin stride, meters.
pub const BIN_STRIDE_M: f64 = 5.0;
/// Length of the same-lane forward sector for longitudinal control.
pub const O_SMAX: f64 = 100.0;

/// The decision observation grid.
///
/// Channel 0 holds the presence flag P; channels 1-3 hold relative
/// longitudinal velocity, relative lateral velocity and relative yaw,
/// all normalized into [-1, 1] and zero wherever P = 0. Bins cover
/// [-20 m, +105 m) around the ego in 5 m strides; the ego's own bin is
/// index 4 of its lane column.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionObservation {
    /// Flattened channel-major: channel, then lane (leftmost first), then
    /// bin (rearmost first).
    pub grid: Vec<f64>,
    pub ego_speed_norm: f64,
}

impl DecisionObservation {
    pub fn zeros() -> Self {
        DecisionObservation {
            grid: vec![0.0; GRID_CELLS],
            ego_speed_norm: 0.0,
        }
    }

    #[inline]
    pub fn index(channel: usize, lane_slot: usize, bin: usize) -> usize {
        debug_assert!(channel < N_CHANNELS && lane_slot < N_LANES && bin < N_BINS);
        channel * N_LANES * N_BINS + lane_slot * N_BINS + bin
    }

    pub fn get(&self, channel: usize, lane_slot: usize, bin: usize) -> f64 {
        self.grid[Self::index(channel, lane_slot, bin)]
    }

    /// Network input: the flattened grid with the ego speed appended.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = self.grid.clone();
        v.push(self.ego_speed_norm);
        v
    }

    /// Number of occupied cells.
    pub fn occupancy(&self) -> usize {
        self.grid[..N_LANES * N_BINS].iter().filter(|&&p| p != 0.0).count()
    }
}

/// Input dimension of a decision policy network.
pub const DECISION_INPUT_DIM: usize = GRID_CELLS + 1;

/// The longitudinal car-following observation.
///
/// When no leader occupies the forward sector, `lambda` is 0 and every
/// other field is exactly 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalObservation {
    pub delta_s: f64,
    pub delta_s_dot: f64,
    pub delta_s_ddot: f64,
    pub lambda: f64,
}

impl LongitudinalObservation {
    pub fn empty() -> Self {
        LongitudinalObservation {
            delta_s: 0.0,
            delta_s_dot: 0.0,
            delta_s_ddot: 0.0,
            lambda: 0.0,
        }
    }

    pub fn to_input(self) -> Vec<f64> {
        vec![self.delta_s, self.delta_s_dot, self.delta_s_ddot, self.lambda]
    }

    /// Center-to-center leader gap in meters, if a leader is present.
    pub fn gap_m(self) -> Option<f64> {
        (self.lambda != 0.0).then_some(self.delta_s * O_SMAX)
    }
}

/// Input dimension of the car-following policy network.
pub const LONGITUDINAL_INPUT_DIM: usize = 4;

fn bin_of(delta_s: f64) -> Option<usize> {
    if (-BACK_VIEW_M..FRONT_VIEW_M + BIN_STRIDE_M).contains(&delta_s) {
        let bin = ((delta_s + BACK_VIEW_M) / BIN_STRIDE_M).floor() as usize;
        (bin < N_BINS).then_some(bin)
    } else {
        None
    }
}

/// Encode the decision grid around `ego_id`.
///
/// Vehicles outside the five-lane horizon or the [-20, +105) longitudinal
/// window are not encoded; two vehicles mapping to one cell resolve to the
/// nearer one.
pub fn encode_decision_obs(world: &World, ego_id: u32) -> DecisionObservation {
    let ego = world.state(ego_id).expect("ego exists");
    let map = world.map();
    let v_max = map.v_max;
    let horizon = map
        .lanes_in_horizon(ego.lane_id)
        .expect("ego lane is on the map");

    let mut obs = DecisionObservation::zeros();
    obs.ego_speed_norm = (ego.v / v_max).clamp(0.0, 1.0);
    let mut nearest = vec![f64::INFINITY; N_LANES * N_BINS];

    for other in world.states() {
        if other.id == ego_id {
            continue;
        }
        let Some(slot) = horizon
            .iter()
            .position(|h| *h == Some(other.lane_id))
        else {
            continue;
        };
        let delta_s = world.signed_delta_s(ego.s, other.s);
        let Some(bin) = bin_of(delta_s) else {
            continue;
        };
        let cell = slot * N_BINS + bin;
        if delta_s.abs() >= nearest[cell] {
            continue;
        }
        nearest[cell] = delta_s.abs();
        obs.grid[DecisionObservation::index(0, slot, bin)] = 1.0;
        obs.grid[DecisionObservation::index(1, slot, bin)] =
            ((other.v - ego.v) / v_max).clamp(-1.0, 1.0);
        obs.grid[DecisionObservation::index(2, slot, bin)] =
            ((other.d_rate() - ego.d_rate()) / v_max).clamp(-1.0, 1.0);
        obs.grid[DecisionObservation::index(3, slot, bin)] =
            ((other.yaw - ego.yaw) / FRAC_PI_2).clamp(-1.0, 1.0);
    }
    obs
}

/// Encode the longitudinal control observation for `ego_id`.
pub fn encode_longitudinal_obs(world: &World, ego_id: u32) -> LongitudinalObservation {
    let ego = world.state(ego_id).expect("ego exists");
    let map = world.map();
    match world.leader_in_lane(ego_id, ego.lane_id) {
        Some((leader_id, gap)) if gap <= O_SMAX => {
            let leader = world.state(leader_id).expect("leader exists");
            LongitudinalObservation {
                delta_s: gap / O_SMAX,
                delta_s_dot: ((leader.v - ego.v) / map.v_max).clamp(-1.0, 1.0),
                delta_s_ddot: ((leader.a - ego.a) / world.config().a_max).clamp(-1.0, 1.0),
                lambda: 1.0,
            }
        }
        _ => LongitudinalObservation::empty(),
    }
}

/// Ids of vehicles inside the ego's back view (the rear 4 bins of the grid,
/// any horizon lane).
pub fn back_view_ids(world: &World, ego_id: u32) -> Vec<u32> {
    let ego = match world.state(ego_id) {
        Some(e) => e,
        None => return Vec::new(),
    };
    let horizon = match world.map().lanes_in_horizon(ego.lane_id) {
        Ok(h) => h,
        Err(_) => return Vec::new(),
    };
    world
        .states()
        .iter()
        .filter(|other| {
            other.id != ego_id
                && horizon.contains(&Some(other.lane_id))
                && {
                    let ds = world.signed_delta_s(ego.s, other.s);
                    (-BACK_VIEW_M..0.0).contains(&ds)
                }
        })
        .map(|v| v.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{LaneId, RoadMap};
    use crate::sim::{PolicyTag, SimConfig, VehicleState};
    use std::sync::Arc;

    fn vehicle(id: u32, lane: LaneId, s: f64, v: f64) -> VehicleState {
        VehicleState {
            id,
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

    fn world(states: Vec<VehicleState>) -> World {
        World::from_states(
            Arc::new(RoadMap::default_onramp()),
            SimConfig::default(),
            states,
        )
    }

    #[test]
    fn grid_has_exactly_500_cells() {
        assert_eq!(GRID_CELLS, 500);
        assert_eq!(DecisionObservation::zeros().grid.len(), 500);
    }

    #[test]
    fn empty_road_encodes_all_zeros() {
        let w = world(vec![vehicle(0, LaneId(2), 500.0, 30.0)]);
        let obs = encode_decision_obs(&w, 0);
        assert!(obs.grid.iter().all(|&x| x == 0.0));
        assert!((obs.ego_speed_norm - 30.0 / 33.33).abs() < 1e-12);
    }

    #[test]
    fn sv_dead_ahead_lands_in_bin_ten() {
        // floor((30 + 20) / 5) = 10, same lane is slot 2.
        let w = world(vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 530.0, 30.0),
        ]);
        let obs = encode_decision_obs(&w, 0);
        assert_eq!(obs.get(0, 2, 10), 1.0);
        assert_eq!(obs.get(1, 2, 10), 0.0);
        assert_eq!(obs.occupancy(), 1);
    }

    #[test]
    fn sv_beyond_back_view_not_encoded() {
        let w = world(vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 475.0, 30.0),
        ]);
        let obs = encode_decision_obs(&w, 0);
        assert_eq!(obs.occupancy(), 0);
    }

    #[test]
    fn nearer_vehicle_wins_shared_cell() {
        let w = world(vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 531.0, 10.0),
            vehicle(2, LaneId(2), 533.0, 20.0),
        ]);
        let obs = encode_decision_obs(&w, 0);
        assert_eq!(obs.occupancy(), 1);
        let dv = obs.get(1, 2, 10);
        assert!((dv - (10.0 - 30.0) / 33.33).abs() < 1e-12, "nearer SV's speed encoded");
    }

    #[test]
    fn longitudinal_obs_direct_substitution() {
        let w = world(vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 550.0, 30.0),
        ]);
        let obs = encode_longitudinal_obs(&w, 0);
        assert_eq!(
            obs,
            LongitudinalObservation {
                delta_s: 0.5,
                delta_s_dot: 0.0,
                delta_s_ddot: 0.0,
                lambda: 1.0
            }
        );
    }

    #[test]
    fn no_leader_and_far_leader_give_empty_obs() {
        let alone = world(vec![vehicle(0, LaneId(2), 500.0, 30.0)]);
        assert_eq!(encode_longitudinal_obs(&alone, 0), LongitudinalObservation::empty());

        let far = world(vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 620.0, 30.0),
        ]);
        assert_eq!(encode_longitudinal_obs(&far, 0), LongitudinalObservation::empty());
    }

    #[test]
    fn back_view_covers_rear_twenty_meters() {
        let w = world(vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 485.0, 30.0),
            vehicle(2, LaneId(3), 481.0, 30.0),
            vehicle(3, LaneId(2), 479.0, 30.0),
            vehicle(4, LaneId(2), 510.0, 30.0),
        ]);
        assert_eq!(back_view_ids(&w, 0), vec![1, 2]);
    }

    #[test]
    fn translation_leaves_observations_unchanged() {
        let base = vec![
            vehicle(0, LaneId(2), 500.0, 30.0),
            vehicle(1, LaneId(2), 530.0, 28.0),
            vehicle(2, LaneId(1), 490.0, 31.0),
        ];
        let shifted: Vec<VehicleState> = base
            .iter()
            .cloned()
            .map(|mut v| {
                v.s += 700.0;
                v
            })
            .collect();
        let w1 = world(base);
        let w2 = world(shifted);
        assert_eq!(encode_decision_obs(&w1, 0), encode_decision_obs(&w2, 0));
        assert_eq!(encode_longitudinal_obs(&w1, 0), encode_longitudinal_obs(&w2, 0));
    }
}
