//! Decision models under test and the shared classical car-following
//! controller used for their longitudinal control.
//!
//! Three deciders are available: a utility argmax over all lanes, an
//! incentive rule over adjacent lanes, and a leader/follower worst-case
//! game. All are pure functions of the world snapshot.

use crate::map::{DriveSide, LaneId};
use crate::sim::World;

/// Krauss safe-speed car following.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KraussParams {
    /// Driver reaction time, seconds.
    pub reaction_time: f64,
    /// Comfortable deceleration used in the safe-speed formula, m/s^2.
    pub brake: f64,
}

impl Default for KraussParams {
    fn default() -> Self {
        KraussParams {
            reaction_time: 1.0,
            brake: 8.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NilssonParams {
    pub w_speed: f64,
    pub w_time_gap: f64,
    pub w_distance: f64,
    /// Normalizers: each utility's theoretical maximum.
    pub norm_speed: f64,
    pub norm_time_gap: f64,
    pub norm_distance: f64,
    /// Range considered when probing lane occupancy, meters.
    pub visibility: f64,
}

impl Default for NilssonParams {
    fn default() -> Self {
        NilssonParams {
            w_speed: 1.0 / 3.0,
            w_time_gap: 1.0 / 3.0,
            w_distance: 1.0 / 3.0,
            norm_speed: 33.33,
            norm_time_gap: 10.0,
            norm_distance: 500.0,
            visibility: 100.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilParams {
    /// Politeness factor on follower terms.
    pub politeness: f64,
    /// Incentive threshold, m/s^2.
    pub threshold: f64,
    /// Safety criterion: the new follower may not be forced below this
    /// deceleration, m/s^2 (positive magnitude).
    pub safe_brake: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams {
            politeness: 0.5,
            threshold: 0.1,
            safe_brake: 4.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackelbergParams {
    /// Maximum visibility distance, meters.
    pub visibility: f64,
    /// Prediction time window, seconds.
    pub horizon: f64,
    /// Safety distance for conducting a lane change, meters.
    pub min_gap: f64,
}

impl Default for StackelbergParams {
    fn default() -> Self {
        StackelbergParams {
            visibility: 100.0,
            horizon: 2.0,
            min_gap: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SutParams {
    pub krauss: KraussParams,
    pub nilsson: NilssonParams,
    pub mobil: MobilParams,
    pub stackelberg: StackelbergParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SutKind {
    Nilsson,
    Mobil,
    Stackelberg,
}

impl std::fmt::Display for SutKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SutKind::Nilsson => "nilsson",
            SutKind::Mobil => "mobil",
            SutKind::Stackelberg => "stackelberg",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SutKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nilsson" => Ok(SutKind::Nilsson),
            "mobil" => Ok(SutKind::Mobil),
            "stackelberg" => Ok(SutKind::Stackelberg),
            other => Err(format!("unknown sut model `{other}`")),
        }
    }
}

/// A lane decision with per-candidate introspection values.
#[derive(Debug, Clone, PartialEq)]
pub struct SutDecision {
    pub lane_offset: i8,
    /// Utilities (or worst-case game values) for [left, keep, right];
    /// `None` where the candidate is infeasible.
    pub utilities: [Option<f64>; 3],
}

impl SutDecision {
    pub fn maintain() -> Self {
        SutDecision {
            lane_offset: 0,
            utilities: [None, None, None],
        }
    }
}

/// Krauss safe speed: the fastest speed from which the follower can still
/// react and brake behind the leader.
pub fn krauss_safe_speed(v_ego: f64, v_lead: f64, net_gap: f64, p: &KraussParams) -> f64 {
    v_lead + (net_gap - v_lead * p.reaction_time) / (v_ego / p.brake + p.reaction_time)
}

/// Throttle tracking min(safe speed, acceleration-limited speed, v_max).
/// `leader` carries (leader speed, net bumper gap).
pub fn krauss_throttle(
    v_ego: f64,
    leader: Option<(f64, f64)>,
    p: &KraussParams,
    a_max: f64,
    b_max: f64,
    v_max: f64,
    dt: f64,
) -> f64 {
    let mut target = (v_ego + a_max * dt).min(v_max);
    if let Some((v_lead, net_gap)) = leader {
        target = target.min(krauss_safe_speed(v_ego, v_lead, net_gap, p));
    }
    let accel = (target.max(0.0) - v_ego) / dt;
    let throttle = if accel >= 0.0 {
        accel / a_max
    } else {
        accel / b_max
    };
    throttle.clamp(-1.0, 1.0)
}

/// Predicted Krauss acceleration, clamped into the vehicle envelope.
fn krauss_accel(
    v_ego: f64,
    leader: Option<(f64, f64)>,
    p: &KraussParams,
    a_max: f64,
    b_max: f64,
    v_max: f64,
    dt: f64,
) -> f64 {
    let throttle = krauss_throttle(v_ego, leader, p, a_max, b_max, v_max, dt);
    if throttle >= 0.0 {
        throttle * a_max
    } else {
        throttle * b_max
    }
}

/// World adapter: follow the nearest same-lane leader.
pub fn krauss_follow(world: &World, ego_id: u32, p: &KraussParams) -> f64 {
    let ego = world.state(ego_id).expect("ego exists");
    let cfg = world.config();
    let leader = world.leader_in_lane(ego_id, ego.lane_id).map(|(id, gap)| {
        let lead = world.state(id).expect("leader exists");
        (lead.v, gap - 0.5 * (ego.length + lead.length))
    });
    krauss_throttle(
        ego.v,
        leader,
        p,
        cfg.a_max,
        cfg.b_max,
        world.map().v_max,
        cfg.dt,
    )
}

/// Lanes a decider may place the vehicle in: drivable at the ego position
/// and never a ramp unless it is the ego's own lane.
fn candidate_lanes(world: &World, ego_id: u32) -> Vec<LaneId> {
    let ego = world.state(ego_id).expect("ego exists");
    world
        .map()
        .lanes
        .iter()
        .filter(|l| {
            l.contains_s(ego.s) && (!l.is_ramp || l.id == ego.lane_id)
        })
        .map(|l| l.id)
        .collect()
}

/// Decision offset stepping one lane from `from` toward `to`.
fn step_toward(world: &World, from: LaneId, to: LaneId) -> i8 {
    let map = world.map();
    let (a, b) = (map.slot(from).unwrap(), map.slot(to).unwrap());
    match b.cmp(&a) {
        std::cmp::Ordering::Less => 1,
        std::cmp::Ordering::Greater => -1,
        std::cmp::Ordering::Equal => 0,
    }
}

/// Keep-side preference: lower slots for left-hand traffic.
fn side_rank(world: &World, slot: usize) -> isize {
    match world.map().drive_side {
        DriveSide::Left => slot as isize,
        DriveSide::Right => -(slot as isize),
    }
}

fn lane_utilities_nilsson(world: &World, ego_id: u32, p: &NilssonParams) -> Vec<(LaneId, f64)> {
    let ego = world.state(ego_id).expect("ego exists");
    candidate_lanes(world, ego_id)
        .into_iter()
        .map(|lane| {
            // Expected speed: the lane leader's speed, or v_max when clear.
            let u_speed = match world.leader_in_lane(ego_id, lane) {
                Some((id, gap)) if gap <= p.visibility => {
                    world.state(id).expect("leader exists").v
                }
                _ => world.map().v_max,
            };

            // Mean time gap between consecutive vehicles within visibility.
            let mut in_lane: Vec<&crate::sim::VehicleState> = world
                .states()
                .iter()
                .filter(|v| {
                    v.id != ego_id
                        && v.lane_id == lane
                        && world.signed_delta_s(ego.s, v.s).abs() <= p.visibility
                })
                .collect();
            in_lane.sort_by(|a, b| {
                world
                    .signed_delta_s(ego.s, a.s)
                    .partial_cmp(&world.signed_delta_s(ego.s, b.s))
                    .unwrap()
            });
            let u_time_gap = if in_lane.len() < 2 {
                p.norm_time_gap
            } else {
                let mut sum = 0.0;
                for pair in in_lane.windows(2) {
                    let gap = world.forward_gap(pair[0].s, pair[1].s);
                    sum += (gap / pair[0].v.max(0.1)).min(p.norm_time_gap);
                }
                sum / (in_lane.len() - 1) as f64
            };

            // Remaining usable distance; the ramp runs out at the merge end.
            let u_distance = if world.map().is_ramp(lane) {
                (world.map().merge_end_s - ego.s).max(0.0).min(p.norm_distance)
            } else {
                p.norm_distance
            };

            let u = p.w_speed * u_speed / p.norm_speed
                + p.w_time_gap * u_time_gap / p.norm_time_gap
                + p.w_distance * u_distance / p.norm_distance;
            (lane, u)
        })
        .collect()
}

/// Utility argmax over every available lane; ties break toward the current
/// lane, then toward the keep side; moves at most one lane per decision.
pub fn nilsson_decide(world: &World, ego_id: u32, p: &NilssonParams) -> SutDecision {
    let ego = world.state(ego_id).expect("ego exists");
    let utilities = lane_utilities_nilsson(world, ego_id, p);
    let ego_slot = world.map().slot(ego.lane_id).unwrap();

    // Preference order implements the tie-breaks: scanning keeps the first
    // strict maximum.
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by_key(|&i| {
        let slot = world.map().slot(utilities[i].0).unwrap();
        let dist = (slot as isize - ego_slot as isize).abs();
        (
            utilities[i].0 != ego.lane_id,
            dist,
            side_rank(world, slot),
        )
    });
    let mut best = order[0];
    for &i in &order[1..] {
        if utilities[i].1 > utilities[best].1 {
            best = i;
        }
    }

    let mut offset = step_toward(world, ego.lane_id, utilities[best].0);
    // The immediate step must itself be a candidate lane.
    if offset != 0 {
        let next = world.map().neighbor(ego.lane_id, offset);
        if next.is_none_or(|n| !utilities.iter().any(|(l, _)| *l == n)) {
            offset = 0;
        }
    }

    let mut debug = [None, None, None];
    for (lane, u) in &utilities {
        let slot = world.map().slot(*lane).unwrap() as isize - ego_slot as isize;
        match slot {
            -1 => debug[0] = Some(*u),
            0 => debug[1] = Some(*u),
            1 => debug[2] = Some(*u),
            _ => {}
        }
    }
    SutDecision {
        lane_offset: offset,
        utilities: debug,
    }
}

fn mean_len(world: &World) -> f64 {
    world.config().vehicle_length
}

/// Incentive rule over the adjacent lanes: change when the predicted
/// acceleration gains of the ego and (politeness-weighted) affected
/// followers exceed the threshold and the new follower stays above the
/// safe braking limit.
pub fn mobil_decide(world: &World, ego_id: u32, p: &MobilParams) -> SutDecision {
    let ego = world.state(ego_id).expect("ego exists");
    let cfg = world.config();
    let kp = KraussParams::default();
    let (a_max, b_max, v_max, dt) = (cfg.a_max, cfg.b_max, world.map().v_max, cfg.dt);
    let accel = |v: f64, leader: Option<(f64, f64)>| krauss_accel(v, leader, &kp, a_max, b_max, v_max, dt);
    let net = |center_gap: f64| center_gap - mean_len(world);

    let lead_info = |vid: u32, lane: LaneId| -> Option<(f64, f64)> {
        world.leader_in_lane(vid, lane).map(|(id, gap)| {
            (world.state(id).unwrap().v, net(gap))
        })
    };

    let candidates = candidate_lanes(world, ego_id);
    let a_current = accel(ego.v, lead_info(ego_id, ego.lane_id));

    let mut best: Option<(i8, f64)> = None;
    let mut debug = [None, Some(0.0), None];
    for side in [1i8, -1i8] {
        let Some(target) = world.map().neighbor(ego.lane_id, side) else {
            continue;
        };
        if !candidates.contains(&target) {
            continue;
        }
        // Ego after the change follows the target-lane leader.
        let a_hat_c = accel(ego.v, lead_info(ego_id, target));

        // New follower: currently follows the target-lane leader, would
        // follow the ego after the change.
        let (a_n, a_hat_n) = match world.follower_in_lane(ego_id, target) {
            Some((nid, gap)) => {
                let nf = world.state(nid).unwrap();
                let before = accel(nf.v, lead_info(nid, target));
                let after = accel(nf.v, Some((ego.v, net(gap))));
                (before, after)
            }
            None => (0.0, 0.0),
        };

        // Old follower: currently follows the ego, would inherit the ego's
        // current leader.
        let (a_o, a_hat_o) = match world.follower_in_lane(ego_id, ego.lane_id) {
            Some((oid, _)) => {
                let of = world.state(oid).unwrap();
                let before = accel(of.v, {
                    let gap = world.forward_gap(world.state(oid).unwrap().s, ego.s);
                    Some((ego.v, net(gap)))
                });
                let after = accel(of.v, lead_info(oid, ego.lane_id));
                (before, after)
            }
            None => (0.0, 0.0),
        };

        let gain = a_hat_c - a_current + p.politeness * (a_hat_n - a_n + a_hat_o - a_o);
        let slot = if side == 1 { 0 } else { 2 };
        debug[slot] = Some(gain);

        let follower_safe = match world.follower_in_lane(ego_id, target) {
            Some(_) => a_hat_n >= -p.safe_brake,
            None => true,
        };
        if gain > p.threshold && follower_safe {
            let better = match best {
                None => true,
                Some((_, g)) => {
                    gain > g
                        || ((gain - g).abs() < f64::EPSILON
                            && preferred_side(world) == side)
                }
            };
            if better {
                best = Some((side, gain));
            }
        }
    }

    SutDecision {
        lane_offset: best.map_or(0, |(s, _)| s),
        utilities: debug,
    }
}

fn preferred_side(world: &World) -> i8 {
    match world.map().drive_side {
        DriveSide::Left => 1,
        DriveSide::Right => -1,
    }
}

/// Feasible decision offsets for any player, mirroring the rule filter:
/// stay on the road, never enter a ramp, never land within the cut-in
/// range of another vehicle.
pub fn feasible_offsets(world: &World, vid: u32) -> Vec<i8> {
    let st = world.state(vid).expect("player exists");
    let mut out = vec![0i8];
    for side in [1i8, -1i8] {
        let Some(target) = world.map().neighbor(st.lane_id, side) else {
            continue;
        };
        if !world.map().lane_exists_at(target, st.s) || world.map().is_ramp(target) {
            continue;
        }
        let blocked = world.states().iter().any(|o| {
            o.id != vid
                && o.lane_id == target
                && world.signed_delta_s(st.s, o.s).abs() < crate::sim::CUT_IN_RANGE_M
        });
        if !blocked {
            out.push(side);
        }
    }
    out
}

/// Ego utility of one joint action profile under constant-speed prediction.
///
/// All vehicles roll forward by `horizon` seconds; the three players switch
/// lanes per their actions. The utility combines the capped front gap and
/// the rear gap margin in the ego's resulting lane.
fn stackelberg_profile_utility(
    world: &World,
    ego_id: u32,
    players: &[(u32, i8)],
    p: &StackelbergParams,
) -> f64 {
    let map = world.map();
    let lane_of = |vid: u32| -> LaneId {
        let st = world.state(vid).unwrap();
        for (pid, action) in players {
            if *pid == vid && *action != 0 {
                if let Some(t) = map.neighbor(st.lane_id, *action) {
                    return t;
                }
            }
        }
        st.lane_id
    };
    let pos_at_horizon = |vid: u32| -> f64 {
        let st = world.state(vid).unwrap();
        st.s + st.v * p.horizon
    };

    let ego_lane = lane_of(ego_id);
    let ego_s = pos_at_horizon(ego_id);

    let mut front: Option<f64> = None;
    let mut rear: Option<f64> = None;
    for other in world.states() {
        if other.id == ego_id || lane_of(other.id) != ego_lane {
            continue;
        }
        let delta = pos_at_horizon(other.id) - ego_s;
        if delta >= 0.0 {
            if front.is_none_or(|f| delta < f) {
                front = Some(delta);
            }
        } else if rear.is_none_or(|r| -delta < r) {
            rear = Some(-delta);
        }
    }

    let u_pos = match front {
        Some(gap) if gap <= p.visibility => gap.min(p.visibility),
        _ => p.visibility,
    };
    let u_neg = match rear {
        Some(gap) => gap.min(p.visibility) - p.min_gap,
        None => p.visibility - p.min_gap,
    };
    u_pos + u_neg
}

/// Worst-case game decision: the ego (leader) maximizes its utility under
/// the followers' minimizing joint response. Followers are the nearest
/// rear vehicles in the current lane and in the adjacent lanes.
pub fn stackelberg_decide(world: &World, ego_id: u32, p: &StackelbergParams) -> SutDecision {
    let ego = world.state(ego_id).expect("ego exists");

    let follower_current = world
        .follower_in_lane(ego_id, ego.lane_id)
        .filter(|(_, gap)| *gap <= p.visibility)
        .map(|(id, _)| id);
    let follower_adjacent = [1i8, -1i8]
        .iter()
        .filter_map(|side| world.map().neighbor(ego.lane_id, *side))
        .filter_map(|lane| world.follower_in_lane(ego_id, lane))
        .filter(|(_, gap)| *gap <= p.visibility)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(id, _)| id);

    let f1_actions = follower_current.map_or(vec![0i8], |id| feasible_offsets(world, id));
    let f2_actions = follower_adjacent.map_or(vec![0i8], |id| feasible_offsets(world, id));
    let ego_actions = feasible_offsets(world, ego_id);

    let mut utilities = [None, None, None];
    let mut best: Option<(i8, f64)> = None;
    for &h in &ego_actions {
        let mut worst = f64::INFINITY;
        for &c1 in &f1_actions {
            for &c2 in &f2_actions {
                let mut players = vec![(ego_id, h)];
                if let Some(id) = follower_current {
                    players.push((id, c1));
                }
                if let Some(id) = follower_adjacent {
                    players.push((id, c2));
                }
                let u = stackelberg_profile_utility(world, ego_id, &players, p);
                if u < worst {
                    worst = u;
                }
            }
        }
        let slot = match h {
            1 => 0,
            0 => 1,
            _ => 2,
        };
        utilities[slot] = Some(worst);
        let better = match best {
            None => true,
            Some((bh, bu)) => worst > bu || (worst == bu && rank_action(world, h) < rank_action(world, bh)),
        };
        if better {
            best = Some((h, worst));
        }
    }

    SutDecision {
        lane_offset: best.map_or(0, |(h, _)| h),
        utilities,
    }
}

/// Tie order: maintain first, then the keep side, then the other side.
fn rank_action(world: &World, action: i8) -> u8 {
    if action == 0 {
        0
    } else if action == preferred_side(world) {
        1
    } else {
        2
    }
}

/// Dispatch a decision for the configured model.
pub fn sut_decide(kind: SutKind, world: &World, ego_id: u32, params: &SutParams) -> SutDecision {
    match kind {
        SutKind::Nilsson => nilsson_decide(world, ego_id, &params.nilsson),
        SutKind::Mobil => mobil_decide(world, ego_id, &params.mobil),
        SutKind::Stackelberg => stackelberg_decide(world, ego_id, &params.stackelberg),
    }
}
