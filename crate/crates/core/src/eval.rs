//! Intelligence and complexity scoring of a trajectory log.
//!
//! Event detection is purely log-in/report-out: collisions come from the
//! edge-triggered flags, exposures from a TTC/deceleration episode rule,
//! lane changes from the executed-decision and lane-transition records,
//! and acceleration maneuvers from sustained |a| intervals.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::log::TrajectoryLog;
use crate::map::RoadMap;

/// TTC threshold marking a potentially dangerous condition, seconds.
pub const DANGER_TTC_S: f64 = 2.0;
/// Deceleration threshold marking a potentially dangerous condition.
pub const DANGER_DECEL: f64 = -6.0;
/// An exposure episode ends once the condition has been clear this long.
pub const EXPOSURE_COOLDOWN_S: f64 = 1.0;
/// Acceleration-maneuver detection: magnitude and minimum duration.
pub const AD_ACCEL_THRESHOLD: f64 = 1.0;
pub const AD_MIN_DURATION_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneChange {
    pub vehicle: u32,
    /// Step of the executed decision.
    pub start_step: u64,
    /// Step at which the vehicle center crossed into the target lane.
    pub end_step: u64,
}

/// Countable events extracted from one log.
#[derive(Debug, Clone, Default)]
pub struct EvalEvents {
    /// Collision count of the SUT.
    pub sut_collisions: u64,
    /// Exposure episodes to potentially dangerous conditions (SUT).
    pub exposures: u64,
    /// Completed lane changes of every vehicle.
    pub lane_changes: Vec<LaneChange>,
    /// Acceleration/deceleration maneuvers summed over background vehicles.
    pub ad_maneuvers_bv: u64,
    pub ad_maneuvers_sut: u64,
    /// Background vehicles inside the SUT's observation horizon per step.
    pub horizon_bvs: BTreeMap<u64, Vec<u32>>,
    pub dt: f64,
}

impl EvalEvents {
    pub fn sut_lane_changes(&self, sut_id: u32) -> Vec<&LaneChange> {
        self.lane_changes.iter().filter(|l| l.vehicle == sut_id).collect()
    }

    pub fn bv_lane_change_count(&self, sut_id: u32) -> u64 {
        self.lane_changes.iter().filter(|l| l.vehicle != sut_id).count() as u64
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub i_s: f64,
    pub i_e: f64,
    pub i_i: f64,
    /// Collision cap in the safety score.
    pub c_max: f64,
    /// Maximum vehicle count allowed around the SUT.
    pub h_cap: f64,
    /// Velocity fluctuation cap, m/s.
    pub dv_max: f64,
    /// Acceleration fluctuation cap, m/s^2.
    pub da_max: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            i_s: 0.4,
            i_e: 0.3,
            i_i: 0.3,
            c_max: 5.0,
            h_cap: 10.0,
            dv_max: 5.0,
            da_max: 3.0,
        }
    }
}

/// Complexity normalizers for exposures, lane changes and maneuvers.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityKs {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for ComplexityKs {
    fn default() -> Self {
        ComplexityKs {
            k1: 25.0,
            k2: 8.0,
            k3: 1400.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScoreReport {
    pub safety: f64,
    pub efficiency: f64,
    pub interaction: f64,
    pub intelligence: f64,
    pub weighted_safety: f64,
    pub weighted_efficiency: f64,
    pub weighted_interaction: f64,
    pub complexity: f64,
    pub collisions: u64,
    pub exposures: u64,
    pub mean_speed: f64,
    pub mean_horizon_density: f64,
    pub mean_lane_change_time_s: f64,
    pub speed_fluctuation: f64,
    pub accel_fluctuation: f64,
    pub bv_lane_changes_per_sut_change: f64,
    pub sut_lane_changes: u64,
    pub bv_lane_changes: u64,
    pub bv_ad_maneuvers: u64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("malformed log: {0}")]
    Malformed(String),
}

struct StepTable<'a> {
    steps: Vec<u64>,
    by_step: BTreeMap<u64, Vec<&'a crate::log::LogRow>>,
}

fn index_log(log: &TrajectoryLog) -> Result<StepTable<'_>, EvalError> {
    if log.rows.is_empty() {
        return Err(EvalError::Malformed("log has no rows".into()));
    }
    let mut by_step: BTreeMap<u64, Vec<&crate::log::LogRow>> = BTreeMap::new();
    for row in &log.rows {
        by_step.entry(row.step).or_default().push(row);
    }
    let steps: Vec<u64> = by_step.keys().copied().collect();
    Ok(StepTable { steps, by_step })
}

fn wrapped_delta(a: f64, b: f64, length: f64) -> f64 {
    let mut d = b - a;
    if d >= length / 2.0 {
        d -= length;
    } else if d < -length / 2.0 {
        d += length;
    }
    d
}

/// Completed lane changes of every vehicle: an executed decision followed
/// by the center crossing into the adjacent lane in the decided direction.
/// Implausible jumps (respawns) abort the open maneuver.
pub fn lane_change_events(log: &TrajectoryLog, map: &RoadMap) -> Vec<LaneChange> {
    let mut out = Vec::new();
    for vid in log.vehicle_ids() {
        let rows: Vec<&crate::log::LogRow> = log.rows_for_vehicle(vid).collect();
        let mut open: Option<(u64, i8)> = None;
        for pair in rows.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            if cur.executed_decision != 0 && open.is_none() {
                open = Some((cur.step, cur.executed_decision));
            }
            if cur.lane_id != prev.lane_id {
                let plausible_motion =
                    wrapped_delta(prev.s_m, cur.s_m, map.total_length).abs() < 50.0;
                let matches_open = open.is_some_and(|(_, dir)| {
                    match (map.slot(prev.lane_id), map.slot(cur.lane_id)) {
                        (Some(a), Some(b)) => b as isize - a as isize == -(dir as isize),
                        _ => false,
                    }
                });
                if plausible_motion && matches_open {
                    let (start, _) = open.take().unwrap();
                    out.push(LaneChange {
                        vehicle: vid,
                        start_step: start,
                        end_step: cur.step,
                    });
                } else {
                    // Respawn or other discontinuity: drop the open maneuver.
                    open = None;
                }
            }
        }
    }
    out
}

/// Extract every countable event from a trajectory log.
pub fn detect_events(
    log: &TrajectoryLog,
    sut_id: u32,
    map: &RoadMap,
    vehicle_length: f64,
) -> Result<EvalEvents, EvalError> {
    let table = index_log(log)?;
    let dt = log.dt();
    let mut events = EvalEvents {
        dt,
        ..Default::default()
    };

    // Collisions: edge-triggered flags on the SUT's rows.
    events.sut_collisions = log
        .rows
        .iter()
        .filter(|r| r.vehicle_id == sut_id && r.collision)
        .count() as u64;

    // Exposure episodes over TTC and deceleration.
    let mut active = false;
    let mut last_true: f64 = f64::NEG_INFINITY;
    for &step in &table.steps {
        let rows = &table.by_step[&step];
        let Some(sut) = rows.iter().find(|r| r.vehicle_id == sut_id) else {
            return Err(EvalError::Malformed(format!(
                "step {step} is missing the SUT row"
            )));
        };
        let t = sut.time_s;

        let mut ttc: Option<f64> = None;
        let mut best_gap = f64::INFINITY;
        for other in rows.iter().filter(|r| r.vehicle_id != sut_id) {
            if other.lane_id != sut.lane_id {
                continue;
            }
            let delta = wrapped_delta(sut.s_m, other.s_m, map.total_length);
            if delta <= 0.0 || delta >= best_gap {
                continue;
            }
            best_gap = delta;
            let closing = sut.v_mps - other.v_mps;
            let net_gap = delta - vehicle_length;
            ttc = (closing > 0.0 && net_gap > 0.0).then(|| net_gap / closing);
        }

        let danger = ttc.is_some_and(|t| t < DANGER_TTC_S) || sut.a_mps2 < DANGER_DECEL;
        if danger {
            if !active {
                events.exposures += 1;
                active = true;
            }
            last_true = t;
        } else if active && t - last_true >= EXPOSURE_COOLDOWN_S {
            active = false;
        }

        // Horizon membership: within two lane slots and the grid window.
        let sut_slot = map.slot(sut.lane_id);
        let mut members = Vec::new();
        if let Some(sut_slot) = sut_slot {
            for other in rows.iter().filter(|r| r.vehicle_id != sut_id) {
                let Some(slot) = map.slot(other.lane_id) else {
                    continue;
                };
                if (slot as isize - sut_slot as isize).abs() > 2 {
                    continue;
                }
                let delta = wrapped_delta(sut.s_m, other.s_m, map.total_length);
                if (-crate::obs::BACK_VIEW_M..crate::obs::FRONT_VIEW_M + crate::obs::BIN_STRIDE_M)
                    .contains(&delta)
                {
                    members.push(other.vehicle_id);
                }
            }
        }
        events.horizon_bvs.insert(step, members);
    }

    events.lane_changes = lane_change_events(log, map);

    // Acceleration maneuvers per vehicle.
    for vid in log.vehicle_ids() {
        let rows: Vec<&crate::log::LogRow> = log.rows_for_vehicle(vid).collect();
        let mut run_len = 0usize;
        let mut count = 0u64;
        for row in &rows {
            if row.a_mps2.abs() > AD_ACCEL_THRESHOLD {
                run_len += 1;
            } else {
                if run_len as f64 * dt >= AD_MIN_DURATION_S {
                    count += 1;
                }
                run_len = 0;
            }
        }
        if run_len as f64 * dt >= AD_MIN_DURATION_S {
            count += 1;
        }
        if vid == sut_id {
            events.ad_maneuvers_sut = count;
        } else {
            events.ad_maneuvers_bv += count;
        }
    }

    Ok(events)
}

/// Safety score from collision and exposure counts.
pub fn score_safety(events: &EvalEvents, weights: &ScoreWeights) -> f64 {
    let c = events.sut_collisions as f64;
    let e = events.exposures as f64;
    0.7 * (1.0 - c.min(weights.c_max) / weights.c_max) + 0.3 * (-e).exp()
}

/// Driving efficiency from mean speed, horizon density and lane-change time.
pub fn score_efficiency(
    log: &TrajectoryLog,
    events: &EvalEvents,
    sut_id: u32,
    weights: &ScoreWeights,
    v_max: f64,
) -> f64 {
    let sut_rows: Vec<&crate::log::LogRow> = log.rows_for_vehicle(sut_id).collect();
    let mean_speed = if sut_rows.is_empty() {
        0.0
    } else {
        sut_rows.iter().map(|r| r.v_mps).sum::<f64>() / sut_rows.len() as f64
    };
    let density = mean_horizon_density(events);
    let t_l = mean_lane_change_time(events, sut_id);
    0.5 * ((density * mean_speed).sqrt() / (weights.h_cap * v_max) + (-t_l / 3.0).exp())
}

pub fn mean_horizon_density(events: &EvalEvents) -> f64 {
    if events.horizon_bvs.is_empty() {
        return 0.0;
    }
    events.horizon_bvs.values().map(|v| v.len() as f64).sum::<f64>()
        / events.horizon_bvs.len() as f64
}

/// Mean SUT lane-change duration in seconds; zero when no change completed.
pub fn mean_lane_change_time(events: &EvalEvents, sut_id: u32) -> f64 {
    let changes = events.sut_lane_changes(sut_id);
    if changes.is_empty() {
        return 0.0;
    }
    changes
        .iter()
        .map(|l| (l.end_step - l.start_step) as f64 * events.dt)
        .sum::<f64>()
        / changes.len() as f64
}

/// Disturbance statistics of horizon BVs during the SUT's lane changes:
/// (mean |speed delta|, mean |accel delta|, BV lane changes per episode).
pub fn interaction_stats(
    log: &TrajectoryLog,
    events: &EvalEvents,
    sut_id: u32,
) -> (f64, f64, f64) {
    let changes = events.sut_lane_changes(sut_id);
    if changes.is_empty() {
        return (0.0, 0.0, 0.0);
    }

    let mut by_vehicle_step: BTreeMap<(u32, u64), (f64, f64)> = BTreeMap::new();
    for row in &log.rows {
        by_vehicle_step.insert((row.vehicle_id, row.step), (row.v_mps, row.a_mps2));
    }

    let mut dv_sum = 0.0;
    let mut da_sum = 0.0;
    let mut n = 0usize;
    let mut bv_changes = 0u64;
    for change in &changes {
        for step in change.start_step..=change.end_step {
            let Some(members) = events.horizon_bvs.get(&step) else {
                continue;
            };
            for &vid in members {
                let (Some(&(v1, a1)), Some(&(v0, a0))) = (
                    by_vehicle_step.get(&(vid, step)),
                    step.checked_sub(1).and_then(|p| by_vehicle_step.get(&(vid, p))),
                ) else {
                    continue;
                };
                dv_sum += (v1 - v0).abs();
                da_sum += (a1 - a0).abs();
                n += 1;
            }
        }
        bv_changes += events
            .lane_changes
            .iter()
            .filter(|l| {
                l.vehicle != sut_id
                    && (change.start_step..=change.end_step).contains(&l.start_step)
                    && events
                        .horizon_bvs
                        .get(&l.start_step)
                        .is_some_and(|m| m.contains(&l.vehicle))
            })
            .count() as u64;
    }

    let dv = if n > 0 { dv_sum / n as f64 } else { 0.0 };
    let da = if n > 0 { da_sum / n as f64 } else { 0.0 };
    let l_bar = bv_changes as f64 / changes.len() as f64;
    (dv, da, l_bar)
}

/// Interaction utility from the fluctuation and disturbance statistics.
/// A SUT that never changed lanes inflicted no disturbance and scores 1.
pub fn score_interaction(
    log: &TrajectoryLog,
    events: &EvalEvents,
    sut_id: u32,
    weights: &ScoreWeights,
) -> f64 {
    if events.sut_lane_changes(sut_id).is_empty() {
        return 1.0;
    }
    let (dv, da, l_bar) = interaction_stats(log, events, sut_id);
    interaction_from_stats(dv, da, l_bar, weights)
}

pub fn interaction_from_stats(dv: f64, da: f64, l_bar: f64, weights: &ScoreWeights) -> f64 {
    (2.0 - dv.clamp(0.0, weights.dv_max) / weights.dv_max
        - da.clamp(0.0, weights.da_max) / weights.da_max
        + (-l_bar.sqrt()).exp())
        / 3.0
}

/// Weighted sum of the three sub-scores.
pub fn score_intelligence(i_s: f64, i_e: f64, i_i: f64, weights: &ScoreWeights) -> f64 {
    weights.i_s * i_s + weights.i_e * i_e + weights.i_i * i_i
}

/// Scenario complexity from exposures, lane changes and maneuvers.
pub fn score_complexity(exposures: f64, lane_changes: f64, ad_maneuvers: f64, ks: &ComplexityKs) -> f64 {
    0.4 * (1.0 - (-exposures / ks.k1).exp())
        + 0.3 * (2.0 - (-lane_changes / ks.k2).exp() - (-ad_maneuvers / ks.k3).exp())
}

/// Score one log end to end.
pub fn compute_report(
    log: &TrajectoryLog,
    map: &RoadMap,
    sut_id: u32,
    vehicle_length: f64,
    weights: &ScoreWeights,
    ks: &ComplexityKs,
) -> Result<ScoreReport, EvalError> {
    let events = detect_events(log, sut_id, map, vehicle_length)?;
    let i_s = score_safety(&events, weights);
    let i_e = score_efficiency(log, &events, sut_id, weights, map.v_max);
    let i_i = score_interaction(log, &events, sut_id, weights);
    let intelligence = score_intelligence(i_s, i_e, i_i, weights);
    let (dv, da, l_bar) = interaction_stats(log, &events, sut_id);
    let sut_rows: Vec<&crate::log::LogRow> = log.rows_for_vehicle(sut_id).collect();
    let mean_speed = if sut_rows.is_empty() {
        0.0
    } else {
        sut_rows.iter().map(|r| r.v_mps).sum::<f64>() / sut_rows.len() as f64
    };
    Ok(ScoreReport {
        safety: i_s,
        efficiency: i_e,
        interaction: i_i,
        intelligence,
        weighted_safety: weights.i_s * i_s,
        weighted_efficiency: weights.i_e * i_e,
        weighted_interaction: weights.i_i * i_i,
        complexity: score_complexity(
            events.exposures as f64,
            events.bv_lane_change_count(sut_id) as f64,
            events.ad_maneuvers_bv as f64,
            ks,
        ),
        collisions: events.sut_collisions,
        exposures: events.exposures,
        mean_speed,
        mean_horizon_density: mean_horizon_density(&events),
        mean_lane_change_time_s: mean_lane_change_time(&events, sut_id),
        speed_fluctuation: dv,
        accel_fluctuation: da,
        bv_lane_changes_per_sut_change: l_bar,
        sut_lane_changes: events.sut_lane_changes(sut_id).len() as u64,
        bv_lane_changes: events.bv_lane_change_count(sut_id),
        bv_ad_maneuvers: events.ad_maneuvers_bv,
    })
}

/// TTC samples of the SUT against its same-lane leader, one per step where
/// the TTC is defined (closing on a leader).
pub fn ttc_series(
    log: &TrajectoryLog,
    sut_id: u32,
    map: &RoadMap,
    vehicle_length: f64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let Ok(table) = index_log(log) else {
        return out;
    };
    for &step in &table.steps {
        let rows = &table.by_step[&step];
        let Some(sut) = rows.iter().find(|r| r.vehicle_id == sut_id) else {
            continue;
        };
        let mut best: Option<f64> = None;
        let mut best_gap = f64::INFINITY;
        for other in rows.iter().filter(|r| r.vehicle_id != sut_id) {
            if other.lane_id != sut.lane_id {
                continue;
            }
            let delta = wrapped_delta(sut.s_m, other.s_m, map.total_length);
            if delta <= 0.0 || delta >= best_gap {
                continue;
            }
            best_gap = delta;
            let closing = sut.v_mps - other.v_mps;
            let net = delta - vehicle_length;
            best = (closing > 0.0 && net > 0.0).then(|| net / closing);
        }
        if let Some(t) = best {
            out.push((sut.time_s, t));
        }
    }
    out
}

/// Mean driving speed per vehicle over the whole log.
pub fn mean_speed_per_vehicle(log: &TrajectoryLog) -> Vec<(u32, f64)> {
    log.vehicle_ids()
        .into_iter()
        .map(|vid| {
            let rows: Vec<&crate::log::LogRow> = log.rows_for_vehicle(vid).collect();
            let mean = rows.iter().map(|r| r.v_mps).sum::<f64>() / rows.len() as f64;
            (vid, mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::LogRow;
    use crate::map::LaneId;
    use crate::sim::PolicyTag;

    fn row(step: u64, vid: u32, lane: u32, s: f64, v: f64, a: f64) -> LogRow {
        LogRow {
            step,
            time_s: step as f64 * 0.1,
            vehicle_id: vid,
            policy: if vid == 0 { PolicyTag::Sut } else { PolicyTag::Mutual },
            lane_id: LaneId(lane),
            s_m: s,
            d_m: 0.0,
            v_mps: v,
            a_mps2: a,
            yaw_rad: 0.0,
            decision: 0,
            throttle: 0.0,
            executed_decision: 0,
            collision: false,
        }
    }

    fn quiet_convoy(steps: u64) -> TrajectoryLog {
        let mut log = TrajectoryLog::new();
        for step in 0..=steps {
            let s = step as f64 * 3.0;
            log.push(row(step, 0, 2, 100.0 + s, 30.0, 0.0));
            log.push(row(step, 1, 2, 180.0 + s, 30.0, 0.0));
        }
        log
    }

    #[test]
    fn quiet_convoy_has_no_events() {
        let map = RoadMap::default_onramp();
        let log = quiet_convoy(100);
        let ev = detect_events(&log, 0, &map, 4.5).unwrap();
        assert_eq!(ev.sut_collisions, 0);
        assert_eq!(ev.exposures, 0);
        assert_eq!(ev.ad_maneuvers_bv + ev.ad_maneuvers_sut, 0);
        assert!(ev.lane_changes.is_empty());
    }

    #[test]
    fn short_ttc_dip_counts_one_exposure() {
        // Leader 10 m net gap, closing at 6 m/s: TTC = 1.67 s for three
        // steps, then the gap opens again.
        let map = RoadMap::default_onramp();
        let mut log = TrajectoryLog::new();
        for step in 0..=60u64 {
            let closing = (3..6).contains(&step);
            let gap = if closing { 14.0 } else { 80.0 };
            let v_lead = if closing { 24.0 } else { 31.0 };
            log.push(row(step, 0, 2, 100.0, 30.0, 0.0));
            log.push(row(step, 1, 2, 100.0 + gap, v_lead, 0.0));
        }
        let ev = detect_events(&log, 0, &map, 4.5).unwrap();
        assert_eq!(ev.exposures, 1);
    }

    #[test]
    fn opening_gap_never_exposes() {
        let map = RoadMap::default_onramp();
        let mut log = TrajectoryLog::new();
        for step in 0..=50u64 {
            log.push(row(step, 0, 2, 100.0, 25.0, 0.0));
            log.push(row(step, 1, 2, 106.0 + step as f64, 30.0, 0.0));
        }
        let ev = detect_events(&log, 0, &map, 4.5).unwrap();
        assert_eq!(ev.exposures, 0);
    }

    #[test]
    fn quiet_suffix_leaves_counts_unchanged() {
        let map = RoadMap::default_onramp();
        let base = quiet_convoy(50);
        let extended = quiet_convoy(400);
        let a = detect_events(&base, 0, &map, 4.5).unwrap();
        let b = detect_events(&extended, 0, &map, 4.5).unwrap();
        assert_eq!(a.sut_collisions, b.sut_collisions);
        assert_eq!(a.exposures, b.exposures);
        assert_eq!(a.lane_changes.len(), b.lane_changes.len());
        assert_eq!(a.ad_maneuvers_bv, b.ad_maneuvers_bv);
    }

    #[test]
    fn safety_hand_cases() {
        let w = ScoreWeights::default();
        let mut ev = EvalEvents::default();
        assert_eq!(score_safety(&ev, &w), 1.0);

        ev.sut_collisions = 2;
        ev.exposures = 38;
        let s = score_safety(&ev, &w);
        assert!((s - (0.7 * 0.6 + 0.3 * (-38.0f64).exp())).abs() < 1e-12);
        assert!((s - 0.42).abs() < 1e-9);

        ev.sut_collisions = 99;
        ev.exposures = 10_000;
        assert!(score_safety(&ev, &w) < 1e-9);
    }

    #[test]
    fn efficiency_hand_case() {
        // h = 4, v = 25, H = 10, v_max = 33.33, T_l = 3:
        // 0.5 * (sqrt(100)/333.3 + e^-1) ~ 0.199.
        let w = ScoreWeights::default();
        let mut log = TrajectoryLog::new();
        let mut ev = EvalEvents {
            dt: 0.1,
            ..Default::default()
        };
        for step in 0..=99u64 {
            log.push(row(step, 0, 2, 100.0 + step as f64, 25.0, 0.0));
            ev.horizon_bvs.insert(step, vec![1, 2, 3, 4]);
        }
        ev.lane_changes.push(LaneChange {
            vehicle: 0,
            start_step: 10,
            end_step: 40,
        });
        let i_e = score_efficiency(&log, &ev, 0, &w, 33.33);
        let expected = 0.5 * ((4.0f64 * 25.0).sqrt() / (10.0 * 33.33) + (-1.0f64).exp());
        assert!((i_e - expected).abs() < 1e-12);
        assert!((i_e - 0.199).abs() < 5e-4, "i_e = {i_e}");
    }

    #[test]
    fn longer_lane_changes_strictly_reduce_efficiency() {
        let w = ScoreWeights::default();
        let log = quiet_convoy(100);
        let mut base = detect_events(&log, 0, &RoadMap::default_onramp(), 4.5).unwrap();
        base.lane_changes.push(LaneChange {
            vehicle: 0,
            start_step: 0,
            end_step: 30,
        });
        let short = score_efficiency(&log, &base, 0, &w, 33.33);
        base.lane_changes[0].end_step = 60;
        let long = score_efficiency(&log, &base, 0, &w, 33.33);
        assert!(long < short);
    }

    #[test]
    fn interaction_hand_cases() {
        let w = ScoreWeights::default();
        // No SUT lane change: vacuous disturbance.
        let log = quiet_convoy(20);
        let ev = detect_events(&log, 0, &RoadMap::default_onramp(), 4.5).unwrap();
        assert_eq!(score_interaction(&log, &ev, 0, &w), 1.0);

        // Hand substitution: (2 - 0.2 - 0.2 + e^-1) / 3.
        let i = interaction_from_stats(1.0, 0.6, 1.0, &w);
        assert!((i - (2.0 - 0.2 - 0.2 + (-1.0f64).exp()) / 3.0).abs() < 1e-12);
        assert!((i - 0.656).abs() < 1e-3);

        // Saturated fluctuations and unbounded disturbance floor at 0.
        let worst = interaction_from_stats(99.0, 99.0, 1e12, &w);
        assert!(worst >= 0.0 && worst < 1e-3);
    }

    #[test]
    fn intelligence_is_exact_weighted_sum() {
        let unit = ScoreWeights {
            i_s: 1.0,
            i_e: 1.0,
            i_i: 1.0,
            ..Default::default()
        };
        let i = score_intelligence(0.336, 0.040, 0.091, &unit);
        assert!((i - 0.467).abs() < 1e-12);

        let w = ScoreWeights::default();
        assert!((score_intelligence(1.0, 1.0, 1.0, &w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complexity_formula_cases() {
        let ks = ComplexityKs::default();
        assert_eq!(score_complexity(0.0, 0.0, 0.0, &ks), 0.0);
        let c = score_complexity(38.0, 13.0, 1543.0, &ks);
        assert!((c - 0.754).abs() < 5e-4, "c = {c}");
        let sup = score_complexity(1e12, 1e12, 1e12, &ks);
        assert!((sup - 1.0).abs() < 1e-9);
    }

    #[test]
    fn complexity_monotone_in_each_argument() {
        let ks = ComplexityKs::default();
        let mut prev = -1.0;
        for e in 0..50 {
            let c = score_complexity(e as f64, 5.0, 100.0, &ks);
            assert!(c >= prev);
            prev = c;
        }
        prev = -1.0;
        for lc in 0..50 {
            let c = score_complexity(5.0, lc as f64, 100.0, &ks);
            assert!(c >= prev);
            prev = c;
        }
        prev = -1.0;
        for ad in 0..50 {
            let c = score_complexity(5.0, 5.0, (ad * 100) as f64, &ks);
            assert!(c >= prev);
            prev = c;
        }
    }
}
