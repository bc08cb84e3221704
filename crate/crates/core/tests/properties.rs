//! Property suites over randomized inputs: map topology, the rule filter,
//! the observation grid, divergence math, the worst-case game decider and
//! the simulation invariants.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use rampsim_core::fidelity::{js_divergence1, kde2, Density1D, GridSpec1, GridSpec2};
use rampsim_core::map::{parse_map, LaneId, RoadMap};
use rampsim_core::obs::{encode_decision_obs, DecisionObservation, GRID_CELLS};
use rampsim_core::sim::{
    detect_collisions, filter_action, run_scenario, BvBehavior, ControlInput, PolicyTag,
    ScenarioSetup, SimConfig, SutChoice, VehicleState, World, CUT_IN_RANGE_M,
};
use rampsim_core::sut::{stackelberg_decide, StackelbergParams, SutKind, SutParams};

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

fn world_of(states: Vec<VehicleState>) -> World {
    World::from_states(
        Arc::new(RoadMap::default_onramp()),
        SimConfig::default(),
        states,
    )
}

// ---------------------------------------------------------------- road map

/// Text of a random valid map: a left-to-right chain of lanes with one
/// ramp at either end.
fn random_map_text(n_main: usize, ramp_left: bool, total: f64, width: f64, ramp_end: f64) -> String {
    let n = n_main + 1;
    let mut lines = vec![format!("map {total} {width} left 33.33 25.0")];
    for slot in 0..n {
        let id = slot as u32 * 10 + 1;
        let left = (slot > 0).then(|| (slot as u32 - 1) * 10 + 1);
        let right = (slot + 1 < n).then(|| (slot as u32 + 1) * 10 + 1);
        let is_ramp = if ramp_left { slot == 0 } else { slot == n - 1 };
        let (start, end) = if is_ramp { (0.0, ramp_end) } else { (0.0, total) };
        let fmt_opt = |o: Option<u32>| o.map_or("-".to_string(), |v| v.to_string());
        lines.push(format!(
            "lane {id} {start} {end} {} {} {}",
            fmt_opt(left),
            fmt_opt(right),
            if is_ramp { "ramp" } else { "main" }
        ));
    }
    lines.join("\n")
}

proptest! {
    #[test]
    fn parsed_maps_have_symmetric_neighbors_and_round_trip(
        n_main in 1usize..6,
        ramp_left in any::<bool>(),
        total in 600.0f64..3000.0,
        width in 2.5f64..4.0,
        ramp_frac in 0.1f64..0.9,
    ) {
        let text = random_map_text(n_main, ramp_left, total, width, total * ramp_frac);
        let map = parse_map(&text).expect("generated maps are valid");

        for lane in &map.lanes {
            if let Some(l) = lane.left_neighbor {
                prop_assert_eq!(map.lane(l).unwrap().right_neighbor, Some(lane.id));
            }
            if let Some(r) = lane.right_neighbor {
                prop_assert_eq!(map.lane(r).unwrap().left_neighbor, Some(lane.id));
            }
        }

        let reparsed = parse_map(&map.to_text()).expect("serialized map reparses");
        prop_assert_eq!(reparsed.lanes.len(), map.lanes.len());
        for (a, b) in map.lanes.iter().zip(reparsed.lanes.iter()) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!(a.start_s, b.start_s);
            prop_assert_eq!(a.end_s, b.end_s);
            prop_assert_eq!(a.is_ramp, b.is_ramp);
        }

        for lane in &map.lanes {
            let horizon = map.lanes_in_horizon(lane.id).unwrap();
            prop_assert!(horizon.len() == 5);
            prop_assert_eq!(horizon[2], Some(lane.id));
            prop_assert!(horizon.iter().flatten().count() <= 5);
        }
    }
}

// ------------------------------------------------------------- rule filter

proptest! {
    /// Executed actions never leave the road and never land within the
    /// cut-in range of another vehicle.
    #[test]
    fn filter_never_allows_offroad_or_cut_in(
        placements in prop::collection::vec((0u32..5, 50.0f64..2300.0, 20.0f64..33.0), 2..8),
        request in -1i8..=1,
    ) {
        let map = RoadMap::default_onramp();
        let states: Vec<VehicleState> = placements
            .iter()
            .enumerate()
            .map(|(i, (lane_idx, s, v))| {
                let lane = map.lanes[*lane_idx as usize].id;
                let s = if map.is_ramp(lane) { s % 350.0 } else { *s };
                vehicle(i as u32, lane, s, *v)
            })
            .collect();
        let world = world_of(states);
        let (executed, _) = filter_action(
            &world,
            0,
            ControlInput { throttle: 0.0, lane_offset_request: request },
        )
        .unwrap();

        if executed.lane_offset_request != 0 {
            let ego = &world.states()[0];
            let target = world
                .map()
                .neighbor(ego.lane_id, executed.lane_offset_request)
                .expect("target lane exists");
            prop_assert!(world.map().lane_exists_at(target, ego.s), "off the road edge");
            for other in world.states().iter().skip(1) {
                if other.lane_id == target {
                    prop_assert!(
                        world.signed_delta_s(ego.s, other.s).abs() >= CUT_IN_RANGE_M,
                        "cut-in within 10 m"
                    );
                }
            }
        }

        // Filtering an already-executed action changes nothing.
        let (twice, modified) = filter_action(&world, 0, executed).unwrap();
        prop_assert_eq!(executed, twice);
        let _ = modified;
    }
}

// -------------------------------------------------------- observation grid

proptest! {
    /// A single SV placed at a known offset lands in the hand-computed
    /// cell and every encoded value stays in [-1, 1].
    #[test]
    fn grid_places_single_sv_in_expected_cell(
        rel_s in -19.9f64..104.9,
        slot_offset in -2i32..=2,
        v_ego in 0.0f64..33.33,
        v_sv in 0.0f64..33.33,
    ) {
        let map = RoadMap::default_onramp();
        let ego_lane = LaneId(2);
        let ego_slot = map.slot(ego_lane).unwrap() as i32;
        let sv_slot = ego_slot + slot_offset;
        prop_assume!(sv_slot >= 0 && (sv_slot as usize) < map.lanes.len());
        let sv_lane = map.lanes[sv_slot as usize].id;
        let ego_s = 1000.0;
        let sv_s = ego_s + rel_s;
        prop_assume!(map.lane_exists_at(sv_lane, sv_s));
        prop_assume!(rel_s.abs() > 1e-6);

        let world = world_of(vec![
            vehicle(0, ego_lane, ego_s, v_ego),
            vehicle(1, sv_lane, sv_s, v_sv),
        ]);
        let obs = encode_decision_obs(&world, 0);
        prop_assert_eq!(obs.grid.len(), GRID_CELLS);

        let expected_bin = ((rel_s + 20.0) / 5.0).floor() as usize;
        let expected_slot = (slot_offset + 2) as usize;
        prop_assert_eq!(obs.get(0, expected_slot, expected_bin), 1.0);
        prop_assert_eq!(obs.occupancy(), 1);
        for v in &obs.grid {
            prop_assert!((-1.0..=1.0).contains(v));
        }
        prop_assert!((0.0..=1.0).contains(&obs.ego_speed_norm));
    }

    /// With sparse traffic (no shared cells) occupancy equals the number
    /// of in-horizon vehicles.
    #[test]
    fn grid_occupancy_counts_in_horizon_svs(
        lanes in prop::collection::vec(1u32..5, 1..6),
        v in 20.0f64..33.0,
    ) {
        let ego_s = 1000.0;
        let mut states = vec![vehicle(0, LaneId(2), ego_s, v)];
        // One vehicle per lane spaced a bin apart so no two share a cell.
        for (i, lane) in lanes.iter().enumerate() {
            let s = ego_s + 10.0 + 11.0 * i as f64;
            states.push(vehicle(states.len() as u32, LaneId(*lane), s, v));
        }
        let world = world_of(states);
        let obs = encode_decision_obs(&world, 0);
        let map = RoadMap::default_onramp();
        let horizon = map.lanes_in_horizon(LaneId(2)).unwrap();
        let in_horizon = world
            .states()
            .iter()
            .skip(1)
            .filter(|s| horizon.contains(&Some(s.lane_id)))
            .count();
        prop_assert_eq!(obs.occupancy(), in_horizon);
    }
}

// ---------------------------------------------------------- JS divergence

#[test]
fn js_divergence_randomized_properties() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let bins = rng.gen_range(2..40);
        let spec = GridSpec1 {
            min: 0.0,
            max: 1.0,
            bins,
        };
        let random_density = |rng: &mut ChaCha12Rng| {
            let mut mass: Vec<f64> = (0..bins).map(|_| rng.gen_range(0.0..1.0)).collect();
            // Sparsify so zero cells are exercised.
            for m in mass.iter_mut() {
                if rng.gen_bool(0.3) {
                    *m = 0.0;
                }
            }
            let total: f64 = mass.iter().sum();
            if total == 0.0 {
                mass[0] = 1.0;
            } else {
                mass.iter_mut().for_each(|m| *m /= total);
            }
            Density1D {
                spec: spec.clone(),
                mass,
            }
        };
        let p = random_density(&mut rng);
        let q = random_density(&mut rng);

        let js_pq = js_divergence1(&p, &q).unwrap();
        let js_qp = js_divergence1(&q, &p).unwrap();
        assert!((js_pq - js_qp).abs() < 1e-12, "trial {trial}: asymmetric");
        assert!((0.0..=1.0).contains(&js_pq), "trial {trial}: out of range");
        assert!(js_divergence1(&p, &p).unwrap().abs() < 1e-12);
    }

    // Disjoint supports reach the upper bound exactly.
    let spec = GridSpec1 {
        min: 0.0,
        max: 1.0,
        bins: 6,
    };
    let p = Density1D {
        spec: spec.clone(),
        mass: vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
    };
    let q = Density1D {
        spec,
        mass: vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
    };
    assert!((js_divergence1(&p, &q).unwrap() - 1.0).abs() < 1e-12);

    // Hand-computed half-overlap case.
    let spec = GridSpec1 {
        min: 0.0,
        max: 1.0,
        bins: 3,
    };
    let p = Density1D {
        spec: spec.clone(),
        mass: vec![0.5, 0.5, 0.0],
    };
    let q = Density1D {
        spec,
        mass: vec![0.0, 0.5, 0.5],
    };
    assert!((js_divergence1(&p, &q).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn kde_is_invariant_under_sample_permutation() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut samples: Vec<(f64, f64)> = (0..200)
        .map(|_| (rng.gen_range(10.0..60.0), rng.gen_range(20.0..33.0)))
        .collect();
    let spec = GridSpec2 {
        x: GridSpec1 {
            min: 0.0,
            max: 70.0,
            bins: 25,
        },
        y: GridSpec1 {
            min: 15.0,
            max: 35.0,
            bins: 25,
        },
    };
    let before = kde2(&samples, &spec).unwrap();
    // Deterministic shuffle.
    for i in (1..samples.len()).rev() {
        let j = rng.gen_range(0..=i);
        samples.swap(i, j);
    }
    let after = kde2(&samples, &spec).unwrap();
    for (a, b) in before.mass.iter().zip(&after.mass) {
        assert!((a - b).abs() < 1e-12);
    }
}

// ------------------------------------------------- worst-case game decider

/// Independent flat enumeration of the three-player worst-case game,
/// following the documented rules: fixed followers (nearest rear in the
/// current lane; nearest rear across the adjacent lanes), feasibility
/// filtering per player, constant-speed rollout, capped front gap plus
/// rear margin utility, argmax over the followers' minimizing response.
fn stackelberg_oracle(world: &World, ego_id: u32, p: &StackelbergParams) -> i8 {
    let map = world.map();
    let ego = world.state(ego_id).unwrap();

    let feasible = |vid: u32| -> Vec<i8> {
        let st = world.state(vid).unwrap();
        let mut out = vec![0i8];
        for side in [1i8, -1i8] {
            let Some(target) = map.neighbor(st.lane_id, side) else {
                continue;
            };
            if !map.lane_exists_at(target, st.s) || map.is_ramp(target) {
                continue;
            }
            let blocked = world.states().iter().any(|o| {
                o.id != vid
                    && o.lane_id == target
                    && world.signed_delta_s(st.s, o.s).abs() < CUT_IN_RANGE_M
            });
            if !blocked {
                out.push(side);
            }
        }
        out
    };

    let rear_in = |lane: LaneId| -> Option<u32> {
        world
            .states()
            .iter()
            .filter(|o| o.id != ego_id && o.lane_id == lane)
            .filter_map(|o| {
                let gap = world.signed_delta_s(ego.s, o.s);
                (gap < 0.0 && -gap <= p.visibility).then(|| (o.id, -gap))
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(id, _)| id)
    };
    let f1 = rear_in(ego.lane_id);
    let f2 = [1i8, -1i8]
        .iter()
        .filter_map(|side| map.neighbor(ego.lane_id, *side))
        .filter_map(|lane| {
            world
                .states()
                .iter()
                .filter(|o| o.id != ego_id && o.lane_id == lane)
                .filter_map(|o| {
                    let gap = world.signed_delta_s(ego.s, o.s);
                    (gap < 0.0 && -gap <= p.visibility).then(|| (o.id, -gap))
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(id, _)| id);

    let utility = |h: i8, c1: i8, c2: i8| -> f64 {
        let lane_after = |vid: u32, action: i8| -> LaneId {
            let st = world.state(vid).unwrap();
            if action == 0 {
                st.lane_id
            } else {
                map.neighbor(st.lane_id, action).unwrap_or(st.lane_id)
            }
        };
        let mut lanes: std::collections::BTreeMap<u32, LaneId> = world
            .states()
            .iter()
            .map(|s| (s.id, s.lane_id))
            .collect();
        lanes.insert(ego_id, lane_after(ego_id, h));
        if let Some(id) = f1 {
            lanes.insert(id, lane_after(id, c1));
        }
        if let Some(id) = f2 {
            lanes.insert(id, lane_after(id, c2));
        }
        let pos = |vid: u32| {
            let st = world.state(vid).unwrap();
            st.s + st.v * p.horizon
        };
        let ego_lane = lanes[&ego_id];
        let ego_pos = pos(ego_id);
        let mut front: Option<f64> = None;
        let mut rear: Option<f64> = None;
        for o in world.states() {
            if o.id == ego_id || lanes[&o.id] != ego_lane {
                continue;
            }
            let d = pos(o.id) - ego_pos;
            if d >= 0.0 {
                if front.is_none() || d < front.unwrap() {
                    front = Some(d);
                }
            } else if rear.is_none() || -d < rear.unwrap() {
                rear = Some(-d);
            }
        }
        let u_pos = match front {
            Some(g) if g <= p.visibility => g,
            _ => p.visibility,
        };
        let u_neg = match rear {
            Some(g) => g.min(p.visibility) - p.min_gap,
            None => p.visibility - p.min_gap,
        };
        u_pos + u_neg
    };

    let f1_actions = f1.map_or(vec![0i8], feasible);
    let f2_actions = f2.map_or(vec![0i8], feasible);
    let rank = |a: i8| match a {
        0 => 0,
        1 => 1,
        _ => 2,
    };
    let mut best: Option<(i8, f64)> = None;
    for &h in &feasible(ego_id) {
        let mut worst = f64::INFINITY;
        for &c1 in &f1_actions {
            for &c2 in &f2_actions {
                worst = worst.min(utility(h, c1, c2));
            }
        }
        let better = match best {
            None => true,
            Some((bh, bu)) => worst > bu || (worst == bu && rank(h) < rank(bh)),
        };
        if better {
            best = Some((h, worst));
        }
    }
    best.map_or(0, |(h, _)| h)
}

#[test]
fn stackelberg_matches_brute_force_on_random_worlds() {
    let params = StackelbergParams::default();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    for trial in 0..1000 {
        let n = rng.gen_range(1..=6);
        let mut states = Vec::new();
        for i in 0..n {
            let lane = LaneId(rng.gen_range(1..5));
            let s = 800.0 + rng.gen_range(-150.0..150.0);
            let v = rng.gen_range(18.0..33.0);
            states.push(vehicle(i, lane, s, v));
        }
        let world = world_of(states);
        let expected = stackelberg_oracle(&world, 0, &params);
        let got = stackelberg_decide(&world, 0, &params).lane_offset;
        assert_eq!(
            got, expected,
            "trial {trial}: decider disagrees with enumeration\nworld: {:?}",
            world.states()
        );
    }
}

// --------------------------------------------------- simulation invariants

#[test]
fn scenario_respects_speed_box_and_forward_motion() {
    let map = Arc::new(RoadMap::default_onramp());
    let config = SimConfig {
        n_bvs: 10,
        seed: 4242,
        ..Default::default()
    };
    let setup = ScenarioSetup {
        bv: BvBehavior::RuleBased(SutKind::Mobil),
        sut: SutChoice {
            kind: SutKind::Stackelberg,
        },
        sut_params: SutParams::default(),
        n_steps: 600,
        debug_columns: false,
    };
    let log = run_scenario(Arc::clone(&map), &config, &setup).unwrap();

    let v_max = map.v_max;
    let dt = log.dt();
    for vid in log.vehicle_ids() {
        let rows: Vec<&rampsim_core::log::LogRow> = log.rows_for_vehicle(vid).collect();
        for pair in rows.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            assert!(cur.v_mps >= -1e-9 && cur.v_mps <= v_max + 1e-9, "speed box");
            assert!(cur.d_m.abs() <= 1.5 * map.lane_width, "lateral bound");
            let mut delta = cur.s_m - prev.s_m;
            if delta < -map.total_length / 2.0 {
                delta += map.total_length;
            }
            let respawned = prev.collision;
            assert!(
                respawned || (delta >= -1e-9 && delta <= v_max * dt + 1e-6),
                "vehicle {vid} moved {delta} m in one step"
            );
        }
    }
}

#[test]
fn collision_detection_is_pure_and_symmetric() {
    let mut rng = ChaCha12Rng::seed_from_u64(5150);
    for _ in 0..200 {
        let n = rng.gen_range(2..6);
        let states: Vec<VehicleState> = (0..n)
            .map(|i| {
                vehicle(
                    i,
                    LaneId(rng.gen_range(1..5)),
                    1000.0 + rng.gen_range(-15.0..15.0),
                    25.0,
                )
            })
            .collect();
        let world = world_of(states);
        let a = detect_collisions(&world);
        let b = detect_collisions(&world);
        assert_eq!(a, b);
        for (x, y) in &a {
            assert!(x < y, "pairs reported once, ordered");
        }
    }
}

#[test]
fn decision_grid_constant_is_five_hundred() {
    assert_eq!(GRID_CELLS, 500);
    assert_eq!(DecisionObservation::zeros().to_input().len(), 501);
}
