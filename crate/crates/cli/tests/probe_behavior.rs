use rampsim_core::eval::lane_change_events;
use rampsim_core::map::RoadMap;
use rampsim_core::sim::{run_scenario, BvBehavior, PolicyTag, ScenarioSetup, SimConfig, SutChoice};
use rampsim_core::sut::{SutKind, SutParams};
use rampsim_core::train::PolicyBundle;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

#[test]
#[ignore]
fn probe_lc_frequency_ordering() {
    let bundle = PolicyBundle::read(Path::new("../../out/desk/train/bundle.txt")).unwrap();
    let policies = bundle.load_policies().unwrap();
    let map = Arc::new(RoadMap::default_onramp());

    let mut per_seed: Vec<BTreeMap<PolicyTag, f64>> = Vec::new();
    for seed in 1000..1010u64 {
        let config = SimConfig { n_bvs: 20, seed, ..Default::default() };
        let setup = ScenarioSetup {
            bv: BvBehavior::Drl(Box::new(policies.clone())),
            sut: SutChoice { kind: SutKind::Mobil },
            sut_params: SutParams::default(),
            n_steps: 3000,
            debug_columns: false,
        };
        let log = run_scenario(Arc::clone(&map), &config, &setup).unwrap();
        let tag_of: BTreeMap<u32, PolicyTag> = log.rows.iter().map(|r| (r.vehicle_id, r.policy)).collect();
        let mut counts: BTreeMap<PolicyTag, usize> = BTreeMap::new();
        let mut members: BTreeMap<PolicyTag, usize> = BTreeMap::new();
        for (_, tag) in tag_of.iter() {
            *members.entry(*tag).or_default() += 1;
        }
        for c in lane_change_events(&log, &map) {
            *counts.entry(tag_of[&c.vehicle]).or_default() += 1;
        }
        let mut rates = BTreeMap::new();
        for tag in [PolicyTag::Competitive, PolicyTag::Mutual, PolicyTag::Cooperative] {
            let rate = *counts.get(&tag).unwrap_or(&0) as f64 / members[&tag] as f64;
            rates.insert(tag, rate);
        }
        println!("seed {seed}: com {:.1} mut {:.1} coo {:.1}", rates[&PolicyTag::Competitive], rates[&PolicyTag::Mutual], rates[&PolicyTag::Cooperative]);
        per_seed.push(rates);
    }
    let wins = |a: PolicyTag, b: PolicyTag| per_seed.iter().filter(|r| r[&a] > r[&b]).count();
    println!("com>mut: {}/10, mut>coo: {}/10", wins(PolicyTag::Competitive, PolicyTag::Mutual), wins(PolicyTag::Mutual, PolicyTag::Cooperative));
}
