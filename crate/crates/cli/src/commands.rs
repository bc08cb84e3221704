//! The four subcommands: train, simulate, evaluate, fidelity.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rampsim_core::eval::{
    compute_report, mean_speed_per_vehicle, ttc_series, ScoreReport, ScoreWeights,
};
use rampsim_core::fidelity::{
    classify_lane_changes_sim, classify_lane_changes_tracks, extract_pairs_sim,
    extract_pairs_tracks, ingest_highd, kde1, kde2, pooled_grid1, pooled_grid2, similarity,
    Density1D, Density2D, LaneChangeKind, PairKind,
};
use rampsim_core::log::{fmt_sig, TrajectoryLog};
use rampsim_core::map::RoadMap;
use rampsim_core::sim::{run_scenario, BvBehavior, PolicyTag, ScenarioSetup, SutChoice};
use rampsim_core::train::{
    curriculum_plan, make_env, run_curriculum, train_stage, PolicyBundle, StageName, TrainError,
};

use crate::config::{BvChoice, RunConfig};
use crate::CliError;

fn map_train_error(e: TrainError) -> CliError {
    match e {
        TrainError::MissingPrerequisite { .. } | TrainError::Bundle(_) => CliError::user(e),
        TrainError::Net(_) => CliError::user(e),
        other => CliError::internal(other),
    }
}

fn load_map(config: &RunConfig) -> Result<Arc<RoadMap>, CliError> {
    let text = fs::read_to_string(&config.run.map).map_err(|e| {
        CliError::user(format!("cannot read map {}: {e}", config.run.map.display()))
    })?;
    RoadMap::parse(&text)
        .map(Arc::new)
        .map_err(|e| CliError::user(format!("{}: {e}", config.run.map.display())))
}

/// Train the curriculum (or one stage). Returns the produced artifact paths.
pub fn cmd_train(
    config: &RunConfig,
    stage: Option<&str>,
    dry_run: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let training = config.training_config();
    let map = load_map(config)?;

    if dry_run {
        println!("stage plan ({}):", training.out_dir.display());
        for (name, cached) in curriculum_plan(&training) {
            println!(
                "  {name}: {}",
                if cached { "cached" } else { "will train" }
            );
        }
        return Ok(Vec::new());
    }

    if let Some(stage_str) = stage {
        let name = StageName::parse(stage_str).ok_or_else(|| {
            CliError::user(format!(
                "unknown stage `{stage_str}`; expected one of {}",
                StageName::ALL.map(|s| s.file_stem()).join(", ")
            ))
        })?;
        let stage = training.stage(name);
        let mut env = make_env(&stage, map, &training).map_err(map_train_error)?;
        println!("training stage {name}");
        let out = train_stage(&stage, env.as_mut(), training.td3_for(name), &training)
            .map_err(map_train_error)?;
        println!(
            "stage {name}: {} env steps, {} episodes, converged = {}",
            out.env_steps, out.episodes, out.converged
        );
        return Ok(vec![out.weights_path, out.curve_path]);
    }

    let bundle = run_curriculum(map, &training, |name, skipped| {
        if skipped {
            println!("stage {name}: cached, skipping");
        } else {
            println!("stage {name}: training");
        }
    })
    .map_err(map_train_error)?;
    let mut paths: Vec<PathBuf> = bundle.entries.values().map(|(p, _)| p.clone()).collect();
    paths.push(training.bundle_path());
    println!("bundle written to {}", training.bundle_path().display());
    Ok(paths)
}

fn scenario_setup(config: &RunConfig) -> Result<ScenarioSetup, CliError> {
    let bv = match config.scenario.bvs {
        BvChoice::Drl => {
            let bundle_path = config
                .scenario
                .bundle
                .clone()
                .unwrap_or_else(|| config.training.dir.join("bundle.txt"));
            let bundle = PolicyBundle::read(&bundle_path).map_err(map_train_error)?;
            let policies = bundle.load_policies().map_err(map_train_error)?;
            BvBehavior::Drl(Box::new(policies))
        }
        BvChoice::Nilsson => BvBehavior::RuleBased(rampsim_core::sut::SutKind::Nilsson),
        BvChoice::Mobil => BvBehavior::RuleBased(rampsim_core::sut::SutKind::Mobil),
    };
    Ok(ScenarioSetup {
        bv,
        sut: SutChoice {
            kind: config.scenario.sut.to_kind(),
        },
        sut_params: config.sut_params.clone(),
        n_steps: config.scenario.n_steps,
        debug_columns: config.scenario.debug_columns,
    })
}

fn simulate_once(config: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let map = load_map(config)?;
    let sim = config.sim.to_sim_config(seed);
    let setup = scenario_setup(config)?;
    let log = run_scenario(map, &sim, &setup).map_err(CliError::internal)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(CliError::internal)?;
    }
    fs::write(out, log.to_csv_string()).map_err(CliError::internal)?;

    // The manifest is itself a loadable config reproducing this run.
    let mut echo = config.clone();
    echo.run.seed = seed;
    let manifest = out.with_extension("manifest.toml");
    fs::write(&manifest, echo.to_toml()).map_err(CliError::internal)?;
    Ok(())
}

/// Run one or more seeded scenarios; returns the log paths.
pub fn cmd_simulate(
    config: &RunConfig,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
    runs: usize,
    parallel: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let base_seed = seed_override.unwrap_or(config.run.seed);
    let label = format!("{:?}", config.scenario.sut).to_lowercase();

    let out_path = |seed: u64| -> PathBuf {
        match (&out, runs) {
            (Some(p), 1) => p.clone(),
            (Some(p), _) => p.with_extension(format!("seed{seed}.csv")),
            (None, _) => config
                .run
                .out_dir
                .join(format!("scenario-{label}-seed{seed}.csv")),
        }
    };

    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed + i).collect();
    let mut paths = Vec::new();
    if parallel && runs > 1 {
        let results: Vec<Result<PathBuf, CliError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    let path = out_path(seed);
                    scope.spawn(move || {
                        simulate_once(config, seed, &path)?;
                        Ok(path)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        });
        for r in results {
            paths.push(r?);
        }
    } else {
        for seed in seeds {
            let path = out_path(seed);
            simulate_once(config, seed, &path)?;
            paths.push(path);
        }
    }
    for p in &paths {
        println!("log written to {}", p.display());
    }
    Ok(paths)
}

fn read_log(path: &Path) -> Result<TrajectoryLog, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::user(format!("cannot read log {}: {e}", path.display())))?;
    TrajectoryLog::from_csv_str(&text)
        .map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn find_sut_id(log: &TrajectoryLog) -> u32 {
    log.rows
        .iter()
        .find(|r| r.policy == PolicyTag::Sut)
        .map(|r| r.vehicle_id)
        .unwrap_or(0)
}

/// Parse `is=0.4,ie=0.3,ii=0.3` style weight overrides.
pub fn parse_weight_override(spec: &str, base: &ScoreWeights) -> Result<ScoreWeights, CliError> {
    let mut w = base.clone();
    for part in spec.split(',') {
        let Some((key, value)) = part.split_once('=') else {
            return Err(CliError::user(format!(
                "bad weight override `{part}`; expected key=value"
            )));
        };
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::user(format!("bad weight value `{value}`")))?;
        match key.trim() {
            "is" => w.i_s = value,
            "ie" => w.i_e = value,
            "ii" => w.i_i = value,
            other => {
                return Err(CliError::user(format!(
                    "unknown weight `{other}`; expected is, ie or ii"
                )))
            }
        }
    }
    let sum = w.i_s + w.i_e + w.i_i;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CliError::user(format!(
            "overridden weights must sum to 1, got {sum}"
        )));
    }
    Ok(w)
}

fn report_text(report: &ScoreReport, weights: &ScoreWeights) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: f64| out.push_str(&format!("{k} = {}\n", fmt_sig(v, 6)));
    kv("safety", report.safety);
    kv("efficiency", report.efficiency);
    kv("interaction", report.interaction);
    kv("intelligence", report.intelligence);
    kv("weighted_safety", report.weighted_safety);
    kv("weighted_efficiency", report.weighted_efficiency);
    kv("weighted_interaction", report.weighted_interaction);
    kv("complexity", report.complexity);
    kv("collisions", report.collisions as f64);
    kv("exposures", report.exposures as f64);
    kv("mean_speed_mps", report.mean_speed);
    kv("mean_horizon_density", report.mean_horizon_density);
    kv("mean_lane_change_time_s", report.mean_lane_change_time_s);
    kv("speed_fluctuation_mps", report.speed_fluctuation);
    kv("accel_fluctuation_mps2", report.accel_fluctuation);
    kv("bv_lane_changes_per_sut_change", report.bv_lane_changes_per_sut_change);
    kv("sut_lane_changes", report.sut_lane_changes as f64);
    kv("bv_lane_changes", report.bv_lane_changes as f64);
    kv("bv_ad_maneuvers", report.bv_ad_maneuvers as f64);
    kv("weight_is", weights.i_s);
    kv("weight_ie", weights.i_e);
    kv("weight_ii", weights.i_i);
    out
}

/// Score one or more logs; with several logs a comparative table sorted by
/// intelligence is also produced.
pub fn cmd_evaluate(
    config: &RunConfig,
    logs: &[PathBuf],
    weights_override: Option<&str>,
) -> Result<Vec<PathBuf>, CliError> {
    let map = load_map(config)?;
    let weights = match weights_override {
        Some(spec) => parse_weight_override(spec, &config.eval)?,
        None => config.eval.clone(),
    };
    fs::create_dir_all(&config.run.out_dir).map_err(CliError::internal)?;

    let mut outputs = Vec::new();
    let mut table: Vec<(String, ScoreReport)> = Vec::new();
    for log_path in logs {
        let log = read_log(log_path)?;
        let sut_id = find_sut_id(&log);
        let report = compute_report(
            &log,
            &map,
            sut_id,
            config.sim.vehicle_length,
            &weights,
            &config.complexity,
        )
        .map_err(CliError::user)?;

        let stem = log_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "log".into());
        let txt_path = config.run.out_dir.join(format!("{stem}.report.txt"));
        fs::write(&txt_path, report_text(&report, &weights)).map_err(CliError::internal)?;
        let json_path = config.run.out_dir.join(format!("{stem}.report.json"));
        fs::write(
            &json_path,
            serde_json::to_string_pretty(&report).map_err(CliError::internal)?,
        )
        .map_err(CliError::internal)?;

        let mut ttc_csv = String::from("time_s,ttc_s\n");
        for (t, ttc) in ttc_series(&log, sut_id, &map, config.sim.vehicle_length) {
            ttc_csv.push_str(&format!("{},{}\n", fmt_sig(t, 6), fmt_sig(ttc, 6)));
        }
        let ttc_path = config.run.out_dir.join(format!("{stem}.ttc.csv"));
        fs::write(&ttc_path, ttc_csv).map_err(CliError::internal)?;

        let mut speeds_csv = String::from("vehicle_id,mean_speed_mps\n");
        for (vid, mean) in mean_speed_per_vehicle(&log) {
            speeds_csv.push_str(&format!("{vid},{}\n", fmt_sig(mean, 6)));
        }
        let speeds_path = config.run.out_dir.join(format!("{stem}.speeds.csv"));
        fs::write(&speeds_path, speeds_csv).map_err(CliError::internal)?;

        println!("{stem}: intelligence = {}", fmt_sig(report.intelligence, 6));
        outputs.extend([txt_path, json_path, ttc_path, speeds_path]);
        table.push((stem, report));
    }

    if table.len() > 1 {
        table.sort_by(|a, b| b.1.intelligence.partial_cmp(&a.1.intelligence).unwrap());
        let mut cmp = String::from("log,safety,efficiency,interaction,intelligence,complexity\n");
        for (stem, r) in &table {
            cmp.push_str(&format!(
                "{stem},{},{},{},{},{}\n",
                fmt_sig(r.safety, 6),
                fmt_sig(r.efficiency, 6),
                fmt_sig(r.interaction, 6),
                fmt_sig(r.intelligence, 6),
                fmt_sig(r.complexity, 6),
            ));
        }
        let cmp_path = config.run.out_dir.join("comparison.csv");
        fs::write(&cmp_path, &cmp).map_err(CliError::internal)?;
        print!("{cmp}");
        outputs.push(cmp_path);
    }
    Ok(outputs)
}

fn density2_csv(d: &Density2D) -> String {
    let xs = d.spec.x.centers();
    let ys = d.spec.y.centers();
    let mut out = String::from("x,y,mass\n");
    for (ix, x) in xs.iter().enumerate() {
        for (iy, y) in ys.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_sig(*x, 6),
                fmt_sig(*y, 6),
                fmt_sig(d.mass[ix * ys.len() + iy], 6)
            ));
        }
    }
    out
}

fn density1_csv(d: &Density1D) -> String {
    let mut out = String::from("value,mass\n");
    for (c, m) in d.spec.centers().iter().zip(&d.mass) {
        out.push_str(&format!("{},{}\n", fmt_sig(*c, 6), fmt_sig(*m, 6)));
    }
    out
}

#[derive(serde::Serialize)]
struct FidelityRow {
    metric: String,
    js_divergence: f64,
    similarity_pct: f64,
    sim_samples: usize,
    ref_samples: usize,
}

/// Compare a simulation log against naturalistic tracks on the four
/// behavioral distributions.
pub fn cmd_fidelity(
    config: &RunConfig,
    log_path: &Path,
    tracks_path: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    if !tracks_path.exists() {
        return Err(CliError::user(format!(
            "tracks file does not exist: {}",
            tracks_path.display()
        )));
    }
    let map = load_map(config)?;
    let log = read_log(log_path)?;
    let tracks_text = fs::read_to_string(tracks_path)
        .map_err(|e| CliError::user(format!("cannot read {}: {e}", tracks_path.display())))?;
    let tracks = ingest_highd(&tracks_text).map_err(CliError::user)?;
    let bins = config.fidelity.bins;
    let bv_only = config.fidelity.bv_only;
    let veh_len = config.sim.vehicle_length;

    fs::create_dir_all(&config.run.out_dir).map_err(CliError::internal)?;
    let mut rows: Vec<FidelityRow> = Vec::new();
    let mut outputs = Vec::new();

    // Joint (headway, speed) distributions.
    for (metric, kind) in [("dhw_v", PairKind::DhwV), ("thw_v", PairKind::ThwV)] {
        let sim = extract_pairs_sim(&log, &map, kind, bv_only, veh_len);
        let reference = extract_pairs_tracks(&tracks, kind);
        let spec = pooled_grid2(&sim, &reference, bins).ok_or_else(|| {
            CliError::user(format!(
                "not enough samples for {metric}: sim {}, tracks {}",
                sim.len(),
                reference.len()
            ))
        })?;
        let d_sim = kde2(&sim, &spec).map_err(CliError::user)?;
        let d_ref = kde2(&reference, &spec).map_err(CliError::user)?;
        let js = rampsim_core::fidelity::js_divergence(&d_sim, &d_ref).map_err(CliError::user)?;
        for (tag, d) in [("sim", &d_sim), ("ref", &d_ref)] {
            let p = config.run.out_dir.join(format!("fidelity-{metric}-{tag}.csv"));
            fs::write(&p, density2_csv(d)).map_err(CliError::internal)?;
            outputs.push(p);
        }
        rows.push(FidelityRow {
            metric: metric.to_string(),
            js_divergence: js,
            similarity_pct: similarity(js),
            sim_samples: sim.len(),
            ref_samples: reference.len(),
        });
    }

    // Lane-change motivation distributions.
    let sim_changes = classify_lane_changes_sim(&log, &map, veh_len);
    let ref_changes = classify_lane_changes_tracks(&tracks);
    let one_d = |metric: &str, sim: Vec<f64>, reference: Vec<f64>| -> Result<(FidelityRow, Vec<PathBuf>), CliError> {
        let spec = pooled_grid1(&sim, &reference, bins).ok_or_else(|| {
            CliError::user(format!(
                "not enough samples for {metric}: sim {}, tracks {}",
                sim.len(),
                reference.len()
            ))
        })?;
        let d_sim = kde1(&sim, &spec).map_err(CliError::user)?;
        let d_ref = kde1(&reference, &spec).map_err(CliError::user)?;
        let js = rampsim_core::fidelity::js_divergence1(&d_sim, &d_ref).map_err(CliError::user)?;
        let mut paths = Vec::new();
        for (tag, d) in [("sim", &d_sim), ("ref", &d_ref)] {
            let p = config.run.out_dir.join(format!("fidelity-{metric}-{tag}.csv"));
            fs::write(&p, density1_csv(d)).map_err(CliError::internal)?;
            paths.push(p);
        }
        Ok((
            FidelityRow {
                metric: metric.to_string(),
                js_divergence: js,
                similarity_pct: similarity(js),
                sim_samples: sim.len(),
                ref_samples: reference.len(),
            },
            paths,
        ))
    };

    let voluntary = |changes: &[rampsim_core::fidelity::ClassifiedLaneChange]| {
        changes
            .iter()
            .filter(|c| c.kind == LaneChangeKind::Voluntary)
            .map(|c| c.speed)
            .collect::<Vec<f64>>()
    };
    let mandatory_ttc = |changes: &[rampsim_core::fidelity::ClassifiedLaneChange]| {
        changes
            .iter()
            .filter(|c| c.kind == LaneChangeKind::Mandatory)
            .filter_map(|c| c.ttc)
            .collect::<Vec<f64>>()
    };
    let (row, paths) = one_d(
        "voluntary_speed",
        voluntary(&sim_changes),
        voluntary(&ref_changes),
    )?;
    rows.push(row);
    outputs.extend(paths);
    let (row, paths) = one_d(
        "mandatory_ttc",
        mandatory_ttc(&sim_changes),
        mandatory_ttc(&ref_changes),
    )?;
    rows.push(row);
    outputs.extend(paths);

    let mut txt = String::from("metric js similarity_pct\n");
    for r in &rows {
        txt.push_str(&format!(
            "{} {} {}\n",
            r.metric,
            fmt_sig(r.js_divergence, 6),
            fmt_sig(r.similarity_pct, 6)
        ));
    }
    let txt_path = config.run.out_dir.join("fidelity.txt");
    fs::write(&txt_path, &txt).map_err(CliError::internal)?;
    let json_path = config.run.out_dir.join("fidelity.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&rows).map_err(CliError::internal)?,
    )
    .map_err(CliError::internal)?;
    print!("{txt}");
    outputs.extend([txt_path, json_path]);
    Ok(outputs)
}
