//! Fidelity validation against naturalistic trajectory data.
//!
//! Ingests tracks files in the drone-dataset CSV layout (header-based
//! column lookup, order independent), extracts headway/velocity samples
//! from either source, fits kernel density estimates on shared grids and
//! scores similarity through base-2 Jensen-Shannon divergence. Lane
//! changes are classified mandatory/voluntary from the preceding-vehicle
//! rule.

use std::collections::BTreeMap;

use ndarray::Array2;
use thiserror::Error;

use crate::eval::lane_change_events;
use crate::log::TrajectoryLog;
use crate::map::RoadMap;
use crate::sim::PolicyTag;

/// Leader search range when sampling headways from simulation logs.
pub const HEADWAY_RANGE_M: f64 = 150.0;
/// Minimum speed for time-headway samples.
pub const THW_MIN_SPEED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalisticTrack {
    pub frame: u64,
    pub vehicle_id: u32,
    pub x: f64,
    /// Absolute speed, m/s.
    pub speed: f64,
    pub acceleration: f64,
    pub lane_id: u32,
    /// 0 means no preceding vehicle.
    pub preceding_id: u32,
    pub thw: f64,
    pub dhw: f64,
    /// Non-positive values mean undefined.
    pub ttc: f64,
}

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("degenerate samples: {0}")]
    Degenerate(String),
    #[error("density grids do not match")]
    GridMismatch,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

const REQUIRED_COLUMNS: [&str; 10] = [
    "frame",
    "id",
    "x",
    "xVelocity",
    "xAcceleration",
    "laneId",
    "precedingId",
    "dhw",
    "thw",
    "ttc",
];

/// Parse tracks-file contents. Extra columns are ignored; speeds are taken
/// as magnitudes since the source stores signed values by driving
/// direction.
pub fn ingest_highd(text: &str) -> Result<Vec<NaturalisticTrack>, FidelityError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut col = BTreeMap::new();
    for name in REQUIRED_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FidelityError::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let get = |name: &str| -> Result<f64, FidelityError> {
            let idx = col[name];
            let field = record.get(idx).ok_or_else(|| FidelityError::Row {
                row,
                msg: format!("missing field `{name}`"),
            })?;
            field.parse::<f64>().map_err(|_| FidelityError::Row {
                row,
                msg: format!("field `{name}` is not numeric: `{field}`"),
            })
        };
        let track = NaturalisticTrack {
            frame: get("frame")? as u64,
            vehicle_id: get("id")? as u32,
            x: get("x")?,
            speed: get("xVelocity")?.abs(),
            acceleration: get("xAcceleration")?,
            lane_id: get("laneId")? as u32,
            preceding_id: get("precedingId")? as u32,
            thw: get("thw")?,
            dhw: get("dhw")?,
            ttc: get("ttc")?,
        };
        if track.dhw < 0.0 {
            return Err(FidelityError::Row {
                row,
                msg: format!("dhw must be non-negative, found {}", track.dhw),
            });
        }
        out.push(track);
    }

    // Frames must advance per vehicle.
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    for (i, t) in out.iter().enumerate() {
        if let Some(&prev) = last.get(&t.vehicle_id) {
            if t.frame <= prev {
                return Err(FidelityError::Row {
                    row: i + 2,
                    msg: format!(
                        "frames for vehicle {} are not strictly increasing",
                        t.vehicle_id
                    ),
                });
            }
        }
        last.insert(t.vehicle_id, t.frame);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    DhwV,
    ThwV,
}

/// (headway, speed) samples from a simulation log. DHW is the net
/// bumper-to-bumper gap to the same-lane leader within range.
pub fn extract_pairs_sim(
    log: &TrajectoryLog,
    map: &RoadMap,
    kind: PairKind,
    bv_only: bool,
    vehicle_length: f64,
) -> Vec<(f64, f64)> {
    let mut by_step: BTreeMap<u64, Vec<&crate::log::LogRow>> = BTreeMap::new();
    for row in &log.rows {
        by_step.entry(row.step).or_default().push(row);
    }
    let mut out = Vec::new();
    for rows in by_step.values() {
        for ego in rows.iter() {
            if bv_only && ego.policy == PolicyTag::Sut {
                continue;
            }
            let mut best: Option<f64> = None;
            for other in rows.iter() {
                if other.vehicle_id == ego.vehicle_id || other.lane_id != ego.lane_id {
                    continue;
                }
                let mut delta = other.s_m - ego.s_m;
                if delta >= map.total_length / 2.0 {
                    delta -= map.total_length;
                } else if delta < -map.total_length / 2.0 {
                    delta += map.total_length;
                }
                if delta > 0.0 && delta <= HEADWAY_RANGE_M && best.is_none_or(|b| delta < b) {
                    best = Some(delta);
                }
            }
            let Some(center_gap) = best else {
                continue;
            };
            let dhw = center_gap - vehicle_length;
            if dhw <= 0.0 {
                continue;
            }
            match kind {
                PairKind::DhwV => out.push((dhw, ego.v_mps)),
                PairKind::ThwV => {
                    if ego.v_mps > THW_MIN_SPEED {
                        out.push((dhw / ego.v_mps, ego.v_mps));
                    }
                }
            }
        }
    }
    out
}

/// (headway, speed) samples from naturalistic tracks, using the recorded
/// columns where valid.
pub fn extract_pairs_tracks(tracks: &[NaturalisticTrack], kind: PairKind) -> Vec<(f64, f64)> {
    tracks
        .iter()
        .filter_map(|t| match kind {
            PairKind::DhwV => (t.dhw > 0.0).then_some((t.dhw, t.speed)),
            PairKind::ThwV => (t.thw > 0.0).then_some((t.thw, t.speed)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec1 {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl GridSpec1 {
    pub fn centers(&self) -> Vec<f64> {
        let w = (self.max - self.min) / self.bins as f64;
        (0..self.bins)
            .map(|i| self.min + (i as f64 + 0.5) * w)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec2 {
    pub x: GridSpec1,
    pub y: GridSpec1,
}

/// A discrete probability mass function on a 2-D grid; masses sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Density2D {
    pub spec: GridSpec2,
    /// Row-major over x, then y: `mass[ix * ny + iy]`.
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    pub spec: GridSpec1,
    pub mass: Vec<f64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Grid spanning the pooled 1st-99th percentile range of both sample sets;
/// pooling keeps disjoint supports from inflating the divergence.
pub fn pooled_grid2(a: &[(f64, f64)], b: &[(f64, f64)], bins: usize) -> Option<GridSpec2> {
    let pool = |f: fn(&(f64, f64)) -> f64| -> Option<GridSpec1> {
        let mut v: Vec<f64> = a.iter().map(f).chain(b.iter().map(f)).collect();
        if v.len() < 2 {
            return None;
        }
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (lo, hi) = (percentile(&v, 0.01), percentile(&v, 0.99));
        if hi <= lo {
            return None;
        }
        Some(GridSpec1 {
            min: lo,
            max: hi,
            bins,
        })
    };
    Some(GridSpec2 {
        x: pool(|p| p.0)?,
        y: pool(|p| p.1)?,
    })
}

pub fn pooled_grid1(a: &[f64], b: &[f64], bins: usize) -> Option<GridSpec1> {
    let mut v: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    if v.len() < 2 {
        return None;
    }
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (lo, hi) = (percentile(&v, 0.01), percentile(&v, 0.99));
    if hi <= lo {
        return None;
    }
    Some(GridSpec1 { min: lo, max: hi, bins })
}

fn scott_bandwidth(samples: impl Iterator<Item = f64> + Clone, n: usize, d_axes: f64) -> Option<f64> {
    let n_f = n as f64;
    let mean = samples.clone().sum::<f64>() / n_f;
    let var = samples.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n_f - 1.0);
    if var <= 0.0 {
        return None;
    }
    Some(var.sqrt() * n_f.powf(-1.0 / (d_axes + 4.0)))
}

/// Product-Gaussian kernel density estimate on the grid, renormalized to a
/// probability mass function. Requires at least two samples with nonzero
/// variance on each axis.
pub fn kde2(samples: &[(f64, f64)], spec: &GridSpec2) -> Result<Density2D, FidelityError> {
    let n = samples.len();
    if n < 2 {
        return Err(FidelityError::Degenerate(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let hx = scott_bandwidth(samples.iter().map(|p| p.0), n, 2.0)
        .ok_or_else(|| FidelityError::Degenerate("zero variance on the x axis".into()))?;
    let hy = scott_bandwidth(samples.iter().map(|p| p.1), n, 2.0)
        .ok_or_else(|| FidelityError::Degenerate("zero variance on the y axis".into()))?;

    // Separable kernel: evaluate per-axis contributions then contract.
    let xs = spec.x.centers();
    let ys = spec.y.centers();
    let mut kx = Array2::zeros((xs.len(), n));
    let mut ky = Array2::zeros((n, ys.len()));
    for (i, p) in samples.iter().enumerate() {
        for (ix, &x) in xs.iter().enumerate() {
            let u = (x - p.0) / hx;
            kx[(ix, i)] = (-0.5 * u * u).exp();
        }
        for (iy, &y) in ys.iter().enumerate() {
            let u = (y - p.1) / hy;
            ky[(i, iy)] = (-0.5 * u * u).exp();
        }
    }
    let grid = kx.dot(&ky);
    let total: f64 = grid.sum();
    if total <= 0.0 {
        return Err(FidelityError::Degenerate(
            "no probability mass falls on the grid".into(),
        ));
    }
    let mass = grid.into_iter().map(|v| v / total).collect();
    Ok(Density2D {
        spec: spec.clone(),
        mass,
    })
}

/// One-dimensional analogue of [`kde2`].
pub fn kde1(samples: &[f64], spec: &GridSpec1) -> Result<Density1D, FidelityError> {
    let n = samples.len();
    if n < 2 {
        return Err(FidelityError::Degenerate(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let h = scott_bandwidth(samples.iter().copied(), n, 1.0)
        .ok_or_else(|| FidelityError::Degenerate("zero variance".into()))?;
    let centers = spec.centers();
    let mut mass: Vec<f64> = centers
        .iter()
        .map(|&c| {
            samples
                .iter()
                .map(|&s| {
                    let u = (c - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(FidelityError::Degenerate(
            "no probability mass falls on the grid".into(),
        ));
    }
    mass.iter_mut().for_each(|v| *v /= total);
    Ok(Density1D {
        spec: spec.clone(),
        mass,
    })
}

/// Base-2 Jensen-Shannon divergence between two mass vectors on the same
/// grid; lies in [0, 1], with 1 for disjoint supports.
fn js_masses(p: &[f64], q: &[f64]) -> f64 {
    let mut js = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            js += 0.5 * pi * (pi / m).log2();
        }
        if qi > 0.0 {
            js += 0.5 * qi * (qi / m).log2();
        }
    }
    js.clamp(0.0, 1.0)
}

pub fn js_divergence(p: &Density2D, q: &Density2D) -> Result<f64, FidelityError> {
    if p.spec != q.spec || p.mass.len() != q.mass.len() {
        return Err(FidelityError::GridMismatch);
    }
    Ok(js_masses(&p.mass, &q.mass))
}

pub fn js_divergence1(p: &Density1D, q: &Density1D) -> Result<f64, FidelityError> {
    if p.spec != q.spec || p.mass.len() != q.mass.len() {
        return Err(FidelityError::GridMismatch);
    }
    Ok(js_masses(&p.mass, &q.mass))
}

/// Similarity percentage: 100 at zero divergence.
pub fn similarity(js: f64) -> f64 {
    (1.0 - js) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChangeKind {
    Mandatory,
    Voluntary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedLaneChange {
    pub vehicle: u32,
    /// Step (simulation) or frame (tracks) of the initiating moment.
    pub at: u64,
    pub kind: LaneChangeKind,
    pub speed: f64,
    /// Time to collision at the change, recorded for mandatory changes.
    pub ttc: Option<f64>,
}

/// Classify simulated lane changes: mandatory when a slower preceding
/// vehicle exists at the initiating moment, voluntary otherwise (including
/// an equal-speed leader).
pub fn classify_lane_changes_sim(
    log: &TrajectoryLog,
    map: &RoadMap,
    vehicle_length: f64,
) -> Vec<ClassifiedLaneChange> {
    let changes = lane_change_events(log, map);
    let mut by_step: BTreeMap<u64, Vec<&crate::log::LogRow>> = BTreeMap::new();
    for row in &log.rows {
        by_step.entry(row.step).or_default().push(row);
    }

    let mut out = Vec::new();
    for change in &changes {
        let Some(rows) = by_step.get(&change.start_step) else {
            continue;
        };
        let Some(ego) = rows.iter().find(|r| r.vehicle_id == change.vehicle) else {
            continue;
        };
        let mut pv: Option<&crate::log::LogRow> = None;
        let mut best = f64::INFINITY;
        for other in rows.iter() {
            if other.vehicle_id == ego.vehicle_id || other.lane_id != ego.lane_id {
                continue;
            }
            let mut delta = other.s_m - ego.s_m;
            if delta >= map.total_length / 2.0 {
                delta -= map.total_length;
            } else if delta < -map.total_length / 2.0 {
                delta += map.total_length;
            }
            if delta > 0.0 && delta <= HEADWAY_RANGE_M && delta < best {
                best = delta;
                pv = Some(other);
            }
        }
        let (kind, ttc) = match pv {
            Some(p) if p.v_mps < ego.v_mps => {
                let net = best - vehicle_length;
                let closing = ego.v_mps - p.v_mps;
                (
                    LaneChangeKind::Mandatory,
                    (net > 0.0).then(|| net / closing),
                )
            }
            _ => (LaneChangeKind::Voluntary, None),
        };
        out.push(ClassifiedLaneChange {
            vehicle: change.vehicle,
            at: change.start_step,
            kind,
            speed: ego.v_mps,
            ttc,
        });
    }
    out
}

/// Classify naturalistic lane changes at lane-id transitions, using the
/// recorded preceding vehicle of the last frame in the old lane.
pub fn classify_lane_changes_tracks(tracks: &[NaturalisticTrack]) -> Vec<ClassifiedLaneChange> {
    let mut by_vehicle: BTreeMap<u32, Vec<&NaturalisticTrack>> = BTreeMap::new();
    let mut by_frame: BTreeMap<(u64, u32), &NaturalisticTrack> = BTreeMap::new();
    for t in tracks {
        by_vehicle.entry(t.vehicle_id).or_default().push(t);
        by_frame.insert((t.frame, t.vehicle_id), t);
    }

    let mut out = Vec::new();
    for rows in by_vehicle.values() {
        for pair in rows.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            if prev.lane_id == cur.lane_id {
                continue;
            }
            let pv = (prev.preceding_id != 0)
                .then(|| by_frame.get(&(prev.frame, prev.preceding_id)))
                .flatten();
            let (kind, ttc) = match pv {
                Some(p) if p.speed < prev.speed => {
                    let ttc = if prev.ttc > 0.0 {
                        Some(prev.ttc)
                    } else if prev.dhw > 0.0 {
                        Some(prev.dhw / (prev.speed - p.speed))
                    } else {
                        None
                    };
                    (LaneChangeKind::Mandatory, ttc)
                }
                _ => (LaneChangeKind::Voluntary, None),
            };
            out.push(ClassifiedLaneChange {
                vehicle: prev.vehicle_id,
                at: cur.frame,
                kind,
                speed: prev.speed,
                ttc,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "frame,id,x,y,xVelocity,yVelocity,xAcceleration,laneId,precedingId,dhw,thw,ttc";

    #[test]
    fn header_only_file_is_empty() {
        let tracks = ingest_highd(&format!("{HEADER}\n")).unwrap();
        assert!(tracks.is_empty());
    }

    #[test]
    fn three_row_round_trip() {
        let text = format!(
            "{HEADER}\n\
             1,7,100.5,8.2,-33.2,0.1,0.5,2,0,0,0,0\n\
             2,7,103.8,8.2,-33.1,0.1,0.4,2,9,42.5,1.28,12.5\n\
             3,7,107.1,8.2,-33.0,0.1,0.3,3,0,0,0,0\n"
        );
        let tracks = ingest_highd(&text).unwrap();
        assert_eq!(tracks.len(), 3);
        assert_eq!(tracks[0].vehicle_id, 7);
        assert_eq!(tracks[0].speed, 33.2, "speed is the magnitude");
        assert_eq!(tracks[1].preceding_id, 9);
        assert_eq!(tracks[1].dhw, 42.5);
        assert_eq!(tracks[2].lane_id, 3);
    }

    #[test]
    fn missing_dhw_column_named_in_error() {
        let text = "frame,id,x,xVelocity,xAcceleration,laneId,precedingId,thw,ttc\n";
        match ingest_highd(text).unwrap_err() {
            FidelityError::MissingColumn(c) => assert_eq!(c, "dhw"),
            other => panic!("expected missing column, got {other}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_row() {
        let text = format!("{HEADER}\n1,7,oops,0,0,0,0,2,0,0,0,0\n");
        assert!(matches!(
            ingest_highd(&text).unwrap_err(),
            FidelityError::Row { row: 2, .. }
        ));
    }

    fn log_with_gap(center_gap: f64, v: f64) -> (TrajectoryLog, RoadMap) {
        use crate::log::LogRow;
        use crate::map::LaneId;
        let map = RoadMap::default_onramp();
        let mut log = TrajectoryLog::new();
        for (vid, s) in [(1u32, 500.0), (2u32, 500.0 + center_gap)] {
            log.push(LogRow {
                step: 0,
                time_s: 0.0,
                vehicle_id: vid,
                policy: PolicyTag::Mutual,
                lane_id: LaneId(2),
                s_m: s,
                d_m: 0.0,
                v_mps: v,
                a_mps2: 0.0,
                yaw_rad: 0.0,
                decision: 0,
                throttle: 0.0,
                executed_decision: 0,
                collision: false,
            });
        }
        (log, map)
    }

    #[test]
    fn extract_pairs_definitions() {
        // DHW is the bumper gap: center gap 64.5 with 4.5 m vehicles is 60.
        let (log, map) = log_with_gap(64.5, 30.0);
        let dhw = extract_pairs_sim(&log, &map, PairKind::DhwV, true, 4.5);
        assert_eq!(dhw, vec![(60.0, 30.0)]);
        let thw = extract_pairs_sim(&log, &map, PairKind::ThwV, true, 4.5);
        assert_eq!(thw, vec![(2.0, 30.0)]);
    }

    #[test]
    fn slow_vehicles_excluded_from_thw() {
        let (log, map) = log_with_gap(64.5, 0.05);
        assert!(extract_pairs_sim(&log, &map, PairKind::ThwV, true, 4.5).is_empty());
        assert_eq!(
            extract_pairs_sim(&log, &map, PairKind::DhwV, true, 4.5).len(),
            1
        );
    }

    #[test]
    fn kde_mass_sums_to_one_and_peaks_at_cluster() {
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|i| (30.0 + 0.4 * (i % 7) as f64, 25.0 + 0.3 * (i % 5) as f64))
            .collect();
        let spec = GridSpec2 {
            x: GridSpec1 { min: 0.0, max: 60.0, bins: 30 },
            y: GridSpec1 { min: 0.0, max: 50.0, bins: 30 },
        };
        let d = kde2(&samples, &spec).unwrap();
        let total: f64 = d.mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let (imax, _) = d
            .mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let ix = imax / 30;
        let iy = imax % 30;
        let xs = d.spec.x.centers();
        let ys = d.spec.y.centers();
        assert!((xs[ix] - 31.0).abs() < 3.0);
        assert!((ys[iy] - 25.5).abs() < 3.0);
    }

    #[test]
    fn kde_grid_mean_matches_gaussian_source() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let n = 10_000;
        let (mx, my, sx, sy) = (40.0, 28.0, 6.0, 2.0);
        let gauss = |rng: &mut rand_chacha::ChaCha12Rng| {
            // Box-Muller.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|_| (mx + sx * gauss(&mut rng), my + sy * gauss(&mut rng)))
            .collect();
        let spec = GridSpec2 {
            x: GridSpec1 { min: 0.0, max: 80.0, bins: 50 },
            y: GridSpec1 { min: 18.0, max: 38.0, bins: 50 },
        };
        let d = kde2(&samples, &spec).unwrap();
        let xs = d.spec.x.centers();
        let ys = d.spec.y.centers();
        let mut gx = 0.0;
        let mut gy = 0.0;
        for ix in 0..50 {
            for iy in 0..50 {
                let m = d.mass[ix * 50 + iy];
                gx += m * xs[ix];
                gy += m * ys[iy];
            }
        }
        let se_x = 3.0 * sx / (n as f64).sqrt();
        let se_y = 3.0 * sy / (n as f64).sqrt();
        // KDE smoothing adds bias below the grid resolution; allow it on
        // top of the Monte-Carlo band.
        assert!((gx - mx).abs() < se_x + 0.5, "gx = {gx}");
        assert!((gy - my).abs() < se_y + 0.2, "gy = {gy}");
    }

    #[test]
    fn kde_rejects_degenerate_samples() {
        let spec = GridSpec2 {
            x: GridSpec1 { min: 0.0, max: 1.0, bins: 4 },
            y: GridSpec1 { min: 0.0, max: 1.0, bins: 4 },
        };
        assert!(kde2(&[(0.5, 0.5)], &spec).is_err());
        assert!(kde2(&[(0.5, 0.1), (0.5, 0.9)], &spec).is_err());
    }

    fn density_from(masses: &[f64]) -> Density1D {
        Density1D {
            spec: GridSpec1 { min: 0.0, max: 1.0, bins: masses.len() },
            mass: masses.to_vec(),
        }
    }

    #[test]
    fn js_identity_is_zero() {
        let p = density_from(&[0.2, 0.3, 0.5]);
        assert_eq!(js_divergence1(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn js_disjoint_supports_is_one() {
        let p = density_from(&[0.5, 0.5, 0.0, 0.0]);
        let q = density_from(&[0.0, 0.0, 0.5, 0.5]);
        assert!((js_divergence1(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn js_hand_computed_half() {
        let p = density_from(&[0.5, 0.5, 0.0]);
        let q = density_from(&[0.0, 0.5, 0.5]);
        assert!((js_divergence1(&p, &q).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn js_is_symmetric() {
        let p = density_from(&[0.1, 0.4, 0.3, 0.2]);
        let q = density_from(&[0.3, 0.1, 0.2, 0.4]);
        let a = js_divergence1(&p, &q).unwrap();
        let b = js_divergence1(&q, &p).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn similarity_paper_values() {
        assert!((similarity(0.086) - 91.4).abs() < 1e-9);
        assert!((similarity(0.007) - 99.3).abs() < 1e-9);
        assert!((similarity(0.122) - 87.8).abs() < 1e-9);
        assert!((similarity(0.139) - 86.1).abs() < 1e-9);
        assert_eq!(similarity(0.0), 100.0);
    }

    fn track(frame: u64, id: u32, lane: u32, speed: f64, preceding: u32) -> NaturalisticTrack {
        NaturalisticTrack {
            frame,
            vehicle_id: id,
            x: frame as f64 * speed,
            speed,
            acceleration: 0.0,
            lane_id: lane,
            preceding_id: preceding,
            thw: 1.5,
            dhw: 40.0,
            ttc: 0.0,
        }
    }

    #[test]
    fn sim_lane_changes_classified_from_log() {
        use crate::log::LogRow;
        use crate::map::LaneId;
        let map = RoadMap::default_onramp();
        let mut log = TrajectoryLog::new();
        // Vehicle 1 changes from lane 2 to lane 1 (left, +1) at step 2 with
        // a slower leader 30 m ahead; vehicle 9 is that leader.
        for step in 0..=10u64 {
            let lane = if step >= 5 { LaneId(1) } else { LaneId(2) };
            log.push(LogRow {
                step,
                time_s: step as f64 * 0.1,
                vehicle_id: 1,
                policy: PolicyTag::Mutual,
                lane_id: lane,
                s_m: 500.0 + 3.0 * step as f64,
                d_m: 0.0,
                v_mps: 30.0,
                a_mps2: 0.0,
                yaw_rad: 0.0,
                decision: if step == 2 { 1 } else { 0 },
                throttle: 0.0,
                executed_decision: if step == 2 { 1 } else { 0 },
                collision: false,
            });
            log.push(LogRow {
                step,
                time_s: step as f64 * 0.1,
                vehicle_id: 9,
                policy: PolicyTag::Mutual,
                lane_id: LaneId(2),
                s_m: 530.0 + 2.0 * step as f64,
                d_m: 0.0,
                v_mps: 20.0,
                a_mps2: 0.0,
                yaw_rad: 0.0,
                decision: 0,
                throttle: 0.0,
                executed_decision: 0,
                collision: false,
            });
        }
        let classified = classify_lane_changes_sim(&log, &map, 4.5);
        assert_eq!(classified.len(), 1);
        assert_eq!(classified[0].vehicle, 1);
        assert_eq!(classified[0].kind, LaneChangeKind::Mandatory);
        let ttc = classified[0].ttc.unwrap();
        // At the initiating step the centers are 28 m apart: net gap 23.5,
        // closing at 10 m/s.
        assert!((ttc - 2.35).abs() < 1e-9, "ttc = {ttc}");
    }

    #[test]
    fn lane_change_classification_rules() {
        // Vehicle 1 changes lanes with no PV: voluntary.
        // Vehicle 2 changes with a 2 m/s slower PV (id 3): mandatory.
        // Vehicle 4 changes with an equal-speed PV: voluntary.
        let tracks = vec![
            track(1, 1, 2, 30.0, 0),
            track(2, 1, 3, 30.0, 0),
            track(1, 2, 2, 30.0, 3),
            track(2, 2, 3, 30.0, 3),
            track(1, 3, 2, 28.0, 0),
            track(2, 3, 2, 28.0, 0),
            track(1, 4, 4, 30.0, 5),
            track(2, 4, 5, 30.0, 5),
            track(1, 5, 4, 30.0, 0),
            track(2, 5, 4, 30.0, 0),
        ];
        let classified = classify_lane_changes_tracks(&tracks);
        assert_eq!(classified.len(), 3);
        let find = |vid: u32| classified.iter().find(|c| c.vehicle == vid).unwrap();
        assert_eq!(find(1).kind, LaneChangeKind::Voluntary);
        assert_eq!(find(2).kind, LaneChangeKind::Mandatory);
        assert!(find(2).ttc.is_some());
        assert_eq!(find(4).kind, LaneChangeKind::Voluntary);
    }
}
