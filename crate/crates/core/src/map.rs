//! Road geometry in arc-length coordinates.
//!
//! Lanes are parallel ribbons indexed left to right. The map file format is
//! line oriented:
//!
//! ```text
//! # comment
//! map <total_length_m> <lane_width_m> <left|right> <vmax_mps> <vmin_mps>
//! lane <id> <start_s> <end_s> <left_id|-> <right_id|-> <ramp|main>
//! ```
//!
//! Parsing is strict: malformed input is rejected with a line/column
//! diagnostic rather than repaired.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Identifier of a lane as written in the map file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveSide {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub start_s: f64,
    pub end_s: f64,
    pub left_neighbor: Option<LaneId>,
    pub right_neighbor: Option<LaneId>,
    pub is_ramp: bool,
}

impl Lane {
    pub fn contains_s(&self, s: f64) -> bool {
        s >= self.start_s && s <= self.end_s
    }
}

/// Immutable carriageway description shared by every other module.
#[derive(Debug, Clone)]
pub struct RoadMap {
    pub total_length: f64,
    /// Lanes ordered leftmost to rightmost.
    pub lanes: Vec<Lane>,
    pub merge_lane_id: LaneId,
    /// Arc length at which the ramp lane terminates.
    pub merge_end_s: f64,
    pub lane_width: f64,
    pub drive_side: DriveSide,
    pub v_max: f64,
    pub v_min: f64,
    slot_of: HashMap<LaneId, usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("constraint error: {0}")]
    Constraint(String),
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> MapError {
    MapError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

/// Text of the default on-ramp map shipped with the crate.
///
/// Ramp length and merge position are not dictated by the carriageway data
/// this map reproduces; the values in the file are documented assumptions.
pub fn default_map_text() -> &'static str {
    include_str!("../maps/onramp.map")
}

struct Tok<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push(Tok {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(Tok {
            text: &line[s..],
            col: s + 1,
        });
    }
    toks
}

fn parse_f64(tok: &Tok<'_>, line: usize, what: &str) -> Result<f64, MapError> {
    tok.text
        .parse::<f64>()
        .map_err(|_| syntax(line, tok.col, format!("expected {what}, found `{}`", tok.text)))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(syntax(line, tok.col, format!("{what} must be finite")))
            }
        })
}

fn parse_lane_id(tok: &Tok<'_>, line: usize) -> Result<LaneId, MapError> {
    tok.text
        .parse::<u32>()
        .map(LaneId)
        .map_err(|_| syntax(line, tok.col, format!("expected lane id, found `{}`", tok.text)))
}

fn parse_opt_id(tok: &Tok<'_>, line: usize) -> Result<Option<LaneId>, MapError> {
    if tok.text == "-" {
        Ok(None)
    } else {
        parse_lane_id(tok, line).map(Some)
    }
}

/// Parse map-file contents into a validated [`RoadMap`].
pub fn parse_map(text: &str) -> Result<RoadMap, MapError> {
    let mut header: Option<(f64, f64, DriveSide, f64, f64)> = None;
    let mut lanes: Vec<Lane> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let toks = tokenize(line);
        if toks.is_empty() {
            continue;
        }
        match toks[0].text {
            "map" => {
                if header.is_some() {
                    return Err(syntax(line_no, toks[0].col, "duplicate map header"));
                }
                if toks.len() != 6 {
                    return Err(syntax(
                        line_no,
                        toks[0].col,
                        format!("map header takes 5 fields, found {}", toks.len() - 1),
                    ));
                }
                let total = parse_f64(&toks[1], line_no, "total length")?;
                let width = parse_f64(&toks[2], line_no, "lane width")?;
                let side = match toks[3].text {
                    "left" => DriveSide::Left,
                    "right" => DriveSide::Right,
                    other => {
                        return Err(syntax(
                            line_no,
                            toks[3].col,
                            format!("expected `left` or `right`, found `{other}`"),
                        ))
                    }
                };
                let v_max = parse_f64(&toks[4], line_no, "vmax")?;
                let v_min = parse_f64(&toks[5], line_no, "vmin")?;
                header = Some((total, width, side, v_max, v_min));
            }
            "lane" => {
                if toks.len() != 7 {
                    return Err(syntax(
                        line_no,
                        toks[0].col,
                        format!("lane line takes 6 fields, found {}", toks.len() - 1),
                    ));
                }
                let id = parse_lane_id(&toks[1], line_no)?;
                let start_s = parse_f64(&toks[2], line_no, "start_s")?;
                let end_s = parse_f64(&toks[3], line_no, "end_s")?;
                let left = parse_opt_id(&toks[4], line_no)?;
                let right = parse_opt_id(&toks[5], line_no)?;
                let is_ramp = match toks[6].text {
                    "ramp" => true,
                    "main" => false,
                    other => {
                        return Err(syntax(
                            line_no,
                            toks[6].col,
                            format!("expected `ramp` or `main`, found `{other}`"),
                        ))
                    }
                };
                lanes.push(Lane {
                    id,
                    start_s,
                    end_s,
                    left_neighbor: left,
                    right_neighbor: right,
                    is_ramp,
                });
            }
            other => {
                return Err(syntax(
                    line_no,
                    toks[0].col,
                    format!("unknown directive `{other}`"),
                ));
            }
        }
    }

    let (total_length, lane_width, drive_side, v_max, v_min) =
        header.ok_or_else(|| MapError::Constraint("missing map header".into()))?;

    validate(total_length, lane_width, drive_side, v_max, v_min, lanes)
}

fn validate(
    total_length: f64,
    lane_width: f64,
    drive_side: DriveSide,
    v_max: f64,
    v_min: f64,
    lanes: Vec<Lane>,
) -> Result<RoadMap, MapError> {
    if total_length <= 0.0 {
        return Err(MapError::Constraint("total length must be positive".into()));
    }
    if lane_width <= 0.0 {
        return Err(MapError::Constraint("lane width must be positive".into()));
    }
    if v_max <= 0.0 || v_min < 0.0 || v_min > v_max {
        return Err(MapError::Constraint(
            "speed limits must satisfy 0 <= vmin <= vmax, vmax > 0".into(),
        ));
    }
    if lanes.is_empty() {
        return Err(MapError::Topology("map declares zero lanes".into()));
    }

    let mut by_id: HashMap<LaneId, usize> = HashMap::new();
    for (i, lane) in lanes.iter().enumerate() {
        if by_id.insert(lane.id, i).is_some() {
            return Err(MapError::Topology(format!("duplicate lane id {}", lane.id)));
        }
    }

    for lane in &lanes {
        if lane.start_s >= lane.end_s {
            return Err(MapError::Topology(format!(
                "lane {} has empty extent [{}, {}]",
                lane.id, lane.start_s, lane.end_s
            )));
        }
        if lane.start_s < 0.0 || lane.end_s > total_length {
            return Err(MapError::Topology(format!(
                "lane {} extends outside [0, {total_length}]",
                lane.id
            )));
        }
        if !lane.is_ramp && (lane.start_s != 0.0 || lane.end_s != total_length) {
            return Err(MapError::Topology(format!(
                "mainline lane {} must span the full map length",
                lane.id
            )));
        }
        for (neighbor, dir) in [(lane.left_neighbor, "left"), (lane.right_neighbor, "right")] {
            if let Some(n) = neighbor {
                if n == lane.id {
                    return Err(MapError::Topology(format!(
                        "lane {} lists itself as {dir} neighbor",
                        lane.id
                    )));
                }
                if !by_id.contains_key(&n) {
                    return Err(MapError::Topology(format!(
                        "lane {} references unknown {dir} neighbor {n}",
                        lane.id
                    )));
                }
            }
        }
    }

    // Neighbor symmetry: A.left == B implies B.right == A.
    for lane in &lanes {
        if let Some(l) = lane.left_neighbor {
            let other = &lanes[by_id[&l]];
            if other.right_neighbor != Some(lane.id) {
                return Err(MapError::Topology(format!(
                    "asymmetric neighbors: lane {} lists {} on its left, but lane {} lists {:?} on its right",
                    lane.id, l, l, other.right_neighbor
                )));
            }
        }
        if let Some(r) = lane.right_neighbor {
            let other = &lanes[by_id[&r]];
            if other.left_neighbor != Some(lane.id) {
                return Err(MapError::Topology(format!(
                    "asymmetric neighbors: lane {} lists {} on its right, but lane {} lists {:?} on its left",
                    lane.id, r, r, other.left_neighbor
                )));
            }
        }
    }

    // Lanes must form a single left-to-right chain so lateral slots are
    // well defined.
    let leftmost: Vec<&Lane> = lanes.iter().filter(|l| l.left_neighbor.is_none()).collect();
    if leftmost.len() != 1 {
        return Err(MapError::Topology(format!(
            "expected exactly one leftmost lane, found {}",
            leftmost.len()
        )));
    }
    let mut ordered: Vec<LaneId> = Vec::with_capacity(lanes.len());
    let mut cursor = Some(leftmost[0].id);
    while let Some(id) = cursor {
        if ordered.contains(&id) {
            return Err(MapError::Topology(format!(
                "neighbor chain loops back through lane {id}"
            )));
        }
        ordered.push(id);
        cursor = lanes[by_id[&id]].right_neighbor;
    }
    if ordered.len() != lanes.len() {
        return Err(MapError::Topology(
            "lanes do not form a single left-to-right chain".into(),
        ));
    }

    let ramps: Vec<&Lane> = lanes.iter().filter(|l| l.is_ramp).collect();
    let merge = match ramps.as_slice() {
        [one] => *one,
        [] => return Err(MapError::Constraint("merge lane missing".into())),
        _ => {
            return Err(MapError::Constraint(format!(
                "expected exactly one merge lane, found {}",
                ramps.len()
            )))
        }
    };
    if merge.left_neighbor.is_none() && merge.right_neighbor.is_none() {
        return Err(MapError::Constraint(
            "merge lane has no mainline neighbor to merge into".into(),
        ));
    }
    let merge_lane_id = merge.id;
    let merge_end_s = merge.end_s;

    let mut sorted = Vec::with_capacity(lanes.len());
    let mut slot_of = HashMap::new();
    for (slot, id) in ordered.iter().enumerate() {
        slot_of.insert(*id, slot);
        sorted.push(lanes[by_id[id]].clone());
    }

    Ok(RoadMap {
        total_length,
        lanes: sorted,
        merge_lane_id,
        merge_end_s,
        lane_width,
        drive_side,
        v_max,
        v_min,
        slot_of,
    })
}

impl RoadMap {
    pub fn parse(text: &str) -> Result<Self, MapError> {
        parse_map(text)
    }

    /// The default on-ramp map: a 4-lane carriageway plus one merge ramp.
    pub fn default_onramp() -> Self {
        parse_map(default_map_text()).expect("shipped map must parse")
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.slot_of.get(&id).map(|&slot| &self.lanes[slot])
    }

    /// Lateral slot of a lane, counted from the leftmost lane.
    pub fn slot(&self, id: LaneId) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub fn lane_at_slot(&self, slot: usize) -> Option<&Lane> {
        self.lanes.get(slot)
    }

    /// Lateral offset of a lane center, in meters from the leftmost lane
    /// center, increasing to the right.
    pub fn lane_center(&self, id: LaneId) -> Option<f64> {
        self.slot(id).map(|slot| slot as f64 * self.lane_width)
    }

    /// Neighbor in the direction of a decision offset (+1 left, -1 right).
    pub fn neighbor(&self, id: LaneId, lane_offset: i8) -> Option<LaneId> {
        let lane = self.lane(id)?;
        match lane_offset {
            1 => lane.left_neighbor,
            -1 => lane.right_neighbor,
            0 => Some(id),
            _ => None,
        }
    }

    /// Whether a lane is drivable at arc length `s`.
    pub fn lane_exists_at(&self, id: LaneId, s: f64) -> bool {
        self.lane(id).is_some_and(|l| l.contains_s(s))
    }

    pub fn is_ramp(&self, id: LaneId) -> bool {
        self.lane(id).is_some_and(|l| l.is_ramp)
    }

    pub fn mainline_lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.iter().filter(|l| !l.is_ramp)
    }

    /// The five-lane observation horizon around `ego_lane`: two left
    /// neighbors, ego, two right neighbors, leftmost first. Ego is always
    /// at index 2; missing lanes are `None`.
    pub fn lanes_in_horizon(&self, ego_lane: LaneId) -> Result<[Option<LaneId>; 5], MapError> {
        let slot = self
            .slot(ego_lane)
            .ok_or_else(|| MapError::Topology(format!("unknown lane id {ego_lane}")))?
            as isize;
        let mut out = [None; 5];
        for (i, item) in out.iter_mut().enumerate() {
            let target = slot + i as isize - 2;
            if target >= 0 {
                *item = self.lane_at_slot(target as usize).map(|l| l.id);
            }
        }
        Ok(out)
    }

    /// Render back into the map file format. `parse_map(map.to_text())`
    /// reproduces a structurally identical map.
    pub fn to_text(&self) -> String {
        let side = match self.drive_side {
            DriveSide::Left => "left",
            DriveSide::Right => "right",
        };
        let mut out = format!(
            "map {} {} {} {} {}\n",
            self.total_length, self.lane_width, side, self.v_max, self.v_min
        );
        for lane in &self.lanes {
            let opt = |n: Option<LaneId>| n.map_or("-".to_string(), |id| id.to_string());
            out.push_str(&format!(
                "lane {} {} {} {} {} {}\n",
                lane.id,
                lane.start_s,
                lane.end_s,
                opt(lane.left_neighbor),
                opt(lane.right_neighbor),
                if lane.is_ramp { "ramp" } else { "main" }
            ));
        }
        out
    }
}
