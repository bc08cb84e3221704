//! Per-step trajectory records, the single source of truth for all metrics.
//!
//! Wire format: CSV with the fixed header
//! `step,time_s,vehicle_id,policy,lane_id,s_m,d_m,v_mps,a_mps2,yaw_rad,decision,throttle,executed_decision,collision`,
//! one row per vehicle per step, floats rendered with 6 significant digits.
//! Optional debug columns may be appended after the fixed set; readers
//! ignore columns beyond the schema.

use std::fmt::Write as _;
use std::io;

use thiserror::Error;

use crate::map::LaneId;
use crate::sim::PolicyTag;

pub const LOG_HEADER: &str = "step,time_s,vehicle_id,policy,lane_id,s_m,d_m,v_mps,a_mps2,yaw_rad,decision,throttle,executed_decision,collision";

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub time_s: f64,
    pub vehicle_id: u32,
    pub policy: PolicyTag,
    pub lane_id: LaneId,
    pub s_m: f64,
    pub d_m: f64,
    pub v_mps: f64,
    pub a_mps2: f64,
    pub yaw_rad: f64,
    /// Requested lane decision at this step (0 outside decision steps).
    pub decision: i8,
    pub throttle: f64,
    /// Decision actually executed after rule filtering.
    pub executed_decision: i8,
    /// True on the step a collision involving this vehicle begins.
    pub collision: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
    /// Names of optional debug columns (empty in the default wire format).
    pub debug_header: Vec<String>,
    /// One vector per row when debug columns are enabled.
    pub debug_rows: Vec<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("log schema violation: {0}")]
    Schema(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Format a float with `sig` significant digits, fixed-point.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - exp).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    /// Highest step index present, or None for an empty log.
    pub fn last_step(&self) -> Option<u64> {
        self.rows.iter().map(|r| r.step).max()
    }

    /// Time delta between consecutive steps, derived from the records.
    pub fn dt(&self) -> f64 {
        let t0 = self.rows.iter().find(|r| r.step == 0).map(|r| r.time_s);
        let t1 = self.rows.iter().find(|r| r.step == 1).map(|r| r.time_s);
        match (t0, t1) {
            (Some(a), Some(b)) if b > a => b - a,
            _ => 0.1,
        }
    }

    pub fn rows_for_vehicle(&self, id: u32) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.vehicle_id == id)
    }

    pub fn vehicle_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.vehicle_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(LOG_HEADER);
        for name in &self.debug_header {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                fmt_sig(r.time_s, 6),
                r.vehicle_id,
                r.policy,
                r.lane_id,
                fmt_sig(r.s_m, 6),
                fmt_sig(r.d_m, 6),
                fmt_sig(r.v_mps, 6),
                fmt_sig(r.a_mps2, 6),
                fmt_sig(r.yaw_rad, 6),
                r.decision,
                fmt_sig(r.throttle, 6),
                r.executed_decision,
                u8::from(r.collision),
            );
            if !self.debug_header.is_empty() {
                for v in &self.debug_rows[i] {
                    let _ = write!(out, ",{}", fmt_sig(*v, 6));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> Result<(), LogError> {
        w.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| LogError::Schema("empty log".into()))?;
        let expected: Vec<&str> = LOG_HEADER.split(',').collect();
        let got: Vec<&str> = header.split(',').collect();
        if got.len() < expected.len() || got[..expected.len()] != expected[..] {
            return Err(LogError::Schema(format!(
                "header mismatch: expected `{LOG_HEADER}`, found `{header}`"
            )));
        }
        let debug_header: Vec<String> = got[expected.len()..].iter().map(|s| s.to_string()).collect();

        let mut log = TrajectoryLog {
            debug_header,
            ..Default::default()
        };
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < expected.len() {
                return Err(LogError::Parse {
                    line: line_no,
                    msg: format!("expected at least {} fields, found {}", expected.len(), fields.len()),
                });
            }
            let parse_f = |i: usize| -> Result<f64, LogError> {
                fields[i].parse::<f64>().map_err(|_| LogError::Parse {
                    line: line_no,
                    msg: format!("field `{}` is not a number: `{}`", expected[i], fields[i]),
                })
            };
            let parse_i = |i: usize| -> Result<i64, LogError> {
                fields[i].parse::<i64>().map_err(|_| LogError::Parse {
                    line: line_no,
                    msg: format!("field `{}` is not an integer: `{}`", expected[i], fields[i]),
                })
            };
            let policy = fields[3].parse::<PolicyTag>().map_err(|e| LogError::Parse {
                line: line_no,
                msg: e,
            })?;
            let row = LogRow {
                step: parse_i(0)? as u64,
                time_s: parse_f(1)?,
                vehicle_id: parse_i(2)? as u32,
                policy,
                lane_id: LaneId(parse_i(4)? as u32),
                s_m: parse_f(5)?,
                d_m: parse_f(6)?,
                v_mps: parse_f(7)?,
                a_mps2: parse_f(8)?,
                yaw_rad: parse_f(9)?,
                decision: parse_i(10)? as i8,
                throttle: parse_f(11)?,
                executed_decision: parse_i(12)? as i8,
                collision: parse_i(13)? != 0,
            };
            if !log.debug_header.is_empty() {
                let mut dbg = Vec::with_capacity(log.debug_header.len());
                for (k, _) in log.debug_header.iter().enumerate() {
                    let i = expected.len() + k;
                    dbg.push(if i < fields.len() {
                        fields[i].parse::<f64>().unwrap_or(0.0)
                    } else {
                        0.0
                    });
                }
                log.debug_rows.push(dbg);
            }
            log.rows.push(row);
        }
        Ok(log)
    }

    pub fn read_csv<R: io::Read>(mut r: R) -> Result<Self, LogError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_csv_str(&text)
    }
}
