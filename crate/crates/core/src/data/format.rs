//! The canonical trajectory file.
//!
//! ```text
//! # mxcast-trajectories v1
//! # frame_period=0.4
//! # frame_step=1
//! # units=meters
//! # columns=frame  ped_id  x  y  head_angle_deg
//! 0  1  1.250000  -0.400000  87.5000
//! ```
//!
//! Rows are tab-separated and sorted by `(frame, ped_id)`. Head angles are
//! degrees in `[0, 360)`, measured from the world +x axis. Files without a
//! head column (four fields per row) describe positions only. A pedestrian
//! whose frames skip one or more samples is split into separate segments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{vislet_from_angle, HeadAngle, PedestrianTrack, Position, Sample, Scene, DEFAULT_FRAME_PERIOD};

pub const FORMAT_MAGIC: &str = "# mxcast-trajectories v1";
pub const COLUMNS_WITH_HEAD: &str = "frame\tped_id\tx\ty\thead_angle_deg";
pub const COLUMNS_POSITION_ONLY: &str = "frame\tped_id\tx\ty";

struct Row {
    frame: i64,
    ped_id: i64,
    position: Position,
    angle_deg: Option<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(raw: &str, what: &str, line: usize) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{raw}`")))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Parses file contents. Vislets are built at `vislet_radius` from each
/// head angle.
pub fn parse_trajectories(text: &str, vislet_radius: f64) -> Result<Scene> {
    if !(vislet_radius > 0.0) || !vislet_radius.is_finite() {
        return Err(Error::InvalidInput(format!("vislet radius must be positive, got {vislet_radius}")));
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, first)) if first.trim_end() == FORMAT_MAGIC => {}
        _ => return Err(parse_err(1, format!("expected `{FORMAT_MAGIC}`"))),
    }
    let mut frame_period = DEFAULT_FRAME_PERIOD;
    let mut frame_step: Option<i64> = None;
    let mut with_head: Option<bool> = None;
    let mut rows: Vec<Row> = Vec::new();
    let mut last_key: Option<(i64, i64, usize)> = None;
    for (n, raw) in lines {
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let Some((key, value)) = meta.trim().split_once('=') else {
                continue;
            };
            match key.trim() {
                "frame_period" => {
                    frame_period = field(value, "frame_period", n)?;
                    if !(frame_period > 0.0) || !frame_period.is_finite() {
                        return Err(parse_err(n, "frame_period must be positive"));
                    }
                }
                "frame_step" => {
                    let s: i64 = field(value, "frame_step", n)?;
                    if s <= 0 {
                        return Err(parse_err(n, "frame_step must be positive"));
                    }
                    frame_step = Some(s);
                }
                "units" if value.trim() != "meters" => {
                    return Err(parse_err(n, format!("unsupported units `{}`", value.trim())));
                }
                _ => {}
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let head = match cols.len() {
            4 => false,
            5 => true,
            k => return Err(parse_err(n, format!("expected 4 or 5 tab-separated fields, found {k}"))),
        };
        match with_head {
            None => with_head = Some(head),
            Some(h) if h != head => return Err(parse_err(n, "rows mix position-only and head-pose columns")),
            _ => {}
        }
        let position = Position::new(field(cols[2], "x", n)?, field(cols[3], "y", n)?);
        if !position.is_finite() {
            return Err(parse_err(n, "non-finite coordinate"));
        }
        let angle_deg = if head {
            let a: f64 = field(cols[4], "head angle", n)?;
            if !(0.0..360.0).contains(&a) {
                return Err(parse_err(n, format!("head angle {a} outside [0, 360)")));
            }
            Some(a)
        } else {
            None
        };
        let row = Row {
            frame: field(cols[0], "frame", n)?,
            ped_id: field(cols[1], "ped_id", n)?,
            position,
            angle_deg,
        };
        if let Some((f, p, at)) = last_key {
            if (row.frame, row.ped_id) <= (f, p) {
                return Err(Error::Validation(format!(
                    "line {n}: row (frame {}, ped {}) does not follow line {at} (frame {f}, ped {p}); rows must be strictly sorted by (frame, ped_id)",
                    row.frame, row.ped_id
                )));
            }
        }
        last_key = Some((row.frame, row.ped_id, n));
        rows.push(row);
    }

    let mut by_ped: BTreeMap<i64, Vec<Row>> = BTreeMap::new();
    for row in rows {
        by_ped.entry(row.ped_id).or_default().push(row);
    }
    let step = frame_step.unwrap_or_else(|| {
        let g = by_ped
            .values()
            .flat_map(|r| r.windows(2).map(|w| w[1].frame - w[0].frame))
            .fold(0, gcd);
        g.max(1)
    });
    let mut tracks = Vec::new();
    for (ped_id, rows) in by_ped {
        let mut segment = 0u32;
        let mut samples: Vec<Sample> = Vec::new();
        for row in rows {
            if let Some(prev) = samples.last() {
                if row.frame - prev.frame != step {
                    tracks.push(PedestrianTrack {
                        ped_id,
                        segment,
                        samples: std::mem::take(&mut samples),
                    });
                    segment += 1;
                }
            }
            let vislet = row
                .angle_deg
                .map(|a| vislet_from_angle(row.position, HeadAngle::from_degrees(a), vislet_radius))
                .transpose()?;
            samples.push(Sample {
                frame: row.frame,
                position: row.position,
                vislet,
            });
        }
        if !samples.is_empty() {
            tracks.push(PedestrianTrack { ped_id, segment, samples });
        }
    }
    let scene = Scene {
        tracks,
        frame_period,
        frame_step: step,
        vislet_radius,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn parse_trajectory_file(path: &Path, vislet_radius: f64) -> Result<Scene> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectories(&text, vislet_radius)
}

fn degrees_field(angle: HeadAngle) -> String {
    let s = format!("{:.4}", angle.degrees_positive());
    if s == "360.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Serializes a scene. Coordinates keep six decimals, angles four.
pub fn write_trajectories(scene: &Scene) -> Result<String> {
    let with_head = !scene.tracks.is_empty() && scene.has_vislets();
    let mut rows: Vec<(i64, i64, &Sample)> = scene
        .tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(move |s| (s.frame, t.ped_id, s)))
        .collect();
    rows.sort_by_key(|&(f, p, _)| (f, p));
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_MAGIC}");
    let _ = writeln!(out, "# frame_period={}", scene.frame_period);
    let _ = writeln!(out, "# frame_step={}", scene.frame_step);
    let _ = writeln!(out, "# units=meters");
    let _ = writeln!(
        out,
        "# columns={}",
        if with_head { COLUMNS_WITH_HEAD } else { COLUMNS_POSITION_ONLY }
    );
    for (frame, ped, s) in rows {
        let _ = write!(out, "{frame}\t{ped}\t{:.6}\t{:.6}", s.position.x, s.position.y);
        if with_head {
            let angle = s.head_angle().ok_or_else(|| Error::Validation(format!("pedestrian {ped} frame {frame}: degenerate vislet")))?;
            let _ = write!(out, "\t{}", degrees_field(angle));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trajectory_file(path: &Path, scene: &Scene) -> Result<()> {
    std::fs::write(path, write_trajectories(scene)?)?;
    Ok(())
}
