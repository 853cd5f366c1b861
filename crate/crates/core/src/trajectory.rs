//! Keypoint and pixel trajectory streams.
//!
//! A trajectory is a frame-major table of per-keypoint positions with a
//! confidence for every sample. Missing samples are stored as `None` and are
//! never filled in.
//!
//! Two on-disk formats are supported:
//!
//! * CSV with header `time,<name>_x,<name>_y,<name>_z,<name>_c,...` (pixel
//!   trajectories use `_u,_v,_c`). An empty coordinate cell marks a missing
//!   sample; an empty confidence cell reads as 1.0.
//! * JSONL with one object per frame: `{"t": 0.0, "keypoints": {"name": [x, y, z, c]}}`.
//!   Missing samples are written as `[null, null, null, c]`; an absent name
//!   reads as missing with confidence 0.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::SVector;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Frame rate assumed when it cannot be inferred (fewer than two frames).
pub const DEFAULT_FRAME_RATE: f64 = 60.0;

/// Time-stamped keypoint samples of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const D: usize> {
    frame_rate: f64,
    timestamps: Vec<f64>,
    names: Vec<String>,
    positions: Vec<Vec<Option<SVector<f64, D>>>>,
    confidences: Vec<Vec<f64>>,
}

/// 3D keypoints in meters.
pub type KeypointTrajectory = Trajectory<3>;
/// 2D detections in pixels.
pub type PixelTrajectory = Trajectory<2>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Usage(format!("unknown trajectory format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

fn axis_suffixes(d: usize) -> &'static [&'static str] {
    match d {
        2 => &["u", "v"],
        3 => &["x", "y", "z"],
        _ => unreachable!("only 2D and 3D trajectories are supported"),
    }
}

impl<const D: usize> Trajectory<D> {
    /// Builds a validated trajectory. Errors name the offending 1-based frame.
    pub fn new(
        timestamps: Vec<f64>,
        names: Vec<String>,
        positions: Vec<Vec<Option<SVector<f64, D>>>>,
        confidences: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let frame_rate = infer_frame_rate(&timestamps);
        let traj = Trajectory {
            frame_rate,
            timestamps,
            names,
            positions,
            confidences,
        };
        traj.validate()?;
        Ok(traj)
    }

    /// A trajectory with every sample present and confidence 1.
    pub fn from_dense(
        timestamps: Vec<f64>,
        names: Vec<String>,
        positions: Vec<Vec<SVector<f64, D>>>,
    ) -> Result<Self> {
        let confidences = positions.iter().map(|f| vec![1.0; f.len()]).collect();
        let positions = positions
            .into_iter()
            .map(|f| f.into_iter().map(Some).collect())
            .collect();
        Self::new(timestamps, names, positions, confidences)
    }

    fn validate(&self) -> Result<()> {
        let j = self.names.len();
        for (i, name) in self.names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::data(None, "empty keypoint name"));
            }
            if self.names[..i].contains(name) {
                return Err(Error::data(None, format!("duplicate keypoint `{name}`")));
            }
        }
        if self.positions.len() != self.timestamps.len()
            || self.confidences.len() != self.timestamps.len()
        {
            return Err(Error::Shape(format!(
                "{} timestamps, {} position frames, {} confidence frames",
                self.timestamps.len(),
                self.positions.len(),
                self.confidences.len()
            )));
        }
        for f in 0..self.timestamps.len() {
            let row = f + 1;
            let t = self.timestamps[f];
            if !t.is_finite() {
                return Err(Error::data(row, "non-finite timestamp"));
            }
            if f > 0 && t <= self.timestamps[f - 1] {
                return Err(Error::data(
                    row,
                    format!(
                        "timestamps not strictly increasing ({} after {})",
                        t,
                        self.timestamps[f - 1]
                    ),
                ));
            }
            if self.positions[f].len() != j || self.confidences[f].len() != j {
                return Err(Error::data(
                    row,
                    format!(
                        "expected {j} keypoints, found {} positions and {} confidences",
                        self.positions[f].len(),
                        self.confidences[f].len()
                    ),
                ));
            }
            for k in 0..j {
                let c = self.confidences[f][k];
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::data(
                        row,
                        format!("confidence {c} of `{}` outside [0, 1]", self.names[k]),
                    ));
                }
                if let Some(p) = &self.positions[f][k] {
                    if !p.iter().all(|v| v.is_finite()) {
                        return Err(Error::data(
                            row,
                            format!("non-finite position for `{}`", self.names[k]),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn set_frame_rate(&mut self, hz: f64) {
        self.frame_rate = hz;
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn keypoint_count(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn position(&self, frame: usize, keypoint: usize) -> Option<SVector<f64, D>> {
        self.positions[frame][keypoint]
    }

    pub fn confidence(&self, frame: usize, keypoint: usize) -> f64 {
        self.confidences[frame][keypoint]
    }

    pub fn frame_positions(&self, frame: usize) -> &[Option<SVector<f64, D>>] {
        &self.positions[frame]
    }

    pub fn frame_confidences(&self, frame: usize) -> &[f64] {
        &self.confidences[frame]
    }

    /// All samples of one keypoint, by name.
    pub fn column(&self, name: &str) -> Option<Vec<Option<SVector<f64, D>>>> {
        let k = self.index_of(name)?;
        Some(self.positions.iter().map(|f| f[k]).collect())
    }

    /// Replaces a sample. Used by noise models; keeps the invariants.
    pub(crate) fn set_sample(
        &mut self,
        frame: usize,
        keypoint: usize,
        position: Option<SVector<f64, D>>,
        confidence: f64,
    ) {
        debug_assert!((0.0..=1.0).contains(&confidence));
        self.positions[frame][keypoint] = position;
        self.confidences[frame][keypoint] = confidence;
    }

    /// Restricts the trajectory to the given frame indices (ascending).
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        Self::new(
            frames.iter().map(|&f| self.timestamps[f]).collect(),
            self.names.clone(),
            frames.iter().map(|&f| self.positions[f].clone()).collect(),
            frames.iter().map(|&f| self.confidences[f].clone()).collect(),
        )
    }

    pub fn load(path: &Path, format: Format) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        match format {
            Format::Csv => Self::read_csv(reader),
            Format::Jsonl => Self::read_jsonl(reader),
        }
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        let mut out = Vec::new();
        match format {
            Format::Csv => self.write_csv(&mut out),
            Format::Jsonl => self.write_jsonl(&mut out),
        }
        .map_err(|e| Error::io(path, e))?;
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::data(0, format!("unreadable header: {e}")))?
            .clone();
        let names = parse_header(&header, axis_suffixes(D))?;
        let width = 1 + names.len() * (D + 1);

        let mut timestamps = Vec::new();
        let mut positions = Vec::new();
        let mut confidences = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::data(row, e.to_string()))?;
            if record.len() != width {
                return Err(Error::data(
                    row,
                    format!("expected {width} columns, found {}", record.len()),
                ));
            }
            let t = parse_f64(&record[0], row, "time")?
                .ok_or_else(|| Error::data(row, "missing timestamp"))?;
            let mut frame_pos = Vec::with_capacity(names.len());
            let mut frame_conf = Vec::with_capacity(names.len());
            for (k, name) in names.iter().enumerate() {
                let base = 1 + k * (D + 1);
                let mut coords = [None; D];
                for (a, slot) in coords.iter_mut().enumerate() {
                    *slot = parse_f64(&record[base + a], row, name)?;
                }
                let present = coords.iter().filter(|c| c.is_some()).count();
                let pos = match present {
                    0 => None,
                    n if n == D => Some(SVector::<f64, D>::from_fn(|a, _| coords[a].unwrap())),
                    _ => {
                        return Err(Error::data(
                            row,
                            format!("partially missing coordinates for `{name}`"),
                        ))
                    }
                };
                let c = parse_f64(&record[base + D], row, name)?.unwrap_or(1.0);
                frame_pos.push(pos);
                frame_conf.push(c);
            }
            timestamps.push(t);
            positions.push(frame_pos);
            confidences.push(frame_conf);
        }
        Self::new(timestamps, names, positions, confidences)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let suffixes = axis_suffixes(D);
        let mut line = String::from("time");
        for name in &self.names {
            for s in suffixes {
                line.push_str(&format!(",{name}_{s}"));
            }
            line.push_str(&format!(",{name}_c"));
        }
        writeln!(w, "{line}")?;
        for f in 0..self.len() {
            line.clear();
            line.push_str(&self.timestamps[f].to_string());
            for k in 0..self.names.len() {
                match &self.positions[f][k] {
                    Some(p) => {
                        for v in p.iter() {
                            line.push(',');
                            line.push_str(&v.to_string());
                        }
                    }
                    None => line.push_str(&",".repeat(D)),
                }
                line.push(',');
                line.push_str(&self.confidences[f][k].to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut names: Option<Vec<String>> = None;
        let mut timestamps = Vec::new();
        let mut positions = Vec::new();
        let mut confidences = Vec::new();
        let mut row = 0;
        for line in reader.lines() {
            let line = line.map_err(|e| Error::data(row + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            row += 1;
            let value: Value = serde_json::from_str(&line)
                .map_err(|e| Error::data(row, format!("invalid JSON: {e}")))?;
            let t = value
                .get("t")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::data(row, "missing numeric field `t`"))?;
            let kps = value
                .get("keypoints")
                .and_then(Value::as_object)
                .ok_or_else(|| Error::data(row, "missing object field `keypoints`"))?;
            let names = names.get_or_insert_with(|| kps.keys().cloned().collect());
            for key in kps.keys() {
                if !names.contains(key) {
                    return Err(Error::data(row, format!("unknown keypoint `{key}`")));
                }
            }
            let mut frame_pos = Vec::with_capacity(names.len());
            let mut frame_conf = Vec::with_capacity(names.len());
            for name in names.iter() {
                let (pos, c) = match kps.get(name) {
                    None | Some(Value::Null) => (None, 0.0),
                    Some(v) => parse_json_sample::<D>(v, row, name)?,
                };
                frame_pos.push(pos);
                frame_conf.push(c);
            }
            timestamps.push(t);
            positions.push(frame_pos);
            confidences.push(frame_conf);
        }
        let names = names.ok_or_else(|| Error::data(None, "empty JSONL trajectory"))?;
        Self::new(timestamps, names, positions, confidences)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for f in 0..self.len() {
            let mut kps = Map::new();
            for (k, name) in self.names.iter().enumerate() {
                let mut entry: Vec<Value> = match &self.positions[f][k] {
                    Some(p) => p.iter().map(|&v| Value::from(v)).collect(),
                    None => vec![Value::Null; D],
                };
                entry.push(Value::from(self.confidences[f][k]));
                kps.insert(name.clone(), Value::Array(entry));
            }
            let mut obj = Map::new();
            obj.insert("t".into(), Value::from(self.timestamps[f]));
            obj.insert("keypoints".into(), Value::Object(kps));
            serde_json::to_writer(&mut w, &Value::Object(obj))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("CSV output is UTF-8")
    }
}

fn infer_frame_rate(timestamps: &[f64]) -> f64 {
    if timestamps.len() < 2 {
        return DEFAULT_FRAME_RATE;
    }
    let mut dts: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(f64::total_cmp);
    let median = dts[dts.len() / 2];
    if median > 0.0 && median.is_finite() {
        1.0 / median
    } else {
        DEFAULT_FRAME_RATE
    }
}

fn parse_header(header: &csv::StringRecord, suffixes: &[&str]) -> Result<Vec<String>> {
    let d = suffixes.len();
    if header.get(0) != Some("time") {
        return Err(Error::data(0, "header must start with `time`"));
    }
    let cols: Vec<&str> = header.iter().skip(1).collect();
    if !cols.len().is_multiple_of(d + 1) {
        return Err(Error::data(
            0,
            format!("expected groups of {} columns per keypoint", d + 1),
        ));
    }
    let mut names = Vec::new();
    for group in cols.chunks(d + 1) {
        let name = group[0]
            .strip_suffix(&format!("_{}", suffixes[0]))
            .ok_or_else(|| Error::data(0, format!("malformed column `{}`", group[0])))?;
        for (col, s) in group.iter().zip(suffixes.iter().chain(std::iter::once(&"c"))) {
            if *col != format!("{name}_{s}") {
                return Err(Error::data(
                    0,
                    format!("malformed column `{col}`, expected `{name}_{s}`"),
                ));
            }
        }
        names.push(name.to_string());
    }
    Ok(names)
}

fn parse_f64(cell: &str, row: usize, what: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::data(row, format!("unparseable number `{cell}` for `{what}`")))
}

fn parse_json_sample<const D: usize>(
    v: &Value,
    row: usize,
    name: &str,
) -> Result<(Option<SVector<f64, D>>, f64)> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == D + 1)
        .ok_or_else(|| Error::data(row, format!("`{name}` must be an array of {}", D + 1)))?;
    let c = match &arr[D] {
        Value::Null => 1.0,
        c => c
            .as_f64()
            .ok_or_else(|| Error::data(row, format!("non-numeric confidence for `{name}`")))?,
    };
    let nulls = arr[..D].iter().filter(|x| x.is_null()).count();
    if nulls == D {
        return Ok((None, c));
    }
    if nulls != 0 {
        return Err(Error::data(
            row,
            format!("partially missing coordinates for `{name}`"),
        ));
    }
    let mut p = SVector::<f64, D>::zeros();
    for a in 0..D {
        p[a] = arr[a]
            .as_f64()
            .ok_or_else(|| Error::data(row, format!("non-numeric coordinate for `{name}`")))?;
    }
    Ok((Some(p), c))
}

/// Missing-sample summary for one keypoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapSummary {
    pub name: String,
    pub missing: usize,
    pub longest_run: usize,
}

/// Counts missing samples and the longest consecutive missing run per keypoint.
pub fn gap_report<const D: usize>(traj: &Trajectory<D>) -> Vec<GapSummary> {
    (0..traj.keypoint_count())
        .map(|k| {
            let mut missing = 0;
            let mut run = 0;
            let mut longest_run = 0;
            for f in 0..traj.len() {
                if traj.positions[f][k].is_none() {
                    missing += 1;
                    run += 1;
                    longest_run = longest_run.max(run);
                } else {
                    run = 0;
                }
            }
            GapSummary {
                name: traj.names[k].clone(),
                missing,
                longest_run,
            }
        })
        .collect()
}
