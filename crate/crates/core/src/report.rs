//! Tidy CSV tables, SVG charts and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agreement::{bland_altman, AgreementReport, BlandAltman};
use crate::error::{Error, Result};
use crate::workspace::{Octant, WorkspaceReport};

/// Label used for statistics pooled over all analyzed octants.
pub const ALL_OCTANTS: &str = "All Octants";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// JSON with object keys sorted recursively, so equal values hash equally
/// regardless of field order.
pub fn canonical_json(value: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let sorted: BTreeMap<_, _> = m.iter().map(|(k, v)| (k.clone(), sort(v))).collect();
                Value::Object(sorted.into_iter().collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(value).to_string()
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let v = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(sha256_hex(canonical_json(&v).as_bytes()))
}

// ---------------------------------------------------------------------------
// Workspace tables

/// One row of a workspace table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRow {
    pub trial: String,
    pub system: String,
    pub octant: Octant,
    pub available: usize,
    pub reached: usize,
    /// `None` when the octant has no targets.
    pub percent: Option<f64>,
    pub peak_reach: f64,
}

pub fn workspace_rows(trial: &str, system: &str, report: &WorkspaceReport) -> Vec<WorkspaceRow> {
    report
        .octants
        .iter()
        .map(|s| WorkspaceRow {
            trial: trial.into(),
            system: system.into(),
            octant: s.octant,
            available: s.available,
            reached: s.reached,
            percent: s.percent(),
            peak_reach: report.peak_reach,
        })
        .collect()
}

const WORKSPACE_HEADER: &str = "trial,system,octant,available,reached,percent,peak_reach";

pub fn workspace_csv(rows: &[WorkspaceRow]) -> String {
    let mut s = String::from(WORKSPACE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6}",
            csv_field(&r.trial),
            csv_field(&r.system),
            r.octant,
            r.available,
            r.reached,
            fmt_opt(r.percent),
            r.peak_reach
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a table written by [`workspace_csv`].
pub fn read_workspace_csv(path: &Path) -> Result<Vec<WorkspaceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::data(0, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != WORKSPACE_HEADER {
        return Err(Error::data(0, format!("{}: not a workspace table", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::data(row, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::data(row, format!("bad number `{}`", &rec[k])))
        };
        let int = |k: usize| -> Result<usize> {
            rec[k]
                .parse()
                .map_err(|_| Error::data(row, format!("bad count `{}`", &rec[k])))
        };
        rows.push(WorkspaceRow {
            trial: rec[0].to_string(),
            system: rec[1].to_string(),
            octant: rec[2].parse().map_err(|_| Error::data(row, format!("bad octant `{}`", &rec[2])))?,
            available: int(3)?,
            reached: int(4)?,
            percent: if &rec[5] == "NA" { None } else { Some(num(5)?) },
            peak_reach: num(6)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Agreement and Bland–Altman tables

pub fn agreement_csv(report: &AgreementReport) -> String {
    let mut s = String::from("octant,metric,value\n");
    for o in &report.octants {
        let rows: [(&str, String); 6] = [
            ("frames", o.frames.to_string()),
            ("agreement", fmt_opt(o.agreement_rate())),
            ("disagreement", fmt_opt(o.disagreement_rate())),
            ("ml_error", fmt_opt(o.ml_rate())),
            ("ap_error", fmt_opt(o.ap_rate())),
            ("si_error", fmt_opt(o.si_rate())),
        ];
        for (metric, value) in rows {
            let _ = writeln!(s, "{},{metric},{value}", o.octant);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlandAltmanRow {
    pub octant: String,
    pub system: String,
    pub stats: BlandAltman,
}

pub fn bland_altman_csv(rows: &[BlandAltmanRow]) -> String {
    let mut s = String::from("octant,system,n,mean_difference,sd,lower_limit,upper_limit\n");
    for r in rows {
        let b = &r.stats;
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.octant,
            csv_field(&r.system),
            b.n,
            b.mean_difference,
            b.sd,
            b.lower_limit,
            b.upper_limit
        );
    }
    s
}

/// Mean ± sample sd of percent reached per (octant, system).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub octant: Octant,
    pub system: String,
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

pub fn summarize(rows: &[WorkspaceRow]) -> Vec<SummaryRow> {
    let mut systems: Vec<&str> = Vec::new();
    for r in rows {
        if !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
    }
    let mut out = Vec::new();
    for octant in Octant::ANALYZED {
        for &system in &systems {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.octant == octant && r.system == system)
                .filter_map(|r| r.percent)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = (n > 1).then(|| {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            out.push(SummaryRow {
                octant,
                system: system.to_string(),
                n,
                mean,
                sd,
            });
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("octant,system,n,mean,sd\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6},{}", r.octant, csv_field(&r.system), r.n, r.mean, fmt_opt(r.sd));
    }
    s
}

/// Bland–Altman of every non-reference system against `reference`, pairing
/// rows by trial and octant: per octant and pooled over all octants. Groups
/// with fewer than two pairs are skipped.
pub fn bland_altman_table(rows: &[WorkspaceRow], reference: &str) -> Vec<BlandAltmanRow> {
    let mut systems: Vec<&str> = Vec::new();
    for r in rows {
        if r.system != reference && !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
    }
    let lookup: BTreeMap<(&str, &str, Octant), f64> = rows
        .iter()
        .filter_map(|r| Some(((r.trial.as_str(), r.system.as_str(), r.octant), r.percent?)))
        .collect();
    let mut out = Vec::new();
    for &system in &systems {
        let mut pooled = Vec::new();
        for octant in Octant::ANALYZED {
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.system == system && r.octant == octant)
                .filter_map(|r| {
                    let test = r.percent?;
                    let reference = *lookup.get(&(r.trial.as_str(), reference, octant))?;
                    Some((test, reference))
                })
                .collect();
            pooled.extend_from_slice(&pairs);
            if let Ok(stats) = bland_altman(&pairs) {
                out.push(BlandAltmanRow {
                    octant: octant.to_string(),
                    system: system.to_string(),
                    stats,
                });
            }
        }
        if let Ok(stats) = bland_altman(&pooled) {
            out.push(BlandAltmanRow {
                octant: ALL_OCTANTS.into(),
                system: system.to_string(),
                stats,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// SVG

const SERIES_COLORS: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped vertical bar chart. Missing values leave a gap.
pub fn bar_chart_svg(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<Option<f64>>)],
    y_max: f64,
) -> String {
    let (w, h) = (760.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 90.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let y = top + plot_h * (1.0 - i as f64 / 5.0);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.0}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let gx = left + group_w * c as f64 + group_w * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let Some(v) = values.get(c).copied().flatten() else { continue };
            let bh = plot_h * (v / y_max).clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + bar_w * k as f64,
                top + plot_h - bh,
                bar_w,
                bh,
                SERIES_COLORS[k % SERIES_COLORS.len()]
            );
        }
        let lx = left + group_w * (c as f64 + 0.5);
        let ly = top + plot_h + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-30 {lx:.2} {ly:.2})">{}</text>"#,
            escape(cat)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    for (k, (name, _)) in series.iter().enumerate() {
        let y = top + 16.0 * k as f64;
        let x = left + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            SERIES_COLORS[k % SERIES_COLORS.len()],
            x + 14.0,
            y + 9.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Percent reached per analyzed octant, one series per system.
pub fn workspace_svg(title: &str, rows: &[WorkspaceRow]) -> String {
    let summary = summarize(rows);
    let categories: Vec<String> = Octant::ANALYZED.iter().map(|o| o.to_string()).collect();
    let mut systems: Vec<String> = Vec::new();
    for r in &summary {
        if !systems.contains(&r.system) {
            systems.push(r.system.clone());
        }
    }
    let series: Vec<(String, Vec<Option<f64>>)> = systems
        .iter()
        .map(|sys| {
            let vals = Octant::ANALYZED
                .iter()
                .map(|o| summary.iter().find(|r| r.octant == *o && &r.system == sys).map(|r| r.mean))
                .collect();
            (sys.clone(), vals)
        })
        .collect();
    bar_chart_svg(title, "% targets reached", &categories, &series, 100.0)
}

/// Agreement and directional error rates per analyzed octant.
pub fn agreement_svg(title: &str, report: &AgreementReport) -> String {
    let categories: Vec<String> = Octant::ANALYZED.iter().map(|o| o.to_string()).collect();
    let pick = |f: fn(&crate::agreement::OctantAgreement) -> Option<f64>| -> Vec<Option<f64>> {
        Octant::ANALYZED.iter().map(|o| f(report.get(*o))).collect()
    };
    let series = vec![
        ("agreement".to_string(), pick(|o| o.agreement_rate())),
        ("AP error".to_string(), pick(|o| o.ap_rate())),
        ("SI error".to_string(), pick(|o| o.si_rate())),
        ("ML error".to_string(), pick(|o| o.ml_rate())),
    ];
    bar_chart_svg(title, "% of reference frames", &categories, &series, 100.0)
}

/// Polyline of `values` against their index, on a log scale when all are positive.
pub fn line_chart_svg(title: &str, y_label: &str, values: &[f64]) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 40.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let log = !values.is_empty() && values.iter().all(|v| *v > 0.0 && v.is_finite());
    let tr = |v: f64| if log { v.log10() } else { v };
    let finite: Vec<f64> = values.iter().map(|&v| tr(v)).filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let n = values.len().max(2) - 1;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let label = if log { format!("{y_label} (log10)") } else { y_label.to_string() };
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(&label)
    );
    for (v, y) in [(hi, top), (lo, top + plot_h)] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| tr(**v).is_finite())
        .map(|(i, v)| {
            let x = left + plot_w * i as f64 / n as f64;
            let y = top + plot_h * (1.0 - (tr(*v) - lo) / (hi - lo));
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#4c72b0" points="{}"/>"##, pts.join(" "));
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run: enough to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Collects outputs written into one directory, then writes the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = bytes.as_ref();
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn finish(mut self, command: &str, seed: u64, config_sha256: String, inputs: &[PathBuf]) -> Result<RunManifest> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.written.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256,
            inputs,
            outputs: std::mem::take(&mut self.written),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        let path = self.root.join("manifest.json");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
