//! The `uerw` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agreement::{agreement, bland_altman, octant_sequence};
use crate::camera::{CameraConfig, CameraSet};
use crate::error::{Error, Result};
use crate::fitter::{self, CameraView, FitConfig, TrialData};
use crate::kinematics::SkeletonSpec;
use crate::report::{self, BlandAltmanRow, OutputDir, WorkspaceRow, ALL_OCTANTS};
use crate::synth::{generate_trial, TrialScript};
use crate::torso::{local_wrist_trajectory, LandmarkMap};
use crate::trajectory::{Format, KeypointTrajectory, PixelTrajectory};
use crate::workspace::{score_workspace, Octant, ScoreOptions};

#[derive(Debug, Parser)]
#[command(name = "uerw", version, about = "Upper extremity reachable workspace analysis")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LandmarkPreset {
    /// Pose-estimator keypoint names (clavicle, backneck, upper_back, ...).
    Keypoints,
    /// Marker names (STRN, T1, T8, RWRA, RWRB).
    Markers,
}

impl LandmarkPreset {
    fn map(self) -> LandmarkMap {
        match self {
            LandmarkPreset::Keypoints => LandmarkMap::default(),
            LandmarkPreset::Markers => LandmarkMap::markers(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score the reachable workspace of one trajectory.
    Score {
        #[arg(long)]
        trajectory: PathBuf,
        /// csv or jsonl; inferred from the extension by default.
        #[arg(long)]
        format: Option<Format>,
        /// Landmark names used when the config gives none.
        #[arg(long, value_enum, default_value = "keypoints")]
        landmarks: LandmarkPreset,
        #[arg(long, default_value = "system")]
        system: String,
        /// Trial label; the file stem by default.
        #[arg(long)]
        trial: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare a test trajectory against a reference trajectory.
    Compare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value = "markers")]
        reference_landmarks: LandmarkPreset,
        #[arg(long, value_enum, default_value = "keypoints")]
        test_landmarks: LandmarkPreset,
        #[arg(long)]
        trial: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit implicit joint-angle trajectories to a bundle of observations.
    Fit {
        /// bundle.toml listing trials, cameras and observation files.
        #[arg(long)]
        bundle: PathBuf,
        /// Skeleton TOML; the built-in torso + right arm model by default.
        #[arg(long)]
        skeleton: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic trial bundle from a script.
    Synth {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Camera set TOML; frontal and 45° offset study cameras by default.
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Camera whose pixels and 3D estimate go into the bundle (first by default).
        #[arg(long)]
        view: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate workspace tables into summary and Bland–Altman tables.
    Report {
        #[arg(long = "workspace", required = true, num_args = 1..)]
        workspaces: Vec<PathBuf>,
        /// System that the others are compared against.
        #[arg(long)]
        reference: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

// ---------------------------------------------------------------------------
// Config files

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub score: ScoreOptions,
    pub landmarks: Option<LandmarkMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub score: ScoreOptions,
    pub reference_landmarks: Option<LandmarkMap>,
    pub test_landmarks: Option<LandmarkMap>,
    pub reference_system: String,
    pub test_system: String,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            score: ScoreOptions::default(),
            reference_landmarks: None,
            test_landmarks: None,
            reference_system: "reference".into(),
            test_system: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub reference: Option<String>,
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Observation bundle consumed by `fit` and written by `synth`. Paths are
/// relative to the bundle file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    #[serde(default)]
    pub trials: Vec<BundleTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleTrial {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints3d: Option<PathBuf>,
    #[serde(default)]
    pub views: Vec<BundleView>,
    /// Ground-truth keypoints, used only for reporting errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Ground-truth DoF table, used only for reporting errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_dofs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleView {
    pub camera: PathBuf,
    pub pixels: PathBuf,
}

impl Bundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

// ---------------------------------------------------------------------------

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score {
            trajectory,
            format,
            landmarks,
            system,
            trial,
            common,
        } => cmd_score(&trajectory, format, landmarks, &system, trial, &common),
        Command::Compare {
            reference,
            test,
            reference_landmarks,
            test_landmarks,
            trial,
            common,
        } => cmd_compare(&reference, &test, reference_landmarks, test_landmarks, trial, &common),
        Command::Fit {
            bundle,
            skeleton,
            iterations,
            common,
        } => cmd_fit(&bundle, skeleton.as_deref(), iterations, &common),
        Command::Synth {
            script,
            skeleton,
            cameras,
            view,
            common,
        } => cmd_synth(&script, skeleton.as_deref(), cameras.as_deref(), view, &common),
        Command::Report {
            workspaces,
            reference,
            common,
        } => cmd_report(&workspaces, reference, &common),
    }
}

fn load_trajectory(path: &Path, format: Option<Format>) -> Result<KeypointTrajectory> {
    let format = format.unwrap_or_else(|| Format::from_path(path));
    KeypointTrajectory::load(path, format)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trial".into())
}

fn config_inputs(common: &Common, mut inputs: Vec<PathBuf>) -> Vec<PathBuf> {
    if let Some(c) = &common.config {
        inputs.push(c.clone());
    }
    inputs
}

fn warn_gaps(traj: &KeypointTrajectory, label: &str) {
    for gap in crate::trajectory::gap_report(traj) {
        if gap.missing > 0 {
            log::warn!(
                "{label}: `{}` missing in {} frames (longest run {})",
                gap.name,
                gap.missing,
                gap.longest_run
            );
        }
    }
}

fn cmd_score(
    path: &Path,
    format: Option<Format>,
    preset: LandmarkPreset,
    system: &str,
    trial: Option<String>,
    common: &Common,
) -> Result<()> {
    let mut config: ScoreConfig = load_config(common.config.as_deref())?;
    config.landmarks.get_or_insert_with(|| preset.map());
    let seed = common.seed.unwrap_or(0);
    let traj = load_trajectory(path, format)?;
    warn_gaps(&traj, &path.display().to_string());
    let wrist = local_wrist_trajectory(&traj, config.landmarks.as_ref().unwrap())?;
    let ws = score_workspace(&wrist, &config.score, seed)?;
    let trial = trial.unwrap_or_else(|| stem(path));
    let rows = report::workspace_rows(&trial, system, &ws);

    let mut out = OutputDir::create(&common.out_dir)?;
    out.write("workspace.csv", report::workspace_csv(&rows))?;
    out.write("workspace.svg", report::workspace_svg(&format!("Reachable workspace: {trial}"), &rows))?;
    out.finish(
        "score",
        seed,
        report::config_hash(&config)?,
        &config_inputs(common, vec![path.to_path_buf()]),
    )?;
    Ok(())
}

/// Pairs each reference frame with the nearest test frame within half a
/// reference frame period.
pub fn align_frames(reference: &[f64], test: &[f64], frame_rate: f64) -> Vec<(usize, usize)> {
    let tol = 0.5 / frame_rate + 1e-9;
    let mut pairs = Vec::new();
    let mut j = 0;
    for (i, &t) in reference.iter().enumerate() {
        while j + 1 < test.len() && (test[j + 1] - t).abs() <= (test[j] - t).abs() {
            j += 1;
        }
        if !test.is_empty() && (test[j] - t).abs() <= tol {
            pairs.push((i, j));
        }
    }
    pairs
}

fn cmd_compare(
    ref_path: &Path,
    test_path: &Path,
    ref_preset: LandmarkPreset,
    test_preset: LandmarkPreset,
    trial: Option<String>,
    common: &Common,
) -> Result<()> {
    let mut config: CompareConfig = load_config(common.config.as_deref())?;
    config.reference_landmarks.get_or_insert_with(|| ref_preset.map());
    config.test_landmarks.get_or_insert_with(|| test_preset.map());
    let seed = common.seed.unwrap_or(0);
    let reference = load_trajectory(ref_path, None)?;
    let test = load_trajectory(test_path, None)?;

    let pairs = align_frames(reference.timestamps(), test.timestamps(), reference.frame_rate());
    if pairs.is_empty() {
        return Err(Error::data(
            None,
            "reference and test time ranges do not overlap",
        ));
    }
    let (ri, ti): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let reference = reference.select_frames(&ri)?;
    let test = test.select_frames(&ti)?;
    let ref_wrist = local_wrist_trajectory(&reference, config.reference_landmarks.as_ref().unwrap())?;
    let test_wrist = local_wrist_trajectory(&test, config.test_landmarks.as_ref().unwrap())?;

    let agree = agreement(&octant_sequence(&ref_wrist), &octant_sequence(&test_wrist))?;
    let trial = trial.unwrap_or_else(|| stem(test_path));
    let ref_ws = score_workspace(&ref_wrist, &config.score, seed)?;
    let test_ws = score_workspace(&test_wrist, &config.score, seed)?;
    let mut rows = report::workspace_rows(&trial, &config.reference_system, &ref_ws);
    rows.extend(report::workspace_rows(&trial, &config.test_system, &test_ws));

    let pairs: Vec<(f64, f64)> = Octant::ANALYZED
        .iter()
        .filter_map(|&o| Some((test_ws.percent(o)?, ref_ws.percent(o)?)))
        .collect();
    let ba_rows: Vec<BlandAltmanRow> = bland_altman(&pairs)
        .ok()
        .map(|stats| BlandAltmanRow {
            octant: ALL_OCTANTS.into(),
            system: config.test_system.clone(),
            stats,
        })
        .into_iter()
        .collect();

    let mut out = OutputDir::create(&common.out_dir)?;
    out.write("workspace.csv", report::workspace_csv(&rows))?;
    out.write("agreement.csv", report::agreement_csv(&agree))?;
    out.write("bland_altman.csv", report::bland_altman_csv(&ba_rows))?;
    out.write("workspace.svg", report::workspace_svg(&format!("Reachable workspace: {trial}"), &rows))?;
    out.write(
        "agreement.svg",
        report::agreement_svg(
            &format!("{} vs {}: octant agreement", config.test_system, config.reference_system),
            &agree,
        ),
    )?;
    out.finish(
        "compare",
        seed,
        report::config_hash(&config)?,
        &config_inputs(common, vec![ref_path.to_path_buf(), test_path.to_path_buf()]),
    )?;
    Ok(())
}

fn load_skeleton(path: Option<&Path>) -> Result<SkeletonSpec> {
    match path {
        Some(p) => SkeletonSpec::load(p),
        None => Ok(SkeletonSpec::default_arm()),
    }
}

/// Reads a `time,<dof>...` table as written by `fit` and `synth`.
pub fn read_dof_table(path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::data(0, e.to_string()))?.clone();
    if headers.get(0) != Some("time") {
        return Err(Error::data(0, "first column must be `time`"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(i + 1, e.to_string()))?;
        let vals = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::data(i + 1, format!("bad number `{v}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != names.len() + 1 {
            return Err(Error::data(i + 1, "wrong number of columns"));
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((names, times, rows))
}

pub fn dof_table_csv(spec: &SkeletonSpec, times: &[f64], dofs: &[Vec<f64>]) -> String {
    let mut s = String::from("time");
    for d in spec.dofs() {
        s.push(',');
        s.push_str(&d.name);
    }
    s.push('\n');
    for (t, q) in times.iter().zip(dofs) {
        s.push_str(&t.to_string());
        for v in q {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct TrialSummary {
    name: String,
    frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_keypoint_error_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    keypoint_rmse_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_joint_angle_error_deg: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct FitSummary {
    iterations: usize,
    final_loss: Option<f64>,
    scales: Vec<f64>,
    trials: Vec<TrialSummary>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_fit(bundle_path: &Path, skeleton: Option<&Path>, iterations: Option<usize>, common: &Common) -> Result<()> {
    let mut config: FitConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(n) = iterations {
        config.iterations = n;
    }
    let spec = load_skeleton(skeleton)?;
    let bundle = Bundle::load(bundle_path)?;
    if bundle.trials.is_empty() {
        return Err(Error::Usage(format!("{}: bundle lists no trials", bundle_path.display())));
    }
    let base = bundle_path.parent().unwrap_or(Path::new("."));
    let mut inputs = vec![bundle_path.to_path_buf()];
    if let Some(s) = skeleton {
        inputs.push(s.to_path_buf());
    }
    let mut trials = Vec::new();
    for t in &bundle.trials {
        let keypoints3d = match &t.keypoints3d {
            Some(p) => {
                let p = resolve(base, p);
                inputs.push(p.clone());
                Some(load_trajectory(&p, None)?)
            }
            None => None,
        };
        let views = t
            .views
            .iter()
            .map(|v| {
                let cam = resolve(base, &v.camera);
                let px = resolve(base, &v.pixels);
                inputs.push(cam.clone());
                inputs.push(px.clone());
                Ok(CameraView {
                    camera: CameraConfig::load(&cam)?.build()?,
                    pixels: PixelTrajectory::load(&px, Format::from_path(&px))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        trials.push(TrialData {
            name: t.name.clone(),
            keypoints3d,
            views,
        });
    }

    let result = fitter::fit(&spec, &trials, &config)?;

    let mut out = OutputDir::create(&common.out_dir)?;
    let mut trace = String::from("iteration,learning_rate,total,loss_3d,loss_2d\n");
    for r in &result.loss_trace {
        trace.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.learning_rate, r.total, r.loss_3d, r.loss_2d
        ));
    }
    out.write("loss_trace.csv", trace)?;
    let totals: Vec<f64> = result.loss_trace.iter().map(|r| r.total).collect();
    out.write("loss.svg", report::line_chart_svg("Training loss", "loss", &totals))?;

    let mut summaries = Vec::new();
    for (rec, bt) in result.trials.iter().zip(&bundle.trials) {
        out.write(&format!("{}/reconstructed.csv", rec.name), rec.keypoints.to_csv_string())?;
        out.write(
            &format!("{}/angles.csv", rec.name),
            dof_table_csv(&spec, &rec.timestamps, &rec.dofs),
        )?;
        let mut summary = TrialSummary {
            name: rec.name.clone(),
            frames: rec.timestamps.len(),
            mean_keypoint_error_m: None,
            keypoint_rmse_m: None,
            mean_joint_angle_error_deg: None,
        };
        if let Some(p) = &bt.truth {
            let p = resolve(base, p);
            inputs.push(p.clone());
            let truth = load_trajectory(&p, None)?;
            let (mean, rmse) = keypoint_errors(&rec.keypoints, &truth)?;
            summary.mean_keypoint_error_m = Some(mean);
            summary.keypoint_rmse_m = Some(rmse);
        }
        if let Some(p) = &bt.truth_dofs {
            let p = resolve(base, p);
            inputs.push(p.clone());
            let (_, _, truth) = read_dof_table(&p)?;
            summary.mean_joint_angle_error_deg = Some(joint_angle_error_deg(&spec, &rec.dofs, &truth)?);
        }
        summaries.push(summary);
    }
    let summary = FitSummary {
        iterations: config.iterations,
        final_loss: totals.last().copied(),
        scales: result.params.body.scales.clone(),
        trials: summaries,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    out.write("summary.json", json + "\n")?;
    out.finish("fit", config.seed, report::config_hash(&config)?, &config_inputs(common, inputs))?;
    Ok(())
}

/// Mean and RMS Euclidean error over keypoints present in both trajectories,
/// matched by name and frame index.
pub fn keypoint_errors(estimate: &KeypointTrajectory, truth: &KeypointTrajectory) -> Result<(f64, f64)> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!(
            "estimate has {} frames, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (k, name) in estimate.names().iter().enumerate() {
        let Some(tk) = truth.index_of(name) else { continue };
        for f in 0..estimate.len() {
            if let (Some(a), Some(b)) = (estimate.position(f, k), truth.position(f, tk)) {
                let e = (a - b).norm();
                sum += e;
                sq += e * e;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::data(None, "estimate and truth share no keypoints"));
    }
    Ok((sum / n as f64, (sq / n as f64).sqrt()))
}

/// Mean absolute error over non-root DoFs, degrees.
pub fn joint_angle_error_deg(spec: &SkeletonSpec, estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape("estimate and truth differ in frame count".into()));
    }
    let joint_dofs = crate::kinematics::ROOT_DOF..spec.dof_count();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in estimate.iter().zip(truth) {
        if a.len() != b.len() {
            return Err(Error::Shape("estimate and truth differ in DoF count".into()));
        }
        for d in joint_dofs.clone() {
            sum += (a[d] - b[d]).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).to_degrees() })
}

fn cmd_synth(
    script_path: &Path,
    skeleton: Option<&Path>,
    cameras: Option<&Path>,
    view: Option<String>,
    common: &Common,
) -> Result<()> {
    let mut script = TrialScript::load(script_path)?;
    if let Some(seed) = common.seed {
        script.seed = seed;
    }
    let spec = load_skeleton(skeleton)?;
    let camera_set = match cameras {
        Some(p) => CameraSet::load(p)?,
        None => CameraSet::study_default(),
    };
    if camera_set.cameras.is_empty() {
        return Err(Error::Config("camera set is empty".into()));
    }
    let built = camera_set
        .cameras
        .iter()
        .map(|c| Ok((c.name.clone(), c.build()?)))
        .collect::<Result<Vec<_>>>()?;
    let view = view.unwrap_or_else(|| built[0].0.clone());
    if !built.iter().any(|(n, _)| *n == view) {
        return Err(Error::Usage(format!("no camera named `{view}`")));
    }
    let trial = generate_trial(&spec, &script, &built)?;

    let mut out = OutputDir::create(&common.out_dir)?;
    out.write("truth_keypoints.csv", trial.clean.to_csv_string())?;
    out.write("truth_dofs.csv", dof_table_csv(&spec, trial.clean.timestamps(), &trial.dofs))?;
    out.write("keypoints3d.csv", trial.noisy.to_csv_string())?;
    for (v, cfg) in trial.views.iter().zip(&camera_set.cameras) {
        out.write(&format!("{}_pixels.csv", v.name), v.pixels.to_csv_string())?;
        out.write(&format!("{}_keypoints3d.csv", v.name), v.keypoints3d.to_csv_string())?;
        let toml = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
        out.write(&format!("cameras/{}.toml", v.name), toml)?;
    }
    let bundle = Bundle {
        trials: vec![BundleTrial {
            name: trial.name.clone(),
            keypoints3d: Some(PathBuf::from(format!("{view}_keypoints3d.csv"))),
            views: vec![BundleView {
                camera: PathBuf::from(format!("cameras/{view}.toml")),
                pixels: PathBuf::from(format!("{view}_pixels.csv")),
            }],
            truth: Some(PathBuf::from("truth_keypoints.csv")),
            truth_dofs: Some(PathBuf::from("truth_dofs.csv")),
        }],
    };
    out.write(
        "bundle.toml",
        toml::to_string(&bundle).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    let mut inputs = vec![script_path.to_path_buf()];
    inputs.extend(skeleton.map(Path::to_path_buf));
    inputs.extend(cameras.map(Path::to_path_buf));
    out.finish("synth", script.seed, report::config_hash(&script)?, &config_inputs(common, inputs))?;
    Ok(())
}

fn cmd_report(paths: &[PathBuf], reference: Option<String>, common: &Common) -> Result<()> {
    let mut config: ReportConfig = load_config(common.config.as_deref())?;
    if reference.is_some() {
        config.reference = reference;
    }
    let mut rows: Vec<WorkspaceRow> = Vec::new();
    for p in paths {
        rows.extend(report::read_workspace_csv(p)?);
    }
    if rows.is_empty() {
        return Err(Error::data(None, "workspace tables are empty"));
    }
    let summary = report::summarize(&rows);
    let mut out = OutputDir::create(&common.out_dir)?;
    out.write("summary.csv", report::summary_csv(&summary))?;
    if let Some(reference) = &config.reference {
        if !rows.iter().any(|r| &r.system == reference) {
            return Err(Error::data(None, format!("no rows for reference system `{reference}`")));
        }
        let ba = report::bland_altman_table(&rows, reference);
        out.write("bland_altman.csv", report::bland_altman_csv(&ba))?;
    }
    out.write("workspace.svg", report::workspace_svg("Reachable workspace by octant", &rows))?;
    out.finish(
        "report",
        common.seed.unwrap_or(0),
        report::config_hash(&config)?,
        &config_inputs(common, paths.to_vec()),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_within_half_period() {
        let r = [0.0, 0.1, 0.2, 0.3];
        let t = [0.04, 0.1, 0.26, 0.5];
        assert_eq!(align_frames(&r, &t, 10.0), vec![(0, 0), (1, 1), (3, 2)]);
        assert!(align_frames(&r, &[5.0, 6.0], 10.0).is_empty());
    }

    #[test]
    fn cli_parses() {
        Cli::try_parse_from(["uerw", "score", "--trajectory", "a.csv", "--seed", "3"]).unwrap();
        Cli::try_parse_from(["uerw", "report", "--workspace", "a.csv", "b.csv"]).unwrap();
        assert!(Cli::try_parse_from(["uerw", "score"]).is_err());
    }
}
