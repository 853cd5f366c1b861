//! Synthetic reach trials with known ground truth, camera observations and
//! controlled noise, plus a brute-force scorer used to cross-check the
//! accelerated one.
//!
//! A script lists reach directives. Each directive asks for `sweeps` joint
//! space waypoints whose wrist lies in the requested octant; consecutive
//! waypoints are joined by zero-velocity cubic blends. A blend may only
//! change the wrist's sign on axes where its two end octants differ, so a
//! directive's sweeps stay inside its octant.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::kinematics::{BodyParams, DofKind, SkeletonSpec};
use crate::torso::{wrist_end_effector, FrameLandmarks, LandmarkMap, TorsoFrame};
use crate::trajectory::{KeypointTrajectory, PixelTrajectory};
use crate::workspace::{within_capture, Octant, OctantScore, TargetSphere, WorkspaceReport};

const POSE_TRIES: usize = 20_000;
const PATH_TRIES: usize = 400;
const REACH_PROBE_POSES: usize = 4000;
/// Fraction of each joint range kept clear at both ends when sampling.
const LIMIT_MARGIN: f64 = 0.05;

// RNG streams, so that changing one noise source leaves the others intact.
const STREAM_MOTION: u64 = 0;
const STREAM_PROBE: u64 = 1;
const STREAM_3D: u64 = 2;
const STREAM_DROPOUT_3D: u64 = 3;

fn camera_stream(camera: usize, slot: u64) -> u64 {
    16 + 4 * camera as u64 + slot
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn default_sweeps() -> usize {
    3
}

fn default_min_reach() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachDirective {
    pub octant: Octant,
    /// Number of waypoints visited inside the octant.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    /// Seconds spent on this directive.
    pub duration: f64,
    /// Minimum wrist distance at each waypoint, as a fraction of the
    /// skeleton's nominal reach.
    #[serde(default = "default_min_reach")]
    pub min_reach: f64,
    /// Optional cap on the wrist distance throughout the directive, same
    /// units as `min_reach`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_reach: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Isotropic Gaussian σ on 3D keypoints, meters.
    pub keypoint_sigma: f64,
    /// Gaussian σ on each pixel coordinate.
    pub pixel_sigma: f64,
    /// Per camera name: σ along the camera ray of that camera's 3D estimate, meters.
    pub depth_sigma: BTreeMap<String, f64>,
    /// Probability that a sample is dropped (confidence 0, no position).
    pub dropout: f64,
}

/// Synthetic trial script.
///
/// ```toml
/// name = "sweep"
/// seed = 7
/// frame_rate = 60.0
/// root_position = [0.0, 0.0, 0.85]   # pelvis, meters
///
/// [[reach]]
/// octant = "Sup. Ant. Ipsil."
/// sweeps = 3          # waypoints in the octant
/// duration = 3.0      # seconds
/// min_reach = 0.6     # fraction of nominal reach
/// max_reach = 0.9     # optional
///
/// [noise]
/// keypoint_sigma = 0.0          # meters
/// pixel_sigma = 0.0             # pixels
/// depth_sigma = { frontal = 0.05 }
/// dropout = 0.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialScript {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_root")]
    pub root_position: [f64; 3],
    /// Ground-truth segment scales; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    pub reach: Vec<ReachDirective>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

fn default_name() -> String {
    "trial".into()
}

fn default_frame_rate() -> f64 {
    60.0
}

fn default_root() -> [f64; 3] {
    [0.0, 0.0, 0.85]
}

impl TrialScript {
    /// One directive per analyzed octant.
    pub fn all_octants(seed: u64) -> Self {
        TrialScript {
            name: format!("all_octants_{seed}"),
            seed,
            frame_rate: default_frame_rate(),
            root_position: default_root(),
            scales: None,
            reach: Octant::ANALYZED
                .iter()
                .map(|&octant| ReachDirective {
                    octant,
                    sweeps: default_sweeps(),
                    duration: 2.0,
                    min_reach: default_min_reach(),
                    max_reach: None,
                })
                .collect(),
            noise: NoiseSpec::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: TrialScript = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reach.is_empty() {
            return Err(Error::Config("script has no reach directives".into()));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::Config("frame_rate must be positive".into()));
        }
        for (i, d) in self.reach.iter().enumerate() {
            if !(d.duration > 0.0 && d.duration.is_finite()) {
                return Err(Error::Config(format!("reach {i}: duration must be positive")));
            }
            if d.sweeps == 0 {
                return Err(Error::Config(format!("reach {i}: sweeps must be at least 1")));
            }
            if !(0.0..1.0).contains(&d.min_reach) {
                return Err(Error::Config(format!("reach {i}: min_reach must be in [0, 1)")));
            }
            if let Some(m) = d.max_reach {
                if !(m > d.min_reach && m.is_finite()) {
                    return Err(Error::Config(format!("reach {i}: max_reach must exceed min_reach")));
                }
            }
        }
        let n = &self.noise;
        let sigmas = std::iter::once(n.keypoint_sigma)
            .chain(std::iter::once(n.pixel_sigma))
            .chain(n.depth_sigma.values().copied());
        for s in sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("noise σ must be non-negative, got {s}")));
            }
        }
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One camera's observations of a synthetic trial.
#[derive(Debug, Clone)]
pub struct SynthView {
    pub name: String,
    pub camera: CameraModel,
    pub pixels_clean: PixelTrajectory,
    pub pixels: PixelTrajectory,
    /// 3D keypoints with this camera's depth noise on top of the isotropic noise.
    pub keypoints3d: KeypointTrajectory,
}

#[derive(Debug, Clone)]
pub struct SynthTrial {
    pub name: String,
    /// Ground-truth DoF vector per frame.
    pub dofs: Vec<Vec<f64>>,
    pub body: BodyParams,
    pub clean: KeypointTrajectory,
    /// Isotropic noise and dropout only.
    pub noisy: KeypointTrajectory,
    pub views: Vec<SynthView>,
}

impl SynthTrial {
    pub fn view(&self, name: &str) -> Option<&SynthView> {
        self.views.iter().find(|v| v.name == name)
    }
}

/// Resolves the torso landmarks and wrist points of the skeleton's keypoints.
#[derive(Debug, Clone, Copy)]
pub struct WristProbe {
    idx: [usize; 5],
}

impl WristProbe {
    pub fn new(spec: &SkeletonSpec, map: &LandmarkMap) -> Result<Self> {
        let find = |name: &str| {
            spec.keypoint_index(name).ok_or_else(|| {
                Error::Config(format!("skeleton has no `{name}` keypoint"))
            })
        };
        Ok(WristProbe {
            idx: [
                find(&map.sternal_notch)?,
                find(&map.t1)?,
                find(&map.t8)?,
                find(&map.wrist_radial)?,
                find(&map.wrist_ulnar)?,
            ],
        })
    }

    /// Wrist in the torso frame, `None` if the frame is degenerate.
    pub fn local(&self, keypoints: &[Vector3<f64>]) -> Option<Vector3<f64>> {
        let [s, t1, t8, wr, wu] = self.idx;
        let frame = TorsoFrame::build(&FrameLandmarks {
            sternal_notch: keypoints[s],
            t1: keypoints[t1],
            t8: keypoints[t8],
        })
        .ok()?;
        let wrist = wrist_end_effector(Some(keypoints[wr]), Some(keypoints[wu]))?;
        Some(frame.to_local(&wrist))
    }
}

struct Planner<'a> {
    spec: &'a SkeletonSpec,
    body: &'a BodyParams,
    probe: WristProbe,
    root: [f64; 3],
    frame_rate: f64,
}

impl Planner<'_> {
    fn base_pose(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.spec.dof_count()];
        q[..3].copy_from_slice(&self.root);
        q
    }

    fn random_pose(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut q = self.base_pose();
        for (d, dof) in self.spec.dofs().iter().enumerate() {
            if let (DofKind::Joint { .. }, Some((lo, hi))) = (dof.kind, dof.limits) {
                let m = LIMIT_MARGIN * (hi - lo);
                q[d] = rng.random_range(lo + m..hi - m);
            }
        }
        q
    }

    fn wrist(&self, q: &[f64]) -> Option<Vector3<f64>> {
        self.probe.local(&self.spec.forward_dof(q, self.body))
    }

    fn nominal_reach(&self, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, STREAM_PROBE);
        (0..REACH_PROBE_POSES)
            .filter_map(|_| self.wrist(&self.random_pose(&mut rng)))
            .map(|w| w.norm())
            .fold(0.0, f64::max)
    }

    fn sample_in_octant(
        &self,
        octant: Octant,
        (min_dist, max_dist): (f64, f64),
        rng: &mut impl Rng,
    ) -> Option<Vec<f64>> {
        (0..POSE_TRIES).find_map(|_| {
            let q = self.random_pose(rng);
            let w = self.wrist(&q)?;
            let d = w.norm();
            (Octant::classify(&w) == octant && d >= min_dist && d <= max_dist).then_some(q)
        })
    }

    /// Whether the blend from `a` to `b` keeps the wrist's sign on every axis
    /// where the two end octants agree, and its distance under `max_dist`.
    fn path_ok(&self, a: &[f64], oa: Octant, b: &[f64], ob: Octant, duration: f64, max_dist: f64) -> bool {
        let steps = ((duration * self.frame_rate).ceil() as usize).max(20);
        (0..=steps).all(|i| {
            let q = blend(a, b, i as f64 / steps as f64);
            let Some(w) = self.wrist(&q) else { return false };
            let o = Octant::classify(&w);
            w.norm() <= max_dist
                && (oa.superior != ob.superior || o.superior == oa.superior)
                && (oa.anterior != ob.anterior || o.anterior == oa.anterior)
                && (oa.ipsilateral != ob.ipsilateral || o.ipsilateral == oa.ipsilateral)
        })
    }
}

/// Zero-velocity cubic blend, `s` in [0, 1].
fn blend(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    let h = s * s * (3.0 - 2.0 * s);
    a.iter().zip(b).map(|(x, y)| x + (y - x) * h).collect()
}

fn directive_label(i: usize, d: &ReachDirective) -> String {
    format!("#{} ({})", i + 1, d.octant)
}

/// Builds the ground-truth motion and all observation streams of a script.
pub fn generate_trial(
    spec: &SkeletonSpec,
    script: &TrialScript,
    cameras: &[(String, CameraModel)],
) -> Result<SynthTrial> {
    script.validate()?;
    for name in script.noise.depth_sigma.keys() {
        if !cameras.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("depth noise names unknown camera `{name}`")));
        }
    }
    let body = match &script.scales {
        Some(s) => {
            let mut b = BodyParams::identity(spec);
            b.scales = s.clone();
            b.validate(spec)?;
            b
        }
        None => BodyParams::identity(spec),
    };
    let planner = Planner {
        spec,
        body: &body,
        probe: WristProbe::new(spec, &LandmarkMap::default())?,
        root: script.root_position,
        frame_rate: script.frame_rate,
    };
    let reach = planner.nominal_reach(script.seed);
    let mut rng = stream_rng(script.seed, STREAM_MOTION);

    // waypoints and the duration of the blend ending at each (first has none)
    let mut waypoints: Vec<(Vec<f64>, Octant)> = Vec::new();
    let mut durations: Vec<f64> = Vec::new();
    for (i, d) in script.reach.iter().enumerate() {
        let seg = d.duration / d.sweeps as f64;
        let band = (d.min_reach * reach, d.max_reach.map_or(f64::INFINITY, |m| m * reach));
        let unreachable = |reason: &str| Error::Unreachable {
            directive: directive_label(i, d),
            reason: reason.into(),
        };
        if waypoints.is_empty() {
            let q = planner
                .sample_in_octant(d.octant, band, &mut rng)
                .ok_or_else(|| unreachable("no pose within joint limits puts the wrist there"))?;
            waypoints.push((q, d.octant));
        }
        for _ in 0..d.sweeps {
            let (prev, prev_oct) = waypoints.last().unwrap().clone();
            let mut found = None;
            for _ in 0..PATH_TRIES {
                let q = planner
                    .sample_in_octant(d.octant, band, &mut rng)
                    .ok_or_else(|| unreachable("no pose within joint limits puts the wrist there"))?;
                if planner.path_ok(&prev, prev_oct, &q, d.octant, seg, band.1) {
                    found = Some(q);
                    break;
                }
            }
            let q = found.ok_or_else(|| unreachable("no limit-respecting path from the previous reach"))?;
            waypoints.push((q, d.octant));
            durations.push(seg);
        }
    }

    let total: f64 = durations.iter().sum();
    let n_frames = (total * script.frame_rate).round() as usize + 1;
    let timestamps: Vec<f64> = (0..n_frames).map(|k| k as f64 / script.frame_rate).collect();
    let mut dofs = Vec::with_capacity(n_frames);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for &t in &timestamps {
        while seg + 1 < durations.len() && t > seg_start + durations[seg] {
            seg_start += durations[seg];
            seg += 1;
        }
        let s = ((t - seg_start) / durations[seg]).clamp(0.0, 1.0);
        dofs.push(blend(&waypoints[seg].0, &waypoints[seg + 1].0, s));
    }

    let names = spec.keypoint_names();
    let clean_pos: Vec<Vec<Vector3<f64>>> = dofs.iter().map(|q| spec.forward_dof(q, &body)).collect();
    let clean = KeypointTrajectory::from_dense(timestamps.clone(), names.clone(), clean_pos)?;

    let noise = &script.noise;
    let mut noisy = add_isotropic_noise(&clean, noise.keypoint_sigma, &mut stream_rng(script.seed, STREAM_3D));
    let views = cameras
        .iter()
        .enumerate()
        .map(|(c, (name, camera))| {
            let pixels_clean = project_trajectory(&clean, camera)?;
            let mut rng = stream_rng(script.seed, camera_stream(c, 0));
            let mut pixels = add_pixel_noise(&pixels_clean, noise.pixel_sigma, &mut rng);
            apply_dropout(&mut pixels, noise.dropout, &mut stream_rng(script.seed, camera_stream(c, 1)));
            let sigma = noise.depth_sigma.get(name).copied().unwrap_or(0.0);
            let mut rng = stream_rng(script.seed, camera_stream(c, 2));
            let mut keypoints3d = depth_noise_with(&noisy, camera, sigma, &mut rng);
            apply_dropout(&mut keypoints3d, noise.dropout, &mut stream_rng(script.seed, camera_stream(c, 3)));
            Ok(SynthView {
                name: name.clone(),
                camera: camera.clone(),
                pixels_clean,
                pixels,
                keypoints3d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    apply_dropout(&mut noisy, noise.dropout, &mut stream_rng(script.seed, STREAM_DROPOUT_3D));

    Ok(SynthTrial {
        name: script.name.clone(),
        dofs,
        body,
        clean,
        noisy,
        views,
    })
}

/// Projects every present keypoint; points behind the camera become missing.
pub fn project_trajectory(traj: &KeypointTrajectory, camera: &CameraModel) -> Result<PixelTrajectory> {
    let mut positions = Vec::with_capacity(traj.len());
    let mut confidences = Vec::with_capacity(traj.len());
    for f in 0..traj.len() {
        let mut pos = Vec::with_capacity(traj.keypoint_count());
        let mut conf = Vec::with_capacity(traj.keypoint_count());
        for k in 0..traj.keypoint_count() {
            match traj.position(f, k).map(|p| camera.project(&p)) {
                Some(Ok(uv)) => {
                    pos.push(Some(uv));
                    conf.push(traj.confidence(f, k));
                }
                _ => {
                    pos.push(None);
                    conf.push(0.0);
                }
            }
        }
        positions.push(pos);
        confidences.push(conf);
    }
    let mut out = PixelTrajectory::new(traj.timestamps().to_vec(), traj.names().to_vec(), positions, confidences)?;
    out.set_frame_rate(traj.frame_rate());
    Ok(out)
}

fn gaussian<const D: usize>(rng: &mut impl Rng, sigma: f64) -> nalgebra::SVector<f64, D> {
    nalgebra::SVector::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

fn map_present<const D: usize>(
    traj: &crate::trajectory::Trajectory<D>,
    mut f: impl FnMut(nalgebra::SVector<f64, D>) -> nalgebra::SVector<f64, D>,
) -> crate::trajectory::Trajectory<D> {
    let mut out = traj.clone();
    for frame in 0..traj.len() {
        for k in 0..traj.keypoint_count() {
            if let Some(p) = traj.position(frame, k) {
                out.set_sample(frame, k, Some(f(p)), traj.confidence(frame, k));
            }
        }
    }
    out
}

fn add_isotropic_noise(traj: &KeypointTrajectory, sigma: f64, rng: &mut impl Rng) -> KeypointTrajectory {
    if sigma == 0.0 {
        return traj.clone();
    }
    map_present(traj, |p| p + gaussian::<3>(rng, sigma))
}

fn add_pixel_noise(traj: &PixelTrajectory, sigma: f64, rng: &mut impl Rng) -> PixelTrajectory {
    if sigma == 0.0 {
        return traj.clone();
    }
    map_present(traj, |p: Vector2<f64>| p + gaussian::<2>(rng, sigma))
}

fn apply_dropout<const D: usize>(traj: &mut crate::trajectory::Trajectory<D>, rate: f64, rng: &mut impl Rng) {
    if rate == 0.0 {
        return;
    }
    for frame in 0..traj.len() {
        for k in 0..traj.keypoint_count() {
            if rng.random::<f64>() < rate {
                traj.set_sample(frame, k, None, 0.0);
            }
        }
    }
}

fn depth_noise_with(
    traj: &KeypointTrajectory,
    camera: &CameraModel,
    sigma: f64,
    rng: &mut impl Rng,
) -> KeypointTrajectory {
    if sigma == 0.0 {
        return traj.clone();
    }
    map_present(traj, |p| {
        let n: f64 = rng.sample(StandardNormal);
        p + camera.ray_direction(&p) * (sigma * n)
    })
}

/// Moves each present point along its camera ray by zero-mean Gaussian noise.
pub fn inject_depth_noise(
    traj: &KeypointTrajectory,
    camera: &CameraModel,
    sigma: f64,
    seed: u64,
) -> Result<KeypointTrajectory> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("depth σ must be non-negative, got {sigma}")));
    }
    Ok(depth_noise_with(traj, camera, sigma, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// All-pairs capture scan and per-octant tally with no spatial acceleration.
pub fn brute_force_score(
    wrist_local: &[Option<Vector3<f64>>],
    sphere: &TargetSphere,
    capture_radius: f64,
) -> WorkspaceReport {
    let mut octants: Vec<OctantScore> = Octant::ANALYZED
        .iter()
        .map(|&octant| OctantScore {
            octant,
            available: 0,
            reached: 0,
        })
        .collect();
    for (target, label) in sphere.targets().iter().zip(sphere.labels()) {
        let Some(slot) = octants.iter_mut().find(|s| s.octant == *label) else { continue };
        slot.available += 1;
        let hit = wrist_local
            .iter()
            .flatten()
            .any(|w| within_capture(w, target, capture_radius));
        if hit {
            slot.reached += 1;
        }
    }
    WorkspaceReport {
        peak_reach: sphere.radius(),
        octants,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraSet;

    fn cameras() -> Vec<(String, CameraModel)> {
        CameraSet::study_default()
            .cameras
            .iter()
            .map(|c| (c.name.clone(), c.build().unwrap()))
            .collect()
    }

    fn short_script(octant: Octant, seed: u64) -> TrialScript {
        TrialScript {
            reach: vec![ReachDirective {
                octant,
                sweeps: 2,
                duration: 1.0,
                min_reach: 0.5,
                max_reach: None,
            }],
            ..TrialScript::all_octants(seed)
        }
    }

    #[test]
    fn zero_noise_streams_equal_clean() {
        let spec = SkeletonSpec::default_arm();
        let t = generate_trial(&spec, &short_script(Octant::new(true, true, true), 3), &cameras()).unwrap();
        assert_eq!(t.noisy, t.clean);
        for v in &t.views {
            assert_eq!(v.keypoints3d, t.clean);
            assert_eq!(v.pixels, v.pixels_clean);
        }
    }

    #[test]
    fn directive_stays_in_octant() {
        let spec = SkeletonSpec::default_arm();
        let probe = WristProbe::new(&spec, &LandmarkMap::default()).unwrap();
        for &octant in &Octant::ANALYZED {
            let t = generate_trial(&spec, &short_script(octant, 11), &cameras()).unwrap();
            for f in 0..t.clean.len() {
                let kp: Vec<_> = t.clean.frame_positions(f).iter().map(|p| p.unwrap()).collect();
                assert_eq!(Octant::classify(&probe.local(&kp).unwrap()), octant);
            }
            for q in &t.dofs {
                spec.check_limits(q).unwrap();
            }
        }
    }

    #[test]
    fn unreachable_directive_is_named() {
        let spec = SkeletonSpec::default_arm();
        let mut script = short_script(Octant::new(false, true, false), 1);
        script.reach[0].min_reach = 0.999;
        script.reach.insert(
            0,
            ReachDirective {
                octant: Octant::new(false, true, true),
                sweeps: 1,
                duration: 0.5,
                min_reach: 0.3,
                max_reach: None,
            },
        );
        match generate_trial(&spec, &script, &cameras()) {
            Err(Error::Unreachable { directive, .. }) => assert!(directive.starts_with("#2")),
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn depth_noise_preserves_pixels() {
        let spec = SkeletonSpec::default_arm();
        let cams = cameras();
        let t = generate_trial(&spec, &short_script(Octant::new(true, true, true), 5), &cams).unwrap();
        let (_, cam) = &cams[0];
        let noisy = inject_depth_noise(&t.clean, cam, 0.05, 9).unwrap();
        assert_ne!(noisy, t.clean);
        for f in 0..t.clean.len() {
            for k in 0..t.clean.keypoint_count() {
                let a = cam.project(&t.clean.position(f, k).unwrap()).unwrap();
                let b = cam.project(&noisy.position(f, k).unwrap()).unwrap();
                assert!((a - b).norm() < 1e-9);
            }
        }
        assert_eq!(inject_depth_noise(&t.clean, cam, 0.0, 9).unwrap(), t.clean);
        assert!(inject_depth_noise(&t.clean, cam, -1.0, 9).is_err());
    }

    #[test]
    fn brute_force_empty_and_single() {
        let sphere = TargetSphere::generate(0.6, 800, 2).unwrap();
        let r = brute_force_score(&[], &sphere, 0.05);
        assert!(r.octants.iter().all(|s| s.reached == 0 && s.available > 0));
        let p = sphere.targets()[17];
        let r = brute_force_score(&[Some(p)], &sphere, 0.05);
        let expect = sphere
            .targets()
            .iter()
            .zip(sphere.labels())
            .filter(|(t, l)| l.is_analyzed() && (*t - p).norm() <= 0.05)
            .count();
        assert_eq!(r.octants.iter().map(|s| s.reached).sum::<usize>(), expect);
        assert!(expect >= 1);
    }
}
