//! Implicit trajectory fitting.
//!
//! Each trial's joint-angle trajectory is a small MLP over a sinusoidal time
//! encoding. Rotational joint outputs pass through `tanh` and are rescaled to
//! the joint limits; the root pose is left unbounded. All trial networks and
//! the shared body parameters are optimized jointly with AdamW against a
//! confidence-weighted Huber loss on 3D keypoints and on 2D reprojections.
//!
//! Parameters of every trial network and the body parameters live in one flat
//! vector: trial 0's layers (weights column-major, then bias), trial 1's, ...,
//! then the body parameter vector from [`BodyParams::to_vector`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::kinematics::{BodyParams, DofKind, SkeletonSpec, SCALE_RANGE};
use crate::trajectory::{KeypointTrajectory, PixelTrajectory};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Number of sinusoidal encoding bands; the encoding has 2·bands inputs.
    pub bands: usize,
    /// Meters (root translation) or radians (root rotation) per unit of raw
    /// network output.
    pub root_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_layers: 4,
            width: 256,
            bands: 8,
            root_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub lambda_3d: f64,
    pub lambda_2d: f64,
    /// Fraction of the iterations run on the 3D term alone before the 2D
    /// term is switched on. Pixel residuals are far steeper than metric ones,
    /// and with the 2D term on from the start Adam settles keypoints several
    /// centimeters off along the camera rays.
    pub delay_2d: f64,
    /// Quadratic region of the 3D Huber loss, meters.
    pub huber_delta_3d: f64,
    /// Quadratic region of the 2D Huber loss, pixels.
    pub huber_delta_2d: f64,
    pub samples_per_trial: usize,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    /// Optimize the shared body parameters alongside the trajectories.
    pub optimize_body: bool,
    pub net: NetConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_3d: 1.0,
            lambda_2d: 0.1,
            delay_2d: 0.9,
            huber_delta_3d: 0.10,
            huber_delta_2d: 5.0,
            samples_per_trial: 300,
            iterations: 2000,
            lr_start: 1e-3,
            lr_end: 1e-6,
            weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            seed: 0,
            optimize_body: true,
            net: NetConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_3d", self.lambda_3d),
            ("lambda_2d", self.lambda_2d),
            ("huber_delta_3d", self.huber_delta_3d),
            ("huber_delta_2d", self.huber_delta_2d),
            ("lr_start", self.lr_start),
            ("lr_end", self.lr_end),
        ];
        for (name, v) in positive {
            // a zero weight switches a term off; deltas and rates must be > 0
            let ok = if name.starts_with("lambda") {
                v >= 0.0
            } else {
                v > 0.0
            };
            if !(ok && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.delay_2d) {
            return Err(Error::Config("delay_2d must be in [0, 1]".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.samples_per_trial == 0 || self.net.width == 0 || self.net.bands == 0 {
            return Err(Error::Config(
                "samples_per_trial, net.width and net.bands must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Cosine decay from `lr_start` at step 0 to `lr_end` at the last step.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.iterations <= 1 {
            return self.lr_start;
        }
        let progress = step as f64 / (self.iterations - 1) as f64;
        self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (PI * progress).cos())
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Huber penalty of a non-negative residual norm.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// d huber / d r.
fn huber_slope(r: f64, delta: f64) -> f64 {
    if r <= delta {
        r
    } else {
        delta
    }
}

/// Mean over keypoints of confidence-weighted Huber penalties of 3D residuals.
/// Missing observations contribute nothing.
pub fn loss_3d(
    predicted: &[Vector3<f64>],
    observed: &[Option<Vector3<f64>>],
    confidence: &[f64],
    delta: f64,
) -> Result<f64> {
    check_lengths(predicted.len(), observed.len(), confidence.len())?;
    Ok(residual_loss(predicted.len(), |j| {
        observed[j].map(|o| (confidence[j], (predicted[j] - o).norm()))
    }, delta))
}

/// Mean over keypoints of confidence-weighted Huber penalties of reprojection
/// residuals. Keypoints that project behind the camera contribute nothing.
pub fn loss_2d(
    predicted: &[Vector3<f64>],
    camera: &CameraModel,
    observed: &[Option<Vector2<f64>>],
    confidence: &[f64],
    delta: f64,
) -> Result<f64> {
    check_lengths(predicted.len(), observed.len(), confidence.len())?;
    Ok(residual_loss(predicted.len(), |j| {
        let uv = camera.project(&predicted[j]).ok()?;
        observed[j].map(|o| (confidence[j], (uv - o).norm()))
    }, delta))
}

/// λ1·L_3D + λ2·L_2D.
pub fn weighted_total(l3d: f64, l2d: f64, config: &FitConfig) -> f64 {
    config.lambda_3d * l3d + config.lambda_2d * l2d
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::Shape(format!(
            "{a} predicted keypoints, {b} observations, {c} confidences"
        )));
    }
    Ok(())
}

fn residual_loss(j: usize, term: impl Fn(usize) -> Option<(f64, f64)>, delta: f64) -> f64 {
    if j == 0 {
        return 0.0;
    }
    let sum: f64 = (0..j)
        .filter_map(&term)
        .map(|(c, r)| c * huber(r, delta))
        .sum();
    sum / j as f64
}

// ---------------------------------------------------------------------------
// Time encoding and network

/// `[sin(2^k π t̂), cos(2^k π t̂)]` for k = 0..bands, with t̂ the time
/// normalized to `[0, 1]` over `span` (clamped).
pub fn encode_time(t: f64, span: (f64, f64), bands: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * bands];
    encode_into(normalize_time(t, span), bands, &mut out);
    out
}

fn normalize_time(t: f64, (t0, t1): (f64, f64)) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let u = (t - t0) / (t1 - t0);
    if !(0.0..=1.0).contains(&u) {
        log::warn!("time {t} outside trial span [{t0}, {t1}], clamping");
    }
    u.clamp(0.0, 1.0)
}

fn encode_into(t_hat: f64, bands: usize, out: &mut [f64]) {
    let mut freq = PI;
    for k in 0..bands {
        let (s, c) = (freq * t_hat).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
        freq *= 2.0;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Layer sizes of a fully connected network with GELU hidden activations and
/// a linear output. Parameters are held externally in a flat slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    dims: Vec<usize>,
}

struct MlpCache {
    /// Layer inputs, one per layer.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<DMatrix<f64>>,
}

impl MlpShape {
    pub fn new(input: usize, width: usize, hidden_layers: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, hidden_layers));
        dims.push(output);
        MlpShape { dims }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (fan_in, fan_out, offset)
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let o = offset;
            offset += w[0] * w[1] + w[1];
            (w[0], w[1], o)
        })
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform in ±1/√fan_in for weights and biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out, _) in self.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                p.push(rng.random_range(-bound..bound));
            }
        }
        p
    }

    /// Inputs are columns of `x`; returns one output column per input column.
    pub fn forward(&self, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(params, x).0
    }

    fn forward_cached(&self, params: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let n_layers = self.dims.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_layers - 1),
        };
        let mut h = x.clone();
        for (l, (fan_in, fan_out, off)) in self.layers().enumerate() {
            let w = DMatrixView::from_slice(&params[off..off + fan_in * fan_out], fan_out, fan_in);
            let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = w * &h;
            for mut col in z.column_iter_mut() {
                for (v, bi) in col.iter_mut().zip(b) {
                    *v += bi;
                }
            }
            cache.inputs.push(h);
            if l + 1 < n_layers {
                h = z.map(gelu);
                cache.pre.push(z);
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    /// Accumulates parameter gradients into `grad` given d loss / d output.
    fn backward(&self, params: &[f64], cache: MlpCache, grad_out: DMatrix<f64>, grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut dz = grad_out;
        for (l, &(fan_in, fan_out, off)) in layers.iter().enumerate().rev() {
            let h_in = &cache.inputs[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = DMatrixViewMut::from_slice(gw, fan_out, fan_in);
                gw.gemm(1.0, &dz, &h_in.transpose(), 1.0);
                for col in dz.column_iter() {
                    for (g, v) in gb.iter_mut().zip(col.iter()) {
                        *g += v;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = DMatrixView::from_slice(&params[off..off + fan_in * fan_out], fan_out, fan_in);
            let mut dh = w.tr_mul(&dz);
            dh.zip_apply(&cache.pre[l - 1], |g, z| *g *= gelu_grad(z));
            dz = dh;
        }
    }
}

/// Maps raw network outputs to a DoF vector: root translation gets the
/// per-trial anchor added, root rotation passes through, joint axes are
/// squashed into their limits.
pub fn rescale_outputs(spec: &SkeletonSpec, raw: &[f64], root_anchor: &Vector3<f64>, root_scale: f64) -> Vec<f64> {
    spec.dofs()
        .iter()
        .zip(raw)
        .map(|(dof, &r)| match (dof.kind, dof.limits) {
            (DofKind::RootTranslation(a), _) => root_scale * r + root_anchor[a],
            (_, Some((lo, hi))) => lo + 0.5 * (r.tanh() + 1.0) * (hi - lo),
            _ => root_scale * r,
        })
        .collect()
}

/// d DoF / d raw output.
fn rescale_slopes(spec: &SkeletonSpec, raw: &[f64], root_scale: f64) -> Vec<f64> {
    spec.dofs()
        .iter()
        .zip(raw)
        .map(|(dof, &r)| match dof.limits {
            Some((lo, hi)) => {
                let t = r.tanh();
                0.5 * (1.0 - t * t) * (hi - lo)
            }
            None => root_scale,
        })
        .collect()
}

/// One trial's implicit trajectory: network shape, its parameters, the time
/// span used for normalization and the root translation anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNet {
    pub shape: MlpShape,
    pub params: Vec<f64>,
    pub bands: usize,
    pub span: (f64, f64),
    pub root_anchor: Vector3<f64>,
    pub root_scale: f64,
}

impl TrajectoryNet {
    pub fn new(
        spec: &SkeletonSpec,
        net: &NetConfig,
        span: (f64, f64),
        root_anchor: Vector3<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = MlpShape::new(2 * net.bands, net.width, net.hidden_layers, spec.dof_count());
        let params = shape.init(rng);
        TrajectoryNet {
            shape,
            params,
            bands: net.bands,
            span,
            root_anchor,
            root_scale: net.root_scale,
        }
    }

    fn encode_batch(&self, times: &[f64]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(2 * self.bands, times.len());
        for (j, &t) in times.iter().enumerate() {
            let t_hat = normalize_time(t, self.span);
            encode_into(t_hat, self.bands, x.column_mut(j).as_mut_slice());
        }
        x
    }

    /// Raw outputs, one column per time.
    pub fn raw(&self, times: &[f64]) -> DMatrix<f64> {
        self.shape.forward(&self.params, &self.encode_batch(times))
    }

    /// DoF vectors θ(t) for each time.
    pub fn eval_batch(&self, spec: &SkeletonSpec, times: &[f64]) -> Vec<Vec<f64>> {
        let raw = self.raw(times);
        raw.column_iter()
            .map(|c| rescale_outputs(spec, c.as_slice(), &self.root_anchor, self.root_scale))
            .collect()
    }

    pub fn eval(&self, spec: &SkeletonSpec, t: f64) -> Vec<f64> {
        self.eval_batch(spec, &[t]).pop().unwrap()
    }
}

// ---------------------------------------------------------------------------
// Problem definition

/// One camera's 2D detections for a trial.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub camera: CameraModel,
    pub pixels: PixelTrajectory,
}

/// Observations of one trial. All streams share the same timestamps.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub name: String,
    pub keypoints3d: Option<KeypointTrajectory>,
    pub views: Vec<CameraView>,
}

impl TrialData {
    pub fn timestamps(&self) -> &[f64] {
        match &self.keypoints3d {
            Some(k) => k.timestamps(),
            None => self.views[0].pixels.timestamps(),
        }
    }
}

/// Observations aligned to the skeleton's keypoint order.
#[derive(Debug, Clone)]
struct AlignedStream<const D: usize> {
    /// frame-major, skeleton keypoint order
    positions: Vec<Vec<Option<nalgebra::SVector<f64, D>>>>,
    confidences: Vec<Vec<f64>>,
    /// number of skeleton keypoints present in the stream (the 1/J normalizer)
    matched: usize,
}

fn align<const D: usize>(
    spec: &SkeletonSpec,
    traj: &crate::trajectory::Trajectory<D>,
) -> Result<AlignedStream<D>> {
    let map: Vec<Option<usize>> = spec
        .keypoints
        .iter()
        .map(|k| traj.index_of(&k.name))
        .collect();
    let matched = map.iter().flatten().count();
    if matched == 0 {
        return Err(Error::data(
            None,
            "observations share no keypoint names with the skeleton",
        ));
    }
    let mut positions = Vec::with_capacity(traj.len());
    let mut confidences = Vec::with_capacity(traj.len());
    for f in 0..traj.len() {
        positions.push(map.iter().map(|m| m.and_then(|i| traj.position(f, i))).collect());
        confidences.push(
            map.iter()
                .map(|m| m.map_or(0.0, |i| traj.confidence(f, i)))
                .collect(),
        );
    }
    Ok(AlignedStream {
        positions,
        confidences,
        matched,
    })
}

#[derive(Debug, Clone)]
struct PreparedTrial {
    timestamps: Vec<f64>,
    obs3d: Option<AlignedStream<3>>,
    views: Vec<(CameraModel, AlignedStream<2>)>,
    root_anchor: Vector3<f64>,
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub loss_3d: f64,
    pub loss_2d: f64,
}

/// Frame indices (per trial) at which the objective is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub frames: Vec<Vec<usize>>,
}

/// Current values of all optimized quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub nets: Vec<TrajectoryNet>,
    pub body: BodyParams,
}

/// The joint objective over a set of trials.
#[derive(Debug, Clone)]
pub struct FitProblem {
    spec: SkeletonSpec,
    config: FitConfig,
    trials: Vec<PreparedTrial>,
    names: Vec<String>,
}

impl FitProblem {
    pub fn new(spec: &SkeletonSpec, trials: &[TrialData], config: &FitConfig) -> Result<Self> {
        config.validate()?;
        if trials.is_empty() {
            return Err(Error::Usage("no trials to fit".into()));
        }
        let mut prepared = Vec::with_capacity(trials.len());
        for trial in trials {
            if trial.keypoints3d.is_none() && trial.views.is_empty() {
                return Err(Error::data(
                    None,
                    format!("trial `{}` has no observations", trial.name),
                ));
            }
            let timestamps = trial.timestamps().to_vec();
            if timestamps.len() < 2 {
                return Err(Error::data(
                    None,
                    format!("trial `{}` needs at least 2 frames", trial.name),
                ));
            }
            let same_time = |other: &[f64]| {
                other.len() == timestamps.len()
                    && other.iter().zip(&timestamps).all(|(a, b)| (a - b).abs() < 1e-9)
            };
            for v in &trial.views {
                if !same_time(v.pixels.timestamps()) {
                    return Err(Error::data(
                        None,
                        format!("trial `{}`: 2D and 3D timestamps differ", trial.name),
                    ));
                }
            }
            let obs3d = trial.keypoints3d.as_ref().map(|k| align(spec, k)).transpose()?;
            let views = trial
                .views
                .iter()
                .map(|v| Ok((v.camera.clone(), align(spec, &v.pixels)?)))
                .collect::<Result<Vec<_>>>()?;
            let root_anchor = obs3d
                .as_ref()
                .map(|o| root_anchor(spec, o))
                .unwrap_or_else(Vector3::zeros);
            prepared.push(PreparedTrial {
                timestamps,
                obs3d,
                views,
                root_anchor,
            });
        }
        Ok(FitProblem {
            spec: spec.clone(),
            config: config.clone(),
            trials: prepared,
            names: trials.iter().map(|t| t.name.clone()).collect(),
        })
    }

    pub fn spec(&self) -> &SkeletonSpec {
        &self.spec
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    /// Fresh networks (seeded) and identity body parameters.
    pub fn init_params(&self, rng: &mut impl Rng) -> FitParams {
        let nets = self
            .trials
            .iter()
            .map(|t| {
                let span = (t.timestamps[0], *t.timestamps.last().unwrap());
                TrajectoryNet::new(&self.spec, &self.config.net, span, t.root_anchor, rng)
            })
            .collect();
        FitParams {
            nets,
            body: BodyParams::identity(&self.spec),
        }
    }

    /// Stratified sampling: one uniform time per equal sub-interval of each
    /// trial's span, snapped to the nearest observed frame.
    pub fn sample(&self, rng: &mut impl Rng) -> SampleSet {
        let s = self.config.samples_per_trial;
        let frames = self
            .trials
            .iter()
            .map(|trial| {
                let ts = &trial.timestamps;
                let (t0, t1) = (ts[0], *ts.last().unwrap());
                (0..s)
                    .map(|i| {
                        let u = (i as f64 + rng.random::<f64>()) / s as f64;
                        nearest_frame(ts, t0 + u * (t1 - t0))
                    })
                    .collect()
            })
            .collect();
        SampleSet { frames }
    }

    /// Every frame of every trial.
    pub fn all_frames(&self) -> SampleSet {
        SampleSet {
            frames: self
                .trials
                .iter()
                .map(|t| (0..t.timestamps.len()).collect())
                .collect(),
        }
    }

    pub fn param_count(&self, params: &FitParams) -> usize {
        params.nets.iter().map(|n| n.params.len()).sum::<usize>() + self.spec.body_param_count()
    }

    pub fn flatten(&self, params: &FitParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count(params));
        for n in &params.nets {
            v.extend_from_slice(&n.params);
        }
        v.extend(params.body.to_vector());
        v
    }

    pub fn unflatten(&self, params: &mut FitParams, flat: &[f64]) {
        let mut off = 0;
        for n in &mut params.nets {
            let len = n.params.len();
            n.params.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        params.body = BodyParams::from_vector(&self.spec, &flat[off..]);
    }

    /// Objective value at the sampled frames, summed over samples and trials.
    pub fn total_loss(&self, params: &FitParams, samples: &SampleSet) -> LossParts {
        self.evaluate(params, samples, self.config.lambda_2d, None)
    }

    /// Objective value and its gradient with respect to the flat parameters.
    pub fn loss_and_grad(&self, params: &FitParams, samples: &SampleSet) -> (LossParts, Vec<f64>) {
        self.loss_and_grad_with(params, samples, self.config.lambda_2d)
    }

    /// As [`FitProblem::loss_and_grad`] with an explicit 2D weight.
    pub fn loss_and_grad_with(
        &self,
        params: &FitParams,
        samples: &SampleSet,
        lambda_2d: f64,
    ) -> (LossParts, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count(params)];
        let parts = self.evaluate(params, samples, lambda_2d, Some(&mut grad));
        (parts, grad)
    }

    fn evaluate(
        &self,
        params: &FitParams,
        samples: &SampleSet,
        lambda_2d: f64,
        mut grad: Option<&mut [f64]>,
    ) -> LossParts {
        let cfg = &self.config;
        let spec = &self.spec;
        let n_body = spec.body_param_count();
        let net_total: usize = params.nets.iter().map(|n| n.params.len()).sum();
        let mut body_grad = vec![0.0; n_body];
        let mut parts = LossParts::default();
        let mut net_off = 0;

        for (ti, trial) in self.trials.iter().enumerate() {
            let net = &params.nets[ti];
            let frames = &samples.frames[ti];
            let times: Vec<f64> = frames.iter().map(|&f| trial.timestamps[f]).collect();
            let x = net.encode_batch(&times);
            let (raw, cache) = net.shape.forward_cached(&net.params, &x);
            let mut g_raw = DMatrix::zeros(raw.nrows(), raw.ncols());

            for (s, &f) in frames.iter().enumerate() {
                let r = raw.column(s);
                let q = rescale_outputs(spec, r.as_slice(), &net.root_anchor, net.root_scale);
                let state = spec.state(&q, &params.body);
                let mut g_x = vec![Vector3::zeros(); spec.keypoints.len()];

                if let Some(obs) = &trial.obs3d {
                    let norm = 1.0 / obs.matched as f64;
                    let mut l = 0.0;
                    for (j, x_hat) in state.keypoints.iter().enumerate() {
                        let c = obs.confidences[f][j];
                        let Some(o) = obs.positions[f][j] else { continue };
                        if c == 0.0 {
                            continue;
                        }
                        let e = x_hat - o;
                        let rn = e.norm();
                        l += c * huber(rn, cfg.huber_delta_3d);
                        if rn > 0.0 {
                            let k = cfg.lambda_3d * norm * c * huber_slope(rn, cfg.huber_delta_3d) / rn;
                            g_x[j] += e * k;
                        }
                    }
                    parts.loss_3d += l * norm;
                }
                for (camera, obs) in &trial.views {
                    let norm = 1.0 / obs.matched as f64;
                    let mut l = 0.0;
                    for (j, x_hat) in state.keypoints.iter().enumerate() {
                        let c = obs.confidences[f][j];
                        let Some(o) = obs.positions[f][j] else { continue };
                        if c == 0.0 {
                            continue;
                        }
                        let Ok((uv, jac)) = camera.project_with_jacobian(x_hat) else { continue };
                        let e = uv - o;
                        let rn = e.norm();
                        l += c * huber(rn, cfg.huber_delta_2d);
                        if rn > 0.0 {
                            let k = lambda_2d * norm * c * huber_slope(rn, cfg.huber_delta_2d) / rn;
                            g_x[j] += jac.transpose() * e * k;
                        }
                    }
                    parts.loss_2d += l * norm;
                }

                if grad.is_some() {
                    let (g_q, g_b) = state.vjp(spec, &g_x);
                    let slopes = rescale_slopes(spec, r.as_slice(), net.root_scale);
                    for d in 0..g_q.len() {
                        g_raw[(d, s)] = g_q[d] * slopes[d];
                    }
                    for (acc, g) in body_grad.iter_mut().zip(&g_b) {
                        *acc += g;
                    }
                }
            }

            if let Some(grad) = grad.as_deref_mut() {
                let len = net.params.len();
                net.shape
                    .backward(&net.params, cache, g_raw, &mut grad[net_off..net_off + len]);
            }
            net_off += net.params.len();
        }
        if let Some(grad) = grad {
            grad[net_total..].copy_from_slice(&body_grad);
        }
        parts.total = cfg.lambda_3d * parts.loss_3d + lambda_2d * parts.loss_2d;
        parts
    }
}

fn nearest_frame(ts: &[f64], t: f64) -> usize {
    match ts.binary_search_by(|x| x.total_cmp(&t)) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i >= ts.len() => ts.len() - 1,
        Err(i) => {
            if t - ts[i - 1] <= ts[i] - t {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Mean observed position of the root segment's keypoints minus their mean
/// rest position: a starting point for the unbounded root translation.
fn root_anchor(spec: &SkeletonSpec, obs: &AlignedStream<3>) -> Vector3<f64> {
    let root_kps: Vec<usize> = (0..spec.keypoints.len())
        .filter(|&k| spec.keypoints[k].segment == 0)
        .collect();
    let candidates: Vec<usize> = if root_kps.is_empty() {
        (0..spec.keypoints.len()).collect()
    } else {
        root_kps
    };
    let rest = spec.forward_dof(&vec![0.0; spec.dof_count()], &BodyParams::identity(spec));
    let mut sum = Vector3::zeros();
    let mut weight = 0.0;
    for (f, frame) in obs.positions.iter().enumerate() {
        for &k in &candidates {
            if let Some(p) = frame[k] {
                let c = obs.confidences[f][k];
                sum += (p - rest[k]) * c;
                weight += c;
            }
        }
    }
    if weight > 0.0 {
        sum / weight
    } else {
        Vector3::zeros()
    }
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with decoupled weight decay on a masked subset of parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// `decay_len` leading parameters receive weight decay; `frozen_from`
    /// onward are left untouched.
    pub fn update(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        lr: f64,
        weight_decay: f64,
        decay_len: usize,
        frozen_from: usize,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..frozen_from.min(params.len()) {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut u = m_hat / (v_hat.sqrt() + self.eps);
            if i < decay_len {
                u += weight_decay * params[i];
            }
            params[i] -= lr * u;
        }
    }
}

// ---------------------------------------------------------------------------
// Fitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub loss_3d: f64,
    pub loss_2d: f64,
}

/// Reconstruction of one trial at every observed frame.
#[derive(Debug, Clone)]
pub struct TrialReconstruction {
    pub name: String,
    pub timestamps: Vec<f64>,
    /// DoF vector per frame.
    pub dofs: Vec<Vec<f64>>,
    pub keypoints: KeypointTrajectory,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: FitParams,
    pub loss_trace: Vec<LossRecord>,
    pub trials: Vec<TrialReconstruction>,
}

impl FitResult {
    /// Whether the trailing-window mean of the loss never increases between
    /// consecutive windows. A health signal only.
    pub fn smoothed_trace_decreasing(&self, window: usize) -> bool {
        let totals: Vec<f64> = self.loss_trace.iter().map(|r| r.total).collect();
        if totals.len() < 2 * window || window == 0 {
            return true;
        }
        let means: Vec<f64> = totals
            .chunks(window)
            .filter(|c| c.len() == window)
            .map(|c| c.iter().sum::<f64>() / window as f64)
            .collect();
        means.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Fits every trial jointly with the shared body parameters.
pub fn fit(spec: &SkeletonSpec, trials: &[TrialData], config: &FitConfig) -> Result<FitResult> {
    let problem = FitProblem::new(spec, trials, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = problem.init_params(&mut rng);
    fit_from(&problem, params, &mut rng)
}

/// Runs the optimizer from explicit starting parameters.
pub fn fit_from(problem: &FitProblem, mut params: FitParams, rng: &mut impl Rng) -> Result<FitResult> {
    let cfg = problem.config();
    let spec = problem.spec();
    let mut flat = problem.flatten(&params);
    let net_len = flat.len() - spec.body_param_count();
    let frozen_from = if cfg.optimize_body { flat.len() } else { net_len };
    let n_groups = spec.scale_groups.len();
    let mut adam = AdamW::new(flat.len());
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let samples = problem.sample(rng);
        let lambda_2d = if (it as f64) < cfg.delay_2d * cfg.iterations as f64 {
            0.0
        } else {
            cfg.lambda_2d
        };
        let (parts, grad) = problem.loss_and_grad_with(&params, &samples, lambda_2d);
        if !parts.loss_3d.is_finite() {
            return Err(Error::NonFinite { iteration: it, term: "L_3D".into() });
        }
        if !parts.loss_2d.is_finite() {
            return Err(Error::NonFinite { iteration: it, term: "L_2D".into() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let term = if i < net_len { "network gradient" } else { "body gradient" };
            return Err(Error::NonFinite { iteration: it, term: term.into() });
        }
        let lr = cfg.learning_rate(it);
        adam.update(&mut flat, &grad, lr, cfg.weight_decay, net_len, frozen_from);
        for s in &mut flat[net_len..net_len + n_groups] {
            *s = s.clamp(SCALE_RANGE.0, SCALE_RANGE.1);
        }
        problem.unflatten(&mut params, &flat);
        trace.push(LossRecord {
            iteration: it,
            learning_rate: lr,
            total: parts.total,
            loss_3d: parts.loss_3d,
            loss_2d: parts.loss_2d,
        });
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {:.6e} lr {:.2e}", parts.total, lr);
        }
    }

    let trials = reconstruct(problem, &params)?;
    let result = FitResult {
        params,
        loss_trace: trace,
        trials,
    };
    if !result.smoothed_trace_decreasing(100) {
        log::info!("smoothed loss trace is not monotone");
    }
    Ok(result)
}

/// Evaluates fitted trajectories at every observed frame.
pub fn reconstruct(problem: &FitProblem, params: &FitParams) -> Result<Vec<TrialReconstruction>> {
    let spec = problem.spec();
    problem
        .trials
        .iter()
        .zip(&params.nets)
        .zip(&problem.names)
        .map(|((trial, net), name)| {
            let dofs = net.eval_batch(spec, &trial.timestamps);
            let positions: Vec<Vec<Vector3<f64>>> =
                dofs.iter().map(|q| spec.forward_dof(q, &params.body)).collect();
            let keypoints =
                KeypointTrajectory::from_dense(trial.timestamps.clone(), spec.keypoint_names(), positions)?;
            Ok(TrialReconstruction {
                name: name.clone(),
                timestamps: trial.timestamps.clone(),
                dofs,
                keypoints,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.0, 0.1), 0.0);
        assert!((huber(0.05, 0.1) - 0.00125).abs() < 1e-18);
        assert!((huber(0.2, 0.1) - 0.015).abs() < 1e-17);
        // continuity of value and slope at delta
        let d = 0.1;
        assert!((huber(d, d) - huber(d + 1e-12, d)).abs() < 1e-12);
        assert_eq!(huber_slope(d, d), d);
    }

    #[test]
    fn loss_3d_examples() {
        let x = vec![Vector3::new(0.0, 0.0, 0.0)];
        let o = vec![Some(Vector3::new(0.05, 0.0, 0.0))];
        assert!((loss_3d(&x, &o, &[1.0], 0.1).unwrap() - 0.00125).abs() < 1e-15);
        assert_eq!(loss_3d(&x, &[Some(x[0])], &[1.0], 0.1).unwrap(), 0.0);
        assert_eq!(loss_3d(&x, &o, &[0.0], 0.1).unwrap(), 0.0);
        assert!(loss_3d(&x, &o, &[1.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn loss_2d_examples() {
        let cam = CameraModel::new(
            crate::camera::Intrinsics {
                fx: 1000.0,
                fy: 1000.0,
                cx: 500.0,
                cy: 500.0,
                width: 1000,
                height: 1000,
            },
            nalgebra::Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap();
        let x = vec![Vector3::new(0.0, 0.0, 2.0)];
        let at = |du: f64| vec![Some(Vector2::new(500.0 + du, 500.0))];
        assert_eq!(loss_2d(&x, &cam, &at(0.0), &[1.0], 5.0).unwrap(), 0.0);
        assert!((loss_2d(&x, &cam, &at(3.0), &[1.0], 5.0).unwrap() - 4.5).abs() < 1e-12);
        assert!((loss_2d(&x, &cam, &at(10.0), &[1.0], 5.0).unwrap() - 37.5).abs() < 1e-12);
        let behind = vec![Vector3::new(0.0, 0.0, -2.0)];
        assert_eq!(loss_2d(&behind, &cam, &at(10.0), &[1.0], 5.0).unwrap(), 0.0);
    }

    #[test]
    fn weighted_total_examples() {
        let cfg = FitConfig::default();
        assert_eq!(weighted_total(0.0, 0.0, &cfg), 0.0);
        assert!((weighted_total(2.0, 10.0, &cfg) - 3.0).abs() < 1e-15);
        let no2d = FitConfig {
            lambda_2d: 0.0,
            ..FitConfig::default()
        };
        assert_eq!(weighted_total(2.5, 10.0, &no2d), 2.5);
    }

    #[test]
    fn encoding_endpoints() {
        let e = encode_time(0.0, (0.0, 2.0), 4);
        for k in 0..4 {
            assert_eq!(e[2 * k], 0.0);
            assert_eq!(e[2 * k + 1], 1.0);
        }
        let e = encode_time(2.0, (0.0, 2.0), 1);
        assert!(e[0].abs() < 1e-15);
        assert!((e[1] + 1.0).abs() < 1e-15);
        // clamped outside the span
        assert_eq!(encode_time(5.0, (0.0, 2.0), 3), encode_time(2.0, (0.0, 2.0), 3));
    }

    #[test]
    fn rescale_midpoint_and_saturation() {
        let spec = SkeletonSpec::default_arm();
        let zero = vec![0.0; spec.dof_count()];
        let q = rescale_outputs(&spec, &zero, &Vector3::zeros(), 1.0);
        let sat = rescale_outputs(&spec, &vec![20.0; spec.dof_count()], &Vector3::zeros(), 1.0);
        for (d, dof) in spec.dofs().iter().enumerate() {
            match dof.limits {
                Some((lo, hi)) => {
                    assert!((q[d] - 0.5 * (lo + hi)).abs() < 1e-15);
                    assert!((sat[d] - hi).abs() < 1e-8);
                }
                None => assert_eq!(q[d], 0.0),
            }
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = FitConfig::default();
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert!((cfg.learning_rate(cfg.iterations - 1) - 1e-6).abs() < 1e-18);
        let mid = cfg.learning_rate((cfg.iterations - 1) / 2);
        assert!(mid < 1e-3 && mid > 1e-6);
    }

    #[test]
    fn nearest_frame_lookup() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(nearest_frame(&ts, -1.0), 0);
        assert_eq!(nearest_frame(&ts, 1.4), 1);
        assert_eq!(nearest_frame(&ts, 1.6), 2);
        assert_eq!(nearest_frame(&ts, 9.0), 3);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let shape = MlpShape::new(3, 5, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = shape.init(&mut rng);
        let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        // loss = sum of outputs weighted by fixed coefficients
        let coef = DMatrix::from_fn(2, 4, |i, j| 1.0 + i as f64 - 0.5 * j as f64);
        let loss = |p: &[f64]| shape.forward(p, &x).component_mul(&coef).sum();
        let (_, cache) = shape.forward_cached(&params, &x);
        let mut grad = vec![0.0; params.len()];
        shape.backward(&params, cache, coef.clone(), &mut grad);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = loss(&p);
            p[i] -= 2.0 * h;
            let fd = (up - loss(&p)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
