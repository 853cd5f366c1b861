//! Rigid-body forward kinematics over a configurable segment tree.
//!
//! The pose is a flat degree-of-freedom vector laid out as
//! `[root translation (3), root rotation (3), joint axes...]`, joints in
//! segment order. Body parameters are one scale per scale group followed by a
//! 3D offset per keypoint (in its segment's frame), flattened the same way.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Translation plus three rotations for the free root.
pub const ROOT_DOF: usize = 6;
/// Admissible range for body scale factors.
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

const DEFAULT_SKELETON: &str = include_str!("../data/default_skeleton.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    name: String,
    scale_groups: Vec<String>,
    segments: Vec<SegmentEntry>,
    #[serde(default)]
    joints: Vec<JointEntry>,
    keypoints: Vec<KeypointEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentEntry {
    name: String,
    #[serde(default)]
    parent: Option<String>,
    offset: [f64; 3],
    scale_group: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    name: String,
    segment: String,
    axes: Vec<[f64; 3]>,
    limits: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointEntry {
    name: String,
    segment: String,
    position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub parent: Option<usize>,
    /// Joint location in the parent's frame (rest, unscaled).
    pub offset: Vector3<f64>,
    pub scale_group: usize,
    pub joint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub segment: usize,
    pub axes: Vec<Unit<Vector3<f64>>>,
    pub limits: Vec<(f64, f64)>,
    /// Index of this joint's first axis in the DoF vector.
    pub first_dof: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointDef {
    pub name: String,
    pub segment: usize,
    /// Rest position in the segment frame (unscaled).
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofKind {
    RootTranslation(usize),
    RootRotation(usize),
    Joint { joint: usize, axis: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dof {
    pub name: String,
    pub kind: DofKind,
    pub limits: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    pub name: String,
    pub scale_groups: Vec<String>,
    /// Topologically ordered: every parent precedes its children; index 0 is the root.
    pub segments: Vec<Segment>,
    pub joints: Vec<Joint>,
    pub keypoints: Vec<KeypointDef>,
    dofs: Vec<Dof>,
}

impl SkeletonSpec {
    /// The shipped torso + right-arm model (16 DoF, 14 keypoints).
    pub fn default_arm() -> Self {
        Self::from_toml_str(DEFAULT_SKELETON).expect("shipped skeleton is valid")
    }

    pub fn default_toml() -> &'static str {
        DEFAULT_SKELETON
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("skeleton: {e}")))?;
        Self::from_file(file)
    }

    fn from_file(file: SkeletonFile) -> Result<Self> {
        let cfg = |m: String| Error::Config(format!("skeleton `{}`: {m}", file.name));

        let group_index: HashMap<&str, usize> = file
            .scale_groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        if group_index.len() != file.scale_groups.len() {
            return Err(cfg("duplicate scale group".into()));
        }

        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, s) in file.segments.iter().enumerate() {
            if by_name.insert(s.name.as_str(), i).is_some() {
                return Err(cfg(format!("duplicate segment `{}`", s.name)));
            }
        }
        let mut parents = Vec::with_capacity(file.segments.len());
        for s in &file.segments {
            let parent = match &s.parent {
                None => None,
                Some(p) if p == &s.name => {
                    return Err(cfg(format!("cycle: segment `{p}` is its own parent")))
                }
                Some(p) => Some(*by_name.get(p.as_str()).ok_or_else(|| {
                    cfg(format!("segment `{}` has missing parent `{p}`", s.name))
                })?),
            };
            parents.push(parent);
        }
        let roots: Vec<usize> = (0..parents.len()).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(cfg(format!(
                "expected exactly one root segment, found {}",
                roots.len()
            )));
        }

        // Topological order by depth-first walk from the root; anything
        // unvisited afterwards sits on a cycle.
        let mut order = Vec::with_capacity(parents.len());
        let mut stack = vec![roots[0]];
        while let Some(i) = stack.pop() {
            order.push(i);
            for c in (0..parents.len()).rev() {
                if parents[c] == Some(i) {
                    stack.push(c);
                }
            }
        }
        if order.len() != parents.len() {
            let stray = (0..parents.len())
                .find(|i| !order.contains(i))
                .map(|i| file.segments[i].name.clone())
                .unwrap_or_default();
            return Err(cfg(format!("cycle in segment tree involving `{stray}`")));
        }
        let mut new_index = vec![0; parents.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }

        let mut segments = Vec::with_capacity(order.len());
        for &old in &order {
            let s = &file.segments[old];
            let scale_group = *group_index.get(s.scale_group.as_str()).ok_or_else(|| {
                cfg(format!(
                    "segment `{}` uses unknown scale group `{}`",
                    s.name, s.scale_group
                ))
            })?;
            let offset = Vector3::from(s.offset);
            if !offset.iter().all(|v| v.is_finite()) {
                return Err(cfg(format!("segment `{}` has a non-finite offset", s.name)));
            }
            segments.push(Segment {
                name: s.name.clone(),
                parent: parents[old].map(|p| new_index[p]),
                offset,
                scale_group,
                joint: None,
            });
        }
        let seg_lookup = |name: &str| -> Option<usize> { by_name.get(name).map(|&i| new_index[i]) };

        let mut joints: Vec<Joint> = Vec::with_capacity(file.joints.len());
        for j in &file.joints {
            let segment = seg_lookup(&j.segment)
                .ok_or_else(|| cfg(format!("joint `{}` on unknown segment `{}`", j.name, j.segment)))?;
            if segment == 0 {
                return Err(cfg(format!(
                    "joint `{}` is on the root, which is already free",
                    j.name
                )));
            }
            if segments[segment].joint.is_some() {
                return Err(cfg(format!("segment `{}` has two joints", j.segment)));
            }
            if j.axes.is_empty() || j.axes.len() > 3 || j.axes.len() != j.limits.len() {
                return Err(cfg(format!(
                    "joint `{}` needs 1 to 3 axes with one limit pair each",
                    j.name
                )));
            }
            let mut axes = Vec::new();
            for a in &j.axes {
                let v = Vector3::from(*a);
                let axis = Unit::try_new(v, 1e-9)
                    .ok_or_else(|| cfg(format!("joint `{}` has a degenerate axis", j.name)))?;
                axes.push(axis);
            }
            let mut limits = Vec::new();
            for &[lo, hi] in &j.limits {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(cfg(format!(
                        "joint `{}` limit [{lo}, {hi}] must satisfy lo < hi",
                        j.name
                    )));
                }
                limits.push((lo, hi));
            }
            segments[segment].joint = Some(joints.len());
            joints.push(Joint {
                name: j.name.clone(),
                segment,
                axes,
                limits,
                first_dof: 0,
            });
        }
        if joints.iter().map(|j| &j.name).collect::<std::collections::HashSet<_>>().len()
            != joints.len()
        {
            return Err(cfg("duplicate joint name".into()));
        }

        // DoF layout follows segment order.
        let mut dofs = Vec::new();
        for (a, axis) in ["x", "y", "z"].iter().enumerate() {
            dofs.push(Dof {
                name: format!("root_t{axis}"),
                kind: DofKind::RootTranslation(a),
                limits: None,
            });
        }
        for (a, axis) in ["x", "y", "z"].iter().enumerate() {
            dofs.push(Dof {
                name: format!("root_r{axis}"),
                kind: DofKind::RootRotation(a),
                limits: None,
            });
        }
        for seg in &segments {
            if let Some(ji) = seg.joint {
                joints[ji].first_dof = dofs.len();
                for (a, &lim) in joints[ji].limits.iter().enumerate() {
                    dofs.push(Dof {
                        name: format!("{}_{a}", joints[ji].name),
                        kind: DofKind::Joint { joint: ji, axis: a },
                        limits: Some(lim),
                    });
                }
            }
        }

        let mut keypoints = Vec::with_capacity(file.keypoints.len());
        for k in &file.keypoints {
            let segment = seg_lookup(&k.segment).ok_or_else(|| {
                cfg(format!("keypoint `{}` on unknown segment `{}`", k.name, k.segment))
            })?;
            if keypoints.iter().any(|e: &KeypointDef| e.name == k.name) {
                return Err(cfg(format!("duplicate keypoint `{}`", k.name)));
            }
            keypoints.push(KeypointDef {
                name: k.name.clone(),
                segment,
                position: Vector3::from(k.position),
            });
        }
        if keypoints.is_empty() {
            return Err(cfg("no keypoints".into()));
        }

        Ok(SkeletonSpec {
            name: file.name,
            scale_groups: file.scale_groups,
            segments,
            joints,
            keypoints,
            dofs,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    pub fn dofs(&self) -> &[Dof] {
        &self.dofs
    }

    pub fn keypoint_names(&self) -> Vec<String> {
        self.keypoints.iter().map(|k| k.name.clone()).collect()
    }

    pub fn keypoint_index(&self, name: &str) -> Option<usize> {
        self.keypoints.iter().position(|k| k.name == name)
    }

    /// Length of the flattened body parameter vector.
    pub fn body_param_count(&self) -> usize {
        self.scale_groups.len() + 3 * self.keypoints.len()
    }

    /// Checks every limited DoF against its range.
    pub fn check_limits(&self, q: &[f64]) -> Result<()> {
        for dof in &self.dofs {
            if let (DofKind::Joint { joint, axis }, Some((lo, hi))) = (dof.kind, dof.limits) {
                let angle = q[self.joints[joint].first_dof + axis];
                if !(lo..=hi).contains(&angle) {
                    return Err(Error::LimitViolation {
                        joint: self.joints[joint].name.clone(),
                        axis,
                        angle,
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(())
    }

    /// Keypoint positions for a pose. With `strict`, out-of-limit angles are
    /// rejected instead of evaluated.
    pub fn forward(&self, pose: &Pose, body: &BodyParams, strict: bool) -> Result<Vec<Vector3<f64>>> {
        let q = pose.to_vector();
        if q.len() != self.dof_count() {
            return Err(Error::Shape(format!(
                "pose has {} DoF, skeleton has {}",
                q.len(),
                self.dof_count()
            )));
        }
        body.validate(self)?;
        if strict {
            self.check_limits(&q)?;
        }
        Ok(self.state(&q, body).keypoints)
    }

    /// Unchecked forward kinematics on a flat DoF vector.
    pub fn forward_dof(&self, q: &[f64], body: &BodyParams) -> Vec<Vector3<f64>> {
        self.state(q, body).keypoints
    }

    /// Full kinematic state for `q`; keeps what the reverse pass needs.
    pub fn state(&self, q: &[f64], body: &BodyParams) -> FkState {
        debug_assert_eq!(q.len(), self.dof_count());
        let n = self.segments.len();
        let mut rot = vec![Matrix3::identity(); n];
        let mut pos = vec![Vector3::zeros(); n];
        let mut axes = vec![Vector3::zeros(); self.dof_count()];

        // root
        let mut r = Matrix3::identity();
        for a in 0..3 {
            let axis = Vector3::ith_axis(a);
            axes[3 + a] = r * axis.into_inner();
            r *= Rotation3::from_axis_angle(&axis, q[3 + a]).into_inner();
        }
        rot[0] = r;
        pos[0] = Vector3::new(q[0], q[1], q[2]) + self.segments[0].offset;

        for i in 1..n {
            let seg = &self.segments[i];
            let p = seg.parent.expect("non-root segment has a parent");
            let scale = body.scales[self.segments[p].scale_group];
            pos[i] = pos[p] + rot[p] * (seg.offset * scale);
            let mut r = rot[p];
            if let Some(ji) = seg.joint {
                let joint = &self.joints[ji];
                for (a, axis) in joint.axes.iter().enumerate() {
                    let d = joint.first_dof + a;
                    axes[d] = r * axis.into_inner();
                    r *= Rotation3::from_axis_angle(axis, q[d]).into_inner();
                }
            }
            rot[i] = r;
        }

        let keypoints = self
            .keypoints
            .iter()
            .enumerate()
            .map(|(k, kp)| {
                let s = kp.segment;
                let scale = body.scales[self.segments[s].scale_group];
                pos[s] + rot[s] * (kp.position * scale + body.offsets[k])
            })
            .collect();
        FkState {
            rot,
            pos,
            axes,
            keypoints,
        }
    }

    /// Dense Jacobians of the flattened keypoints (3K rows) with respect to
    /// the DoF vector and the body parameter vector.
    pub fn jacobians(&self, q: &[f64], body: &BodyParams) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
        let state = self.state(q, body);
        let k = self.keypoints.len();
        let mut jq = nalgebra::DMatrix::zeros(3 * k, self.dof_count());
        let mut jb = nalgebra::DMatrix::zeros(3 * k, self.body_param_count());
        let mut seed = vec![Vector3::zeros(); k];
        for row in 0..3 * k {
            seed.iter_mut().for_each(|g| *g = Vector3::zeros());
            seed[row / 3][row % 3] = 1.0;
            let (gq, gb) = state.vjp(self, &seed);
            jq.row_mut(row).copy_from_slice(&gq);
            jb.row_mut(row).copy_from_slice(&gb);
        }
        (jq, jb)
    }
}

/// Per-segment world transforms and world DoF axes from one forward pass.
#[derive(Debug, Clone)]
pub struct FkState {
    pub rot: Vec<Matrix3<f64>>,
    pub pos: Vec<Vector3<f64>>,
    /// World axis of each rotational DoF (zero for root translation).
    pub axes: Vec<Vector3<f64>>,
    pub keypoints: Vec<Vector3<f64>>,
}

impl FkState {
    /// Pulls keypoint gradients back to gradients on the DoF vector and the
    /// flattened body parameters.
    pub fn vjp(
        &self,
        spec: &SkeletonSpec,
        grad: &[Vector3<f64>],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = spec.segments.len();
        let groups = spec.scale_groups.len();
        // subtree sums of g and x × g
        let mut sum_g = vec![Vector3::zeros(); n];
        let mut sum_xg = vec![Vector3::zeros(); n];
        let mut g_body = vec![0.0; spec.body_param_count()];
        for (k, kp) in spec.keypoints.iter().enumerate() {
            let g = grad[k];
            let s = kp.segment;
            sum_g[s] += g;
            sum_xg[s] += self.keypoints[k].cross(&g);
            let r = &self.rot[s];
            g_body[spec.segments[s].scale_group] += (r * kp.position).dot(&g);
            let local = r.transpose() * g;
            g_body[groups + 3 * k..groups + 3 * k + 3].copy_from_slice(local.as_slice());
        }
        for i in (1..n).rev() {
            let p = spec.segments[i].parent.unwrap();
            let (g, xg) = (sum_g[i], sum_xg[i]);
            sum_g[p] += g;
            sum_xg[p] += xg;
            g_body[spec.segments[p].scale_group] += (self.rot[p] * spec.segments[i].offset).dot(&g);
        }

        let mut g_q = vec![0.0; spec.dof_count()];
        g_q[..3].copy_from_slice(sum_g[0].as_slice());
        let torque = |s: usize| sum_xg[s] - self.pos[s].cross(&sum_g[s]);
        let root = torque(0);
        for a in 0..3 {
            g_q[3 + a] = self.axes[3 + a].dot(&root);
        }
        for joint in &spec.joints {
            let t = torque(joint.segment);
            for a in 0..joint.axes.len() {
                let d = joint.first_dof + a;
                g_q[d] = self.axes[d].dot(&t);
            }
        }
        (g_q, g_body)
    }
}

/// Root pose and joint angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_translation: Vector3<f64>,
    /// Sequential rotations about the root's X, Y and Z axes, radians.
    pub root_rotation: Vector3<f64>,
    /// One angle per joint axis, in DoF order.
    pub joint_angles: Vec<f64>,
}

impl Pose {
    /// Root at the world origin and every joint angle zero.
    pub fn zero(spec: &SkeletonSpec) -> Self {
        Pose {
            root_translation: Vector3::zeros(),
            root_rotation: Vector3::zeros(),
            joint_angles: vec![0.0; spec.dof_count() - ROOT_DOF],
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(ROOT_DOF + self.joint_angles.len());
        q.extend_from_slice(self.root_translation.as_slice());
        q.extend_from_slice(self.root_rotation.as_slice());
        q.extend_from_slice(&self.joint_angles);
        q
    }

    pub fn from_vector(q: &[f64]) -> Self {
        Pose {
            root_translation: Vector3::new(q[0], q[1], q[2]),
            root_rotation: Vector3::new(q[3], q[4], q[5]),
            joint_angles: q[ROOT_DOF..].to_vec(),
        }
    }
}

/// Shared body parameters: scale per group and a per-keypoint offset.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    pub scales: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
}

impl BodyParams {
    /// Unit scales and zero offsets.
    pub fn identity(spec: &SkeletonSpec) -> Self {
        BodyParams {
            scales: vec![1.0; spec.scale_groups.len()],
            offsets: vec![Vector3::zeros(); spec.keypoints.len()],
        }
    }

    pub fn validate(&self, spec: &SkeletonSpec) -> Result<()> {
        if self.scales.len() != spec.scale_groups.len()
            || self.offsets.len() != spec.keypoints.len()
        {
            return Err(Error::Shape(format!(
                "body params have {} scales / {} offsets, skeleton needs {} / {}",
                self.scales.len(),
                self.offsets.len(),
                spec.scale_groups.len(),
                spec.keypoints.len()
            )));
        }
        let (lo, hi) = SCALE_RANGE;
        for (g, &s) in self.scales.iter().enumerate() {
            if !(lo..=hi).contains(&s) {
                return Err(Error::Config(format!(
                    "scale {s} for group `{}` outside [{lo}, {hi}]",
                    spec.scale_groups[g]
                )));
            }
        }
        if !self.offsets.iter().all(|o| o.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("non-finite keypoint offset".into()));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.scales.clone();
        for o in &self.offsets {
            v.extend_from_slice(o.as_slice());
        }
        v
    }

    pub fn from_vector(spec: &SkeletonSpec, v: &[f64]) -> Self {
        let g = spec.scale_groups.len();
        BodyParams {
            scales: v[..g].to_vec(),
            offsets: v[g..].chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
        }
    }
}
