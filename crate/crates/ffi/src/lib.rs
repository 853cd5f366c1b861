//! C ABI over the `uerw` library.
//!
//! Every fallible function returns a [`UerwStatus`]. On failure the message
//! is kept per thread and can be copied out with
//! [`uerw_last_error_message`]. Objects that own Rust data are passed as
//! opaque pointers and must be released with their `_free` function.
//!
//! Octants are exchanged as codes: bit 0 ipsilateral, bit 1 anterior,
//! bit 2 superior. [`UERW_OCTANT_MISSING`] marks a frame without a label.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use uerw::agreement::{agreement, bland_altman};
use uerw::camera::{CameraModel, Intrinsics};
use uerw::fitter::huber;
use uerw::nalgebra::{Matrix3, Vector3};
use uerw::torso::{local_wrist_trajectory, FrameLandmarks, LandmarkMap, TorsoFrame};
use uerw::trajectory::{Format, KeypointTrajectory};
use uerw::workspace::{score_workspace, Octant, ScoreOptions, TargetSphere, WorkspaceReport};
use uerw::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UerwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numerical = 5,
    Panic = 6,
}

pub const UERW_OCTANT_MISSING: u8 = 255;
pub const UERW_ANALYZED_OCTANTS: usize = 6;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> UerwStatus {
    match err {
        Error::Io { .. } => UerwStatus::Io,
        Error::Config(_) | Error::Usage(_) => UerwStatus::InvalidArgument,
        Error::Data { .. } | Error::Shape(_) | Error::LimitViolation { .. } | Error::Unreachable { .. } => {
            UerwStatus::Data
        }
        Error::DegenerateGeometry(_) | Error::BehindCamera { .. } | Error::NonFinite { .. } => {
            UerwStatus::Numerical
        }
    }
}

struct Failure(UerwStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(UerwStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(UerwStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic for `uerw_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UerwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            UerwStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            UerwStatus::Panic
        }
    }
}

unsafe fn vec3(p: *const f64, what: &str) -> Result<Vector3<f64>, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(p, 3);
    Ok(Vector3::new(s[0], s[1], s[2]))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uerw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in bytes
/// plus one for the terminator, so callers can size a buffer by calling with
/// `len` 0.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn uerw_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

// ---------------------------------------------------------------------------
// Trajectories

/// A loaded 3D keypoint trajectory.
pub struct UerwTrajectory(KeypointTrajectory);

/// Loads a CSV or JSONL trajectory (chosen by extension).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uerw_trajectory_load(path: *const c_char, out: *mut *mut UerwTrajectory) -> UerwStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let path = Path::new(path);
        let traj = KeypointTrajectory::load(path, Format::from_path(path))?;
        *out = Box::into_raw(Box::new(UerwTrajectory(traj)));
        Ok(())
    })
}

/// # Safety
/// `traj` must come from `uerw_trajectory_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uerw_trajectory_free(traj: *mut UerwTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of frames; 0 for a null handle.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uerw_trajectory_frame_count(traj: *const UerwTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Number of keypoints; 0 for a null handle.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uerw_trajectory_keypoint_count(traj: *const UerwTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.keypoint_count())
}

// ---------------------------------------------------------------------------
// Torso frame and octants

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UerwTorsoFrame {
    pub origin: [f64; 3],
    pub ml_axis: [f64; 3],
    pub ap_axis: [f64; 3],
    pub v_axis: [f64; 3],
}

/// Builds the torso frame from three landmark positions (each 3 doubles).
///
/// # Safety
/// Each input must point to 3 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uerw_torso_frame_build(
    sternal_notch: *const f64,
    t1: *const f64,
    t8: *const f64,
    out: *mut UerwTorsoFrame,
) -> UerwStatus {
    guard(|| {
        let landmarks = FrameLandmarks {
            sternal_notch: vec3(sternal_notch, "sternal_notch")?,
            t1: vec3(t1, "t1")?,
            t8: vec3(t8, "t8")?,
        };
        let out = out_ref(out, "out")?;
        let f = TorsoFrame::build(&landmarks)?;
        *out = UerwTorsoFrame {
            origin: f.origin.into(),
            ml_axis: f.ml_axis.into(),
            ap_axis: f.ap_axis.into(),
            v_axis: f.v_axis.into(),
        };
        Ok(())
    })
}

/// Octant code of a torso-local point (3 doubles). Returns
/// `UERW_OCTANT_MISSING` for a null pointer.
///
/// # Safety
/// `p` must point to 3 doubles or be null.
#[no_mangle]
pub unsafe extern "C" fn uerw_octant_classify(p: *const f64) -> u8 {
    match vec3(p, "p") {
        Ok(v) => Octant::classify(&v).code(),
        Err(_) => UERW_OCTANT_MISSING,
    }
}

// ---------------------------------------------------------------------------
// Scoring

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UerwOctantScore {
    pub octant: u8,
    pub available: usize,
    pub reached: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UerwWorkspaceReport {
    pub peak_reach: f64,
    /// Analyzed octants in reporting order.
    pub octants: [UerwOctantScore; UERW_ANALYZED_OCTANTS],
}

impl From<&WorkspaceReport> for UerwWorkspaceReport {
    fn from(r: &WorkspaceReport) -> Self {
        let mut out = UerwWorkspaceReport {
            peak_reach: r.peak_reach,
            ..Default::default()
        };
        for (slot, s) in out.octants.iter_mut().zip(&r.octants) {
            *slot = UerwOctantScore {
                octant: s.octant.code(),
                available: s.available,
                reached: s.reached,
            };
        }
        out
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UerwLandmarks {
    /// clavicle, backneck, upper_back, radial_wrist, ulnar_wrist
    Keypoints = 0,
    /// STRN, T1, T8, RWRA, RWRB
    Markers = 1,
}

fn options(n_targets: usize, capture_radius: f64) -> ScoreOptions {
    ScoreOptions {
        n_targets,
        capture_radius,
        peak_reach: None,
    }
}

/// Scores a loaded trajectory end to end.
///
/// # Safety
/// `traj` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uerw_score_trajectory(
    traj: *const UerwTrajectory,
    landmarks: UerwLandmarks,
    n_targets: usize,
    capture_radius: f64,
    seed: u64,
    out: *mut UerwWorkspaceReport,
) -> UerwStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(|| null("traj"))?;
        let out = out_ref(out, "out")?;
        let map = match landmarks {
            UerwLandmarks::Keypoints => LandmarkMap::default(),
            UerwLandmarks::Markers => LandmarkMap::markers(),
        };
        let wrist = local_wrist_trajectory(&traj.0, &map)?;
        *out = (&score_workspace(&wrist, &options(n_targets, capture_radius), seed)?).into();
        Ok(())
    })
}

/// Scores torso-local wrist positions given as `n` xyz triples. `present`
/// may be null (all present) or hold `n` flags.
///
/// # Safety
/// `xyz` must hold `3 * n` doubles; `present` null or `n` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn uerw_score_wrist(
    xyz: *const f64,
    present: *const u8,
    n: usize,
    n_targets: usize,
    capture_radius: f64,
    seed: u64,
    out: *mut UerwWorkspaceReport,
) -> UerwStatus {
    guard(|| {
        if xyz.is_null() && n > 0 {
            return Err(null("xyz"));
        }
        let out = out_ref(out, "out")?;
        let coords = if n == 0 { &[][..] } else { std::slice::from_raw_parts(xyz, 3 * n) };
        let flags = (!present.is_null()).then(|| std::slice::from_raw_parts(present, n));
        let wrist: Vec<Option<Vector3<f64>>> = (0..n)
            .map(|i| {
                let keep = flags.is_none_or(|f| f[i] != 0);
                keep.then(|| Vector3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]))
            })
            .collect();
        *out = (&score_workspace(&wrist, &options(n_targets, capture_radius), seed)?).into();
        Ok(())
    })
}

/// Target sphere handle.
pub struct UerwSphere(TargetSphere);

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uerw_sphere_generate(radius: f64, n: usize, seed: u64, out: *mut *mut UerwSphere) -> UerwStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        *out = Box::into_raw(Box::new(UerwSphere(TargetSphere::generate(radius, n, seed)?)));
        Ok(())
    })
}

/// # Safety
/// `sphere` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uerw_sphere_len(sphere: *const UerwSphere) -> usize {
    sphere.as_ref().map_or(0, |s| s.0.len())
}

/// Position (3 doubles) and octant code of target `i`.
///
/// # Safety
/// `sphere` must be live; `xyz` writable for 3 doubles; `octant` writable or null.
#[no_mangle]
pub unsafe extern "C" fn uerw_sphere_target(
    sphere: *const UerwSphere,
    i: usize,
    xyz: *mut f64,
    octant: *mut u8,
) -> UerwStatus {
    guard(|| {
        let s = &sphere.as_ref().ok_or_else(|| null("sphere"))?.0;
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        if i >= s.len() {
            return Err(invalid(format!("target index {i} out of range ({})", s.len())));
        }
        std::slice::from_raw_parts_mut(xyz, 3).copy_from_slice(s.targets()[i].as_slice());
        if let Some(o) = octant.as_mut() {
            *o = s.labels()[i].code();
        }
        Ok(())
    })
}

/// # Safety
/// `sphere` must come from `uerw_sphere_generate` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uerw_sphere_free(sphere: *mut UerwSphere) {
    if !sphere.is_null() {
        drop(Box::from_raw(sphere));
    }
}

// ---------------------------------------------------------------------------
// Statistics

#[no_mangle]
pub extern "C" fn uerw_huber(r: f64, delta: f64) -> f64 {
    huber(r, delta)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UerwBlandAltman {
    pub n: usize,
    pub mean_difference: f64,
    pub sd: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
}

/// Bland–Altman statistics of `test[i] - reference[i]`.
///
/// # Safety
/// `test` and `reference` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn uerw_bland_altman(
    test: *const f64,
    reference: *const f64,
    n: usize,
    out: *mut UerwBlandAltman,
) -> UerwStatus {
    guard(|| {
        if test.is_null() || reference.is_null() {
            return Err(null("test/reference"));
        }
        let out = out_ref(out, "out")?;
        let t = std::slice::from_raw_parts(test, n);
        let r = std::slice::from_raw_parts(reference, n);
        let pairs: Vec<(f64, f64)> = t.iter().copied().zip(r.iter().copied()).collect();
        let b = bland_altman(&pairs)?;
        *out = UerwBlandAltman {
            n: b.n,
            mean_difference: b.mean_difference,
            sd: b.sd,
            lower_limit: b.lower_limit,
            upper_limit: b.upper_limit,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UerwOctantAgreement {
    pub octant: u8,
    pub frames: usize,
    pub agreements: usize,
    pub ml_errors: usize,
    pub ap_errors: usize,
    pub si_errors: usize,
}

/// Agreement tallies for all 8 reference octants (order: the 6 analyzed,
/// then Sup. Post. Contra., Inf. Post. Contra.). Labels are octant codes or
/// `UERW_OCTANT_MISSING`.
///
/// # Safety
/// `reference` and `test` must hold `n` bytes; `out` must hold 8 entries;
/// `excluded` writable or null.
#[no_mangle]
pub unsafe extern "C" fn uerw_agreement(
    reference: *const u8,
    test: *const u8,
    n: usize,
    out: *mut UerwOctantAgreement,
    excluded: *mut usize,
) -> UerwStatus {
    guard(|| {
        if (reference.is_null() || test.is_null()) && n > 0 {
            return Err(null("reference/test"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let decode = |p: *const u8| -> Result<Vec<Option<Octant>>, Failure> {
            if n == 0 {
                return Ok(Vec::new());
            }
            std::slice::from_raw_parts(p, n)
                .iter()
                .map(|&c| match c {
                    UERW_OCTANT_MISSING => Ok(None),
                    c => Octant::from_code(c)
                        .map(Some)
                        .ok_or_else(|| invalid(format!("bad octant code {c}"))),
                })
                .collect()
        };
        let report = agreement(&decode(reference)?, &decode(test)?)?;
        let out = std::slice::from_raw_parts_mut(out, 8);
        for (slot, o) in out.iter_mut().zip(&report.octants) {
            *slot = UerwOctantAgreement {
                octant: o.octant.code(),
                frames: o.frames,
                agreements: o.agreements,
                ml_errors: o.ml_errors,
                ap_errors: o.ap_errors,
                si_errors: o.si_errors,
            };
        }
        if let Some(e) = excluded.as_mut() {
            *e = report.excluded_frames;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Camera

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UerwCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world→camera rotation.
    pub rotation: [f64; 9],
    /// World→camera translation, meters.
    pub translation: [f64; 3],
}

/// Projects a world point (3 doubles) to pixels (2 doubles).
///
/// # Safety
/// `camera` must be readable, `p` 3 doubles, `uv` writable for 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn uerw_camera_project(camera: *const UerwCamera, p: *const f64, uv: *mut f64) -> UerwStatus {
    guard(|| {
        let c = camera.as_ref().ok_or_else(|| null("camera"))?;
        let p = vec3(p, "p")?;
        if uv.is_null() {
            return Err(null("uv"));
        }
        let model = CameraModel::new(
            Intrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                ..Intrinsics::default()
            },
            Matrix3::from_row_slice(&c.rotation),
            Vector3::from(c.translation),
        )?;
        let px = model.project(&p)?;
        std::slice::from_raw_parts_mut(uv, 2).copy_from_slice(px.as_slice());
        Ok(())
    })
}
