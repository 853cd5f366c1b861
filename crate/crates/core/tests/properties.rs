use nalgebra::{DMatrix, DVector, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uerw::agreement::bland_altman;
use uerw::camera::CameraSet;
use uerw::fitter::{self, encode_time, huber, loss_2d, loss_3d, rescale_outputs, FitConfig, MlpShape};
use uerw::kinematics::SkeletonSpec;
use uerw::synth::{brute_force_score, inject_depth_noise};
use uerw::torso::{FrameLandmarks, TorsoFrame};
use uerw::trajectory::{KeypointTrajectory, PixelTrajectory};
use uerw::workspace::{percent_reached, simulate_capture, Octant, TargetSphere};

fn coord() -> impl Strategy<Value = f64> {
    -2.0..2.0f64
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn landmarks() -> impl Strategy<Value = FrameLandmarks> {
    (point(), point(), point())
        .prop_filter("non-degenerate", |(s, t1, t8)| (s - t8).cross(&(t1 - t8)).norm() > 1e-3)
        .prop_map(|(sternal_notch, t1, t8)| FrameLandmarks {
            sternal_notch,
            t1,
            t8,
        })
}

/// Trajectory with random gaps and confidences.
fn trajectory() -> impl Strategy<Value = KeypointTrajectory> {
    (1usize..5, 1usize..12).prop_flat_map(|(j, n)| {
        let sample = (prop::option::weighted(0.8, point()), 0.0..=1.0f64);
        (
            prop::collection::vec(0.001..0.5f64, n),
            prop::collection::vec(prop::collection::vec(sample, j), n),
        )
            .prop_map(move |(steps, frames)| {
                let times = steps
                    .iter()
                    .scan(0.0, |t, s| {
                        *t += s;
                        Some(*t)
                    })
                    .collect();
                let names = (0..j).map(|k| format!("kp{k}")).collect();
                let (pos, conf) = frames
                    .into_iter()
                    .map(|f| f.into_iter().unzip::<_, _, Vec<_>, Vec<_>>())
                    .unzip();
                KeypointTrajectory::new(times, names, pos, conf).unwrap()
            })
    })
}

fn rotated<T: Clone>(v: &[T], k: usize) -> Vec<T> {
    let mut v = v.to_vec();
    v.rotate_left(k);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(traj in trajectory()) {
        let text = traj.to_csv_string();
        let back = KeypointTrajectory::read_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn jsonl_round_trip(traj in trajectory()) {
        let mut buf = Vec::new();
        traj.write_jsonl(&mut buf).unwrap();
        let back = KeypointTrajectory::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn frame_is_orthonormal_and_right_handed(lm in landmarks()) {
        let f = TorsoFrame::build(&lm).unwrap();
        let b = f.basis();
        prop_assert!((b.transpose() * b - nalgebra::Matrix3::identity()).amax() < 1e-10);
        prop_assert!((b.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn to_local_is_an_isometry(lm in landmarks(), p in point(), q in point()) {
        let f = TorsoFrame::build(&lm).unwrap();
        let d = (f.to_local(&p) - f.to_local(&q)).norm();
        prop_assert!((d - (p - q).norm()).abs() < 1e-12);
        prop_assert!((f.to_world(&f.to_local(&p)) - p).amax() < 1e-12);
        prop_assert!(f.to_local(&f.origin).amax() < 1e-15);
        // independent inverse-transform oracle
        let via_inverse = f.basis().try_inverse().unwrap() * (p - f.origin);
        prop_assert!((f.to_local(&p) - via_inverse).amax() < 1e-12);
    }

    #[test]
    fn frame_follows_rigid_motion(lm in landmarks(), axis in point(), angle in -3.0..3.0f64, d in point()) {
        prop_assume!(axis.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let f = TorsoFrame::build(&lm).unwrap();
        let g = TorsoFrame::build(&FrameLandmarks {
            sternal_notch: r * lm.sternal_notch + d,
            t1: r * lm.t1 + d,
            t8: r * lm.t8 + d,
        }).unwrap();
        prop_assert!((g.basis() - r.matrix() * f.basis()).amax() < 1e-12);
        prop_assert!((g.origin - (r * f.origin + d)).amax() < 1e-12);
    }

    #[test]
    fn capture_is_monotone_and_matches_oracle(
        frames in prop::collection::vec(prop::option::weighted(0.9, point()), 1..40),
        extra in prop::collection::vec(point(), 1..10),
        seed in 0u64..1000,
    ) {
        let sphere = TargetSphere::generate(1.5, 200, seed).unwrap();
        let before = simulate_capture(&frames, &sphere, 0.3).unwrap();
        let mut more = frames.clone();
        more.extend(extra.into_iter().map(Some));
        let after = simulate_capture(&more, &sphere, 0.3).unwrap();
        prop_assert!(before.iter().zip(&after).all(|(b, a)| !b || *a));

        let fast = percent_reached(&after, &sphere).unwrap();
        let slow = brute_force_score(&more, &sphere, 0.3);
        for o in Octant::ANALYZED {
            prop_assert_eq!(fast.get(o), slow.get(o));
        }
    }

    #[test]
    fn capture_is_scale_equivariant(
        frames in prop::collection::vec(prop::option::of(point()), 1..30),
        s in 0.2..5.0f64,
        seed in 0u64..100,
    ) {
        let a = TargetSphere::generate(1.0, 150, seed).unwrap();
        let b = TargetSphere::generate(s, 150, seed).unwrap();
        let scaled: Vec<_> = frames.iter().map(|p| p.map(|p| p * s)).collect();
        // scale the capture radius up a hair to absorb rounding at the boundary
        let ra = simulate_capture(&frames, &a, 0.4).unwrap();
        let rb = simulate_capture(&scaled, &b, 0.4 * s).unwrap();
        let mismatched = ra.iter().zip(&rb).filter(|(x, y)| x != y).count();
        prop_assert!(mismatched <= 1, "{} targets differ", mismatched);
    }

    #[test]
    fn octant_codes_round_trip(p in point()) {
        let o = Octant::classify(&p);
        prop_assert_eq!(Octant::from_code(o.code()), Some(o));
        prop_assert_eq!(o.name().parse::<Octant>().unwrap(), o);
    }

    #[test]
    fn huber_is_nonnegative_and_monotone(r1 in 0.0..1.0f64, r2 in 0.0..1.0f64, delta in 0.01..0.5f64) {
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(huber(lo, delta) >= 0.0);
        prop_assert!(huber(lo, delta) <= huber(hi, delta));
    }

    #[test]
    fn loss_3d_is_permutation_invariant_and_linear_in_confidence(
        pts in prop::collection::vec((point(), point(), 0.0..=1.0f64), 1..10),
        shift in 0usize..10,
        s in 0.01..1.0f64,
    ) {
        let pred: Vec<_> = pts.iter().map(|p| p.0).collect();
        let obs: Vec<_> = pts.iter().map(|p| Some(p.1)).collect();
        let conf: Vec<_> = pts.iter().map(|p| p.2).collect();
        let base = loss_3d(&pred, &obs, &conf, 0.1).unwrap();
        prop_assert!(base >= 0.0);

        let k = shift % pts.len();
        let permuted = loss_3d(&rotated(&pred, k), &rotated(&obs, k), &rotated(&conf, k), 0.1).unwrap();
        prop_assert!((permuted - base).abs() <= 1e-12 * base.max(1.0));

        let scaled: Vec<_> = conf.iter().map(|c| c * s).collect();
        let l = loss_3d(&pred, &obs, &scaled, 0.1).unwrap();
        prop_assert!((l - s * base).abs() <= 1e-12 * base.max(1.0));
        let missing = vec![None; pts.len()];
        prop_assert_eq!(loss_3d(&pred, &missing, &conf, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn loss_2d_is_linear_in_confidence(
        pts in prop::collection::vec((point(), -50.0..50.0f64, -50.0..50.0f64, 0.0..=1.0f64), 1..10),
        s in 0.01..1.0f64,
    ) {
        let cam = CameraSet::study_default().cameras[0].build().unwrap();
        // keypoints around the subject, pixel observations near their projections
        let pred: Vec<_> = pts.iter().map(|p| Vector3::new(0.0, 0.0, 1.2) + p.0 * 0.3).collect();
        let obs: Vec<_> = pred
            .iter()
            .zip(&pts)
            .map(|(x, p)| Some(cam.project(x).unwrap() + Vector2::new(p.1, p.2)))
            .collect();
        let conf: Vec<_> = pts.iter().map(|p| p.3).collect();
        let base = loss_2d(&pred, &cam, &obs, &conf, 5.0).unwrap();
        prop_assert!(base >= 0.0);
        let scaled: Vec<_> = conf.iter().map(|c| c * s).collect();
        let l = loss_2d(&pred, &cam, &obs, &scaled, 5.0).unwrap();
        prop_assert!((l - s * base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn rescaled_joints_stay_inside_limits(raw in prop::collection::vec(-30.0..30.0f64, 16)) {
        let spec = SkeletonSpec::default_arm();
        let q = rescale_outputs(&spec, &raw, &Vector3::zeros(), 1.0);
        prop_assert!(spec.check_limits(&q).is_ok());
        for (dof, v) in spec.dofs().iter().zip(&q) {
            if let Some((lo, hi)) = dof.limits {
                prop_assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn encoding_matches_formula(t in 0.0..=1.0f64) {
        let e = encode_time(3.0 + 2.0 * t, (3.0, 5.0), 6);
        for k in 0..6 {
            let w = 2f64.powi(k as i32) * std::f64::consts::PI * t;
            prop_assert!((e[2 * k] - w.sin()).abs() < 1e-12);
            prop_assert!((e[2 * k + 1] - w.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn bland_altman_shift(pairs in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 2..20), c in -10.0..10.0f64) {
        let a = bland_altman(&pairs).unwrap();
        let shifted: Vec<_> = pairs.iter().map(|(t, r)| (t + c, *r)).collect();
        let b = bland_altman(&shifted).unwrap();
        prop_assert!((b.mean_difference - a.mean_difference - c).abs() < 1e-9);
        prop_assert!((b.sd - a.sd).abs() < 1e-9);
        prop_assert!((a.upper_limit - a.mean_difference - 1.96 * a.sd).abs() < 1e-9);
    }
}

#[test]
fn randomized_network_outputs_stay_inside_limits() {
    let spec = SkeletonSpec::default_arm();
    let shape = MlpShape::new(16, 32, 3, spec.dof_count());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        // large weights push the pre-tanh outputs deep into saturation
        let params: Vec<f64> = shape.init(&mut rng).iter().map(|w| w * 50.0).collect();
        for i in 0..50 {
            let x = DVector::from_vec(encode_time(i as f64 / 49.0, (0.0, 1.0), 8));
            let raw = shape.forward(&params, &DMatrix::from_columns(&[x]));
            let q = rescale_outputs(&spec, raw.as_slice(), &Vector3::zeros(), 1.0);
            spec.check_limits(&q).unwrap();
        }
    }
}

#[test]
fn depth_noise_preserves_pixels_and_has_the_right_variance() {
    let cam = CameraSet::study_default().cameras[1].build().unwrap();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            use rand::Rng;
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.8..1.8))
        })
        .collect();
    let times: Vec<f64> = (0..n).map(|i| i as f64 / 60.0).collect();
    let traj = KeypointTrajectory::from_dense(times, vec!["p".into()], pts.iter().map(|p| vec![*p]).collect()).unwrap();
    let noisy = inject_depth_noise(&traj, &cam, 0.05, 3).unwrap();
    let mut sq = 0.0;
    for (f, p) in pts.iter().enumerate() {
        let q = noisy.position(f, 0).unwrap();
        let (a, b) = (cam.project(p).unwrap(), cam.project(&q).unwrap());
        assert!((a - b).norm() < 1e-9, "frame {f} moved off its ray");
        sq += (q - p).norm_squared();
    }
    let var = sq / n as f64;
    assert!((var / 0.0025 - 1.0).abs() < 0.05, "variance {var}");
    assert_eq!(inject_depth_noise(&traj, &cam, 0.0, 3).unwrap(), traj);
}

#[test]
fn pixel_round_trip_keeps_missing_samples() {
    let px = PixelTrajectory::new(
        vec![0.0, 0.5],
        vec!["a".into(), "b".into()],
        vec![vec![Some(Vector2::new(1.5, -2.0)), None], vec![None, Some(Vector2::new(0.1, 1e-7))]],
        vec![vec![0.9, 0.0], vec![0.0, 1.0]],
    )
    .unwrap();
    let back = PixelTrajectory::read_csv(px.to_csv_string().as_bytes()).unwrap();
    assert_eq!(back, px);
}

#[test]
fn fit_is_seed_deterministic() {
    use uerw::camera::CameraModel;
    use uerw::synth::{generate_trial, TrialScript};
    let spec = SkeletonSpec::default_arm();
    let cams: Vec<(String, CameraModel)> = CameraSet::study_default()
        .cameras
        .iter()
        .map(|c| (c.name.clone(), c.build().unwrap()))
        .collect();
    let mut script = TrialScript::all_octants(2);
    script.reach.truncate(2);
    let trial = generate_trial(&spec, &script, &cams).unwrap();
    let data = fitter::TrialData {
        name: "t".into(),
        keypoints3d: Some(trial.clean.clone()),
        views: vec![fitter::CameraView {
            camera: cams[0].1.clone(),
            pixels: trial.views[0].pixels.clone(),
        }],
    };
    let cfg = FitConfig {
        iterations: 15,
        delay_2d: 0.5,
        net: fitter::NetConfig {
            width: 32,
            ..Default::default()
        },
        ..FitConfig::default()
    };
    let a = fitter::fit(&spec, std::slice::from_ref(&data), &cfg).unwrap();
    let b = fitter::fit(&spec, &[data], &cfg).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.params, b.params);
    for rec in &a.trials {
        for q in &rec.dofs {
            spec.check_limits(q).unwrap();
        }
    }
}
