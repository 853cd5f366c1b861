//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs without the libtest harness so the lines
//! always show up in `cargo test` output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uerw::agreement::{agreement, bland_altman, octant_sequence};
use uerw::camera::{CameraModel, CameraSet};
use uerw::cli::{joint_angle_error_deg, keypoint_errors};
use uerw::fitter::{self, CameraView, FitConfig, FitProblem, TrialData};
use uerw::kinematics::SkeletonSpec;
use uerw::synth::{brute_force_score, generate_trial, ReachDirective, TrialScript};
use uerw::torso::{local_wrist_trajectory, FrameLandmarks, LandmarkMap, TorsoFrame};
use uerw::workspace::{
    percent_reached, score_workspace, simulate_capture, Octant, ScoreOptions, TargetSphere,
    DEFAULT_CAPTURE_RADIUS, DEFAULT_TARGET_COUNT,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn cameras() -> Vec<(String, CameraModel)> {
    CameraSet::study_default()
        .cameras
        .iter()
        .map(|c| (c.name.clone(), c.build().unwrap()))
        .collect()
}

// ---------------------------------------------------------------------------
// 1. oracle equality

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let spec = SkeletonSpec::default_arm();
    let cams = cameras();
    let map = LandmarkMap::default();
    let mut mismatches = 0;
    let mut reached_total = 0;
    for seed in 0..100u64 {
        let mut script = TrialScript::all_octants(seed);
        for d in &mut script.reach {
            d.sweeps = 1;
            d.duration = 0.8;
        }
        script.noise.keypoint_sigma = 0.01;
        script.noise.dropout = 0.02;
        let trial = generate_trial(&spec, &script, &cams).unwrap();
        let wrist = local_wrist_trajectory(&trial.noisy, &map).unwrap();
        let radius = uerw::workspace::peak_reach(&wrist).unwrap();
        let sphere = TargetSphere::generate(radius, DEFAULT_TARGET_COUNT, seed).unwrap();
        let flags = simulate_capture(&wrist, &sphere, DEFAULT_CAPTURE_RADIUS).unwrap();
        let pipeline = percent_reached(&flags, &sphere).unwrap();
        let oracle = brute_force_score(&wrist, &sphere, DEFAULT_CAPTURE_RADIUS);
        for o in Octant::ANALYZED {
            let (a, b) = (pipeline.get(o).unwrap(), oracle.get(o).unwrap());
            if (a.available, a.reached) != (b.available, b.reached) {
                mismatches += 1;
            }
            reached_total += b.reached;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && reached_total > 0 && secs < 60.0,
        format!("100 trials, {mismatches} octant count mismatches, {reached_total} targets reached, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------------------
// 2. frame geometry

/// Textbook construction written independently of the library.
fn frame_oracle(s: [f64; 3], t1: [f64; 3], t8: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }
    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }
    fn unit(a: [f64; 3]) -> [f64; 3] {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    }
    let v = unit(sub(t1, t8));
    let ml = unit(cross(sub(s, t8), v));
    let ap = cross(v, ml);
    let origin = [(s[0] + t1[0]) / 2.0, (s[1] + t1[1]) / 2.0, (s[2] + t1[2]) / 2.0];
    (origin, [ml, ap, v])
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 5]; // unit, orthogonal, det, rotation, translation
    let mut oracle_err = 0.0f64;
    let mut n = 0;
    while n < 1000 {
        let mut p = || Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let lm = FrameLandmarks {
            sternal_notch: p(),
            t1: p(),
            t8: p(),
        };
        if (lm.sternal_notch - lm.t8).cross(&(lm.t1 - lm.t8)).norm() < 1e-3 {
            continue;
        }
        n += 1;
        let f = TorsoFrame::build(&lm).unwrap();
        let axes = [f.ml_axis, f.ap_axis, f.v_axis];
        for a in &axes {
            worst[0] = worst[0].max((a.norm() - 1.0).abs());
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            worst[1] = worst[1].max(axes[i].dot(&axes[j]).abs());
        }
        worst[2] = worst[2].max((f.basis().determinant() - 1.0).abs());

        let arr = |v: Vector3<f64>| [v.x, v.y, v.z];
        let (o, b) = frame_oracle(arr(lm.sternal_notch), arr(lm.t1), arr(lm.t8));
        oracle_err = oracle_err.max((f.origin - Vector3::from(o)).amax());
        for (a, e) in axes.iter().zip(b) {
            oracle_err = oracle_err.max((a - Vector3::from(e)).amax());
        }

        let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let r: Matrix3<f64> = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).into_inner();
        let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let moved = TorsoFrame::build(&FrameLandmarks {
            sternal_notch: r * lm.sternal_notch,
            t1: r * lm.t1,
            t8: r * lm.t8,
        })
        .unwrap();
        worst[3] = worst[3].max((moved.origin - r * f.origin).amax());
        worst[3] = worst[3].max((moved.basis() - r * f.basis()).amax());
        let shifted = TorsoFrame::build(&FrameLandmarks {
            sternal_notch: lm.sternal_notch + d,
            t1: lm.t1 + d,
            t8: lm.t8 + d,
        })
        .unwrap();
        worst[4] = worst[4].max((shifted.origin - (f.origin + d)).amax());
        worst[4] = worst[4].max((shifted.basis() - f.basis()).amax());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst[0] < 1e-10
        && worst[1] < 1e-10
        && worst[2] < 1e-10
        && worst[3] < 1e-12
        && worst[4] < 1e-12
        && oracle_err < 1e-12
        && secs < 5.0;
    outcome(
        pass,
        format!(
            "1000 triples: unit {:.1e}, orthogonal {:.1e}, det {:.1e}, rotation {:.1e}, translation {:.1e}, oracle {:.1e}, {secs:.2} s",
            worst[0], worst[1], worst[2], worst[3], worst[4], oracle_err
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. octant classification

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for i in 0..100_000 {
        let mut c = [0.0; 3];
        for v in &mut c {
            *v = rng.random_range(-1.0..1.0);
        }
        // exercise the zero boundary
        if i % 10 == 0 {
            c[i / 10 % 3] = 0.0;
        }
        let expected = format!(
            "{} {} {}",
            if c[2] < 0.0 { "Inf." } else { "Sup." },
            if c[1] < 0.0 { "Post." } else { "Ant." },
            if c[0] < 0.0 { "Contra." } else { "Ipsil." },
        );
        if Octant::classify(&Vector3::from(c)).name() != expected {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100000 points, {mismatches} mismatches"))
}

// ---------------------------------------------------------------------------
// 4. loss values

fn criterion_4() -> Outcome {
    let a = fitter::huber(0.05, 0.1);
    let b = fitter::huber(0.2, 0.1);
    // the decimal literals are not representable, so allow rounding only
    let exact = |x: f64, want: f64| (x - want).abs() <= 2.0 * f64::EPSILON * want;
    let cfg = FitConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let l3: f64 = rng.random_range(0.0..100.0);
        let l2: f64 = rng.random_range(0.0..1000.0);
        let want = 1.0 * l3 + 0.1 * l2;
        worst = worst.max((fitter::weighted_total(l3, l2, &cfg) - want).abs());
    }
    let example = fitter::weighted_total(2.0, 10.0, &cfg);
    let pass = exact(a, 0.00125)
        && exact(b, 0.015)
        && cfg.lambda_3d == 1.0
        && cfg.lambda_2d == 0.1
        && worst < 1e-12
        && (example - 3.0).abs() < 1e-12;
    outcome(
        pass,
        format!("huber {a:e}, {b:e}; weighted sum worst error {worst:.1e}; (2, 10) -> {example}"),
    )
}

// ---------------------------------------------------------------------------
// 5. gradient correctness

fn criterion_5() -> Outcome {
    let spec = SkeletonSpec::default_arm();
    let cams = cameras();
    let mut script = TrialScript::all_octants(5);
    for d in &mut script.reach {
        d.sweeps = 1;
        d.duration = 0.5;
    }
    let trial = generate_trial(&spec, &script, &cams).unwrap();
    let data = TrialData {
        name: "t".into(),
        keypoints3d: Some(trial.clean.clone()),
        views: vec![CameraView {
            camera: cams[0].1.clone(),
            pixels: trial.views[0].pixels.clone(),
        }],
    };
    let cfg = FitConfig {
        samples_per_trial: 24,
        ..FitConfig::default()
    };
    let problem = FitProblem::new(&spec, &[data], &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = problem.init_params(&mut rng);
    for s in &mut params.body.scales {
        *s = rng.random_range(0.9..1.1);
    }
    for o in &mut params.body.offsets {
        *o = Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02));
    }
    let samples = problem.sample(&mut rng);
    let (_, grad) = problem.loss_and_grad(&params, &samples);
    let base = problem.flatten(&params);
    let total = |flat: &[f64]| {
        let mut p = params.clone();
        problem.unflatten(&mut p, flat);
        problem.total_loss(&p, &samples).total
    };

    let h = 1e-5;
    let slices = 120;
    let mut worst = 0.0f64;
    let mut passed = 0;
    for _ in 0..slices {
        // random 32-parameter slice, random direction within it
        let idx: Vec<usize> = (0..32).map(|_| rng.random_range(0..base.len())).collect();
        let dir: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut up = base.clone();
        let mut dn = base.clone();
        let mut analytic = 0.0;
        for (&i, &d) in idx.iter().zip(&dir) {
            up[i] += h * d / norm;
            dn[i] -= h * d / norm;
            analytic += grad[i] * d / norm;
        }
        let numeric = (total(&up) - total(&dn)) / (2.0 * h);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12);
        worst = worst.max(rel);
        if rel < 1e-4 {
            passed += 1;
        }
    }
    outcome(
        passed == slices,
        format!("{passed}/{slices} slices within 1e-4, worst relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 6. fit recovery

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let spec = SkeletonSpec::default_arm();
    let cams = cameras();
    let mut script = TrialScript::all_octants(1);
    for d in &mut script.reach {
        d.sweeps = 2;
    }
    let trial = generate_trial(&spec, &script, &cams).unwrap();
    let frontal = trial.view("frontal").unwrap();
    let data = TrialData {
        name: "recovery".into(),
        keypoints3d: Some(trial.clean.clone()),
        views: vec![CameraView {
            camera: frontal.camera.clone(),
            pixels: frontal.pixels.clone(),
        }],
    };
    let cfg = FitConfig {
        iterations: 2000,
        seed: 6,
        ..FitConfig::default()
    };
    let result = fitter::fit(&spec, &[data], &cfg).unwrap();
    let rec = &result.trials[0];
    let (mean, _) = keypoint_errors(&rec.keypoints, &trial.clean).unwrap();
    let angle = joint_angle_error_deg(&spec, &rec.dofs, &trial.dofs).unwrap();

    let map = LandmarkMap::default();
    let opts = ScoreOptions::default();
    let truth = score_workspace(&local_wrist_trajectory(&trial.clean, &map).unwrap(), &opts, 6).unwrap();
    let fitted = score_workspace(&local_wrist_trajectory(&rec.keypoints, &map).unwrap(), &opts, 6).unwrap();
    let score_gap = Octant::ANALYZED
        .iter()
        .map(|&o| (fitted.percent(o).unwrap() - truth.percent(o).unwrap()).abs())
        .fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        mean < 0.01 && angle < 5.0 && score_gap < 2.0 && secs < 600.0,
        format!(
            "{} frames: keypoint error {:.2} mm, joint-angle error {angle:.2} deg, worst octant score gap {score_gap:.2} pp, {secs:.0} s",
            trial.clean.len(),
            mean * 1000.0
        ),
    )
}

// ---------------------------------------------------------------------------
// CLI helpers

fn uerw(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uerw"))
        .args(args)
        .output()
        .expect("run uerw")
}

fn uerw_ok(args: &[&str]) -> Result<(), String> {
    let out = uerw(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`uerw {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SCRIPT: &str = r#"
name = "sweep"
seed = 7

[[reach]]
octant = "Sup. Ant. Ipsil."
sweeps = 2
duration = 1.5

[[reach]]
octant = "Inf. Ant. Contra."
sweeps = 2
duration = 1.5

[[reach]]
octant = "Sup. Post. Ipsil."
sweeps = 1
duration = 1.0

[noise]
keypoint_sigma = 0.005
depth_sigma = { frontal = 0.03, offset = 0.03 }
"#;

// ---------------------------------------------------------------------------
// 7. zero-noise agreement

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().map(String::from).zip(r.iter().map(String::from)).collect()
        })
        .collect()
}

fn criterion_7(dir: &Path) -> Result<Outcome, String> {
    // library path: the clean stream against itself
    let spec = SkeletonSpec::default_arm();
    let trial = generate_trial(&spec, &TrialScript::all_octants(7), &cameras()).unwrap();
    let wrist = local_wrist_trajectory(&trial.clean, &LandmarkMap::default()).unwrap();
    let seq = octant_sequence(&wrist);
    let report = agreement(&seq, &seq).unwrap();
    let lib_ok = report
        .octants
        .iter()
        .all(|o| o.frames == 0 || o.agreement_rate() == Some(100.0));
    let occupied = report.octants.iter().filter(|o| o.frames > 0).count();
    let ws = score_workspace(&wrist, &ScoreOptions::default(), 0).unwrap();
    let pairs: Vec<(f64, f64)> = Octant::ANALYZED
        .iter()
        .map(|&o| (ws.percent(o).unwrap(), ws.percent(o).unwrap()))
        .collect();
    let ba = bland_altman(&pairs).unwrap();
    let lib_ok = lib_ok && ba.mean_difference == 0.0 && ba.sd == 0.0;

    // CLI path
    let script = dir.join("clean.toml");
    std::fs::write(&script, SCRIPT.split("[noise]").next().unwrap()).unwrap();
    let synth = dir.join("c7_synth");
    uerw_ok(&["synth", "--script", p(&script), "--out-dir", p(&synth)])?;
    let truth = synth.join("truth_keypoints.csv");
    let cmp = dir.join("c7_compare");
    uerw_ok(&[
        "compare",
        "--reference",
        p(&truth),
        "--test",
        p(&truth),
        "--reference-landmarks",
        "keypoints",
        "--out-dir",
        p(&cmp),
    ])?;
    let agree = read_csv(&cmp.join("agreement.csv"));
    let mut frames: BTreeMap<String, usize> = BTreeMap::new();
    let mut cli_ok = true;
    for row in &agree {
        if row["metric"] == "frames" {
            frames.insert(row["octant"].clone(), row["value"].parse().unwrap());
        }
    }
    for row in &agree {
        if row["metric"] == "agreement" && frames[&row["octant"]] > 0 {
            cli_ok &= row["value"].parse::<f64>().unwrap() == 100.0;
        }
    }
    let ba_rows = read_csv(&cmp.join("bland_altman.csv"));
    cli_ok &= !ba_rows.is_empty()
        && ba_rows
            .iter()
            .all(|r| r["mean_difference"].parse::<f64>().unwrap() == 0.0);
    Ok(outcome(
        lib_ok && cli_ok,
        format!(
            "{occupied} occupied octants at 100%, Bland-Altman mean {} (library), CLI tables {}",
            ba.mean_difference,
            if cli_ok { "agree" } else { "disagree" }
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. depth-noise error anatomy

fn criterion_8() -> Outcome {
    let spec = SkeletonSpec::default_arm();
    let cams = cameras();
    let map = LandmarkMap::default();
    let posterior = [Octant::new(true, false, true), Octant::new(false, false, true)];
    let contra = [Octant::new(true, true, false), Octant::new(false, true, false)];
    let sac = Octant::new(true, true, false);
    let seeds = 20;
    let (mut a_ok, mut b_ml_ok, mut b_bias_ok) = (0, 0, 0);
    let mut bias_sum = 0.0;
    for seed in 0..seeds {
        // reaches held at a similar distance in every octant, with extra
        // cross-body sweeps, so every octant has targets near the sphere
        let mut script = TrialScript::all_octants(seed);
        script.reach = Octant::ANALYZED
            .iter()
            .map(|&octant| {
                let sweeps = if octant == sac { 12 } else { 4 };
                ReachDirective {
                    octant,
                    sweeps,
                    duration: 0.7 * sweeps as f64,
                    min_reach: 0.7,
                    max_reach: Some(0.8),
                }
            })
            .collect();
        script.noise.depth_sigma.insert("frontal".into(), 0.05);
        script.noise.depth_sigma.insert("offset".into(), 0.05);
        let trial = generate_trial(&spec, &script, &cams).unwrap();
        let ref_wrist = local_wrist_trajectory(&trial.clean, &map).unwrap();
        let ref_seq = octant_sequence(&ref_wrist);
        let ref_ws = score_workspace(&ref_wrist, &ScoreOptions::default(), seed).unwrap();

        let view = |name: &str| {
            let w = local_wrist_trajectory(&trial.view(name).unwrap().keypoints3d, &map).unwrap();
            let r = agreement(&ref_seq, &octant_sequence(&w)).unwrap();
            let ws = score_workspace(&w, &ScoreOptions::default(), seed).unwrap();
            (r, ws)
        };
        let (front, _) = view("frontal");
        let (off, off_ws) = view("offset");

        let (ml, ap, si) = posterior.iter().fold((0, 0, 0), |acc, &o| {
            let g = front.get(o);
            (acc.0 + g.ml_errors, acc.1 + g.ap_errors, acc.2 + g.si_errors)
        });
        if ap > ml && ap > si {
            a_ok += 1;
        }
        let contra_ml = |r: &uerw::agreement::AgreementReport| {
            let e: usize = contra.iter().map(|&o| r.get(o).ml_errors).sum();
            let n: usize = contra.iter().map(|&o| r.get(o).frames).sum();
            e as f64 / n as f64
        };
        if contra_ml(&off) > contra_ml(&front) {
            b_ml_ok += 1;
        }
        let bias = off_ws.percent(sac).unwrap() - ref_ws.percent(sac).unwrap();
        bias_sum += bias;
        if bias < 0.0 {
            b_bias_ok += 1;
        }
    }
    let need = (0.8 * seeds as f64).ceil() as usize;
    outcome(
        a_ok >= need && b_ml_ok >= need && b_bias_ok >= need,
        format!(
            "{seeds} seeds: frontal posterior AP dominant {a_ok}, offset contralateral ML above frontal {b_ml_ok}, offset Sup. Ant. Contra. bias negative {b_bias_ok} (mean {:.2} pp)",
            bias_sum / seeds as f64
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. agreement formulas

fn criterion_9() -> Outcome {
    let o = Octant::new;
    let spi = Some(o(true, false, true));
    let sai = Some(o(true, true, true));
    let iac = Some(o(false, true, false));
    let ipc = Some(o(false, false, false));

    // worked example: one AP disagreement in ten posterior frames
    let reference = vec![spi; 10];
    let mut test = reference.clone();
    test[3] = sai;
    let r = agreement(&reference, &test).unwrap();
    let g = r.get(o(true, false, true));
    let mut ok = g.agreement_rate() == Some(90.0)
        && g.ap_rate() == Some(10.0)
        && g.ml_rate() == Some(0.0)
        && g.si_rate() == Some(0.0);

    // scripted schedule: 20 reference frames in Sup. Ant. Ipsil.
    //   4 frames off on SI only, 2 on ML+AP, 1 on all three, 13 agree
    let mut reference = vec![sai; 20];
    let mut test = reference.clone();
    for t in &mut test[0..4] {
        *t = Some(o(false, true, true));
    }
    for t in &mut test[4..6] {
        *t = Some(o(true, false, false));
    }
    test[6] = ipc;
    // plus missing frames on either side, which are excluded
    reference.push(None);
    test.push(sai);
    reference.push(iac);
    test.push(None);
    let r = agreement(&reference, &test).unwrap();
    let g = r.get(o(true, true, true));
    let pct = |k: f64| Some(100.0 * k / 20.0);
    ok &= g.frames == 20
        && g.agreement_rate() == pct(13.0)
        && g.si_rate() == pct(5.0)
        && g.ml_rate() == pct(3.0)
        && g.ap_rate() == pct(3.0)
        && r.excluded_frames == 2
        && r.get(o(false, true, false)).frames == 0;
    outcome(
        ok,
        format!(
            "worked AP example 90% / 10%; schedule agreement {:?}, ML {:?}, AP {:?}, SI {:?}",
            g.agreement_rate(),
            g.ml_rate(),
            g.ap_rate(),
            g.si_rate()
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

fn run_all_commands(dir: &Path, script: &Path) -> Result<Vec<PathBuf>, String> {
    let synth = dir.join("synth");
    uerw_ok(&["synth", "--script", p(script), "--seed", "11", "--out-dir", p(&synth)])?;
    let truth = synth.join("truth_keypoints.csv");
    let noisy = synth.join("frontal_keypoints3d.csv");
    let score = dir.join("score");
    uerw_ok(&["score", "--trajectory", p(&truth), "--system", "truth", "--seed", "3", "--out-dir", p(&score)])?;
    let compare = dir.join("compare");
    uerw_ok(&[
        "compare",
        "--reference",
        p(&truth),
        "--test",
        p(&noisy),
        "--reference-landmarks",
        "keypoints",
        "--seed",
        "3",
        "--out-dir",
        p(&compare),
    ])?;
    let fit = dir.join("fit");
    uerw_ok(&[
        "fit",
        "--bundle",
        p(&synth.join("bundle.toml")),
        "--iterations",
        "40",
        "--seed",
        "5",
        "--out-dir",
        p(&fit),
    ])?;
    let refit = dir.join("score_fit");
    uerw_ok(&[
        "score",
        "--trajectory",
        p(&fit.join("sweep").join("reconstructed.csv")),
        "--system",
        "fit",
        "--seed",
        "3",
        "--out-dir",
        p(&refit),
    ])?;
    let report = dir.join("report");
    uerw_ok(&[
        "report",
        "--workspace",
        p(&score.join("workspace.csv")),
        p(&refit.join("workspace.csv")),
        p(&compare.join("workspace.csv")),
        "--reference",
        "truth",
        "--out-dir",
        p(&report),
    ])?;
    let mut files = Vec::new();
    collect(dir, dir, &mut files);
    files.sort();
    Ok(files)
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

fn criterion_10(dir: &Path) -> Result<Outcome, String> {
    let script = dir.join("script.toml");
    std::fs::write(&script, SCRIPT).unwrap();
    let (a, b) = (dir.join("run_a"), dir.join("run_b"));
    let files_a = run_all_commands(&a, &script)?;
    let files_b = run_all_commands(&b, &script)?;
    if files_a != files_b {
        return Ok(outcome(false, "the two runs wrote different file sets"));
    }
    let csvs: Vec<_> = files_a.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")).collect();
    let differing: Vec<String> = files_a
        .iter()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    // manifests record input paths, which name each run's own directory
    let csv_diff = differing.iter().filter(|f| f.ends_with(".csv")).count();
    let other = differing.iter().filter(|f| !f.ends_with(".csv") && !f.ends_with("manifest.json")).count();
    Ok(outcome(
        csv_diff == 0 && other == 0 && csvs.len() >= 10,
        format!(
            "6 commands twice: {} CSV files, {csv_diff} differ; {} of {} files differ, {other} of them not manifests",
            csvs.len(),
            differing.len(),
            files_a.len()
        ),
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let lift = |r: Result<Outcome, String>| r.unwrap_or_else(|e| outcome(false, e));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("oracle equality", Box::new(criterion_1)),
        ("frame geometry", Box::new(criterion_2)),
        ("octant classification", Box::new(criterion_3)),
        ("loss values", Box::new(criterion_4)),
        ("gradient correctness", Box::new(criterion_5)),
        ("fit recovery", Box::new(criterion_6)),
        ("zero-noise agreement", Box::new(|| lift(criterion_7(tmp.path())))),
        ("depth-noise error anatomy", Box::new(criterion_8)),
        ("agreement formulas", Box::new(criterion_9)),
        ("CLI determinism", Box::new(|| lift(criterion_10(tmp.path())))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
