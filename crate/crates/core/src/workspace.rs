//! Target sphere, octant classification and simulated target capture.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of targets on the sphere.
pub const DEFAULT_TARGET_COUNT: usize = 800;
/// Default proximity (m) at which a target counts as reached.
pub const DEFAULT_CAPTURE_RADIUS: f64 = 0.05;

/// One of the eight sign regions of the torso frame.
///
/// A component that is exactly zero counts as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Octant {
    pub superior: bool,
    pub anterior: bool,
    pub ipsilateral: bool,
}

impl Octant {
    pub const fn new(superior: bool, anterior: bool, ipsilateral: bool) -> Self {
        Octant {
            superior,
            anterior,
            ipsilateral,
        }
    }

    /// The six analyzed octants, in reporting order.
    pub const ANALYZED: [Octant; 6] = [
        Octant::new(true, true, true),
        Octant::new(true, true, false),
        Octant::new(true, false, true),
        Octant::new(false, true, true),
        Octant::new(false, true, false),
        Octant::new(false, false, true),
    ];

    /// All eight octants: the analyzed six followed by the two
    /// posterior-contralateral ones.
    pub const ALL: [Octant; 8] = [
        Octant::new(true, true, true),
        Octant::new(true, true, false),
        Octant::new(true, false, true),
        Octant::new(false, true, true),
        Octant::new(false, true, false),
        Octant::new(false, false, true),
        Octant::new(true, false, false),
        Octant::new(false, false, false),
    ];

    /// Classifies a torso-local (ML, AP, V) point by component signs.
    pub fn classify(p: &Vector3<f64>) -> Octant {
        Octant {
            ipsilateral: p.x >= 0.0,
            anterior: p.y >= 0.0,
            superior: p.z >= 0.0,
        }
    }

    /// Posterior-contralateral octants are excluded from the analysis.
    pub fn is_analyzed(&self) -> bool {
        self.anterior || self.ipsilateral
    }

    /// Abbreviated name such as `Sup. Ant. Ipsil.`.
    pub fn name(&self) -> &'static str {
        match (self.superior, self.anterior, self.ipsilateral) {
            (true, true, true) => "Sup. Ant. Ipsil.",
            (true, true, false) => "Sup. Ant. Contra.",
            (true, false, true) => "Sup. Post. Ipsil.",
            (true, false, false) => "Sup. Post. Contra.",
            (false, true, true) => "Inf. Ant. Ipsil.",
            (false, true, false) => "Inf. Ant. Contra.",
            (false, false, true) => "Inf. Post. Ipsil.",
            (false, false, false) => "Inf. Post. Contra.",
        }
    }

    /// Compact code: bit 0 ipsilateral, bit 1 anterior, bit 2 superior.
    pub fn code(&self) -> u8 {
        self.ipsilateral as u8 | (self.anterior as u8) << 1 | (self.superior as u8) << 2
    }

    pub fn from_code(code: u8) -> Option<Octant> {
        (code < 8).then(|| Octant::new(code & 4 != 0, code & 2 != 0, code & 1 != 0))
    }
}

impl fmt::Display for Octant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Octant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphabetic())
            .collect::<String>()
            .to_ascii_lowercase();
        Octant::ALL
            .iter()
            .copied()
            .find(|o| {
                let n: String = o
                    .name()
                    .chars()
                    .filter(|c| c.is_ascii_alphabetic())
                    .collect::<String>()
                    .to_ascii_lowercase();
                n == norm || n.replace("contra", "con") == norm
            })
            .ok_or_else(|| Error::Config(format!("unknown octant `{s}`")))
    }
}

impl Serialize for Octant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Octant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Targets in torso-local coordinates, all at distance `radius` from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSphere {
    radius: f64,
    targets: Vec<Vector3<f64>>,
    labels: Vec<Octant>,
}

impl TargetSphere {
    /// Fibonacci lattice with the polar axis along V. The seed only rotates
    /// the lattice about V.
    pub fn generate(radius: f64, n: usize, seed: u64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!(
                "target sphere radius must be positive, got {radius}"
            )));
        }
        if n < 8 {
            return Err(Error::Config(format!("need at least 8 targets, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let azimuth_offset = rng.random::<f64>() * 2.0 * PI;
        let golden_angle = PI * (3.0 - 5f64.sqrt());
        let targets: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = azimuth_offset + golden_angle * i as f64;
                let unit = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                unit.normalize() * radius
            })
            .collect();
        let labels = targets.iter().map(Octant::classify).collect();
        Ok(TargetSphere {
            radius,
            targets,
            labels,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn targets(&self) -> &[Vector3<f64>] {
        &self.targets
    }

    pub fn labels(&self) -> &[Octant] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Number of targets per octant, indexed like [`Octant::ALL`].
    pub fn octant_counts(&self) -> [usize; 8] {
        let mut counts = [0; 8];
        for label in &self.labels {
            let i = Octant::ALL.iter().position(|o| o == label).unwrap();
            counts[i] += 1;
        }
        counts
    }
}

/// Maximum distance of the wrist from the torso origin over present frames.
pub fn peak_reach(wrist_local: &[Option<Vector3<f64>>]) -> Result<f64> {
    wrist_local
        .iter()
        .flatten()
        .map(|p| p.norm())
        .reduce(f64::max)
        .ok_or_else(|| Error::data(None, "wrist trajectory has no present frames"))
}

/// Whether a wrist position captures a target. Shared by every capture
/// implementation so that boundary cases resolve identically.
#[inline]
pub fn within_capture(wrist: &Vector3<f64>, target: &Vector3<f64>, capture_radius: f64) -> bool {
    (wrist - target).norm_squared() <= capture_radius * capture_radius
}

/// Flags every target that some present frame comes within `capture_radius` of.
///
/// Targets are bucketed on a grid with cell size `capture_radius`, so each
/// frame only inspects the 27 cells around it.
pub fn simulate_capture(
    wrist_local: &[Option<Vector3<f64>>],
    sphere: &TargetSphere,
    capture_radius: f64,
) -> Result<Vec<bool>> {
    if !(capture_radius > 0.0 && capture_radius.is_finite()) {
        return Err(Error::Config(format!(
            "capture radius must be positive, got {capture_radius}"
        )));
    }
    let cell = |p: &Vector3<f64>| {
        (
            (p.x / capture_radius).floor() as i64,
            (p.y / capture_radius).floor() as i64,
            (p.z / capture_radius).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, t) in sphere.targets().iter().enumerate() {
        grid.entry(cell(t)).or_default().push(i);
    }
    let mut reached = vec![false; sphere.len()];
    let shell = sphere.radius() + capture_radius;
    for p in wrist_local.iter().flatten() {
        // conservative prune; the exact test below decides
        let n = p.norm();
        if n > shell + 1e-9 || n < sphere.radius() - capture_radius - 1e-9 {
            continue;
        }
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in ids {
                            if !reached[i] && within_capture(p, &sphere.targets()[i], capture_radius)
                            {
                                reached[i] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(reached)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OctantScore {
    pub octant: Octant,
    pub available: usize,
    pub reached: usize,
}

impl OctantScore {
    /// Percent of available targets reached; `None` when none are available.
    pub fn percent(&self) -> Option<f64> {
        (self.available > 0).then(|| 100.0 * self.reached as f64 / self.available as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceReport {
    pub peak_reach: f64,
    /// One entry per analyzed octant, in [`Octant::ANALYZED`] order.
    pub octants: Vec<OctantScore>,
}

impl WorkspaceReport {
    pub fn get(&self, octant: Octant) -> Option<&OctantScore> {
        self.octants.iter().find(|s| s.octant == octant)
    }

    pub fn percent(&self, octant: Octant) -> Option<f64> {
        self.get(octant).and_then(OctantScore::percent)
    }
}

/// Tallies reached flags per analyzed octant.
pub fn percent_reached(flags: &[bool], sphere: &TargetSphere) -> Result<WorkspaceReport> {
    if flags.len() != sphere.len() {
        return Err(Error::Shape(format!(
            "{} reached flags for {} targets",
            flags.len(),
            sphere.len()
        )));
    }
    let octants = Octant::ANALYZED
        .iter()
        .map(|&octant| {
            let mut score = OctantScore {
                octant,
                available: 0,
                reached: 0,
            };
            for (flag, label) in flags.iter().zip(sphere.labels()) {
                if *label == octant {
                    score.available += 1;
                    score.reached += *flag as usize;
                }
            }
            score
        })
        .collect();
    Ok(WorkspaceReport {
        peak_reach: sphere.radius(),
        octants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreOptions {
    pub n_targets: usize,
    pub capture_radius: f64,
    /// Static-trial peak reach; when absent the trial maximum is used.
    pub peak_reach: Option<f64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            n_targets: DEFAULT_TARGET_COUNT,
            capture_radius: DEFAULT_CAPTURE_RADIUS,
            peak_reach: None,
        }
    }
}

/// Peak reach, target generation, capture and tally in one call.
pub fn score_workspace(
    wrist_local: &[Option<Vector3<f64>>],
    options: &ScoreOptions,
    seed: u64,
) -> Result<WorkspaceReport> {
    let radius = match options.peak_reach {
        Some(r) => r,
        None => peak_reach(wrist_local)?,
    };
    let sphere = TargetSphere::generate(radius, options.n_targets, seed)?;
    let flags = simulate_capture(wrist_local, &sphere, options.capture_radius)?;
    percent_reached(&flags, &sphere)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octant_names_and_signs() {
        assert_eq!(
            Octant::classify(&Vector3::new(0.1, 0.1, 0.1)).name(),
            "Sup. Ant. Ipsil."
        );
        assert_eq!(
            Octant::classify(&Vector3::new(-0.1, 0.1, -0.1)).name(),
            "Inf. Ant. Contra."
        );
        assert_eq!(
            Octant::classify(&Vector3::zeros()),
            Octant::new(true, true, true)
        );
        let analyzed: Vec<_> = Octant::ALL.iter().filter(|o| o.is_analyzed()).collect();
        assert_eq!(analyzed.len(), 6);
        for o in Octant::ALL {
            assert_eq!(Octant::from_code(o.code()), Some(o));
            assert_eq!(o.name().parse::<Octant>().unwrap(), o);
        }
        assert_eq!(
            "Sup. Ant. Con.".parse::<Octant>().unwrap(),
            Octant::new(true, true, false)
        );
    }

    #[test]
    fn sphere_radius_and_scaling() {
        let s = TargetSphere::generate(1.0, 8, 0).unwrap();
        assert_eq!(s.len(), 8);
        for t in s.targets() {
            assert!((t.norm() - 1.0).abs() < 1e-12);
        }
        let a = TargetSphere::generate(0.7, 800, 3).unwrap();
        let b = TargetSphere::generate(1.4, 800, 3).unwrap();
        for (p, q) in a.targets().iter().zip(b.targets()) {
            assert_eq!(p * 2.0, *q);
        }
        assert!(TargetSphere::generate(0.0, 800, 0).is_err());
        assert!(TargetSphere::generate(-1.0, 800, 0).is_err());
    }

    #[test]
    fn octant_counts_near_uniform() {
        for seed in 0..20 {
            let s = TargetSphere::generate(1.0, 800, seed).unwrap();
            for c in s.octant_counts() {
                assert!((80..=120).contains(&c), "seed {seed}: count {c}");
            }
        }
    }

    #[test]
    fn peak_reach_examples() {
        let frames = vec![
            Some(Vector3::new(0.1, 0.0, 0.0)),
            None,
            Some(Vector3::new(0.0, 0.5, 0.0)),
            Some(Vector3::new(0.0, 0.0, 0.3)),
        ];
        assert_eq!(peak_reach(&frames).unwrap(), 0.5);
        assert_eq!(peak_reach(&[Some(Vector3::zeros())]).unwrap(), 0.0);
        assert!(peak_reach(&[None, None]).is_err());
        assert!(peak_reach(&[]).is_err());
    }

    #[test]
    fn capture_examples() {
        let s = TargetSphere::generate(1.0, 800, 1).unwrap();
        let flags = simulate_capture(&[Some(Vector3::zeros())], &s, 0.05).unwrap();
        assert!(flags.iter().all(|f| !f));

        let k = 123;
        let t = s.targets()[k];
        let near = t * (1.0 - 0.001);
        let flags = simulate_capture(&[Some(near), None], &s, 0.05).unwrap();
        let reached: Vec<usize> = (0..s.len()).filter(|&i| flags[i]).collect();
        // every lattice neighbour is further than 5 cm on a unit sphere with 800 points
        assert_eq!(reached, vec![k]);
        assert!(simulate_capture(&[], &s, 0.0).is_err());
    }

    #[test]
    fn percent_all_or_nothing() {
        let s = TargetSphere::generate(1.0, 800, 5).unwrap();
        let all = percent_reached(&vec![true; 800], &s).unwrap();
        let none = percent_reached(&vec![false; 800], &s).unwrap();
        for (a, n) in all.octants.iter().zip(&none.octants) {
            assert_eq!(a.percent(), Some(100.0));
            assert_eq!(n.percent(), Some(0.0));
        }
        let counts = s.octant_counts();
        let total: usize = all.octants.iter().map(|o| o.available).sum();
        assert_eq!(total, 800 - counts[6] - counts[7]);
        assert!(percent_reached(&[true], &s).is_err());
    }

    #[test]
    fn empty_octant_is_not_applicable() {
        let score = OctantScore {
            octant: Octant::ANALYZED[0],
            available: 0,
            reached: 0,
        };
        assert_eq!(score.percent(), None);
    }
}
