//! Frame-level octant agreement between a reference and a test system, and
//! Bland–Altman statistics on paired percentages.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::workspace::Octant;

/// Per-frame octant labels of one system; `None` where the wrist is missing.
pub type OctantSequence = Vec<Option<Octant>>;

pub fn octant_sequence(wrist_local: &[Option<Vector3<f64>>]) -> OctantSequence {
    wrist_local.iter().map(|p| p.as_ref().map(Octant::classify)).collect()
}

/// Frame tallies for one reference octant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OctantAgreement {
    pub octant: Octant,
    /// Frames where both systems have a label and the reference is in `octant`.
    pub frames: usize,
    pub agreements: usize,
    /// Disagreeing frames whose labels differ in sign on each axis.
    pub ml_errors: usize,
    pub ap_errors: usize,
    pub si_errors: usize,
}

fn rate(count: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * count as f64 / total as f64)
}

impl OctantAgreement {
    pub fn disagreements(&self) -> usize {
        self.frames - self.agreements
    }

    /// `None` when the reference never occupies the octant.
    pub fn agreement_rate(&self) -> Option<f64> {
        rate(self.agreements, self.frames)
    }

    pub fn disagreement_rate(&self) -> Option<f64> {
        rate(self.disagreements(), self.frames)
    }

    pub fn ml_rate(&self) -> Option<f64> {
        rate(self.ml_errors, self.frames)
    }

    pub fn ap_rate(&self) -> Option<f64> {
        rate(self.ap_errors, self.frames)
    }

    pub fn si_rate(&self) -> Option<f64> {
        rate(self.si_errors, self.frames)
    }
}

/// Agreement and directional tallies for all eight reference octants, in
/// [`Octant::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub octants: Vec<OctantAgreement>,
    /// Frames skipped because either system had no label.
    pub excluded_frames: usize,
}

impl AgreementReport {
    pub fn get(&self, octant: Octant) -> &OctantAgreement {
        self.octants
            .iter()
            .find(|o| o.octant == octant)
            .expect("report covers every octant")
    }

    /// Adds another report's tallies (pooling trials).
    pub fn merge(&mut self, other: &AgreementReport) {
        for (a, b) in self.octants.iter_mut().zip(&other.octants) {
            a.frames += b.frames;
            a.agreements += b.agreements;
            a.ml_errors += b.ml_errors;
            a.ap_errors += b.ap_errors;
            a.si_errors += b.si_errors;
        }
        self.excluded_frames += other.excluded_frames;
    }

    pub fn empty() -> Self {
        AgreementReport {
            octants: Octant::ALL
                .iter()
                .map(|&octant| OctantAgreement {
                    octant,
                    frames: 0,
                    agreements: 0,
                    ml_errors: 0,
                    ap_errors: 0,
                    si_errors: 0,
                })
                .collect(),
            excluded_frames: 0,
        }
    }
}

/// Tallies agreement per reference octant. A disagreeing frame counts once
/// on every axis where the two labels differ.
pub fn agreement(reference: &[Option<Octant>], test: &[Option<Octant>]) -> Result<AgreementReport> {
    if reference.len() != test.len() {
        return Err(Error::Shape(format!(
            "reference has {} frames, test has {}",
            reference.len(),
            test.len()
        )));
    }
    let mut report = AgreementReport::empty();
    for (r, t) in reference.iter().zip(test) {
        let (Some(r), Some(t)) = (r, t) else {
            report.excluded_frames += 1;
            continue;
        };
        let slot = report
            .octants
            .iter_mut()
            .find(|o| o.octant == *r)
            .expect("all octants present");
        slot.frames += 1;
        if r == t {
            slot.agreements += 1;
            continue;
        }
        slot.ml_errors += (r.ipsilateral != t.ipsilateral) as usize;
        slot.ap_errors += (r.anterior != t.anterior) as usize;
        slot.si_errors += (r.superior != t.superior) as usize;
    }
    Ok(report)
}

/// Like [`agreement`], after checking that both sequences share timestamps.
pub fn agreement_timed(
    ref_times: &[f64],
    reference: &[Option<Octant>],
    test_times: &[f64],
    test: &[Option<Octant>],
) -> Result<AgreementReport> {
    if ref_times.len() != reference.len() || test_times.len() != test.len() {
        return Err(Error::Shape("timestamps and labels differ in length".into()));
    }
    if ref_times.len() != test_times.len() {
        return Err(Error::Shape(format!(
            "reference has {} frames, test has {}",
            ref_times.len(),
            test_times.len()
        )));
    }
    if let Some(i) = ref_times
        .iter()
        .zip(test_times)
        .position(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::data(Some(i + 1), "reference and test timestamps differ"));
    }
    agreement(reference, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlandAltman {
    pub n: usize,
    /// Mean of test − reference.
    pub mean_difference: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    /// Limits of agreement, mean ± 1.96·sd.
    pub lower_limit: f64,
    pub upper_limit: f64,
}

pub const LOA_MULTIPLIER: f64 = 1.96;

/// Bland–Altman statistics on `(test, reference)` pairs.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    if pairs.len() < 2 {
        return Err(Error::data(
            None,
            format!("Bland–Altman needs at least 2 pairs, got {}", pairs.len()),
        ));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::data(None, "non-finite value in Bland–Altman pairs"));
    }
    let n = pairs.len() as f64;
    let d: Vec<f64> = pairs.iter().map(|(t, r)| t - r).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    Ok(BlandAltman {
        n: pairs.len(),
        mean_difference: mean,
        sd,
        lower_limit: mean - LOA_MULTIPLIER * sd,
        upper_limit: mean + LOA_MULTIPLIER * sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(s: bool, a: bool, i: bool) -> Option<Octant> {
        Some(Octant::new(s, a, i))
    }

    #[test]
    fn worked_ap_example() {
        let spi = o(true, false, true);
        let sai = o(true, true, true);
        let reference = vec![spi; 10];
        let mut test = reference.clone();
        test[3] = sai;
        let r = agreement(&reference, &test).unwrap();
        let slot = r.get(spi.unwrap());
        assert_eq!(slot.agreement_rate(), Some(90.0));
        assert_eq!(slot.ap_rate(), Some(10.0));
        assert_eq!(slot.ml_rate(), Some(0.0));
        assert_eq!(slot.si_rate(), Some(0.0));
        assert_eq!(r.get(sai.unwrap()).agreement_rate(), None);
    }

    #[test]
    fn three_of_four() {
        let a = o(true, true, true);
        let b = o(false, true, true);
        let r = agreement(&[a, a, a, a], &[a, a, a, b]).unwrap();
        assert_eq!(r.get(a.unwrap()).agreement_rate(), Some(75.0));
        assert_eq!(r.get(a.unwrap()).si_rate(), Some(25.0));
    }

    #[test]
    fn missing_frames_excluded() {
        let a = o(true, true, true);
        let b = o(true, true, false);
        let r = agreement(&[a, None, a, a], &[a, a, None, b]).unwrap();
        let slot = r.get(a.unwrap());
        assert_eq!(slot.frames, 2);
        assert_eq!(slot.agreements, 1);
        assert_eq!(slot.ml_errors, 1);
        assert_eq!(r.excluded_frames, 2);
    }

    #[test]
    fn length_mismatch() {
        assert!(agreement(&[None], &[]).is_err());
        assert!(agreement_timed(&[0.0], &[None], &[0.5], &[None]).is_err());
    }

    #[test]
    fn bland_altman_examples() {
        let r = bland_altman(&[(1.0, 3.0), (2.0, 2.0), (5.0, 3.0)]).unwrap();
        assert_eq!(r.mean_difference, 0.0);
        assert!((r.sd - 2.0).abs() < 1e-15);
        assert!((r.lower_limit + 3.92).abs() < 1e-14);
        assert!((r.upper_limit - 3.92).abs() < 1e-14);
        let z = bland_altman(&[(4.0, 4.0), (7.0, 7.0)]).unwrap();
        assert_eq!((z.mean_difference, z.sd, z.lower_limit, z.upper_limit), (0.0, 0.0, 0.0, 0.0));
        assert!(bland_altman(&[(1.0, 2.0)]).is_err());
    }
}
