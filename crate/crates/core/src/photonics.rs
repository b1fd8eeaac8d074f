//! Hybrid time-bin/polarization photon state and the optical chain:
//! unbalanced interferometer, switchable half-wave plate, satellite phase,
//! and the closed-form detection probabilities.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhotonicsError {
    #[error("input state is not normalized: |ψ|² = {0}")]
    NotNormalized(f64),
    #[error("invalid imperfection model: {0}")]
    InvalidImperfections(String),
}

const NORM_TOL: f64 = 1e-12;

/// Detector label, the ± of the diagonal-basis measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    Plus,
    Minus,
}

impl Detector {
    pub const ALL: [Detector; 2] = [Detector::Plus, Detector::Minus];

    pub fn symbol(&self) -> char {
        match self {
            Detector::Plus => '+',
            Detector::Minus => '-',
        }
    }
}

/// Arrival slot after the return pass through the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Early,
    Central,
    Late,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Early, Slot::Central, Slot::Late];

    /// Arrival offset relative to the central slot, in units of Δt.
    pub fn offset_units(&self) -> f64 {
        match self {
            Slot::Early => -1.0,
            Slot::Central => 0.0,
            Slot::Late => 1.0,
        }
    }
}

/// Photon state over the ordered basis (early,H), (early,V), (late,H), (late,V).
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonState {
    pub amplitudes: [Complex64; 4],
}

impl PhotonState {
    pub const EARLY_H: usize = 0;
    pub const EARLY_V: usize = 1;
    pub const LATE_H: usize = 2;
    pub const LATE_V: usize = 3;

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_norm(&self) -> Result<(), PhotonicsError> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(PhotonicsError::NotNormalized(n));
        }
        Ok(())
    }
}

/// State after the return pass, over (early, central, late) ⊗ (H, V).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnState {
    /// Ordered (early,H), (early,V), (central,H), (central,V), (late,H), (late,V).
    pub amplitudes: [Complex64; 6],
}

impl ReturnState {
    fn index(slot: Slot, vertical: bool) -> usize {
        let s = match slot {
            Slot::Early => 0,
            Slot::Central => 1,
            Slot::Late => 2,
        };
        2 * s + vertical as usize
    }

    /// Probability of a click in `det` within `slot`: |⟨±|ψ_slot⟩|².
    pub fn click_probability(&self, det: Detector, slot: Slot) -> f64 {
        let h = self.amplitudes[Self::index(slot, false)];
        let v = self.amplitudes[Self::index(slot, true)];
        let sign = match det {
            Detector::Plus => 1.0,
            Detector::Minus => -1.0,
        };
        ((h + sign * v) / 2f64.sqrt()).norm_sqr()
    }
}

/// Phenomenological degradations of the ideal chain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImperfectionModel {
    /// Interference contrast degradation 𝒱₀ ∈ [0, 1].
    pub visibility_factor: f64,
    /// Fraction of the b=1 probability routed to the lateral peaks.
    pub whichpath_purity: f64,
    /// Relative trim of the + detector efficiency (applied at detection stage).
    pub eta_plus: f64,
    /// Relative trim of the − detector efficiency (applied at detection stage).
    pub eta_minus: f64,
}

impl ImperfectionModel {
    pub fn ideal() -> Self {
        Self {
            visibility_factor: 1.0,
            whichpath_purity: 1.0,
            eta_plus: 1.0,
            eta_minus: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PhotonicsError> {
        let unit = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(PhotonicsError::InvalidImperfections(format!(
                    "{name} = {v} outside [0, 1]"
                )))
            } else {
                Ok(())
            }
        };
        unit("visibility_factor", self.visibility_factor)?;
        unit("whichpath_purity", self.whichpath_purity)?;
        for (name, v) in [("eta_plus", self.eta_plus), ("eta_minus", self.eta_minus)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(PhotonicsError::InvalidImperfections(format!(
                    "{name} = {v} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ImperfectionModel {
    fn default() -> Self {
        Self::ideal()
    }
}

/// Click probabilities per (detector, slot).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionTable {
    /// Row-major over Detector::ALL × Slot::ALL.
    probabilities: [f64; 6],
}

impl DetectionTable {
    fn index(det: Detector, slot: Slot) -> usize {
        let d = match det {
            Detector::Plus => 0,
            Detector::Minus => 1,
        };
        let s = match slot {
            Slot::Early => 0,
            Slot::Central => 1,
            Slot::Late => 2,
        };
        3 * d + s
    }

    pub fn get(&self, det: Detector, slot: Slot) -> f64 {
        self.probabilities[Self::index(det, slot)]
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// Draw one (detector, slot) outcome given a uniform variate in [0, 1).
    pub fn draw(&self, u: f64) -> (Detector, Slot) {
        let mut acc = 0.0;
        for det in Detector::ALL {
            for slot in Slot::ALL {
                acc += self.get(det, slot);
                if u < acc {
                    return (det, slot);
                }
            }
        }
        (Detector::Minus, Slot::Late)
    }
}

/// First pass through the interferometer: H takes the short arm into the
/// early bin, V takes the long arm into the late bin.
pub fn mzi_forward(input: [Complex64; 2]) -> Result<PhotonState, PhotonicsError> {
    let n: f64 = input.iter().map(|a| a.norm_sqr()).sum();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(PhotonicsError::NotNormalized(n));
    }
    let mut amplitudes = [Complex64::new(0.0, 0.0); 4];
    amplitudes[PhotonState::EARLY_H] = input[0];
    amplitudes[PhotonState::LATE_V] = input[1];
    Ok(PhotonState { amplitudes })
}

/// Switchable half-wave plate: identity when off (b = 0), H↔V swap within
/// each time-bin when on (b = 1).
pub fn shwp_apply(state: &PhotonState, b: u8) -> PhotonState {
    if b == 0 {
        return state.clone();
    }
    let a = &state.amplitudes;
    PhotonState {
        amplitudes: [
            a[PhotonState::EARLY_V],
            a[PhotonState::EARLY_H],
            a[PhotonState::LATE_V],
            a[PhotonState::LATE_H],
        ],
    }
}

/// Kinematic phase imprinted by the moving retroreflector on the late bin.
pub fn satellite_phase(state: &PhotonState, phi: f64) -> PhotonState {
    let rot = Complex64::from_polar(1.0, phi);
    let a = &state.amplitudes;
    PhotonState {
        amplitudes: [
            a[PhotonState::EARLY_H],
            a[PhotonState::EARLY_V],
            a[PhotonState::LATE_H] * rot,
            a[PhotonState::LATE_V] * rot,
        ],
    }
}

/// Return pass through the interferometer toward the monitored exit port.
///
/// Returning V takes the short arm (no delay); returning H takes the long arm
/// and is delayed by Δt, shifting its slot by one. The early bin therefore
/// maps to {early (V), central (H)} and the late bin to {central (V), late (H)}.
pub fn mzi_return(state: &PhotonState) -> ReturnState {
    let a = &state.amplitudes;
    let mut out = [Complex64::new(0.0, 0.0); 6];
    out[ReturnState::index(Slot::Central, false)] = a[PhotonState::EARLY_H];
    out[ReturnState::index(Slot::Early, true)] = a[PhotonState::EARLY_V];
    out[ReturnState::index(Slot::Late, false)] = a[PhotonState::LATE_H];
    out[ReturnState::index(Slot::Central, true)] = a[PhotonState::LATE_V];
    ReturnState { amplitudes: out }
}

/// Closed-form click probabilities for one pulse.
///
/// For b = 0 the central slot carries P± = ½(1 ± 𝒱₀ cos φ). For b = 1 a
/// fraction `whichpath_purity` lands in the lateral peaks, split equally
/// between slots and detectors; the remainder leaks into the central slot
/// with a flat ± split. Detector-efficiency weighting is applied at the
/// detection stage, not here.
pub fn detection_table(phi: f64, b: u8, imperfections: &ImperfectionModel) -> DetectionTable {
    let mut probabilities = [0.0; 6];
    if b == 0 {
        let v = imperfections.visibility_factor;
        probabilities[DetectionTable::index(Detector::Plus, Slot::Central)] =
            0.5 * (1.0 + v * phi.cos());
        probabilities[DetectionTable::index(Detector::Minus, Slot::Central)] =
            0.5 * (1.0 - v * phi.cos());
    } else {
        let p = imperfections.whichpath_purity;
        for det in Detector::ALL {
            for slot in [Slot::Early, Slot::Late] {
                probabilities[DetectionTable::index(det, slot)] = p / 4.0;
            }
            probabilities[DetectionTable::index(det, Slot::Central)] = (1.0 - p) / 2.0;
        }
    }
    DetectionTable { probabilities }
}

/// Full matrix propagation of one pulse, used as the independent route to
/// the closed-form table: diagonal input, outward pass, satellite phase,
/// waveplate set to `b` on the return, second pass, ± projection per slot.
pub fn propagate_chain(phi: f64, b: u8) -> Result<DetectionTable, PhotonicsError> {
    let inv_sqrt2 = 1.0 / 2f64.sqrt();
    let plus = [
        Complex64::new(inv_sqrt2, 0.0),
        Complex64::new(inv_sqrt2, 0.0),
    ];
    let outgoing = mzi_forward(plus)?;
    outgoing.check_norm()?;
    let after_sat = satellite_phase(&outgoing, phi);
    let back = shwp_apply(&after_sat, b);
    back.check_norm()?;
    let returned = mzi_return(&back);
    let mut probabilities = [0.0; 6];
    for det in Detector::ALL {
        for slot in Slot::ALL {
            probabilities[DetectionTable::index(det, slot)] =
                returned.click_probability(det, slot);
        }
    }
    Ok(DetectionTable { probabilities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn forward_maps_polarization_to_bins() {
        let inv = 1.0 / 2f64.sqrt();
        let s = mzi_forward([c(inv, 0.0), c(inv, 0.0)]).unwrap();
        assert_abs_diff_eq!(s.amplitudes[PhotonState::EARLY_H].re, inv);
        assert_abs_diff_eq!(s.amplitudes[PhotonState::LATE_V].re, inv);
        assert_abs_diff_eq!(s.amplitudes[PhotonState::EARLY_V].norm(), 0.0);
        assert_abs_diff_eq!(s.amplitudes[PhotonState::LATE_H].norm(), 0.0);

        let h = mzi_forward([c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(h.amplitudes[PhotonState::EARLY_H].re, 1.0);

        // phase on V carried linearly
        let theta = 0.7;
        let v = mzi_forward([c(0.0, 0.0), Complex64::from_polar(1.0, theta)]).unwrap();
        assert_abs_diff_eq!(v.amplitudes[PhotonState::LATE_V].arg(), theta, epsilon = 1e-15);
    }

    #[test]
    fn forward_rejects_unnormalized_input() {
        assert!(mzi_forward([c(1.0, 0.0), c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn shwp_off_is_identity_and_on_is_involution() {
        let inv = 1.0 / 2f64.sqrt();
        let s = mzi_forward([c(inv, 0.0), c(0.0, inv)]).unwrap();
        assert_eq!(shwp_apply(&s, 0), s);
        let twice = shwp_apply(&shwp_apply(&s, 1), 1);
        assert_eq!(twice, s);
        // |early,H⟩ → |early,V⟩
        let h = mzi_forward([c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let swapped = shwp_apply(&h, 1);
        assert_abs_diff_eq!(swapped.amplitudes[PhotonState::EARLY_V].re, 1.0);
        assert_abs_diff_eq!(swapped.amplitudes[PhotonState::EARLY_H].norm(), 0.0);
    }

    #[test]
    fn satellite_phase_rotates_late_bin_only() {
        let inv = 1.0 / 2f64.sqrt();
        let s = mzi_forward([c(inv, 0.0), c(inv, 0.0)]).unwrap();
        assert_eq!(satellite_phase(&s, 0.0), s);
        let flipped = satellite_phase(&s, std::f64::consts::PI);
        assert_abs_diff_eq!(flipped.amplitudes[PhotonState::LATE_V].re, -inv, epsilon = 1e-15);
        assert_abs_diff_eq!(flipped.amplitudes[PhotonState::EARLY_H].re, inv);
        // additivity of phases
        let a = satellite_phase(&satellite_phase(&s, 0.3), 1.1);
        let b = satellite_phase(&s, 1.4);
        for k in 0..4 {
            assert_abs_diff_eq!(a.amplitudes[k].re, b.amplitudes[k].re, epsilon = 1e-15);
            assert_abs_diff_eq!(a.amplitudes[k].im, b.amplitudes[k].im, epsilon = 1e-15);
        }
    }

    #[test]
    fn unitarity_of_state_transforms() {
        let s = mzi_forward([c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        for b in [0u8, 1u8] {
            assert_abs_diff_eq!(shwp_apply(&s, b).norm_sqr(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(satellite_phase(&s, 2.13).norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn return_pass_slots() {
        let inv = 1.0 / 2f64.sqrt();
        // b=0 path: (|e,H⟩+|l,V⟩)/√2 recombines in the central slot
        let s0 = mzi_forward([c(inv, 0.0), c(inv, 0.0)]).unwrap();
        let r0 = mzi_return(&s0);
        let central: f64 = Detector::ALL
            .iter()
            .map(|&d| r0.click_probability(d, Slot::Central))
            .sum();
        assert_abs_diff_eq!(central, 1.0, epsilon = 1e-12);

        // b=1 path: (|e,V⟩+|l,H⟩)/√2 exits in the lateral slots only
        let s1 = shwp_apply(&s0, 1);
        let r1 = mzi_return(&s1);
        let mut lateral = 0.0;
        for d in Detector::ALL {
            assert_abs_diff_eq!(r1.click_probability(d, Slot::Central), 0.0);
            lateral += r1.click_probability(d, Slot::Early) + r1.click_probability(d, Slot::Late);
        }
        assert_abs_diff_eq!(lateral, 1.0, epsilon = 1e-12);

        // single component |early,V⟩ goes to a single slot
        let mut amplitudes = [c(0.0, 0.0); 4];
        amplitudes[PhotonState::EARLY_V] = c(1.0, 0.0);
        let early_only = mzi_return(&PhotonState { amplitudes });
        let p: f64 = Detector::ALL
            .iter()
            .map(|&d| early_only.click_probability(d, Slot::Early))
            .sum();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn detection_table_closed_form() {
        let ideal = ImperfectionModel::ideal();
        let t = detection_table(0.0, 0, &ideal);
        assert_abs_diff_eq!(t.get(Detector::Plus, Slot::Central), 1.0);
        assert_abs_diff_eq!(t.get(Detector::Minus, Slot::Central), 0.0);

        let degraded = ImperfectionModel {
            visibility_factor: 0.40,
            ..ImperfectionModel::ideal()
        };
        let t = detection_table(std::f64::consts::PI, 0, &degraded);
        assert_abs_diff_eq!(t.get(Detector::Plus, Slot::Central), 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(Detector::Minus, Slot::Central), 0.70, epsilon = 1e-12);

        let t1 = detection_table(1.2, 1, &ideal);
        for d in Detector::ALL {
            assert_abs_diff_eq!(t1.get(d, Slot::Early), 0.25);
            assert_abs_diff_eq!(t1.get(d, Slot::Late), 0.25);
            assert_abs_diff_eq!(t1.get(d, Slot::Central), 0.0);
        }
    }

    #[test]
    fn table_normalization_over_phi() {
        let imp = ImperfectionModel {
            visibility_factor: 0.7,
            whichpath_purity: 0.93,
            eta_plus: 1.0,
            eta_minus: 1.0,
        };
        for k in 0..100 {
            let phi = k as f64 * 0.091;
            for b in [0u8, 1u8] {
                let t = detection_table(phi, b, &imp);
                assert_abs_diff_eq!(t.total(), 1.0, epsilon = 1e-12);
            }
            let t0 = detection_table(phi, 0, &imp);
            assert_abs_diff_eq!(
                t0.get(Detector::Plus, Slot::Central) + t0.get(Detector::Minus, Slot::Central),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn closed_form_matches_matrix_propagation() {
        let ideal = ImperfectionModel::ideal();
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / 1000.0;
            for b in [0u8, 1u8] {
                let closed = detection_table(phi, b, &ideal);
                let propagated = propagate_chain(phi, b).unwrap();
                for d in Detector::ALL {
                    for s in Slot::ALL {
                        worst = worst.max((closed.get(d, s) - propagated.get(d, s)).abs());
                    }
                }
            }
        }
        assert!(worst < 1e-12, "max deviation {worst}");
    }

    #[test]
    fn draw_covers_table() {
        let imp = ImperfectionModel {
            whichpath_purity: 0.9,
            ..ImperfectionModel::ideal()
        };
        let t = detection_table(0.0, 1, &imp);
        let (_, slot) = t.draw(0.01);
        assert_eq!(slot, Slot::Early);
        let (det, _) = t.draw(0.999);
        assert_eq!(det, Detector::Minus);
    }
}
