//! The 100 ms ranging-cycle protocol: shutter windows, the accepted
//! detection window τ, the two delayed choices per cycle, mapping of
//! detections to their governing bit, and light-cone verification of the
//! choice/reflection separation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbit::{OrbitError, PassTrack, SLR_PERIOD};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("round-trip time {rtt} s outside workable regime ({min} .. {max} s)")]
    RttOutOfRegime { rtt: f64, min: f64, max: f64 },
    #[error("detection epoch {t_det} s outside the receive window [{start}, {end}] s")]
    OutsideRxWindow { t_det: f64, start: f64, end: f64 },
    #[error("no cycles in the track span")]
    NoCycles,
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

/// Fixed protocol timing parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Cycle period between ranging pulses, s.
    pub cycle_period: f64,
    /// Shutter transition duration, s.
    pub t_trans: f64,
    /// Waveplate settling time after a choice, s.
    pub t_shwp: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            cycle_period: SLR_PERIOD,
            t_trans: 5e-3,
            t_shwp: 500e-6,
        }
    }
}

/// One ranging cycle with its shutter windows, choices and accepted window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub cycle_index: usize,
    /// Cycle start epoch, s.
    pub t_slr: f64,
    /// Round-trip time governing this cycle, s.
    pub rtt: f64,
    pub t_trans: f64,
    pub t_shwp: f64,
    pub cycle_period: f64,
    /// Bit governing detections between the first and second choice.
    pub b1: u8,
    /// Bit governing detections after the second choice.
    pub b2: u8,
}

/// Which of the two per-cycle choices governs a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    First,
    Second,
}

/// Outcome of mapping a detection epoch onto the cycle's choice segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitAssignment {
    Governed { bit: u8, which: Choice },
    /// Detection fell in a waveplate settling window; apparatus undefined.
    Discard,
}

/// A single choice event as recorded by the controller.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub cycle_index: usize,
    pub which: Choice,
    pub epoch: f64,
    pub bit: u8,
}

impl CycleSchedule {
    /// Transmit shutter open interval.
    pub fn tx_window(&self) -> (f64, f64) {
        (self.t_slr, self.t_slr + self.cycle_period / 2.0)
    }

    /// Receive shutter open interval.
    pub fn rx_window(&self) -> (f64, f64) {
        (
            self.t_slr + self.cycle_period / 2.0,
            self.t_slr + self.cycle_period,
        )
    }

    /// First choice epoch: midpoint of the shutter transition.
    pub fn t_b1(&self) -> f64 {
        self.t_slr + self.cycle_period / 2.0
    }

    /// Second choice epoch, rtt/2 after the first.
    pub fn t_b2(&self) -> f64 {
        self.t_b1() + self.rtt / 2.0
    }

    /// Length of the accepted detection window, rtt − t_trans.
    pub fn tau(&self) -> f64 {
        self.rtt - self.t_trans
    }

    /// Accepted detection interval.
    pub fn tau_window(&self) -> (f64, f64) {
        let start = self.t_b1() + self.t_trans / 2.0;
        (start, start + self.tau())
    }

    pub fn choices(&self) -> [ChoiceRecord; 2] {
        [
            ChoiceRecord {
                cycle_index: self.cycle_index,
                which: Choice::First,
                epoch: self.t_b1(),
                bit: self.b1,
            },
            ChoiceRecord {
                cycle_index: self.cycle_index,
                which: Choice::Second,
                epoch: self.t_b2(),
                bit: self.b2,
            },
        ]
    }
}

/// Build the schedule of one cycle starting at `t_slr` for the given rtt.
pub fn build_cycle(
    rtt: f64,
    t_slr: f64,
    cycle_index: usize,
    params: &ProtocolParams,
    bits: (u8, u8),
) -> Result<CycleSchedule, ProtocolError> {
    // lower bound keeps both choice segments non-degenerate
    let min = params.t_trans + 2.0 * params.t_shwp;
    let max = params.cycle_period / 2.0;
    if !(rtt > min && rtt < max) {
        return Err(ProtocolError::RttOutOfRegime { rtt, min, max });
    }
    Ok(CycleSchedule {
        cycle_index,
        t_slr,
        rtt,
        t_trans: params.t_trans,
        t_shwp: params.t_shwp,
        cycle_period: params.cycle_period,
        b1: bits.0,
        b2: bits.1,
    })
}

/// Build schedules covering a pass, with rtt interpolated at each cycle's
/// transition midpoint and choice bits drawn from the seeded bit source.
pub fn build_schedules(
    track: &PassTrack,
    params: &ProtocolParams,
    seed: u64,
) -> Result<Vec<CycleSchedule>, ProtocolError> {
    let (start, end) = track.span();
    let n = ((end - start) / params.cycle_period).floor() as usize;
    if n == 0 {
        return Err(ProtocolError::NoCycles);
    }
    let bits = qrng_bits(seed, 2 * n);
    let mut schedules = Vec::with_capacity(n);
    for k in 0..n {
        let t_slr = start + k as f64 * params.cycle_period;
        let t_mid = (t_slr + params.cycle_period / 2.0).min(end);
        let rtt = track.rtt_at(t_mid)?;
        schedules.push(build_cycle(rtt, t_slr, k, params, (bits[2 * k], bits[2 * k + 1]))?);
    }
    Ok(schedules)
}

/// Deterministic unbiased bit stream for the measurement choices.
pub fn qrng_bits(seed: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<bool>() as u8).collect()
}

/// Map a detection epoch to its governing bit.
///
/// Detections between the first choice (plus settling) and the second choice
/// belong to b1; later detections to b2; detections inside a settling window
/// are discarded.
pub fn governing_bit(t_det: f64, schedule: &CycleSchedule) -> Result<BitAssignment, ProtocolError> {
    let (rx_start, rx_end) = schedule.rx_window();
    if t_det < rx_start || t_det > rx_end {
        return Err(ProtocolError::OutsideRxWindow {
            t_det,
            start: rx_start,
            end: rx_end,
        });
    }
    let t_b1 = schedule.t_b1();
    let t_b2 = schedule.t_b2();
    if t_det < t_b1 + schedule.t_shwp {
        Ok(BitAssignment::Discard)
    } else if t_det < t_b2 {
        Ok(BitAssignment::Governed {
            bit: schedule.b1,
            which: Choice::First,
        })
    } else if t_det < t_b2 + schedule.t_shwp {
        Ok(BitAssignment::Discard)
    } else {
        Ok(BitAssignment::Governed {
            bit: schedule.b2,
            which: Choice::Second,
        })
    }
}

/// An event on the (t, radial distance from the detectors) plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpacetimeEvent {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalKind {
    Spacelike,
    Timelike,
    Lightlike,
}

/// Classify the interval between two events by the sign of c²Δt² − Δx².
pub fn interval_classify(e1: &SpacetimeEvent, e2: &SpacetimeEvent, c: f64) -> IntervalKind {
    let ct = c * (e2.t - e1.t);
    let dx = e2.x - e1.x;
    let s = ct * ct - dx * dx;
    let scale = (ct * ct).max(dx * dx);
    if s.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        IntervalKind::Lightlike
    } else if s < 0.0 {
        IntervalKind::Spacelike
    } else {
        IntervalKind::Timelike
    }
}

/// Worst-case spacelike margin and group property for one choice segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentCheck {
    pub which: Choice,
    pub bit: u8,
    /// Minimum of Δx − c·Δt over the segment, km; negative means a violation.
    pub margin_km: f64,
    /// True when every photon of the group was reflected before its choice.
    pub reflected_before_choice: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleCheck {
    pub cycle_index: usize,
    pub segments: Vec<SegmentCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub cycle_index: usize,
    pub which: Choice,
    pub margin_km: f64,
}

/// Light-cone verification report over a set of schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalityReport {
    pub cycles: Vec<CycleCheck>,
    pub violations: Vec<Violation>,
    /// Minimum spacelike margin over all cycles and segments, km.
    pub min_margin_km: f64,
    /// Number of segments whose whole group was reflected before the choice.
    pub groups_reflected_before_choice: usize,
    pub total_segments: usize,
}

/// Check, for every cycle and both choice segments, that the photon's
/// reflection event is spacelike separated from the governing choice event.
///
/// The choice apparatus sits at x = 0; a detection at t maps to a reflection
/// event at (t − rtt/2, slant(t − rtt/2)). The margin is minimized over a
/// scan of the accepted segment.
pub fn verify_delayed_choice(
    schedules: &[CycleSchedule],
    track: &PassTrack,
    c: f64,
) -> Result<CausalityReport, ProtocolError> {
    let mut cycles = Vec::with_capacity(schedules.len());
    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut groups_ok = 0usize;
    let mut total_segments = 0usize;
    let (span_start, span_end) = track.span();
    for schedule in schedules {
        let (tau_start, tau_end) = schedule.tau_window();
        let t_b2 = schedule.t_b2();
        let segments = [
            (
                Choice::First,
                schedule.b1,
                schedule.t_b1(),
                tau_start.max(schedule.t_b1() + schedule.t_shwp),
                // the first segment is half-open at t_b2
                t_b2.min(tau_end) - 1e-9,
            ),
            (
                Choice::Second,
                schedule.b2,
                t_b2,
                (t_b2 + schedule.t_shwp).max(tau_start),
                tau_end,
            ),
        ];
        let mut checks = Vec::new();
        for (which, bit, t_choice, seg_start, seg_end) in segments {
            if seg_end <= seg_start {
                continue;
            }
            total_segments += 1;
            let mut margin = f64::INFINITY;
            let mut all_reflected_before = true;
            let steps = 16;
            for i in 0..=steps {
                let t_det = seg_start + (seg_end - seg_start) * i as f64 / steps as f64;
                let t_refl = t_det - schedule.rtt / 2.0;
                let slant = track.slant_at(t_refl.clamp(span_start, span_end))?;
                let m = (slant - c * (t_refl - t_choice).abs()) / 1e3;
                margin = margin.min(m);
                if t_refl >= t_choice {
                    all_reflected_before = false;
                }
            }
            if margin < min_margin {
                min_margin = margin;
            }
            if all_reflected_before {
                groups_ok += 1;
            }
            if margin < 0.0 {
                violations.push(Violation {
                    cycle_index: schedule.cycle_index,
                    which,
                    margin_km: margin,
                });
            }
            checks.push(SegmentCheck {
                which,
                bit,
                margin_km: margin,
                reflected_before_choice: all_reflected_before,
            });
        }
        cycles.push(CycleCheck {
            cycle_index: schedule.cycle_index,
            segments: checks,
        });
    }
    Ok(CausalityReport {
        cycles,
        violations,
        min_margin_km: min_margin,
        groups_reflected_before_choice: groups_ok,
        total_segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::PhysicalConstants;
    use crate::orbit::{generate_pass, PassProfile};
    use approx::assert_abs_diff_eq;

    fn params() -> ProtocolParams {
        ProtocolParams::default()
    }

    #[test]
    fn cycle_windows_and_tau() {
        let s = build_cycle(10e-3, 0.0, 0, &params(), (0, 1)).unwrap();
        assert_abs_diff_eq!(s.tau(), 5e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.t_b2() - s.t_b1(), 5e-3, epsilon = 1e-15);
        let (tau_start, tau_end) = s.tau_window();
        let (rx_start, rx_end) = s.rx_window();
        assert!(tau_start >= rx_start && tau_end <= rx_end);
        assert_abs_diff_eq!(tau_end - tau_start, s.tau(), epsilon = 1e-15);

        // Beacon-C minimum slant rtt
        let s = build_cycle(8.4325e-3, 0.0, 0, &params(), (0, 0)).unwrap();
        assert_abs_diff_eq!(s.tau(), 3.4325e-3, epsilon = 1e-12);
    }

    #[test]
    fn cycle_rejects_out_of_regime_rtt() {
        assert!(build_cycle(60e-3, 0.0, 0, &params(), (0, 0)).is_err());
        assert!(build_cycle(8.433e-3, 0.0, 0, &params(), (0, 0)).is_ok());
        assert!(build_cycle(5.5e-3, 0.0, 0, &params(), (0, 0)).is_err());
    }

    #[test]
    fn qrng_deterministic_and_unbiased() {
        assert_eq!(qrng_bits(42, 1000), qrng_bits(42, 1000));
        assert!(qrng_bits(7, 0).is_empty());
        let bits = qrng_bits(1, 1_000_000);
        let ones = bits.iter().map(|&b| b as usize).sum::<usize>() as f64 / 1e6;
        assert!((0.497..=0.503).contains(&ones), "fraction of ones {ones}");
    }

    #[test]
    fn interval_classification_examples() {
        let c = PhysicalConstants::default().c;
        let origin = SpacetimeEvent { t: 0.0, x: 0.0 };
        let far = SpacetimeEvent {
            t: 4e-3,
            x: 1500e3,
        };
        assert_eq!(interval_classify(&origin, &far, c), IntervalKind::Spacelike);
        let late = SpacetimeEvent {
            t: 6e-3,
            x: 1500e3,
        };
        assert_eq!(interval_classify(&origin, &late, c), IntervalKind::Timelike);
        assert_eq!(
            interval_classify(&origin, &origin, c),
            IntervalKind::Lightlike
        );
        let on_cone = SpacetimeEvent {
            t: 1500e3 / c,
            x: 1500e3,
        };
        assert_eq!(
            interval_classify(&origin, &on_cone, c),
            IntervalKind::Lightlike
        );
    }

    #[test]
    fn governing_bit_segments() {
        let s = build_cycle(10e-3, 0.0, 0, &params(), (0, 1)).unwrap();
        let t_b1 = s.t_b1();
        let t_b2 = s.t_b2();
        assert_eq!(
            governing_bit(t_b1 + 1e-3, &s).unwrap(),
            BitAssignment::Governed {
                bit: 0,
                which: Choice::First
            }
        );
        assert_eq!(
            governing_bit(t_b2 + 0.2e-3, &s).unwrap(),
            BitAssignment::Discard
        );
        assert_eq!(
            governing_bit(t_b2 + 1e-3, &s).unwrap(),
            BitAssignment::Governed {
                bit: 1,
                which: Choice::Second
            }
        );
        assert!(governing_bit(t_b1 - 1e-3, &s).is_err());
    }

    #[test]
    fn governing_bit_total_on_rx_window() {
        let s = build_cycle(11e-3, 3.0, 7, &params(), (1, 0)).unwrap();
        let (rx_start, rx_end) = s.rx_window();
        let n = 100_000;
        for i in 0..=n {
            let t = rx_start + (rx_end - rx_start) * i as f64 / n as f64;
            let a = governing_bit(t, &s).unwrap();
            let in_settling = (t >= s.t_b1() && t < s.t_b1() + s.t_shwp)
                || (t >= s.t_b2() && t < s.t_b2() + s.t_shwp);
            match a {
                BitAssignment::Discard => assert!(in_settling, "unexpected discard at {t}"),
                BitAssignment::Governed { .. } => assert!(!in_settling),
            }
        }
    }

    fn leo_track(min_slant: f64) -> PassTrack {
        let profile = PassProfile {
            altitude: 800e3,
            min_slant,
            duration: 120.0,
            sample_step: 0.01,
        };
        generate_pass(&profile, &PhysicalConstants::default()).unwrap()
    }

    #[test]
    fn leo_pass_has_no_causality_violations() {
        let c = PhysicalConstants::default().c;
        for min_slant in [1264e3, 1454e3, 1771e3] {
            let track = leo_track(min_slant);
            let schedules = build_schedules(&track, &params(), 5).unwrap();
            let report = verify_delayed_choice(&schedules, &track, c).unwrap();
            assert!(report.violations.is_empty());
            assert!(report.min_margin_km > 0.0, "margin {}", report.min_margin_km);
            // every group fully reflected before its choice
            assert_eq!(report.groups_reflected_before_choice, report.total_segments);
        }
    }

    #[test]
    fn inconsistent_rtt_triggers_violation() {
        let c = PhysicalConstants::default().c;
        let track = leo_track(1500e3);
        let mut schedules = build_schedules(&track, &params(), 5).unwrap();
        for s in &mut schedules {
            s.rtt *= 4.0; // inconsistent with the track's slant
        }
        let report = verify_delayed_choice(&schedules, &track, c).unwrap();
        assert!(!report.violations.is_empty());
        assert!(report.min_margin_km < 0.0);
    }

    #[test]
    fn simultaneous_distant_events_are_spacelike() {
        let c = PhysicalConstants::default().c;
        let choice = SpacetimeEvent { t: 1.0, x: 0.0 };
        let reflection = SpacetimeEvent { t: 1.0, x: 1500e3 };
        assert_eq!(
            interval_classify(&choice, &reflection, c),
            IntervalKind::Spacelike
        );
    }

    #[test]
    fn schedules_cover_track() {
        let track = leo_track(1454e3);
        let schedules = build_schedules(&track, &params(), 11).unwrap();
        assert_eq!(schedules.len(), 1200);
        for (k, s) in schedules.iter().enumerate() {
            assert_eq!(s.cycle_index, k);
            assert!(s.tau() > 0.0);
        }
    }
}
