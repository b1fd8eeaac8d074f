//! Data analysis pipeline: Δ computation against the predicted arrivals,
//! histograms split by choice bit, phase binning, peak-fit count extraction
//! with background removal and efficiency renormalization, the visibility
//! and which-path statistics, and the unbalance calibration fit.

pub mod fit;
pub mod pipeline;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::PhysicalConstants;
use crate::event_gen::TimeTagRecord;
use crate::orbit::{kinematic_phase, OrbitError, PassTrack, SlrSeries};
use crate::photonics::Detector;
use fit::{gaussian, levenberg_marquardt_scaled, FitError};

/// Number of phase intervals the fringe is binned into.
pub const PHASE_BINS: usize = 10;
/// Width of one phase interval, rad.
pub const PHASE_BIN_WIDTH: f64 = PI / 5.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("degenerate histogram: {0}")]
    Degenerate(String),
    #[error("zero total counts")]
    ZeroCounts,
    #[error("all phase bins have zero weight")]
    ZeroWeights,
    #[error("need at least {need} usable phase bins, have {have}")]
    TooFewBins { need: usize, have: usize },
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("unresolvable peaks: {0}")]
    Unresolvable(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    EventGen(#[from] crate::event_gen::EventGenError),
}

/// Analysis knobs; widths in seconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Histogram bin width, a multiple of the tagger resolution.
    pub bin_width: f64,
    /// Pulse-matching gate around the nearest predicted arrival, s.
    pub delta_gate: f64,
    /// Histograms with fewer combined counts than this are rejected.
    pub min_counts: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            bin_width: 243e-12, // 3 tagger steps
            delta_gate: 5e-9,
            min_counts: 50,
        }
    }
}

/// A record with its Δ = t_meas − t_ref against the matched pulse.
#[derive(Debug, Clone, Copy)]
pub struct DeltaRecord {
    pub record: TimeTagRecord,
    /// t_meas − t_ref, s; meaningful only when `matched`.
    pub delta: f64,
    /// Predicted arrival of the matched pulse, s.
    pub t_ref: f64,
    /// Reflection epoch of the matched pulse, s.
    pub t_refl: f64,
    pub matched: bool,
}

/// Match each record to the nearest predicted arrival of the pulse grid and
/// compute Δ. Records farther than the gate from every arrival are flagged.
pub fn compute_delta(
    records: &[TimeTagRecord],
    track: &PassTrack,
    pulse_rate: f64,
    tagger_resolution: f64,
    params: &AnalysisParams,
) -> Result<Vec<DeltaRecord>, AnalysisError> {
    let (start, end) = track.span();
    let mut out = Vec::with_capacity(records.len());
    for &record in records {
        let t_meas = record.tag as f64 * tagger_resolution;
        // invert t_tx + rtt(t_tx) = t_meas by fixed point
        let mut t_tx = (t_meas - 0.01).clamp(start, end);
        for _ in 0..4 {
            t_tx = (t_meas - track.rtt_at(t_tx.clamp(start, end))?).clamp(start, end);
        }
        let k0 = (t_tx * pulse_rate).round() as i64;
        let mut best: Option<(f64, f64, f64)> = None;
        for k in [k0 - 1, k0, k0 + 1] {
            let t_k = k as f64 / pulse_rate;
            if t_k < start || t_k > end {
                continue;
            }
            let rtt = track.rtt_at(t_k)?;
            let t_ref = t_k + rtt;
            let delta = t_meas - t_ref;
            if best.map_or(true, |(d, _, _)| delta.abs() < d.abs()) {
                best = Some((delta, t_ref, t_k + rtt / 2.0));
            }
        }
        match best {
            Some((delta, t_ref, t_refl)) if delta.abs() <= params.delta_gate => {
                out.push(DeltaRecord {
                    record,
                    delta,
                    t_ref,
                    t_refl,
                    matched: true,
                });
            }
            _ => out.push(DeltaRecord {
                record,
                delta: f64::NAN,
                t_ref: f64::NAN,
                t_refl: f64::NAN,
                matched: false,
            }),
        }
    }
    Ok(out)
}

/// Fixed-width Δ histogram over [−2Δt − pad, 2Δt + pad].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaHistogram {
    pub bin_width: f64,
    pub lo: f64,
    pub counts: Vec<f64>,
    /// Choice-bit filter this histogram was built with.
    pub bit: u8,
    /// Channel filter; `None` means both detectors.
    pub channel: Option<Detector>,
}

impl DeltaHistogram {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.bin_center(i)).collect()
    }
}

/// Bin the matched Δ values of records with the given bit (and optionally
/// channel) over [−half_range, +half_range]. Using the matching gate as the
/// range keeps the accidental pedestal flat across the whole histogram.
pub fn build_histogram(
    deltas: &[DeltaRecord],
    bit: u8,
    channel: Option<Detector>,
    bin_width: f64,
    half_range: f64,
) -> DeltaHistogram {
    let lo = -half_range;
    let hi = half_range;
    let n = ((hi - lo) / bin_width).ceil() as usize;
    let mut counts = vec![0.0; n];
    for d in deltas {
        if !d.matched || d.record.bit != bit {
            continue;
        }
        if let Some(ch) = channel {
            if d.record.channel != ch {
                continue;
            }
        }
        if d.delta < lo || d.delta >= hi {
            continue;
        }
        let i = ((d.delta - lo) / bin_width) as usize;
        if i < n {
            counts[i] += 1.0;
        }
    }
    DeltaHistogram {
        bin_width,
        lo,
        counts,
        bit,
        channel,
    }
}

/// Kinematic phase at a reflection epoch, estimated from the ranging series
/// and wrapped into [−π/10, 2π − π/10) so the wrap bin is centered on 0.
pub fn phase_of_record(
    t_refl: f64,
    slr: &SlrSeries,
    constants: &PhysicalConstants,
) -> Result<f64, AnalysisError> {
    let v_r = slr.v_r_at(t_refl, constants)?;
    let phi = kinematic_phase(v_r / constants.c, constants);
    Ok(wrap_phase(phi))
}

/// Reduce a phase into [−π/10, 2π − π/10).
pub fn wrap_phase(phi: f64) -> f64 {
    let mut r = phi.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI - PHASE_BIN_WIDTH / 2.0 {
        r -= 2.0 * PI;
    }
    r
}

/// Index of the interval I_j = [(2j−1)π/10, (2j+1)π/10] containing `phi`.
pub fn phase_bin_index(phi: f64) -> usize {
    let r = wrap_phase(phi);
    (((r + PHASE_BIN_WIDTH / 2.0) / PHASE_BIN_WIDTH) as usize).min(PHASE_BINS - 1)
}

/// Center of phase interval j.
pub fn phase_bin_center(j: usize) -> f64 {
    j as f64 * PHASE_BIN_WIDTH
}

/// Initialization and renormalization constants for the peak fits.
#[derive(Debug, Clone, Copy)]
pub struct PeakFitConfig {
    /// Interferometer unbalance, s.
    pub delta_t: f64,
    /// Initial peak width, s (detector jitter).
    pub sigma_init: f64,
    /// Detector efficiency of the + channel.
    pub eta_plus: f64,
    /// Detector efficiency of the − channel.
    pub eta_minus: f64,
}

/// Counts extracted from the Gaussian fits of a (±) histogram pair.
#[derive(Debug, Clone)]
pub struct ExtractedCounts {
    /// Fitted signal counts per channel before efficiency renormalization.
    pub raw: (f64, f64),
    /// Counts renormalized by the channel efficiencies.
    pub renormalized: (f64, f64),
    /// Fitted common peak width, s (average of the two channels).
    pub sigma: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Flat-background seed: the peaks are narrow, so the median bin count is a
/// robust pedestal estimate even with peaks near the histogram edges.
fn background_level(hist: &DeltaHistogram) -> f64 {
    let mut all = hist.counts.clone();
    median(&mut all)
}

/// Fit a single Gaussian plus flat background; returns (area counts, center, sigma).
fn fit_single_peak(
    hist: &DeltaHistogram,
    sigma_init: f64,
) -> Result<(f64, f64, f64), AnalysisError> {
    let x = hist.centers();
    let y = &hist.counts;
    // uniform weights: 1/count weighting biases small peaks low
    let w = vec![1.0; y.len()];
    let background = background_level(hist);
    let (argmax, &peak) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let init = [
        (peak - background).max(1.0),
        hist.bin_center(argmax),
        sigma_init,
        background,
    ];
    let scales = [init[0], sigma_init, sigma_init, background.max(1.0)];
    let fit = levenberg_marquardt_scaled(
        |p, xi| gaussian(p[0], p[1], p[2], xi) + p[3],
        &x,
        y,
        &w,
        &init,
        &scales,
    )?;
    let area = fit.params[0] * fit.params[2].abs() * (2.0 * PI).sqrt() / hist.bin_width;
    Ok((area, fit.params[1], fit.params[2].abs()))
}

/// Fit only amplitude and flat background, with the peak center and width
/// held at values from a higher-statistics fit. Used for the per-interval
/// extractions, where letting the shape float adds scatter well above the
/// counting floor.
fn fit_peak_amplitude(
    hist: &DeltaHistogram,
    center: f64,
    sigma: f64,
) -> Result<f64, AnalysisError> {
    let x = hist.centers();
    let y = &hist.counts;
    let w = vec![1.0; y.len()];
    let background = background_level(hist);
    let peak = y.iter().cloned().fold(0.0f64, f64::max);
    let init = [(peak - background).max(1.0), background];
    let scales = [init[0], background.max(1.0)];
    let fit = levenberg_marquardt_scaled(
        |p, xi| gaussian(p[0], center, sigma, xi) + p[1],
        &x,
        y,
        &w,
        &init,
        &scales,
    )?;
    Ok(fit.params[0] * sigma * (2.0 * PI).sqrt() / hist.bin_width)
}

/// Result of the two-lateral-peak fit used for the b = 1 histograms.
#[derive(Debug, Clone)]
pub struct DoublePeakFit {
    pub area_early: f64,
    pub area_late: f64,
    pub center_early: f64,
    pub center_late: f64,
    pub sigma: f64,
    pub background: f64,
}

/// Fit two Gaussians with a common width plus flat background.
pub fn fit_double_peak(
    hist: &DeltaHistogram,
    config: &PeakFitConfig,
) -> Result<DoublePeakFit, AnalysisError> {
    let x = hist.centers();
    let y = &hist.counts;
    // uniform weights: 1/count weighting biases small peaks low
    let w = vec![1.0; y.len()];
    let background = background_level(hist);
    let peak_near = |target: f64| -> f64 {
        y.iter()
            .enumerate()
            .filter(|(i, _)| (hist.bin_center(*i) - target).abs() < config.delta_t / 2.0)
            .map(|(_, &c)| c)
            .fold(0.0, f64::max)
    };
    let init = [
        (peak_near(-config.delta_t) - background).max(1.0),
        (peak_near(config.delta_t) - background).max(1.0),
        -config.delta_t,
        config.delta_t,
        config.sigma_init,
        background,
    ];
    let scales = [
        init[0],
        init[1],
        config.sigma_init,
        config.sigma_init,
        config.sigma_init,
        background.max(1.0),
    ];
    let fit = levenberg_marquardt_scaled(
        |p, xi| gaussian(p[0], p[2], p[4], xi) + gaussian(p[1], p[3], p[4], xi) + p[5],
        &x,
        y,
        &w,
        &init,
        &scales,
    )?;
    let p = &fit.params;
    let to_area = |amp: f64| amp * p[4].abs() * (2.0 * PI).sqrt() / hist.bin_width;
    Ok(DoublePeakFit {
        area_early: to_area(p[0]),
        area_late: to_area(p[1]),
        center_early: p[2],
        center_late: p[3],
        sigma: p[4].abs(),
        background: p[5],
    })
}

/// Extract background-removed, efficiency-renormalized signal counts from a
/// per-channel histogram pair. b = 0 uses a single central Gaussian, b = 1 a
/// double Gaussian at ±Δt with common width.
pub fn extract_counts(
    hist_plus: &DeltaHistogram,
    hist_minus: &DeltaHistogram,
    bit: u8,
    config: &PeakFitConfig,
    min_counts: usize,
) -> Result<ExtractedCounts, AnalysisError> {
    let total = hist_plus.total() + hist_minus.total();
    if (total as usize) < min_counts {
        return Err(AnalysisError::Degenerate(format!(
            "only {total} counts, need {min_counts}"
        )));
    }
    let mut raw = [0.0; 2];
    let mut sigmas = [0.0; 2];
    for (i, hist) in [hist_plus, hist_minus].into_iter().enumerate() {
        if bit == 0 {
            let (area, _, sigma) = fit_single_peak(hist, config.sigma_init)?;
            raw[i] = area;
            sigmas[i] = sigma;
        } else {
            let fit = fit_double_peak(hist, config)?;
            raw[i] = fit.area_early + fit.area_late;
            sigmas[i] = fit.sigma;
        }
    }
    Ok(ExtractedCounts {
        raw: (raw[0], raw[1]),
        renormalized: (raw[0] / config.eta_plus, raw[1] / config.eta_minus),
        sigma: (sigmas[0] + sigmas[1]) / 2.0,
    })
}

/// As [`extract_counts`] for the central peak, but with the per-channel peak
/// shape (center, width) frozen from a higher-statistics fit so only the
/// amplitude and pedestal are free.
pub fn extract_counts_fixed_shape(
    hist_plus: &DeltaHistogram,
    hist_minus: &DeltaHistogram,
    shapes: &[(f64, f64); 2],
    config: &PeakFitConfig,
    min_counts: usize,
) -> Result<ExtractedCounts, AnalysisError> {
    let total = hist_plus.total() + hist_minus.total();
    if (total as usize) < min_counts {
        return Err(AnalysisError::Degenerate(format!(
            "only {total} counts, need {min_counts}"
        )));
    }
    let mut raw = [0.0; 2];
    for (i, hist) in [hist_plus, hist_minus].into_iter().enumerate() {
        raw[i] = fit_peak_amplitude(hist, shapes[i].0, shapes[i].1)?;
    }
    Ok(ExtractedCounts {
        raw: (raw[0], raw[1]),
        renormalized: (raw[0] / config.eta_plus, raw[1] / config.eta_minus),
        sigma: (shapes[0].1 + shapes[1].1) / 2.0,
    })
}

/// f± = N±/(N₊+N₋) with the Poisson error σ_f = √(f₊ f₋ / (N₊+N₋)).
pub fn relative_frequencies(n_plus: f64, n_minus: f64) -> Result<(f64, f64, f64), AnalysisError> {
    let total = n_plus + n_minus;
    if !(total > 0.0) {
        return Err(AnalysisError::ZeroCounts);
    }
    let f_plus = n_plus / total;
    let f_minus = n_minus / total;
    let sigma = (f_plus.max(0.0) * f_minus.max(0.0) / total).sqrt();
    Ok((f_plus, f_minus, sigma))
}

/// Per-phase-interval statistics feeding the visibility fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhaseBinStats {
    pub j: usize,
    pub phi_center: f64,
    /// Regressor for the fringe fit. Defaults to cos(φ_center); callers that
    /// know the actual phase distribution inside the interval should replace
    /// it with the event-weighted mean of cos φ to avoid binning smear.
    pub cos_phi: f64,
    pub n_plus: f64,
    pub n_minus: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    pub sigma_f: f64,
}

impl PhaseBinStats {
    pub fn from_counts(j: usize, n_plus: f64, n_minus: f64) -> Result<Self, AnalysisError> {
        Self::with_statistics(j, n_plus, n_minus, n_plus + n_minus)
    }

    /// As [`PhaseBinStats::from_counts`], but with the statistical sample
    /// size given separately. Needed when the counts are renormalized by
    /// efficiencies: the frequency error scales with what was detected.
    pub fn with_statistics(
        j: usize,
        n_plus: f64,
        n_minus: f64,
        n_observed: f64,
    ) -> Result<Self, AnalysisError> {
        let (f_plus, f_minus, _) = relative_frequencies(n_plus, n_minus)?;
        if !(n_observed > 0.0) {
            return Err(AnalysisError::ZeroCounts);
        }
        let sigma_f = (f_plus.max(0.0) * f_minus.max(0.0) / n_observed).sqrt();
        Ok(Self {
            j,
            phi_center: phase_bin_center(j),
            cos_phi: phase_bin_center(j).cos(),
            n_plus,
            n_minus,
            f_plus,
            f_minus,
            sigma_f,
        })
    }
}

/// Weighted one-parameter fringe fit f₊(φ) = (1 + 𝒱 cos φ)/2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub v_exp: f64,
    /// 1σ from the curvature of the weighted normal equation.
    pub sigma_v: f64,
    /// (f₊ residual, f₋ residual) per usable bin.
    pub residuals: Vec<(f64, f64)>,
    /// Per-bin frequency errors aligned with `residuals`.
    pub sigma_bins: Vec<f64>,
    /// RMS of the residuals over both channels.
    pub sigma_r: f64,
}

/// Closed-form weighted least squares with only the visibility free:
/// 𝒱 = Σ w_j (2 f₊,j − 1) cos φ_j / Σ w_j cos² φ_j, w_j = 1/σ_j².
pub fn fit_visibility(bins: &[PhaseBinStats]) -> Result<VisibilityFit, AnalysisError> {
    let usable: Vec<&PhaseBinStats> = bins
        .iter()
        .filter(|b| b.n_plus + b.n_minus > 0.0 && b.sigma_f > 0.0)
        .collect();
    if usable.len() < 3 {
        return Err(AnalysisError::TooFewBins {
            need: 3,
            have: usable.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for b in &usable {
        let w = 1.0 / (b.sigma_f * b.sigma_f);
        let c = b.cos_phi;
        num += w * (2.0 * b.f_plus - 1.0) * c;
        den += w * c * c;
    }
    if !(den > 0.0) {
        return Err(AnalysisError::ZeroWeights);
    }
    let v_exp = num / den;
    // curvature of χ² in 𝒱: Σ w_j cos²φ_j / 4
    let mut sigma_v = 2.0 / den.sqrt();
    let mut residuals = Vec::with_capacity(usable.len());
    let mut sigma_bins = Vec::with_capacity(usable.len());
    let mut sq = 0.0;
    let mut chi2 = 0.0;
    for b in &usable {
        let model_plus = 0.5 * (1.0 + v_exp * b.cos_phi);
        let r_plus = b.f_plus - model_plus;
        let r_minus = b.f_minus - (1.0 - model_plus);
        residuals.push((r_plus, r_minus));
        sigma_bins.push(b.sigma_f);
        sq += r_plus * r_plus + r_minus * r_minus;
        chi2 += (r_plus / b.sigma_f).powi(2);
    }
    let sigma_r = (sq / (2.0 * usable.len() as f64)).sqrt();
    // the frequencies come from fitted peak areas whose scatter exceeds the
    // binomial floor; rescale the errors by the observed reduced chi-square
    // (never shrinking them) so downstream pulls are calibrated
    let scale = (chi2 / (usable.len() as f64 - 1.0)).sqrt().max(1.0);
    if scale.is_finite() {
        sigma_v *= scale;
        for s in &mut sigma_bins {
            *s *= scale;
        }
    }
    Ok(VisibilityFit {
        v_exp,
        sigma_v,
        residuals,
        sigma_bins,
        sigma_r,
    })
}

/// RMS of the fit residuals and the fraction of points within ±1.5σ.
pub fn residual_stats(fit: &VisibilityFit) -> (f64, f64) {
    let mut inside = 0usize;
    let mut total = 0usize;
    for ((rp, rm), sigma) in fit.residuals.iter().zip(&fit.sigma_bins) {
        for r in [rp, rm] {
            total += 1;
            if r.abs() <= 1.5 * sigma {
                inside += 1;
            }
        }
    }
    let coverage = if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    };
    (fit.sigma_r, coverage)
}

/// Conclusive which-path probability and its binomial error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WhichPathStats {
    pub p_wp: f64,
    pub sigma_p: f64,
    /// Total fitted signal counts (lateral + central), background removed.
    pub n_total: f64,
}

/// Ratio of lateral-peak counts to total counts in the b = 1 histogram,
/// from a three-Gaussian fit (lateral pair with common width plus a central
/// leakage peak) over a flat background.
pub fn which_path_probability(
    hist: &DeltaHistogram,
    config: &PeakFitConfig,
) -> Result<WhichPathStats, AnalysisError> {
    let x = hist.centers();
    let y = &hist.counts;
    if hist.total() < 50.0 {
        return Err(AnalysisError::Degenerate(format!(
            "only {} counts in the which-path histogram",
            hist.total()
        )));
    }
    // uniform weights: 1/count weighting biases small peaks low
    let w = vec![1.0; y.len()];
    let background = background_level(hist);
    let near = |target: f64| -> f64 {
        y.iter()
            .enumerate()
            .filter(|(i, _)| (hist.bin_center(*i) - target).abs() < config.delta_t / 2.0)
            .map(|(_, &c)| c)
            .fold(0.0, f64::max)
    };
    let init = [
        (near(-config.delta_t) - background).max(1.0),
        (near(0.0) - background).max(0.1),
        (near(config.delta_t) - background).max(1.0),
        -config.delta_t,
        0.0,
        config.delta_t,
        config.sigma_init,
        background,
    ];
    let scales = [
        init[0],
        init[1].max(1.0),
        init[2],
        config.sigma_init,
        config.sigma_init,
        config.sigma_init,
        config.sigma_init,
        background.max(1.0),
    ];
    let fit = levenberg_marquardt_scaled(
        |p, xi| {
            gaussian(p[0], p[3], p[6], xi)
                + gaussian(p[1], p[4], p[6], xi)
                + gaussian(p[2], p[5], p[6], xi)
                + p[7]
        },
        &x,
        y,
        &w,
        &init,
        &scales,
    )?;
    let p = &fit.params;
    let lateral = (p[0] + p[2]).max(0.0);
    let central = p[1].max(0.0);
    let total = lateral + central;
    if !(total > 0.0) {
        return Err(AnalysisError::ZeroCounts);
    }
    let p_wp = lateral / total;
    // binomial error on the fitted count ratio
    let n_total = total * p[6].abs() * (2.0 * PI).sqrt() / hist.bin_width;
    let sigma_p = (p_wp * (1.0 - p_wp) / n_total.max(1.0)).sqrt();
    Ok(WhichPathStats {
        p_wp,
        sigma_p,
        n_total,
    })
}

/// Distance, in σ, of the measured visibility from the classical-particle
/// bound 1 − p_wp.
pub fn classical_bound_significance(
    v_exp: f64,
    sigma_v: f64,
    p_wp: f64,
) -> Result<f64, AnalysisError> {
    if !(sigma_v > 0.0) {
        return Err(AnalysisError::ZeroDenominator("sigma_v".into()));
    }
    Ok((v_exp - (1.0 - p_wp)) / sigma_v)
}

/// Mean photon number per pulse from the observed detection rate.
pub fn estimate_mu(
    detection_rate: f64,
    accepted_pulse_rate: f64,
    eta_opt: f64,
    eta_det: f64,
) -> Result<f64, AnalysisError> {
    if !(accepted_pulse_rate > 0.0 && eta_opt > 0.0 && eta_det > 0.0) {
        return Err(AnalysisError::ZeroDenominator(
            "accepted_pulse_rate·eta_opt·eta_det".into(),
        ));
    }
    Ok(detection_rate / (accepted_pulse_rate * eta_opt * eta_det))
}

/// Unbalance calibration: fit each of the two peaks of a calibration
/// histogram with an exponentially modified Gaussian and return the
/// difference of the location parameters with its propagated error.
pub fn estimate_unbalance(hist: &DeltaHistogram) -> Result<(f64, f64), AnalysisError> {
    let n = hist.counts.len();
    if n < 8 || hist.total() < 100.0 {
        return Err(AnalysisError::Degenerate(
            "calibration histogram too small".into(),
        ));
    }
    let (first_idx, _) = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let first_center = hist.bin_center(first_idx);
    // second maximum well away from the first
    let min_separation = 10.0 * hist.bin_width;
    let second = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| (hist.bin_center(*i) - first_center).abs() > min_separation)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap());
    let Some((second_idx, &second_peak)) = second else {
        return Err(AnalysisError::Unresolvable("single peak found".into()));
    };
    if second_peak < 5.0 {
        return Err(AnalysisError::Unresolvable(
            "second peak below the noise floor".into(),
        ));
    }
    // a genuine pair has a deep valley between the maxima; a shoulder of a
    // single broad peak does not
    let (a, b) = (first_idx.min(second_idx), first_idx.max(second_idx));
    let valley = hist.counts[a..=b].iter().cloned().fold(f64::INFINITY, f64::min);
    if valley > 0.5 * second_peak {
        return Err(AnalysisError::Unresolvable("no valley between maxima".into()));
    }
    let second_center = hist.bin_center(second_idx);
    let split = (first_center + second_center) / 2.0;
    let mut locations = [0.0; 2];
    let mut errors = [0.0; 2];
    let mut centers = [(first_center, first_idx), (second_center, second_idx)];
    centers.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (side, &(center, idx)) in centers.iter().enumerate() {
        let keep: Vec<usize> = (0..n)
            .filter(|&i| {
                let c = hist.bin_center(i);
                if side == 0 {
                    c < split
                } else {
                    c >= split
                }
            })
            .collect();
        let x: Vec<f64> = keep.iter().map(|&i| hist.bin_center(i)).collect();
        let y: Vec<f64> = keep.iter().map(|&i| hist.counts[i]).collect();
        let w: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0)).collect();
        let peak = hist.counts[idx];
        let sigma0 = 2.0 * hist.bin_width;
        let amp0 = peak * sigma0 * (2.0 * PI).sqrt();
        let init = [amp0, center - sigma0, sigma0, sigma0, 0.0];
        let scales = [amp0.max(1.0), sigma0, sigma0, sigma0, 1.0];
        let fit = levenberg_marquardt_scaled(
            |p, xi| fit::emg(p[0], p[1], p[2].abs(), p[3].abs(), xi) + p[4],
            &x,
            &y,
            &w,
            &init,
            &scales,
        )?;
        locations[side] = fit.params[1];
        errors[side] = fit.errors[1];
    }
    let delta_t = locations[1] - locations[0];
    let err = (errors[0] * errors[0] + errors[1] * errors[1]).sqrt();
    Ok((delta_t, err))
}
