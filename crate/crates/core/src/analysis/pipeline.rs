//! End-to-end analysis: from time tags to the visibility, which-path
//! statistic and significance report.

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::event_gen::{accepted_pulse_count, TimeTagRecord, TruthRecord};
use crate::orbit::{PassTrack, SlrSeries};
use crate::photonics::Detector;
use crate::protocol::{build_schedules, ProtocolParams};

use super::{
    build_histogram, classical_bound_significance, compute_delta, estimate_mu, extract_counts,
    extract_counts_fixed_shape, fit_double_peak, fit_single_peak, fit_visibility, phase_bin_index,
    phase_of_record, relative_frequencies,
    residual_stats, which_path_probability, AnalysisError, AnalysisParams, DeltaHistogram,
    DeltaRecord, PeakFitConfig, PhaseBinStats, WhichPathStats, PHASE_BINS,
};

/// Instrument constants the analysis needs alongside the data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InstrumentParams {
    pub pulse_rate: f64,
    pub tagger_resolution: f64,
    pub eta_opt: f64,
    /// Effective + channel detection efficiency.
    pub eta_det_plus: f64,
    /// Effective − channel detection efficiency.
    pub eta_det_minus: f64,
    /// Detector timing jitter used to seed the peak fits, s.
    pub jitter_rms: f64,
}

/// Per-phase-bin row of the report, including the lateral-peak check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhaseBinRow {
    pub j: usize,
    pub phi_center: f64,
    pub n_plus: f64,
    pub n_minus: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    pub sigma_f: f64,
    /// Whether the bin passed the count floor and entered the fringe fit.
    pub usable: bool,
}

/// Full analysis output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_records: usize,
    pub n_matched: usize,
    /// Renormalized signal counts in the interference configuration.
    pub n_signal_b0: f64,
    /// Renormalized lateral signal counts in the which-path configuration.
    pub n_signal_b1: f64,
    /// As-detected central-peak counts, b = 0, both channels.
    pub raw_signal_b0: f64,
    /// As-detected lateral-peak counts, b = 1, both channels.
    pub raw_signal_b1: f64,
    pub v_exp: f64,
    pub sigma_v: f64,
    pub sigma_r: f64,
    /// Fraction of fringe residuals within ±1.5σ.
    pub coverage_1p5: f64,
    pub p_wp: f64,
    pub sigma_p: f64,
    /// (𝒱 − (1 − P_wp)) / σ_v.
    pub z: f64,
    pub mu_estimate: f64,
    /// Fitted lateral peak separation in the which-path histogram, s.
    pub peak_separation: f64,
    /// Fitted common lateral peak width, s.
    pub peak_sigma: f64,
    /// χ²/dof of the which-path frequencies against f± = 1/2.
    pub b1_flatness_chi2_dof: f64,
    pub phase_bins: Vec<PhaseBinRow>,
    /// Per-phase-bin lateral-window frequencies in the b = 1 configuration.
    pub whichpath_bins: Vec<PhaseBinRow>,
}

/// Histograms the pipeline produces as a side output, for plotting or export.
#[derive(Debug, Clone)]
pub struct PipelineHistograms {
    pub b0_plus: DeltaHistogram,
    pub b0_minus: DeltaHistogram,
    pub b1_plus: DeltaHistogram,
    pub b1_minus: DeltaHistogram,
    pub b1_combined: DeltaHistogram,
}

/// Truth-aided validation of the phase reconstruction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruthComparison {
    /// RMS difference between reconstructed and true phase, rad.
    pub phi_rms: f64,
    pub n_compared: usize,
    /// Fraction of non-background events matched to the correct pulse.
    pub match_rate: f64,
}

pub struct PipelineOutput {
    pub report: AnalysisReport,
    pub histograms: PipelineHistograms,
    pub deltas: Vec<DeltaRecord>,
}

/// Run the whole analysis chain on a time-tag set.
pub fn run_analysis(
    records: &[TimeTagRecord],
    track: &PassTrack,
    slr: &SlrSeries,
    protocol: &ProtocolParams,
    instrument: &InstrumentParams,
    constants: &PhysicalConstants,
    params: &AnalysisParams,
) -> Result<PipelineOutput, AnalysisError> {
    let delta_t = constants.delta_t;
    let deltas = compute_delta(
        records,
        track,
        instrument.pulse_rate,
        instrument.tagger_resolution,
        params,
    )?;
    let n_matched = deltas.iter().filter(|d| d.matched).count();

    let peak_config = PeakFitConfig {
        delta_t,
        sigma_init: instrument.jitter_rms,
        eta_plus: instrument.eta_det_plus,
        eta_minus: instrument.eta_det_minus,
    };

    let hist =
        |bit: u8, ch: Option<Detector>| build_histogram(&deltas, bit, ch, params.bin_width, params.delta_gate);
    let histograms = PipelineHistograms {
        b0_plus: hist(0, Some(Detector::Plus)),
        b0_minus: hist(0, Some(Detector::Minus)),
        b1_plus: hist(1, Some(Detector::Plus)),
        b1_minus: hist(1, Some(Detector::Minus)),
        b1_combined: hist(1, None),
    };

    let counts_b0 = extract_counts(
        &histograms.b0_plus,
        &histograms.b0_minus,
        0,
        &peak_config,
        params.min_counts,
    )?;
    // per-channel central peak shape from the full-pass statistics, reused for
    // the per-interval amplitude fits
    let mut b0_shapes = [(0.0, 0.0); 2];
    for (i, h) in [&histograms.b0_plus, &histograms.b0_minus].into_iter().enumerate() {
        let (_, center, sigma) = fit_single_peak(h, peak_config.sigma_init)?;
        b0_shapes[i] = (center, sigma);
    }
    let counts_b1 = extract_counts(
        &histograms.b1_plus,
        &histograms.b1_minus,
        1,
        &peak_config,
        params.min_counts,
    )?;

    // phase of every matched interference event
    let mut binned: Vec<Vec<&DeltaRecord>> = vec![Vec::new(); PHASE_BINS];
    let mut b1_binned: Vec<Vec<&DeltaRecord>> = vec![Vec::new(); PHASE_BINS];
    let mut cos_sum = [0.0f64; PHASE_BINS];
    for d in &deltas {
        if !d.matched {
            continue;
        }
        let phi = phase_of_record(d.t_refl, slr, constants)?;
        let j = phase_bin_index(phi);
        if d.record.bit == 0 {
            binned[j].push(d);
            cos_sum[j] += phi.cos();
        } else {
            b1_binned[j].push(d);
        }
    }

    let mut rows = Vec::with_capacity(PHASE_BINS);
    let mut stats = Vec::new();
    for (j, group) in binned.iter().enumerate() {
        let sub: Vec<DeltaRecord> = group.iter().map(|&&d| d).collect();
        let hp = build_histogram(&sub, 0, Some(Detector::Plus), params.bin_width, params.delta_gate);
        let hm = build_histogram(&sub, 0, Some(Detector::Minus), params.bin_width, params.delta_gate);
        match extract_counts_fixed_shape(&hp, &hm, &b0_shapes, &peak_config, params.min_counts) {
            Ok(c) => {
                let (np, nm) = c.renormalized;
                let mut s = PhaseBinStats::with_statistics(j, np, nm, c.raw.0 + c.raw.1)?;
                // actual phases spread across the interval; the mean of cos φ
                // over the events keeps the fringe model free of binning smear
                if !group.is_empty() {
                    s.cos_phi = cos_sum[j] / group.len() as f64;
                }
                rows.push(PhaseBinRow {
                    j,
                    phi_center: s.phi_center,
                    n_plus: np,
                    n_minus: nm,
                    f_plus: s.f_plus,
                    f_minus: s.f_minus,
                    sigma_f: s.sigma_f,
                    usable: true,
                });
                stats.push(s);
            }
            Err(AnalysisError::Degenerate(_)) => rows.push(PhaseBinRow {
                j,
                phi_center: super::phase_bin_center(j),
                n_plus: 0.0,
                n_minus: 0.0,
                f_plus: f64::NAN,
                f_minus: f64::NAN,
                sigma_f: f64::NAN,
                usable: false,
            }),
            Err(e) => return Err(e),
        }
    }

    let vis = fit_visibility(&stats)?;
    let (sigma_r, coverage) = residual_stats(&vis);

    let wp: WhichPathStats = which_path_probability(&histograms.b1_combined, &peak_config)?;
    let z = classical_bound_significance(vis.v_exp, vis.sigma_v, wp.p_wp)?;

    // lateral frequencies should be phase independent; window counts suffice
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    let mut wp_rows = Vec::with_capacity(PHASE_BINS);
    for (j, group) in b1_binned.iter().enumerate() {
        let mut np = 0.0;
        let mut nm = 0.0;
        let mut observed = 0.0;
        for d in group {
            if (d.delta.abs() - delta_t).abs() > delta_t / 2.0 {
                continue;
            }
            observed += 1.0;
            match d.record.channel {
                Detector::Plus => np += 1.0 / instrument.eta_det_plus,
                Detector::Minus => nm += 1.0 / instrument.eta_det_minus,
            }
        }
        if observed < params.min_counts as f64 {
            wp_rows.push(PhaseBinRow {
                j,
                phi_center: super::phase_bin_center(j),
                n_plus: np,
                n_minus: nm,
                f_plus: f64::NAN,
                f_minus: f64::NAN,
                sigma_f: f64::NAN,
                usable: false,
            });
            continue;
        }
        let (f_plus, f_minus, _) = relative_frequencies(np, nm)?;
        let sigma = (f_plus.max(0.0) * f_minus.max(0.0) / observed).sqrt();
        chi2 += ((f_plus - 0.5) / sigma).powi(2);
        dof += 1;
        wp_rows.push(PhaseBinRow {
            j,
            phi_center: super::phase_bin_center(j),
            n_plus: np,
            n_minus: nm,
            f_plus,
            f_minus,
            sigma_f: sigma,
            usable: true,
        });
    }
    let b1_flatness_chi2_dof = if dof > 0 { chi2 / dof as f64 } else { f64::NAN };

    let double = fit_double_peak(&histograms.b1_combined, &peak_config)?;

    // mean photon number from the raw detection yield per accepted pulse
    let schedules = build_schedules(track, protocol, 0)?;
    let accepted = accepted_pulse_count(track, &schedules, instrument.pulse_rate)?;
    // the b = 1 side includes the central leakage, which the lateral-pair
    // fit excludes; the three-peak total covers all of its signal
    let raw_total = counts_b0.raw.0 + counts_b0.raw.1 + wp.n_total;
    let eta_det_mean = (instrument.eta_det_plus + instrument.eta_det_minus) / 2.0;
    let mu_estimate = estimate_mu(raw_total, accepted as f64, instrument.eta_opt, eta_det_mean)?;

    let report = AnalysisReport {
        n_records: records.len(),
        n_matched,
        n_signal_b0: counts_b0.renormalized.0 + counts_b0.renormalized.1,
        n_signal_b1: counts_b1.renormalized.0 + counts_b1.renormalized.1,
        raw_signal_b0: counts_b0.raw.0 + counts_b0.raw.1,
        raw_signal_b1: counts_b1.raw.0 + counts_b1.raw.1,
        v_exp: vis.v_exp,
        sigma_v: vis.sigma_v,
        sigma_r,
        coverage_1p5: coverage,
        p_wp: wp.p_wp,
        sigma_p: wp.sigma_p,
        z,
        mu_estimate,
        peak_separation: double.center_late - double.center_early,
        peak_sigma: double.sigma,
        b1_flatness_chi2_dof,
        phase_bins: rows,
        whichpath_bins: wp_rows,
    };
    Ok(PipelineOutput {
        report,
        histograms,
        deltas,
    })
}

/// Compare reconstructed phases against a truth sidecar aligned with the
/// time-tag records.
pub fn compare_truth(
    deltas: &[DeltaRecord],
    truth: &[TruthRecord],
    slr: &SlrSeries,
    constants: &PhysicalConstants,
) -> Result<TruthComparison, AnalysisError> {
    assert_eq!(deltas.len(), truth.len(), "truth sidecar length mismatch");
    let mut sq = 0.0;
    let mut n = 0usize;
    let mut signal = 0usize;
    let mut matched_signal = 0usize;
    for (d, t) in deltas.iter().zip(truth) {
        if t.background {
            continue;
        }
        signal += 1;
        if !d.matched {
            continue;
        }
        // correct pulse iff the predicted arrival agrees with the truth
        if let Some(t_ref) = t.t_ref {
            if (d.t_ref - t_ref).abs() < 1e-9 {
                matched_signal += 1;
            }
        }
        if let Some(phi_true) = t.phi {
            let phi_est = phase_of_record(d.t_refl, slr, constants)?;
            let mut diff = (phi_est - super::wrap_phase(phi_true)).abs();
            if diff > std::f64::consts::PI {
                diff = 2.0 * std::f64::consts::PI - diff;
            }
            sq += diff * diff;
            n += 1;
        }
    }
    Ok(TruthComparison {
        phi_rms: if n > 0 { (sq / n as f64).sqrt() } else { f64::NAN },
        n_compared: n,
        match_rate: if signal > 0 {
            matched_signal as f64 / signal as f64
        } else {
            f64::NAN
        },
    })
}
