//! Run configuration: one JSON file describes a full pass, the source and
//! receiver, and the protocol timing. Field names carry their unit.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use delayed_choice::analysis::pipeline::InstrumentParams;
use delayed_choice::event_gen::SimulationConfig;
use delayed_choice::orbit::PassProfile;
use delayed_choice::photonics::ImperfectionModel;
use delayed_choice::protocol::ProtocolParams;
use delayed_choice::PhysicalConstants;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassSection {
    pub altitude_m: f64,
    pub min_slant_m: f64,
    pub duration_s: f64,
    pub sample_step_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub cycle_period_s: f64,
    pub t_trans_s: f64,
    pub t_shwp_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpticsSection {
    pub lambda_m: f64,
    pub delta_t_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSection {
    pub pulse_rate_hz: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSection {
    pub eta_opt: f64,
    pub eta_det_plus: f64,
    pub eta_det_minus: f64,
    pub jitter_rms_s: f64,
    pub tagger_resolution_s: f64,
    pub background_rate_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImperfectionSection {
    pub visibility_factor: f64,
    pub whichpath_purity: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlrSection {
    pub noise_rms_s: f64,
}

fn default_rtt_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub pass: PassSection,
    pub protocol: ProtocolSection,
    pub optics: OpticsSection,
    pub source: SourceSection,
    pub detection: DetectionSection,
    pub imperfections: ImperfectionSection,
    pub slr: SlrSection,
    /// Multiplies the round-trip time of the generated track. 1 is physical;
    /// other values break the rtt/range consistency on purpose, to exercise
    /// the causality verifier.
    #[serde(default = "default_rtt_scale")]
    pub rtt_scale: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants {
            lambda: self.optics.lambda_m,
            delta_t: self.optics.delta_t_s,
            ..PhysicalConstants::default()
        }
    }

    pub fn profile(&self) -> PassProfile {
        PassProfile {
            altitude: self.pass.altitude_m,
            min_slant: self.pass.min_slant_m,
            duration: self.pass.duration_s,
            sample_step: self.pass.sample_step_s,
        }
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            cycle_period: self.protocol.cycle_period_s,
            t_trans: self.protocol.t_trans_s,
            t_shwp: self.protocol.t_shwp_s,
        }
    }

    pub fn simulation(&self, seed: u64) -> SimulationConfig {
        SimulationConfig {
            pulse_rate: self.source.pulse_rate_hz,
            mu: self.source.mu,
            eta_opt: self.detection.eta_opt,
            eta_det_plus: self.detection.eta_det_plus,
            eta_det_minus: self.detection.eta_det_minus,
            jitter_rms: self.detection.jitter_rms_s,
            tagger_resolution: self.detection.tagger_resolution_s,
            background_rate: self.detection.background_rate_hz,
            seed,
            imperfections: ImperfectionModel {
                visibility_factor: self.imperfections.visibility_factor,
                whichpath_purity: self.imperfections.whichpath_purity,
                eta_plus: self.imperfections.eta_plus,
                eta_minus: self.imperfections.eta_minus,
            },
        }
    }

    /// Effective per-channel efficiencies as the analysis sees them.
    pub fn instrument(&self) -> InstrumentParams {
        InstrumentParams {
            pulse_rate: self.source.pulse_rate_hz,
            tagger_resolution: self.detection.tagger_resolution_s,
            eta_opt: self.detection.eta_opt,
            eta_det_plus: self.detection.eta_det_plus * self.imperfections.eta_plus,
            eta_det_minus: self.detection.eta_det_minus * self.imperfections.eta_minus,
            jitter_rms: self.detection.jitter_rms_s,
        }
    }
}
