//! Offline verification of encrypted-run transcripts.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::PlantConfig;
use super::ExperimentError;
use crate::controller::transcript::{first_divergence, ReplayCheck, Transcript};
use crate::crypto::CryptoParams;
use crate::plant_sim::{run_closed_loop, ClosedLoopSetup, ControllerMode};
use crate::quantizer::GainSchedule;

/// Everything needed to rerun one encrypted closed loop; stored as the
/// configuration text inside its transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub plant: PlantConfig,
    pub h: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub x0: Vec<f64>,
    pub chi0: Vec<f64>,
    pub schedule: GainSchedule,
    pub crypto: CryptoParams,
    pub noise_gain_bits: u32,
}

impl RunSpec {
    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Transcript(format!("embedded run description: {e}")))
    }

    pub fn setup(&self) -> Result<ClosedLoopSetup, ExperimentError> {
        if self.noise_gain_bits >= self.crypto.modulus_bits() {
            return Err(ExperimentError::Transcript(format!("noise gain 2^{} exceeds the modulus", self.noise_gain_bits)));
        }
        Ok(ClosedLoopSetup {
            realization: self.plant.realization()?,
            h: self.h,
            horizon: self.horizon,
            substeps: self.substeps,
            x0: DVector::from_vec(self.x0.clone()),
            chi0: DVector::from_vec(self.chi0.clone()),
            mode: ControllerMode::Encrypted {
                schedule: self.schedule.clone(),
                crypto: self.crypto.clone(),
                noise_gain: 1u128 << self.noise_gain_bits,
            },
            transcript_config: Some(self.to_toml()?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayVerdict {
    pub records: usize,
    /// Keyless recomputation of every controller step from the recorded ciphertexts.
    pub controller: ReplayCheck,
    /// First record where a fresh run from the embedded description differs.
    pub divergence: Option<usize>,
}

impl ReplayVerdict {
    pub fn passed(&self) -> bool {
        matches!(self.controller, ReplayCheck::Match { .. }) && self.divergence.is_none()
    }
}

impl std::fmt::Display for ReplayVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.controller, self.divergence) {
            (ReplayCheck::Match { records }, None) => {
                write!(f, "pass: {records} records recomputed without the key and reproduced bit for bit")
            }
            (ReplayCheck::Mismatch { record, field }, _) => {
                write!(f, "fail: record {record} field {field} differs from the keyless recomputation")
            }
            (_, Some(i)) => write!(f, "fail: rerun diverges from the transcript at record {i}"),
        }
    }
}

/// Verifies a transcript: recomputes the controller side without the key,
/// then reruns the whole loop (optionally with another seed) and compares
/// every ciphertext.
pub fn replay(transcript: &Transcript, seed: Option<u64>) -> Result<ReplayVerdict, ExperimentError> {
    let controller = transcript.verify_controller().map_err(|e| ExperimentError::Transcript(e.to_string()))?;
    let mut spec = RunSpec::from_toml(&transcript.config)?;
    if let Some(s) = seed {
        spec.crypto = spec.crypto.with_seed(s);
    }
    let mut setup = spec.setup()?;
    setup.transcript_config = Some(transcript.config.clone());
    let rerun = run_closed_loop(&setup)?;
    let fresh = rerun
        .transcript
        .ok_or_else(|| ExperimentError::Transcript("rerun produced no transcript".into()))?;
    Ok(ReplayVerdict { records: transcript.records.len(), controller, divergence: first_divergence(transcript, &fresh) })
}

pub fn replay_file(path: &Path, seed: Option<u64>) -> Result<ReplayVerdict, ExperimentError> {
    let bytes = std::fs::read(path)?;
    let t = Transcript::read_from(&mut bytes.as_slice()).map_err(|e| ExperimentError::Transcript(e.to_string()))?;
    replay(&t, seed)
}
