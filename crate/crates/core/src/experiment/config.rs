//! Experiment configuration files and the bundled presets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::crypto::CryptoParams;
use crate::matrix_time::ContinuousRealization;
use crate::plant_sim::dc_motor;
use crate::quantizer::{GainSchedule, ScheduleKind};

const PRESETS: &[(&str, &str)] = &[
    ("table1", include_str!("../../presets/table1.toml")),
    ("table2", include_str!("../../presets/table2.toml")),
    ("table3", include_str!("../../presets/table3.toml")),
    ("fig3", include_str!("../../presets/fig3.toml")),
    ("fig4", include_str!("../../presets/fig4.toml")),
    ("fig5", include_str!("../../presets/fig5.toml")),
    ("stable_demo", include_str!("../../presets/stable_demo.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantConfig {
    DcMotor,
    /// Matrices given row by row.
    Custom { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>, k: Vec<Vec<f64>>, l: Vec<Vec<f64>> },
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ExperimentError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(ExperimentError::Config(format!("matrix {name} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl PlantConfig {
    pub fn realization(&self) -> Result<ContinuousRealization, ExperimentError> {
        match self {
            PlantConfig::DcMotor => Ok(dc_motor()),
            PlantConfig::Custom { a, b, c, k, l } => ContinuousRealization::new(
                matrix("a", a)?,
                matrix("b", b)?,
                matrix("c", c)?,
                matrix("k", k)?,
                matrix("l", l)?,
            )
            .map_err(|e| ExperimentError::Config(format!("plant: {e}"))),
        }
    }

    pub fn from_realization(cr: &ContinuousRealization) -> Self {
        PlantConfig::Custom { a: rows(&cr.a), b: rows(&cr.b), c: rows(&cr.c), k: rows(&cr.k), l: rows(&cr.l) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ideal,
    Quantized,
    Encrypted,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ideal => "ideal",
            Mode::Quantized => "quantized",
            Mode::Encrypted => "encrypted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Initial plant state; defaults to a unit error in the last state.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Initial controller state; defaults to zero.
    #[serde(default)]
    pub chi0: Option<Vec<f64>>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_substeps() -> usize {
    50
}

fn default_mode() -> Mode {
    Mode::Encrypted
}

impl SimulationConfig {
    pub fn initial_states(&self, n: usize) -> Result<(DVector<f64>, DVector<f64>), ExperimentError> {
        let x0 = match &self.x0 {
            Some(v) => DVector::from_vec(v.clone()),
            None => {
                let mut v = DVector::zeros(n);
                v[n - 1] = 1.0;
                v
            }
        };
        let chi0 = self.chi0.as_ref().map_or_else(|| DVector::zeros(n), |v| DVector::from_vec(v.clone()));
        if x0.len() != n || chi0.len() != n {
            return Err(ExperimentError::Config(format!("x0 and chi0 must have {n} entries")));
        }
        Ok((x0, chi0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoConfig {
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u32,
    #[serde(default = "default_key_dim")]
    pub key_dim: usize,
    #[serde(default = "default_omega_bits")]
    pub omega_bits: u32,
    #[serde(default = "default_e_max")]
    pub e_max: u64,
    /// Encryption gain G = 2^noise_gain_bits.
    #[serde(default = "default_noise_gain_bits")]
    pub noise_gain_bits: u32,
}

fn default_modulus_bits() -> u32 {
    126
}
fn default_key_dim() -> usize {
    8
}
fn default_omega_bits() -> u32 {
    1
}
fn default_e_max() -> u64 {
    1
}
fn default_noise_gain_bits() -> u32 {
    44
}

impl Default for CryptoConfig {
    fn default() -> Self {
        Self {
            modulus_bits: default_modulus_bits(),
            key_dim: default_key_dim(),
            omega_bits: default_omega_bits(),
            e_max: default_e_max(),
            noise_gain_bits: default_noise_gain_bits(),
        }
    }
}

impl CryptoConfig {
    pub fn params(&self, seed: u64) -> Result<CryptoParams, ExperimentError> {
        CryptoParams::new(self.modulus_bits, self.key_dim, self.omega_bits, self.e_max, seed)
            .map_err(|e| ExperimentError::Config(format!("crypto: {e}")))
    }

    pub fn noise_gain(&self) -> Result<u128, ExperimentError> {
        if self.noise_gain_bits + 2 >= self.modulus_bits {
            return Err(ExperimentError::Config(format!(
                "noise gain 2^{} leaves no room below q = 2^{}",
                self.noise_gain_bits, self.modulus_bits
            )));
        }
        Ok(1u128 << self.noise_gain_bits)
    }
}

/// Static gain Λ: one value, one value per h, or Λ_min from a certificate
/// at each h (times `gain_factor`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Value(f64),
    PerPeriod(Vec<f64>),
    Named(String),
}

pub const FROM_CERTIFICATE: &str = "from-certificate";

impl GainSpec {
    pub fn from_certificate(&self) -> bool {
        matches!(self, GainSpec::Named(s) if s == FROM_CERTIFICATE)
    }

    fn validate(&self, periods: usize) -> Result<(), ExperimentError> {
        let ok = |v: f64| v.is_finite() && v >= 1.0;
        match self {
            GainSpec::Value(v) if ok(*v) => Ok(()),
            GainSpec::PerPeriod(v) if v.len() == periods && v.iter().all(|g| ok(*g)) => Ok(()),
            GainSpec::PerPeriod(v) => Err(ExperimentError::Config(format!(
                "static_gain lists {} values for {periods} sampling periods (each must be >= 1)",
                v.len()
            ))),
            GainSpec::Named(_) if self.from_certificate() => Ok(()),
            other => Err(ExperimentError::Config(format!(
                "static_gain must be a number >= 1, a list, or \"{FROM_CERTIFICATE}\", got {other:?}"
            ))),
        }
    }

    /// The fixed gain for the i-th period, or None when it comes from a certificate.
    pub fn fixed(&self, i: usize) -> Option<f64> {
        match self {
            GainSpec::Value(v) => Some(*v),
            GainSpec::PerPeriod(v) => v.get(i).copied(),
            GainSpec::Named(_) => None,
        }
    }
}

/// Dynamic gain rule; the static gain is supplied per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
}

impl ScheduleSpec {
    pub fn schedule(&self, static_gain: f64) -> Result<GainSchedule, ExperimentError> {
        GainSchedule::new(static_gain, self.kind.clone(), self.cap)
            .map_err(|e| ExperimentError::Config(format!("schedule {}: {e}", self.label())))
    }

    pub fn label(&self) -> String {
        let base = match &self.kind {
            ScheduleKind::Power { exponent } => format!("k^{exponent}"),
            ScheduleKind::Fixed { value } => format!("fixed {value}"),
            ScheduleKind::Explicit { values } => format!("list of {}", values.len()),
        };
        match self.cap {
            Some(c) => format!("{base} capped at {c}"),
            None => base,
        }
    }

    /// File-name friendly form of the label.
    pub fn slug(&self) -> String {
        self.label().replace(' ', "_").replace('^', "p")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityConfig {
    pub h: Vec<f64>,
    /// Also compute Λ_min for every certified period.
    #[serde(default = "yes")]
    pub min_gain: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrmsConfig {
    pub window: f64,
    pub at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunsConfig {
    pub h: Vec<f64>,
    pub static_gain: GainSpec,
    #[serde(default = "one")]
    pub gain_factor: f64,
    pub schedules: Vec<ScheduleSpec>,
    #[serde(default)]
    pub mrms: Option<MrmsConfig>,
    /// Write a trace CSV per run.
    #[serde(default = "yes")]
    pub traces: bool,
    /// Keep the ciphertext transcript of encrypted runs.
    #[serde(default)]
    pub transcripts: bool,
    #[serde(default = "yes")]
    pub plots: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub h: f64,
    pub static_gain: GainSpec,
    #[serde(default = "one")]
    pub gain_factor: f64,
    /// Quantized-loop schedules to audit; an unquantized run is always audited.
    pub schedules: Vec<ScheduleSpec>,
    /// σ for the residual set of fixed schedules; defaults to μ4 η̄².
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub crypto: CryptoConfig,
    #[serde(default)]
    pub feasibility: Option<FeasibilityConfig>,
    #[serde(default)]
    pub runs: Option<RunsConfig>,
    #[serde(default)]
    pub audit: Option<AuditConfig>,
}

fn positive(name: &str, v: f64) -> Result<(), ExperimentError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn grid(name: &str, v: &[f64]) -> Result<(), ExperimentError> {
    if v.is_empty() {
        return Err(ExperimentError::Config(format!("{name} grid is empty")));
    }
    v.iter().try_for_each(|x| positive(name, *x))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ExperimentError> {
        let text = preset_text(name).ok_or_else(|| {
            ExperimentError::Config(format!(
                "unknown preset {name}; available: {}",
                preset_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cr = self.plant.realization()?;
        let sim = &self.simulation;
        positive("horizon", sim.horizon)?;
        if sim.substeps == 0 {
            return Err(ExperimentError::Config("substeps must be at least 1".into()));
        }
        sim.initial_states(cr.n())?;
        self.crypto.params(self.seed)?;
        self.crypto.noise_gain()?;
        if self.feasibility.is_none() && self.runs.is_none() && self.audit.is_none() {
            return Err(ExperimentError::Config("nothing to do: no feasibility, runs or audit section".into()));
        }
        if let Some(f) = &self.feasibility {
            grid("feasibility h", &f.h)?;
        }
        if let Some(r) = &self.runs {
            grid("runs h", &r.h)?;
            r.static_gain.validate(r.h.len())?;
            positive("gain_factor", r.gain_factor)?;
            if r.schedules.is_empty() && sim.mode != Mode::Ideal {
                return Err(ExperimentError::Config("runs need at least one schedule".into()));
            }
            for s in &r.schedules {
                s.schedule(1.0)?;
            }
            if let Some(m) = &r.mrms {
                positive("mrms window", m.window)?;
                if !(m.at > m.window && m.at <= sim.horizon + 1e-9) {
                    return Err(ExperimentError::Config(format!(
                        "mrms time {} must exceed the window {} and not pass the horizon {}",
                        m.at, m.window, sim.horizon
                    )));
                }
            }
            for h in &r.h {
                if sim.horizon < *h {
                    return Err(ExperimentError::Config(format!("horizon shorter than h = {h}")));
                }
            }
        }
        if let Some(a) = &self.audit {
            positive("audit h", a.h)?;
            a.static_gain.validate(1)?;
            positive("gain_factor", a.gain_factor)?;
            if sim.substeps < crate::stability::MIN_SUBSTEPS {
                return Err(ExperimentError::Config(format!(
                    "the audit needs at least {} substeps per interval",
                    crate::stability::MIN_SUBSTEPS
                )));
            }
            for s in &a.schedules {
                s.schedule(1.0)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        let text = preset_text("table1").unwrap().replace("h = [0.01, 0.03, 0.05, 0.07, 0.083]", "h = []");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn gain_spec_forms() {
        let cfg = ExperimentConfig::preset("fig3").unwrap();
        let runs = cfg.runs.unwrap();
        assert_eq!(runs.static_gain.fixed(1), Some(9.88e3));
        assert!(GainSpec::Named(FROM_CERTIFICATE.into()).from_certificate());
        assert!(GainSpec::Named("nope".into()).validate(1).is_err());
        assert!(GainSpec::PerPeriod(vec![1e3]).validate(2).is_err());
    }

    #[test]
    fn custom_plant_round_trip() {
        let cr = dc_motor();
        let p = PlantConfig::from_realization(&cr);
        assert_eq!(p.realization().unwrap().a, cr.a);
        let bad = PlantConfig::Custom { a: vec![vec![1.0], vec![1.0, 2.0]], b: vec![], c: vec![], k: vec![], l: vec![] };
        assert!(bad.realization().is_err());
    }
}
