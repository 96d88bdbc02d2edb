use nalgebra::{DMatrix, DVector};

use super::{ClosedLoopTrace, Propagator, SimError};
use crate::controller::transcript::Transcript;
use crate::controller::{ControllerError, EncryptedSession, IdealController, QuantizedController, QuantizedMatrices, StepRecord};
use crate::crypto::CryptoParams;
use crate::linalg::vstack;
use crate::matrix_time::{discretize_zoh, ContinuousRealization};
use crate::quantizer::GainSchedule;
use crate::stability::RealizedUncertainty;

/// Plant states beyond this magnitude count as divergence.
const DIVERGENCE_LIMIT: f64 = 1e100;

#[derive(Clone, Debug)]
pub enum ControllerMode {
    /// Discrete observer controller without quantization.
    Ideal,
    /// Integer reference recursion with the given gains.
    Quantized { schedule: GainSchedule },
    /// Encrypted controller; `noise_gain` is the encryption gain G.
    Encrypted { schedule: GainSchedule, crypto: CryptoParams, noise_gain: u128 },
}

#[derive(Clone, Debug)]
pub struct ClosedLoopSetup {
    pub realization: ContinuousRealization,
    pub h: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub x0: DVector<f64>,
    pub chi0: DVector<f64>,
    pub mode: ControllerMode,
    /// When set in encrypted mode, keep a transcript tagged with this text.
    pub transcript_config: Option<String>,
}

impl ClosedLoopSetup {
    pub fn steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }
}

/// Per-interval quantities needed by the audit.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleInfo {
    pub k: usize,
    pub t: f64,
    pub u: DVector<f64>,
    /// Constant input of the virtual controller dynamics on [t_k, t_{k+1}).
    pub drive: DVector<f64>,
    /// η(t_k) = ℳ [χ̃; ỹ].
    pub eta: DVector<f64>,
    /// |χ_v(t_{k+1}⁻) − χ(t_{k+1})|, zero up to rounding.
    pub reset_gap: f64,
}

/// A run that stopped early, with the step and reason.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

#[derive(Debug)]
pub struct ClosedLoopRun {
    pub trace: ClosedLoopTrace,
    pub samples: Vec<SampleInfo>,
    /// Controller step records (quantized and encrypted modes).
    pub records: Vec<StepRecord>,
    /// Realized uncertainty of the quantized controller (quantized and encrypted modes).
    pub uncertainty: Option<RealizedUncertainty>,
    pub transcript: Option<Transcript>,
    pub failure: Option<StepFailure>,
}

enum Driver {
    Ideal(IdealController),
    Quantized(QuantizedController),
    Encrypted(Box<EncryptedSession>),
}

impl Driver {
    fn step(&mut self, y: &DVector<f64>) -> Result<(DVector<f64>, Option<StepRecord>), ControllerError> {
        match self {
            Driver::Ideal(c) => Ok((c.step(y).0, None)),
            Driver::Quantized(c) => {
                let r = c.step(y)?;
                Ok((r.u.clone(), Some(r)))
            }
            Driver::Encrypted(s) => {
                let r = s.step(y)?;
                Ok((r.u.clone(), Some(r)))
            }
        }
    }

    fn state(&self) -> &DVector<f64> {
        match self {
            Driver::Ideal(c) => &c.chi,
            Driver::Quantized(c) => &c.chi,
            Driver::Encrypted(s) => s.state(),
        }
    }
}

fn validate(setup: &ClosedLoopSetup) -> Result<(), SimError> {
    setup.realization.validate()?;
    let n = setup.realization.n();
    if !(setup.h.is_finite() && setup.h > 0.0) {
        return Err(SimError::Config(format!("sampling period {} must be positive", setup.h)));
    }
    if !(setup.horizon.is_finite() && setup.horizon >= setup.h) {
        return Err(SimError::Config(format!("horizon {} shorter than one period", setup.horizon)));
    }
    if setup.substeps == 0 {
        return Err(SimError::Config("substeps must be at least 1".into()));
    }
    if setup.x0.len() != n || setup.chi0.len() != n {
        return Err(SimError::Config(format!("initial states must have {n} entries")));
    }
    Ok(())
}

/// Simulates plant and controller over the horizon.
///
/// Controller failures (overflow, exhausted noise budget) and divergence end
/// the run early; the trace up to that point is kept and the cause is
/// reported in `failure`.
pub fn run_closed_loop(setup: &ClosedLoopSetup) -> Result<ClosedLoopRun, SimError> {
    validate(setup)?;
    let cr = &setup.realization;
    let (n, m, r) = (cr.n(), cr.m(), cr.r());
    let h = setup.h;
    let disc = discretize_zoh(cr, h)?;

    let (mut driver, uncertainty) = match &setup.mode {
        ControllerMode::Ideal => {
            (Driver::Ideal(IdealController::new(disc.clone(), cr.c.clone(), cr.k.clone(), setup.chi0.clone())), None)
        }
        ControllerMode::Quantized { schedule } | ControllerMode::Encrypted { schedule, .. } => {
            let mats = QuantizedMatrices::new(&disc, &cr.c, &cr.k, schedule.static_gain)?;
            let unc = RealizedUncertainty::new(cr, &mats.a_bar(), &mats.b_bar(), &mats.l_bar(), &mats.c_bar(), &mats.k_bar(), h)?;
            let driver = match &setup.mode {
                ControllerMode::Encrypted { crypto, noise_gain, .. } => Driver::Encrypted(Box::new(EncryptedSession::new(
                    &mats,
                    schedule.clone(),
                    crypto.clone(),
                    *noise_gain,
                    setup.chi0.clone(),
                    setup.transcript_config.clone(),
                )?)),
                _ => Driver::Quantized(QuantizedController::new(mats, schedule.clone(), setup.chi0.clone())?),
            };
            (driver, Some(unc))
        }
    };

    let dt = h / setup.substeps as f64;
    let plant_prop = Propagator::new(&cr.a, &cr.b, dt)?;
    let (a_sim, b_sim, l_sim, c_sim) = match &uncertainty {
        Some(u) => (u.virt.a_v.clone(), u.virt.b_v.clone(), u.virt.l_v.clone(), &cr.c + &u.c_tilde),
        None => (cr.a.clone(), cr.b.clone(), cr.l.clone(), cr.c.clone()),
    };
    let chi_prop = Propagator::new(&a_sim, &DMatrix::identity(n, n), dt)?;

    let steps = setup.steps();
    let mut trace = ClosedLoopTrace::new(n, m, r, h, setup.substeps);
    let mut samples = Vec::with_capacity(steps);
    let mut records = Vec::new();
    let mut failure = None;
    let mut x = setup.x0.clone();
    let mut chi_v = setup.chi0.clone();
    let mut last_u = DVector::zeros(m);
    let mut last_eta = 0.0;

    for k in 0..steps {
        let t_k = k as f64 * h;
        let y = &cr.c * &x;
        let (u, rec) = match driver.step(&y) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(StepFailure { step: k, time: t_k, reason: e.to_string() });
                break;
            }
        };
        let (drive, eta) = match (&rec, &uncertainty) {
            (Some(rec), Some(unc)) => {
                let chi_tilde = &rec.chi_bar - &chi_v;
                let drive = &b_sim * &rec.u + &l_sim * (&rec.y_bar - &c_sim * &rec.chi_bar) + &unc.virt.d * &chi_tilde;
                let eta = &unc.eta_gain * vstack(&chi_tilde, &(&rec.y_bar - &y));
                (drive, eta)
            }
            _ => (&b_sim * &u + &l_sim * (&y - &c_sim * &chi_v), DVector::zeros(2 * n)),
        };
        let eta_norm = eta.norm();
        for s in 0..setup.substeps {
            let t = (k * setup.substeps + s) as f64 * dt;
            trace.push(t, x.as_slice(), chi_v.as_slice(), u.as_slice(), (&cr.c * &x).as_slice(), eta_norm);
            x = plant_prop.apply(&x, &u);
            chi_v = chi_prop.apply(&chi_v, &drive);
        }
        let next = driver.state();
        let reset_gap = (&chi_v - next).norm();
        chi_v = next.clone();
        samples.push(SampleInfo { k, t: t_k, u: u.clone(), drive, eta, reset_gap });
        if let Some(rec) = rec {
            records.push(rec);
        }
        last_u = u;
        last_eta = eta_norm;
        let bad = x.iter().chain(chi_v.iter()).any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT);
        if bad {
            failure = Some(StepFailure { step: k + 1, time: (k + 1) as f64 * h, reason: "state diverged".into() });
            break;
        }
    }
    let done = samples.len();
    trace.push(
        (done * setup.substeps) as f64 * dt,
        x.as_slice(),
        chi_v.as_slice(),
        last_u.as_slice(),
        (&cr.c * &x).as_slice(),
        last_eta,
    );
    let transcript = match &mut driver {
        Driver::Encrypted(s) => s.take_transcript(),
        _ => None,
    };
    Ok(ClosedLoopRun { trace, samples, records, uncertainty, transcript, failure })
}
