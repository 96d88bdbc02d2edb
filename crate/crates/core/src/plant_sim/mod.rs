//! Continuous-time plant simulation under zero-order hold.

mod closed_loop;
mod trace;

use nalgebra::{dmatrix, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerError;
use crate::matrix_time::{exp_and_gramian, ContinuousRealization, MatrixTimeError};

pub use closed_loop::{run_closed_loop, ClosedLoopRun, ClosedLoopSetup, ControllerMode, SampleInfo, StepFailure};
pub use trace::{mrms, ClosedLoopTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("matrix function: {0}")]
    Matrix(#[from] MatrixTimeError),
    #[error("controller: {0}")]
    Controller(#[from] ControllerError),
    #[error("invalid setup: {0}")]
    Config(String),
    #[error("trace output: {0}")]
    Io(String),
}

/// Physical constants of the armature-controlled DC motor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcMotorParams {
    /// Armature resistance R_a.
    pub resistance: f64,
    /// Armature inductance L_a.
    pub inductance: f64,
    /// Viscous friction B_M.
    pub friction: f64,
    /// Torque / back-EMF constant k_d.
    pub torque_constant: f64,
    /// Rotor inertia J.
    pub inertia: f64,
}

impl Default for DcMotorParams {
    fn default() -> Self {
        Self { resistance: 7.2, inductance: 0.0917, friction: 0.0004, torque_constant: 0.1236, inertia: 0.0007046 }
    }
}

impl DcMotorParams {
    /// State x = [current, speed, angle], input voltage, output angle.
    pub fn matrices(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (ra, la, bm, kd, j) = (self.resistance, self.inductance, self.friction, self.torque_constant, self.inertia);
        let a = dmatrix![
            -ra / la, -kd / la, 0.0;
            kd / j, -bm / j, 0.0;
            0.0, 1.0, 0.0
        ];
        (a, dmatrix![1.0 / la; 0.0; 0.0], dmatrix![0.0, 0.0, 1.0])
    }
}

/// Published feedback and observer gains for the DC motor.
pub fn dc_motor_gains() -> (DMatrix<f64>, DMatrix<f64>) {
    (dmatrix![1.65, -6.26, -43.08], dmatrix![69.11; 71.91; 24.13])
}

/// DC motor with its published K and L.
pub fn dc_motor() -> ContinuousRealization {
    let (a, b, c) = DcMotorParams::default().matrices();
    let (k, l) = dc_motor_gains();
    ContinuousRealization::new(a, b, c, k, l).expect("DC motor realization is well formed")
}

/// Exact propagator of ẋ = A x + B u over dt with u held constant.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub dt: f64,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl Propagator {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<Self, MatrixTimeError> {
        let (phi, g) = exp_and_gramian(a, dt)?;
        Ok(Self { dt, phi, gamma: g * b })
    }

    pub fn apply(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.gamma * u
    }
}

/// LTI plant with state, clock and a cached propagator.
#[derive(Clone, Debug)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    x: DVector<f64>,
    t: f64,
    cache: Option<Propagator>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, x0: DVector<f64>) -> Result<Self, SimError> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n || x0.len() != n {
            return Err(SimError::Config("inconsistent plant dimensions".into()));
        }
        Ok(Self { a, b, c, x: x0, t: 0.0, cache: None })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn output(&self) -> DVector<f64> {
        &self.c * &self.x
    }

    /// Advances by dt with u held constant; returns the new state.
    pub fn plant_step(&mut self, u: &DVector<f64>, dt: f64) -> Result<&DVector<f64>, SimError> {
        if u.len() != self.b.ncols() {
            return Err(SimError::Config(format!("input has {} entries, expected {}", u.len(), self.b.ncols())));
        }
        if self.cache.as_ref().map(|p| p.dt) != Some(dt) {
            self.cache = Some(Propagator::new(&self.a, &self.b, dt)?);
        }
        let p = self.cache.as_ref().expect("propagator cached above");
        self.x = p.apply(&self.x, u);
        self.t += dt;
        Ok(&self.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, Complex};

    fn sorted_eigs(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
        let mut e: Vec<_> = m.clone().complex_eigenvalues().iter().cloned().collect();
        e.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        e
    }

    #[test]
    fn dc_motor_spectra() {
        let cr = dc_motor();
        let ol = sorted_eigs(&cr.a);
        assert!((ol[0].re + 75.36).abs() < 0.01);
        assert!((ol[1].re + 3.73).abs() < 0.01);
        assert!(ol[2].re.abs() < 1e-12);
        let fb = sorted_eigs(&(&cr.a + &cr.b * &cr.k));
        assert!((fb[0].re + 27.07).abs() < 0.01 && (fb[0].im.abs() - 105.5).abs() < 0.1);
        assert!((fb[2].re + 6.94).abs() < 0.01);
        let obs = sorted_eigs(&(&cr.a - &cr.l * &cr.c));
        assert!((obs[0].re + 78.35).abs() < 0.01);
        assert!((obs[1].re + 12.43).abs() < 0.01 && (obs[1].im.abs() - 12.60).abs() < 0.01);
    }

    #[test]
    fn plant_step_matches_scalar_solution() {
        let mut p = LtiPlant::new(dmatrix![-2.0], dmatrix![1.0], dmatrix![1.0], dvector![1.0]).unwrap();
        for _ in 0..10 {
            p.plant_step(&dvector![3.0], 0.05).unwrap();
        }
        // x(t) = 1.5 + (1 - 1.5) e^{-2t}
        let want = 1.5 - 0.5 * (-1.0f64).exp();
        assert!((p.state()[0] - want).abs() < 1e-13);
        assert!((p.time() - 0.5).abs() < 1e-15);
        assert!(p.plant_step(&dvector![1.0, 2.0], 0.1).is_err());
    }
}
