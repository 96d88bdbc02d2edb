//! Evaluation of the Lyapunov functionals along a simulated trajectory.

use nalgebra::{DMatrix, DVector};

use super::certificate::MarginReport;
use super::lmi::{margins, CertificateVars};
use super::uncertainty::{nominal_closed_loop, RealizedUncertainty};
use super::StabilityError;
use crate::linalg::{block, lambda_max, lambda_min};
use crate::matrix_time::ContinuousRealization;
use crate::plant_sim::{ClosedLoopTrace, SampleInfo};

/// Fewest substeps per sampling interval accepted for the trapezoid integrals.
pub const MIN_SUBSTEPS: usize = 50;

/// Relative allowance for trapezoid error in the interval integrals.
const INTEGRATION_TOL: f64 = 1e-3;

/// Constants of the dissipation inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditConstants {
    /// λ_min(P) and λ_max(P).
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
    /// Upper bound of ‖Υ(t)‖ over an interval.
    pub varsigma: f64,
    pub s: f64,
}

/// Plant-side data the functionals need: the matrices driving z and the
/// realized uncertainty Δ0 = [Δ𝒜, Δ𝒜_c, 0].
#[derive(Clone, Debug)]
pub struct AuditModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// State matrix of the virtual controller dynamics.
    pub a_ctrl: DMatrix<f64>,
    pub cal_a: DMatrix<f64>,
    pub cal_ac: DMatrix<f64>,
    pub delta0: DMatrix<f64>,
    pub h: f64,
}

impl AuditModel {
    /// Model of a run; `uncertainty` is None for the unquantized controller.
    pub fn new(cr: &ContinuousRealization, uncertainty: Option<&RealizedUncertainty>, h: f64) -> Self {
        let (cal_a, cal_ac) = nominal_closed_loop(cr);
        let nz = cal_a.nrows();
        let (a_ctrl, delta0) = match uncertainty {
            Some(u) => {
                let d0 = block(&[&[&u.delta_cal_a, &u.delta_cal_ac, &DMatrix::zeros(nz, nz)]]);
                (u.virt.a_v.clone(), d0)
            }
            None => (cr.a.clone(), DMatrix::zeros(nz, 3 * nz)),
        };
        Self { a: cr.a.clone(), b: cr.b.clone(), a_ctrl, cal_a, cal_ac, delta0, h }
    }
}

/// Per-interval values on [t_k, t_{k+1}).
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalAudit {
    pub k: usize,
    pub v_start: f64,
    pub v_end: f64,
    /// 𝒲(t_k⁺) = z_kᵀ H z_k.
    pub w_start: f64,
    /// 𝒰(t_{k+1}⁻).
    pub u_end: f64,
    /// 𝒲(t_{k+1}⁻).
    pub w_end: f64,
    /// ℱ(t_k⁺) = V_k + h 𝒲(t_k⁺).
    pub f_start: f64,
    /// ℱ(t_{k+1}⁻) = V_{k+1} + h 𝒰(t_{k+1}⁻).
    pub f_end: f64,
    pub int_z2: f64,
    pub int_eta2: f64,
    /// V_{k+1} − V_k + μ3∫‖z‖² − μ4∫‖η‖², nonpositive when the inequality holds.
    pub dissipation_residual: f64,
    /// Same with ℱ in place of V.
    pub functional_residual: f64,
    /// 𝒰(t_{k+1}⁻) − 𝒲(t_k⁺), nonnegative when the jump condition holds.
    pub jump_gap: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovAudit {
    pub constants: AuditConstants,
    /// The LMIs re-evaluated at the certificate for this model.
    pub lmi: MarginReport,
    pub intervals: Vec<IntervalAudit>,
    /// Intervals failing the dissipation or jump condition.
    pub violations: usize,
    /// Intervals where the ℱ inequality fails beyond integration tolerance.
    pub functional_violations: usize,
    pub v0: f64,
    /// ∫‖z‖² over the trace.
    pub total_z2: f64,
    /// ∫‖η‖² over the trace.
    pub total_eta2: f64,
}

impl LyapunovAudit {
    /// No interval violation, valid LMIs and μ3 > 0.
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.lmi.feasible && self.constants.mu3 > 0.0
    }

    /// μ3⁻¹ (V_0 + μ4 ℰ) for a disturbance energy bound ℰ.
    pub fn cumulative_bound(&self, energy: f64) -> f64 {
        (self.v0 + self.constants.mu4 * energy) / self.constants.mu3
    }

    /// ∫‖z‖² ≤ (1 + tol) μ3⁻¹ (V_0 + μ4 ℰ).
    pub fn cumulative_holds(&self, energy: f64, tol: f64) -> bool {
        self.total_z2 <= (1.0 + tol) * self.cumulative_bound(energy)
    }
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Υ(t) at t = t_k (`at_start`) or t = t_{k+1}.
fn upsilon(v: &CertificateVars, m: &AuditModel, at_start: bool) -> DMatrix<f64> {
    let nz = m.cal_a.nrows();
    let z = DMatrix::zeros(nz, nz);
    let i = DMatrix::identity(nz, nz);
    let e1 = block(&[&[&i, &z, &z]]);
    let e2 = block(&[&[&z, &i, &z]]);
    let e3 = block(&[&[&z, &z, &i]]);
    let h = m.h;
    let pe1 = &v.p * &e1 * 2.0;
    if at_start {
        let phi0 = block(&[&[&m.cal_a, &m.cal_ac, &z]]);
        let inner = &v.h * &e1 + &v.w1 * (&e1 - &e2) + &v.w2 * &e2 + &v.r * (phi0 + &m.delta0);
        pe1 + inner * (2.0 * h)
    } else {
        // Φ6ᵀ U1 Φ4 = top n_z rows of U1 times [E1; E2]
        let phi4 = block(&[&[&e1], &[&e2]]);
        let u1_top = v.u1.rows(0, nz).into_owned();
        pe1 + (u1_top * phi4 + &v.u2 * &e3) * (2.0 * h)
    }
}

/// μ1..μ4 with s = ½ √(2 λ_min(Ψ) / ς).
pub fn audit_constants(v: &CertificateVars, m: &AuditModel) -> Result<AuditConstants, StabilityError> {
    let varsigma = [true, false]
        .into_iter()
        .map(|s| upsilon(v, m, s).singular_values().max())
        .fold(0.0, f64::max);
    let psi_min = lambda_min(&v.psi);
    if !(varsigma.is_finite() && psi_min.is_finite()) {
        return Err(StabilityError::Inadmissible(format!("λ_min(Ψ) = {psi_min:e}, ς = {varsigma:e}")));
    }
    // an indefinite Ψ still gets constants (with μ3 < 0) so the audit can report it
    let varsigma = varsigma.max(f64::MIN_POSITIVE);
    let s = 0.5 * (2.0 * psi_min.abs() / varsigma).sqrt();
    Ok(AuditConstants {
        mu1: lambda_min(&v.p),
        mu2: lambda_max(&v.p),
        mu3: psi_min - varsigma * s * s / 2.0,
        mu4: lambda_max(&v.r) + varsigma / (2.0 * s * s),
        varsigma,
        s,
    })
}

fn trapezoid(vals: &[f64], dt: f64) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    dt * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[vals.len() - 1]))
}

/// Audits every complete interval of a run against the certificate.
pub fn lyapunov_audit(
    trace: &ClosedLoopTrace,
    samples: &[SampleInfo],
    cert: &CertificateVars,
    model: &AuditModel,
) -> Result<LyapunovAudit, StabilityError> {
    if trace.substeps < MIN_SUBSTEPS {
        return Err(StabilityError::Inadmissible(format!(
            "{} substeps per interval, at least {MIN_SUBSTEPS} needed",
            trace.substeps
        )));
    }
    let c = audit_constants(cert, model)?;
    let n = trace.n;
    let nz = 2 * n;
    let h = model.h;
    let sub = trace.substeps;
    let dt = h / sub as f64;
    let big_u = cert.big_u();
    let zvec = |i: usize| DVector::from_vec(trace.z_at(i));
    let intervals_n = trace.intervals().min(samples.len());
    let mut intervals = Vec::with_capacity(intervals_n);
    let (mut total_z2, mut total_eta2) = (0.0, 0.0);
    for (k, sample) in samples.iter().enumerate().take(intervals_n) {
        let i0 = trace.sample_index(k);
        let zk = zvec(i0);
        let mut z2 = Vec::with_capacity(sub + 1);
        let mut zdot_r = Vec::with_capacity(sub + 1);
        let mut zsum = DVector::zeros(nz);
        let mut zs = Vec::with_capacity(sub + 1);
        for s in 0..=sub {
            let i = i0 + s;
            let x = DVector::from_column_slice(trace.x_at(i));
            let chi = DVector::from_column_slice(trace.chi_at(i));
            let xdot = &model.a * &x + &model.b * &sample.u;
            let chidot = &model.a_ctrl * &chi + &sample.drive;
            let zdot = crate::linalg::vstack(&(&xdot - &chidot), &chidot);
            let z = zvec(i);
            z2.push(z.norm_squared());
            zdot_r.push(quad(&cert.r, &zdot));
            zs.push(z);
        }
        for (s, z) in zs.iter().enumerate() {
            let w = if s == 0 || s == sub { 0.5 } else { 1.0 };
            zsum += z * w;
        }
        let phi = zsum * (dt / h);
        let z_end = &zs[sub];
        let int_z2 = trapezoid(&z2, dt);
        let int_eta2 = h * sample.eta.norm_squared();
        let int_zdot_r = trapezoid(&zdot_r, dt);

        let v_start = quad(&cert.p, &zk);
        let v_end = quad(&cert.p, z_end);
        let xi = {
            let mut x = DVector::zeros(3 * nz);
            x.rows_mut(0, nz).copy_from(z_end);
            x.rows_mut(nz, nz).copy_from(&zk);
            x.rows_mut(2 * nz, nz).copy_from(&phi);
            x
        };
        let u_end = quad(&big_u, &xi);
        let w_start = quad(&cert.h, &zk);
        let dz = z_end - &zk;
        let w_end = h * quad(&cert.f, &zk)
            + quad(&cert.h, z_end)
            + dz.dot(&(&cert.w1 * &dz + &cert.w2 * &zk * 2.0))
            + int_zdot_r;
        let f_start = v_start + h * w_start;
        let f_end = v_end + h * u_end;
        let supply = c.mu4 * int_eta2 - c.mu3 * int_z2;
        let dissipation_residual = v_end - v_start - supply;
        let functional_residual = f_end - f_start - supply;
        let jump_gap = u_end - w_start;
        let slack = INTEGRATION_TOL * c.mu3 * int_z2 + 1e-9 * (v_start + v_end);
        let ok = dissipation_residual <= slack && jump_gap >= -1e-9 * (u_end.abs() + w_start.abs());
        total_z2 += int_z2;
        total_eta2 += int_eta2;
        intervals.push(IntervalAudit {
            k,
            v_start,
            v_end,
            w_start,
            u_end,
            w_end,
            f_start,
            f_end,
            int_z2,
            int_eta2,
            dissipation_residual,
            functional_residual,
            jump_gap,
            ok,
        });
    }
    let violations = intervals.iter().filter(|i| !i.ok).count();
    let functional_violations = intervals
        .iter()
        .filter(|i| {
            let scale = c.mu3 * i.int_z2 + h * (i.u_end.abs() + i.w_start.abs()) + 1e-9 * (i.f_start.abs() + i.f_end.abs());
            i.functional_residual > INTEGRATION_TOL * scale
        })
        .count();
    let lmi_margins = margins(&model.cal_a, &model.cal_ac, h, cert);
    let lmi = MarginReport { feasible: lmi_margins.min() >= 0.0, margins: lmi_margins, tolerance: 0.0 };
    let v0 = intervals.first().map_or(0.0, |i| i.v_start);
    Ok(LyapunovAudit { constants: c, lmi, intervals, violations, functional_violations, v0, total_z2, total_eta2 })
}

/// The set Ω_ρ that trajectories reach under a bounded disturbance.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet {
    pub rho: f64,
    /// V̄_ρ = λ_max(P) ρ, the largest V on ‖z‖² ≤ ρ.
    pub v_bar: f64,
    pub sigma: f64,
}

impl ResidualSet {
    /// Latest time at which a trajectory with V(t_k) = v_k has entered the
    /// set V ≤ V̄_ρ: t_k + (V_k − V̄_ρ)/σ.
    pub fn entry_time_bound(&self, t_k: f64, v_k: f64) -> f64 {
        t_k + ((v_k - self.v_bar) / self.sigma).max(0.0)
    }
}

/// ρ = (μ4 η̄² + σ)/μ3; σ defaults to μ4 η̄².
pub fn residual_set(
    cert: &CertificateVars,
    constants: &AuditConstants,
    eta_bar: f64,
    sigma: Option<f64>,
) -> Result<ResidualSet, StabilityError> {
    if !(constants.mu3 > 0.0) {
        return Err(StabilityError::Inadmissible(format!("μ3 = {:e} is not positive", constants.mu3)));
    }
    let sigma = sigma.unwrap_or(constants.mu4 * eta_bar * eta_bar);
    if !(sigma > 0.0) {
        return Err(StabilityError::Inadmissible(format!("σ = {sigma:e} must be positive")));
    }
    let rho = (constants.mu4 * eta_bar * eta_bar + sigma) / constants.mu3;
    Ok(ResidualSet { rho, v_bar: lambda_max(&cert.p) * rho, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant_sim::{run_closed_loop, ClosedLoopSetup, ControllerMode};
    use crate::quantizer::GainSchedule;
    use crate::stability::{eta_bound, min_quantization_gain, solve_feasibility, FeasibilityOptions, LmiProblem};
    use nalgebra::{dmatrix, dvector};

    const H: f64 = 0.1;

    fn toy() -> ContinuousRealization {
        ContinuousRealization::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![-1.0], dmatrix![1.0]).unwrap()
    }

    fn certificate() -> crate::stability::StabilityCertificate {
        let p = LmiProblem::new(&toy(), H);
        solve_feasibility(&p, &FeasibilityOptions::default()).certificate().unwrap().clone()
    }

    fn run(mode: ControllerMode, substeps: usize) -> crate::plant_sim::ClosedLoopRun {
        run_closed_loop(&ClosedLoopSetup {
            realization: toy(),
            h: H,
            horizon: 3.0,
            substeps,
            x0: dvector![1.0],
            chi0: dvector![0.0],
            mode,
            transcript_config: None,
        })
        .unwrap()
    }

    #[test]
    fn ideal_run_dissipates() {
        let cert = certificate();
        let r = run(ControllerMode::Ideal, 60);
        let model = AuditModel::new(&toy(), None, H);
        let a = lyapunov_audit(&r.trace, &r.samples, &cert.vars, &model).unwrap();
        assert_eq!(a.intervals.len(), 30);
        assert!(a.passed(), "{:?}", a.intervals.iter().find(|i| !i.ok));
        assert_eq!(a.functional_violations, 0);
        assert_eq!(a.total_eta2, 0.0);
        assert!(a.cumulative_holds(0.0, 0.01));
        assert!(a.constants.mu3 > 0.0 && a.constants.mu4 > 0.0);
        assert!((a.constants.mu3 - 0.75 * lambda_min(&cert.vars.psi)).abs() < 1e-12);
    }

    #[test]
    fn quantized_run_dissipates_with_disturbance() {
        let cert = certificate();
        let lam = 4.0 * min_quantization_gain(&cert, &toy()).unwrap();
        let schedule = GainSchedule::power(lam, 1.0).unwrap();
        let r = run(ControllerMode::Quantized { schedule }, 60);
        let model = AuditModel::new(&toy(), r.uncertainty.as_ref(), H);
        let a = lyapunov_audit(&r.trace, &r.samples, &cert.vars, &model).unwrap();
        assert!(a.passed(), "{:?}", a.intervals.iter().find(|i| !i.ok));
        assert!(a.total_eta2 > 0.0);
        assert!(a.cumulative_holds(a.total_eta2, 0.01));
        // η is bounded sample-wise by the quantization bound
        let gain = r.uncertainty.as_ref().unwrap().eta_gain_norm();
        for s in &r.samples {
            let bound = eta_bound(gain, 1, 1, lam, s.k.max(1) as f64);
            assert!(s.eta.norm() <= bound * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn flipped_psi_is_reported() {
        let mut cert = certificate();
        cert.vars.psi = -&cert.vars.psi;
        let r = run(ControllerMode::Ideal, 60);
        let a = lyapunov_audit(&r.trace, &r.samples, &cert.vars, &AuditModel::new(&toy(), None, H)).unwrap();
        assert!(!a.passed());
        assert!(a.constants.mu3 < 0.0);
        assert!(!a.lmi.feasible);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let cert = certificate();
        let r = run(ControllerMode::Ideal, 10);
        let err = lyapunov_audit(&r.trace, &r.samples, &cert.vars, &AuditModel::new(&toy(), None, H));
        assert!(matches!(err, Err(StabilityError::Inadmissible(_))));
    }

    #[test]
    fn residual_set_formula() {
        let cert = certificate();
        let c = audit_constants(&cert.vars, &AuditModel::new(&toy(), None, H)).unwrap();
        let rs = residual_set(&cert.vars, &c, 0.1, None).unwrap();
        let expect = 2.0 * c.mu4 * 0.01 / c.mu3;
        assert!((rs.rho - expect).abs() <= 1e-12 * expect);
        assert!((rs.v_bar - lambda_max(&cert.vars.p) * expect).abs() <= 1e-12 * rs.v_bar);
        assert_eq!(rs.entry_time_bound(1.0, 0.0), 1.0);
        assert!((rs.entry_time_bound(1.0, rs.v_bar + rs.sigma) - 2.0).abs() < 1e-6);
        let bad = AuditConstants { mu3: -1.0, ..c };
        assert!(residual_set(&cert.vars, &bad, 0.1, None).is_err());
    }
}
