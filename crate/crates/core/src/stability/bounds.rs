//! A-priori bounds on the uncertainty introduced by quantizing the
//! controller, and on the injected disturbance η.

use nalgebra::DMatrix;

use super::StabilityError;
use crate::matrix_time::{expm, gramian, ContinuousRealization};
use crate::quantizer::{GainSchedule, ScheduleKind};

/// Bounds ‖ΔA‖ ≤ δ_A, ‖ΔB‖ ≤ δ_B, ‖ΔL‖ ≤ δ_L for perturbed data
/// ‖ΔA_d‖ ≤ γ_A, ‖ΔB_d‖ ≤ γ_B, ‖ΔL_d‖ ≤ γ_L (Frobenius norms).
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBounds {
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_l: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    pub delta_l: f64,
    /// ‖G_h(A)⁻¹‖.
    pub alpha: f64,
    pub beta: f64,
}

/// Uncertainty bounds for a quantization gain Λ.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyBounds {
    pub lambda: f64,
    pub perturbation: PerturbationBounds,
    /// ‖K̃‖ ≤ √(mn)/(2Λ).
    pub k_tilde: f64,
    /// ‖C̃‖ ≤ √(rn)/(2Λ).
    pub c_tilde: f64,
    /// Bound on ‖Δ𝒜_c‖.
    pub phi: f64,
}

impl UncertaintyBounds {
    /// 2δ_A² + φ², a bound on ‖Δ0‖² (‖Δ𝒜‖ = √2 ‖ΔA‖).
    pub fn level(&self) -> f64 {
        2.0 * self.perturbation.delta_a.powi(2) + self.phi.powi(2)
    }
}

/// Largest relative growth of ‖R(s)‖ allowed across one quadrature cell.
const CELL_GROWTH: f64 = 1.0 / 128.0;
/// Cells narrower than this mean R(s) is (nearly) singular on [0, 1].
const MIN_CELL: f64 = 1e-12;

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Upper bound on ‖log(X + Δ) − log X‖_F over all ‖Δ‖_F ≤ γ, or `None` when
/// it cannot be established.
///
/// With R_X(s) = ((1−s)I + sX)⁻¹ the difference is exactly
/// ∫₀¹ R_{X+Δ}(s) Δ R_X(s) ds, and ‖R_{X+Δ}(s)‖ ≤ r/(1 − sγr) for
/// r = ‖R_X(s)‖. The integral is bounded cell by cell: on a cell of half
/// width w around c, ‖R_X‖ ≤ r(c)/(1 − w‖X − I‖ r(c)).
pub fn log_perturbation_bound(x: &DMatrix<f64>, gamma: f64) -> Option<f64> {
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let spread = spectral_norm(&(x - &eye));
    let r_at = |s: f64| {
        let sv = (&eye * (1.0 - s) + x * s).singular_values();
        let low = sv.min();
        (low > 0.0).then(|| 1.0 / low)
    };
    let mut total = 0.0;
    let mut cells = vec![(0.0f64, 1.0f64)];
    while let Some((a, b)) = cells.pop() {
        let w = 0.5 * (b - a);
        let r = r_at(a + w)?;
        if w * spread * r > CELL_GROWTH {
            if w < MIN_CELL {
                return None;
            }
            cells.push((a, a + w));
            cells.push((a + w, b));
            continue;
        }
        let r_bar = r / (1.0 - w * spread * r);
        let shrink = 1.0 - b * gamma * r_bar;
        if !(shrink > 0.0) {
            return None;
        }
        total += 2.0 * w * r_bar * r_bar / shrink;
    }
    Some(gamma * total)
}

/// Bounds on the continuous-time perturbations recovered from perturbed
/// discrete data. Fails when the perturbation is too large for the bound to
/// exist.
pub fn perturbation_bounds(
    cr: &ContinuousRealization,
    h: f64,
    gamma_a: f64,
    gamma_b: f64,
    gamma_l: f64,
) -> Result<PerturbationBounds, StabilityError> {
    let x = expm(&(-&cr.a * h))?.norm() * gamma_a;
    if !(x < 1.0) {
        return Err(StabilityError::Inadmissible(format!("‖e^(−Ah)‖γ_A = {x:.6e} ≥ 1")));
    }
    let a_d = expm(&(&cr.a * h))?;
    let delta_a = log_perturbation_bound(&a_d, gamma_a)
        .ok_or_else(|| StabilityError::Inadmissible(format!("no bound on ‖log(A_d + ΔA_d) − log A_d‖ for γ_A = {gamma_a:.6e}")))?
        / h;
    if !(delta_a < 1.0) {
        return Err(StabilityError::Inadmissible(format!("δ_A = {delta_a:.6e} ≥ 1")));
    }
    let g = gramian(&cr.a, h)?;
    let g_inv = g.try_inverse().ok_or_else(|| StabilityError::Inadmissible("G_h(A) is singular".into()))?;
    let alpha = g_inv.norm();
    let beta = (cr.a.norm() * h).exp() * h * h * delta_a / (1.0 - delta_a);
    if !(alpha * beta < 1.0) {
        return Err(StabilityError::Inadmissible(format!("αβ = {:.6e} ≥ 1", alpha * beta)));
    }
    let s = alpha / (1.0 - alpha * beta);
    let delta_b = s * (gamma_b + beta * cr.b.norm());
    let delta_l = s * (gamma_l + beta * cr.l.norm());
    Ok(PerturbationBounds { gamma_a, gamma_b, gamma_l, delta_a, delta_b, delta_l, alpha, beta })
}

/// Bounds for the controller quantized with static gain Λ: A_d with Λ²,
/// the remaining matrices with Λ.
pub fn uncertainty_bounds(cr: &ContinuousRealization, h: f64, lambda: f64) -> Result<UncertaintyBounds, StabilityError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(StabilityError::Inadmissible(format!("gain {lambda} must be positive")));
    }
    let (n, m, r) = (cr.n() as f64, cr.m() as f64, cr.r() as f64);
    let gamma_a = n / (2.0 * lambda * lambda);
    let gamma_b = (m * n).sqrt() / (2.0 * lambda);
    let gamma_l = (n * r).sqrt() / (2.0 * lambda);
    let perturbation = perturbation_bounds(cr, h, gamma_a, gamma_b, gamma_l)?;
    let k_tilde = (m * n).sqrt() / (2.0 * lambda);
    let c_tilde = (r * n).sqrt() / (2.0 * lambda);
    let p = &perturbation;
    // ‖Δ𝒜_c‖ ≤ 2‖ΔL‖‖C‖ + 2‖L+ΔL‖‖C̃‖ + 2‖ΔB‖‖K+K̃‖ + ‖B‖‖K̃‖
    let phi = 2.0 * (cr.c.norm() + c_tilde) * p.delta_l
        + 2.0 * c_tilde * cr.l.norm()
        + 2.0 * (cr.k.norm() + k_tilde) * p.delta_b
        + k_tilde * cr.b.norm();
    Ok(UncertaintyBounds { lambda, perturbation, k_tilde, c_tilde, phi })
}

/// 2δ_A² + φ², or +∞ when the bounds do not exist.
pub fn perturbation_level(cr: &ContinuousRealization, h: f64, lambda: f64) -> f64 {
    uncertainty_bounds(cr, h, lambda).map(|b| b.level()).unwrap_or(f64::INFINITY)
}

/// Bound on ‖η(t_k)‖ for ‖ℳ‖ ≤ m_u: M_U (√n/2 + √r/(2Λ)) / Λ_k.
pub fn eta_bound(m_u: f64, n: usize, r: usize, lambda: f64, lambda_k: f64) -> f64 {
    m_u * eta_factor(n, r, lambda) / lambda_k
}

fn eta_factor(n: usize, r: usize, lambda: f64) -> f64 {
    (n as f64).sqrt() / 2.0 + (r as f64).sqrt() / (2.0 * lambda)
}

/// Whether the dynamic gains make Σ 1/Λ_k² finite.
#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleVerdict {
    /// Square-summable; the state converges to zero.
    Summable,
    /// Finite list of gains; runs are limited to its length.
    FiniteList { len: usize },
    /// Not square-summable; only ultimate boundedness is certified.
    NotSummable { reason: String },
}

impl ScheduleVerdict {
    pub fn is_admissible(&self) -> bool {
        !matches!(self, ScheduleVerdict::NotSummable { .. })
    }
}

/// Verdict on a gain schedule with the partial sums Σ_{k<N} 1/Λ_k² backing it.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleCheck {
    pub verdict: ScheduleVerdict,
    /// (N, Σ_{k<N} 1/Λ_k²) at N = 10, 100, ..., 10⁶ (or the list length).
    pub partial_sums: Vec<(usize, f64)>,
}

impl ScheduleCheck {
    pub fn is_admissible(&self) -> bool {
        self.verdict.is_admissible()
    }
}

/// Largest number of terms in the partial-sum witness.
pub const WITNESS_TERMS: usize = 1_000_000;

fn partial_sums(schedule: &GainSchedule, len: usize) -> Vec<(usize, f64)> {
    let mut marks: Vec<usize> = std::iter::successors(Some(10usize), |n| Some(n * 10)).take_while(|&n| n < len).collect();
    marks.push(len);
    let mut out = Vec::with_capacity(marks.len());
    let mut acc = 0.0;
    let mut k = 0;
    for n in marks {
        while k < n {
            // schedules are validated, so every gain up to `len` exists
            acc += schedule.dynamic_gain(k).map_or(f64::INFINITY, |g| g.powi(-2));
            k += 1;
        }
        out.push((n, acc));
    }
    out
}

pub fn schedule_admissible(schedule: &GainSchedule) -> ScheduleCheck {
    let capped = |reason: &str| match schedule.cap {
        Some(c) => ScheduleVerdict::NotSummable { reason: format!("{reason}, saturates at {c}") },
        None => ScheduleVerdict::Summable,
    };
    let (verdict, len) = match &schedule.kind {
        ScheduleKind::Power { exponent } if *exponent > 0.5 => (capped("power schedule"), WITNESS_TERMS),
        ScheduleKind::Power { exponent } => {
            (ScheduleVerdict::NotSummable { reason: format!("exponent {exponent} ≤ 1/2") }, WITNESS_TERMS)
        }
        ScheduleKind::Fixed { .. } => (ScheduleVerdict::NotSummable { reason: "constant gain".into() }, WITNESS_TERMS),
        ScheduleKind::Explicit { values } => (ScheduleVerdict::FiniteList { len: values.len() }, values.len()),
    };
    ScheduleCheck { verdict, partial_sums: partial_sums(schedule, len) }
}

/// Σ_{k≥1} k^(−s) for s > 1: direct sum plus an Euler–Maclaurin tail.
fn zeta(s: f64) -> f64 {
    const N: usize = 2000;
    let head: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    let n = N as f64;
    head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
}

/// Σ_k 1/Λ_k² over the first `steps` samples, or over all samples when
/// `steps` is None. Infinite when the sum diverges.
pub fn inverse_square_gain_sum(schedule: &GainSchedule, steps: Option<usize>) -> Result<f64, StabilityError> {
    if let Some(s) = steps {
        let mut acc = 0.0;
        for k in 0..s {
            acc += schedule.dynamic_gain(k)?.powi(-2);
        }
        return Ok(acc);
    }
    match (&schedule.kind, schedule.cap) {
        (ScheduleKind::Power { exponent }, None) if *exponent > 0.5 => Ok(1.0 + zeta(2.0 * exponent)),
        (ScheduleKind::Explicit { values }, _) => inverse_square_gain_sum(schedule, Some(values.len())),
        _ => Ok(f64::INFINITY),
    }
}

/// ℰ_η = h M_U² (√n/2 + √r/(2Λ))² Σ 1/Λ_k², bounding ∫‖η‖².
pub fn disturbance_energy_bound(
    schedule: &GainSchedule,
    h: f64,
    m_u: f64,
    n: usize,
    r: usize,
    steps: Option<usize>,
) -> Result<f64, StabilityError> {
    let s = inverse_square_gain_sum(schedule, steps)?;
    Ok(h * (m_u * eta_factor(n, r, schedule.static_gain)).powi(2) * s)
}

/// ‖G_h(A)⁻¹‖ for diagnostics.
pub fn gramian_inverse_norm(a: &DMatrix<f64>, h: f64) -> Result<f64, StabilityError> {
    gramian(a, h)?
        .try_inverse()
        .map(|g| g.norm())
        .ok_or_else(|| StabilityError::Inadmissible("G_h(A) is singular".into()))
}
