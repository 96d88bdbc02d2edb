//! Stability certificates: search, independent checking, persistence and
//! the minimal static quantization gain they admit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bounds::perturbation_level;
use super::lmi::{margins, CertificateVars, LmiMargins, LmiProblem};
use super::sdp::{SolveStatus, SolverOptions};
use super::StabilityError;
use crate::matrix_time::ContinuousRealization;

/// A feasible point of the stability LMIs at sampling period `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityCertificate {
    pub h: f64,
    /// ρ with ε1 = 2ρϵ1 and ε2 = 6ρϵ2.
    pub ratio: f64,
    pub vars: CertificateVars,
    /// Margins recorded when the certificate was produced.
    pub margins: LmiMargins,
}

/// Outcome of `check_certificate`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginReport {
    pub margins: LmiMargins,
    /// Every constraint holds with at least `tolerance` to spare.
    pub feasible: bool,
    pub tolerance: f64,
}

impl MarginReport {
    /// Names of constraints whose margin is below the tolerance.
    pub fn violations(&self) -> Vec<&'static str> {
        let m = &self.margins;
        [
            ("c28", m.c28),
            ("c29", m.c29),
            ("c30", m.c30),
            ("c31", m.c31),
            ("P", m.p),
            ("R", m.r),
            ("Psi", m.psi),
            ("epsilon", m.epsilon),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v >= self.tolerance))
        .map(|(n, _)| n)
        .collect()
    }
}

/// Re-evaluates the LMIs at the stored variables with the plant matrices of
/// `problem`; feasible when every margin is at least `tolerance`.
pub fn check_certificate(cert: &StabilityCertificate, problem: &LmiProblem, tolerance: f64) -> MarginReport {
    let m = margins(&problem.cal_a, &problem.cal_ac, cert.h, &cert.vars);
    let feasible = m.min() >= tolerance && m.min().is_finite();
    MarginReport { margins: m, feasible, tolerance }
}

/// Why no certificate was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct InfeasibleReport {
    pub h: f64,
    pub best_margin: f64,
    pub upper_bound: f64,
    pub status: SolveStatus,
    pub newton_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Certified(Box<StabilityCertificate>),
    Infeasible(InfeasibleReport),
}

impl Feasibility {
    pub fn certificate(&self) -> Option<&StabilityCertificate> {
        match self {
            Feasibility::Certified(c) => Some(c),
            Feasibility::Infeasible(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeasibilityOptions {
    pub solver: SolverOptions,
    /// Search for the largest ρ after a feasible point is found.
    pub maximize_ratio: bool,
    /// Stop the ρ search once hi/lo falls below this.
    pub ratio_tol: f64,
    pub ratio_start: f64,
    pub ratio_ceiling: f64,
    pub ratio_floor: f64,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            maximize_ratio: true,
            ratio_tol: 1.02,
            ratio_start: 1e-2,
            ratio_ceiling: 1e6,
            ratio_floor: 1e-8,
        }
    }
}

fn solve_at(problem: &LmiProblem, ratio: f64, opts: &SolverOptions) -> Feasibility {
    let sys = problem.system(ratio);
    let res = sys.solve(&problem.initial_point(), opts);
    if res.status == SolveStatus::Feasible {
        let vars = problem.unpack(&res.x, ratio);
        let m = margins(&problem.cal_a, &problem.cal_ac, problem.h, &vars);
        if m.min() > 0.0 {
            return Feasibility::Certified(Box::new(StabilityCertificate { h: problem.h, ratio, vars, margins: m }));
        }
    }
    Feasibility::Infeasible(InfeasibleReport {
        h: problem.h,
        best_margin: res.margin,
        upper_bound: res.upper_bound,
        status: res.status,
        newton_steps: res.newton_steps,
    })
}

/// Finds a strictly feasible certificate, then (optionally) the largest
/// ratio ρ that stays feasible, by log-scale bisection.
pub fn solve_feasibility(problem: &LmiProblem, opts: &FeasibilityOptions) -> Feasibility {
    let first = solve_at(problem, 0.0, &opts.solver);
    let Feasibility::Certified(base) = first else {
        return first;
    };
    if !opts.maximize_ratio {
        return Feasibility::Certified(base);
    }
    let mut best = base;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut r = opts.ratio_start;
    // bracket
    loop {
        match solve_at(problem, r, &opts.solver) {
            Feasibility::Certified(c) => {
                best = c;
                lo = r;
                if hi.is_finite() || r >= opts.ratio_ceiling {
                    break;
                }
                r *= 10.0;
            }
            Feasibility::Infeasible(_) => {
                hi = r;
                if lo > 0.0 || r <= opts.ratio_floor {
                    break;
                }
                r /= 10.0;
            }
        }
    }
    if lo > 0.0 && hi.is_finite() {
        while hi / lo > opts.ratio_tol {
            let mid = (lo * hi).sqrt();
            match solve_at(problem, mid, &opts.solver) {
                Feasibility::Certified(c) => {
                    best = c;
                    lo = mid;
                }
                Feasibility::Infeasible(_) => hi = mid,
            }
        }
    }
    Feasibility::Certified(best)
}

/// Smallest static gain Λ with 2δ_A² + φ² ≤ min{ε1/(2ϵ1), ε2/(6ϵ2)},
/// to relative precision 5·10⁻⁴. Gains where the bounds do not exist
/// count as violating the condition.
pub fn min_quantization_gain(cert: &StabilityCertificate, cr: &ContinuousRealization) -> Result<f64, StabilityError> {
    const CEILING: f64 = 1e15;
    let tol = cert.vars.tolerance();
    if !(tol > 0.0) {
        return Err(StabilityError::Infeasible("certificate tolerates no uncertainty".into()));
    }
    let ok = |lambda: f64| perturbation_level(cr, cert.h, lambda) <= tol;
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > CEILING {
            return Err(StabilityError::Infeasible(format!("no admissible gain below {CEILING:e}")));
        }
    }
    let mut lo = hi / 2.0;
    while ok(lo) {
        hi = lo;
        lo /= 2.0;
        if lo < 1e-12 {
            return Ok(hi);
        }
    }
    while hi / lo > 1.0005 {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, r: &Rows) -> Result<DMatrix<f64>, StabilityError> {
    let n = r.len();
    let m = r.first().map_or(0, |x| x.len());
    if r.iter().any(|x| x.len() != m) {
        return Err(StabilityError::Format(format!("matrix {name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| r[i][j]))
}

#[derive(Serialize, Deserialize)]
struct Scalars {
    varepsilon1: f64,
    varepsilon2: f64,
    epsilon1: f64,
    epsilon2: f64,
}

#[derive(Serialize, Deserialize)]
struct Matrices {
    p: Rows,
    r: Rows,
    u1: Rows,
    u2: Rows,
    u3: Rows,
    u4: Rows,
    f: Rows,
    h: Rows,
    w1: Rows,
    w2: Rows,
    q: Rows,
    n1: Rows,
    n2: Rows,
    psi: Rows,
}

#[derive(Serialize, Deserialize)]
struct CertificateFile {
    format: String,
    h: f64,
    ratio: f64,
    n_z: usize,
    scalars: Scalars,
    margins: LmiMargins,
    matrices: Matrices,
}

const FORMAT_TAG: &str = "cipherloop-certificate-1";

impl StabilityCertificate {
    /// Self-describing TOML; every value round-trips exactly.
    pub fn to_text(&self) -> Result<String, StabilityError> {
        let v = &self.vars;
        let file = CertificateFile {
            format: FORMAT_TAG.into(),
            h: self.h,
            ratio: self.ratio,
            n_z: v.n_z(),
            scalars: Scalars {
                varepsilon1: v.varepsilon1,
                varepsilon2: v.varepsilon2,
                epsilon1: v.epsilon1,
                epsilon2: v.epsilon2,
            },
            margins: self.margins.clone(),
            matrices: Matrices {
                p: rows(&v.p),
                r: rows(&v.r),
                u1: rows(&v.u1),
                u2: rows(&v.u2),
                u3: rows(&v.u3),
                u4: rows(&v.u4),
                f: rows(&v.f),
                h: rows(&v.h),
                w1: rows(&v.w1),
                w2: rows(&v.w2),
                q: rows(&v.q),
                n1: rows(&v.n1),
                n2: rows(&v.n2),
                psi: rows(&v.psi),
            },
        };
        toml::to_string(&file).map_err(|e| StabilityError::Format(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self, StabilityError> {
        let f: CertificateFile = toml::from_str(text).map_err(|e| StabilityError::Format(e.to_string()))?;
        if f.format != FORMAT_TAG {
            return Err(StabilityError::Format(format!("unknown format tag {:?}", f.format)));
        }
        let m = &f.matrices;
        let vars = CertificateVars {
            p: matrix("p", &m.p)?,
            r: matrix("r", &m.r)?,
            u1: matrix("u1", &m.u1)?,
            u2: matrix("u2", &m.u2)?,
            u3: matrix("u3", &m.u3)?,
            u4: matrix("u4", &m.u4)?,
            f: matrix("f", &m.f)?,
            h: matrix("h", &m.h)?,
            w1: matrix("w1", &m.w1)?,
            w2: matrix("w2", &m.w2)?,
            q: matrix("q", &m.q)?,
            n1: matrix("n1", &m.n1)?,
            n2: matrix("n2", &m.n2)?,
            psi: matrix("psi", &m.psi)?,
            varepsilon1: f.scalars.varepsilon1,
            varepsilon2: f.scalars.varepsilon2,
            epsilon1: f.scalars.epsilon1,
            epsilon2: f.scalars.epsilon2,
        };
        let nz = f.n_z;
        let shapes = [
            ("p", &vars.p, nz, nz),
            ("r", &vars.r, nz, nz),
            ("u1", &vars.u1, 2 * nz, 2 * nz),
            ("u2", &vars.u2, nz, nz),
            ("u3", &vars.u3, nz, nz),
            ("u4", &vars.u4, nz, nz),
            ("f", &vars.f, nz, nz),
            ("h", &vars.h, nz, nz),
            ("w1", &vars.w1, nz, nz),
            ("w2", &vars.w2, nz, nz),
            ("q", &vars.q, nz, 3 * nz),
            ("n1", &vars.n1, nz, 3 * nz),
            ("n2", &vars.n2, nz, 3 * nz),
            ("psi", &vars.psi, 3 * nz, 3 * nz),
        ];
        for (name, mat, r, c) in shapes {
            if mat.shape() != (r, c) {
                return Err(StabilityError::Format(format!("matrix {name} is {:?}, expected ({r}, {c})", mat.shape())));
            }
        }
        Ok(Self { h: f.h, ratio: f.ratio, vars, margins: f.margins })
    }

    pub fn save(&self, path: &Path) -> Result<(), StabilityError> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    /// Loads a certificate and re-validates it against `problem`.
    pub fn load(path: &Path, problem: &LmiProblem, tolerance: f64) -> Result<(Self, MarginReport), StabilityError> {
        let cert = Self::from_text(&std::fs::read_to_string(path)?)?;
        if cert.vars.n_z() != problem.n_z() {
            return Err(StabilityError::Format(format!(
                "certificate has n_z = {}, plant needs {}",
                cert.vars.n_z(),
                problem.n_z()
            )));
        }
        let report = check_certificate(&cert, problem, tolerance);
        Ok((cert, report))
    }
}
