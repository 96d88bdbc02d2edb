//! Primal barrier method for linear matrix inequality feasibility.
//!
//! Solves
//!   maximize t  subject to  G_b(x) − t I ⪰ 0 for every block b,
//!                           aᵀx = 1,  |x_j| ≤ β,
//! where each G_b(x) = Σ_j x_j F_bj is linear with sparse symmetric F_bj.
//! The optimal t is the feasibility margin: the LMIs are strictly feasible
//! exactly when it is positive. The box keeps the problem bounded.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Sparse symmetric matrix stored as its upper triangle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseSym {
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseSym {
    /// Upper-triangle nonzeros of a dense symmetric matrix.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..=j {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i as u32, j as u32, v));
                }
            }
        }
        Self { entries }
    }

    fn rows(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.entries.iter().flat_map(|&(i, j, _)| [i as usize, j as usize]).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    /// tr(F M) for a symmetric dense M.
    fn trace_with(&self, m: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| {
                let x = m[(i as usize, j as usize)];
                if i == j {
                    v * x
                } else {
                    2.0 * v * x
                }
            })
            .sum()
    }

    fn add_to(&self, out: &mut DMatrix<f64>, s: f64) {
        for &(i, j, v) in &self.entries {
            out[(i as usize, j as usize)] += s * v;
            if i != j {
                out[(j as usize, i as usize)] += s * v;
            }
        }
    }
}

/// One block G_b(x) = Σ_j x_j F_j, required to be ⪰ 0.
#[derive(Clone, Debug, Default)]
pub struct LmiBlock {
    pub name: String,
    pub dim: usize,
    pub terms: Vec<(usize, SparseSym)>,
}

impl LmiBlock {
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (j, f) in &self.terms {
            if x[*j] != 0.0 {
                f.add_to(&mut out, x[*j]);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct LmiSystem {
    pub nvars: usize,
    pub blocks: Vec<LmiBlock>,
    /// Normalization aᵀx = 1.
    pub normalization: Vec<f64>,
    pub box_bound: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Stop as soon as the margin exceeds this value.
    pub target_margin: f64,
    pub initial_tau: f64,
    pub tau_growth: f64,
    pub max_newton: usize,
    /// Stop once the certified upper bound on the margin falls below
    /// `target_margin`.
    pub stop_when_infeasible: bool,
    /// Relative optimality tolerance when not stopping early.
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            target_margin: 1e-8,
            initial_tau: 1.0,
            tau_growth: 20.0,
            max_newton: 150,
            stop_when_infeasible: true,
            gap_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    /// Margin above target.
    Feasible,
    /// Upper bound on the achievable margin is below target.
    Infeasible,
    /// Converged to the requested gap without crossing the target.
    Converged,
    /// Iteration limit or numerical breakdown.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub margin: f64,
    /// Upper bound on the optimal margin, from the barrier duality gap.
    pub upper_bound: f64,
    pub newton_steps: usize,
}

struct BlockEval {
    inv: DMatrix<f64>,
}

impl LmiSystem {
    /// Total barrier parameter: Σ dims + 2 N for the box.
    fn degree(&self) -> f64 {
        (self.blocks.iter().map(|b| b.dim).sum::<usize>() + 2 * self.nvars) as f64
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| crate::linalg::lambda_min(&b.evaluate(x)))
            .fold(f64::INFINITY, f64::min)
    }

    fn shifted(&self, b: &LmiBlock, x: &[f64], t: f64) -> DMatrix<f64> {
        let mut g = b.evaluate(x);
        for i in 0..b.dim {
            g[(i, i)] -= t;
        }
        g
    }

    /// Barrier value −Σ logdet − Σ box logs, or None outside the domain.
    fn barrier(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut f = 0.0;
        for b in &self.blocks {
            let c = Cholesky::new(self.shifted(b, x, t))?;
            f -= 2.0 * c.l_dirty().diagonal().iter().take(b.dim).map(|v| v.ln()).sum::<f64>();
        }
        for &xi in x {
            let (a, c) = (self.box_bound - xi, self.box_bound + xi);
            if a <= 0.0 || c <= 0.0 {
                return None;
            }
            f -= a.ln() + c.ln();
        }
        f.is_finite().then_some(f)
    }

    fn evaluate_blocks(&self, x: &[f64], t: f64) -> Option<Vec<BlockEval>> {
        self.blocks
            .iter()
            .map(|b| {
                let inv = Cholesky::new(self.shifted(b, x, t))?.inverse();
                Some(BlockEval { inv })
            })
            .collect()
    }

    /// Upper bound on the optimal margin from a dual point Z_b ⪰ 0.
    ///
    /// With Z scaled to Σ tr Z_b = 1 and d_j = ⟨Z, F_j⟩, every ν gives the
    /// bound ν + β Σ_j |d_j − ν a_j|; the minimum over ν sits at a breakpoint.
    fn dual_bound(&self, zs: &[DMatrix<f64>]) -> f64 {
        let trace_sum: f64 = zs.iter().map(|z| z.trace()).sum();
        if !(trace_sum > 0.0) {
            return f64::INFINITY;
        }
        let mut d = vec![0.0; self.nvars];
        for (b, z) in self.blocks.iter().zip(zs) {
            for (j, f) in &b.terms {
                d[*j] += f.trace_with(z) / trace_sum;
            }
        }
        let a = &self.normalization;
        let beta = self.box_bound;
        let value = |nu: f64| nu + beta * d.iter().zip(a).map(|(dj, aj)| (dj - nu * aj).abs()).sum::<f64>();
        a.iter()
            .zip(&d)
            .filter(|(aj, _)| **aj > 0.0)
            .map(|(aj, dj)| value(dj / aj))
            .fold(f64::INFINITY, f64::min)
    }

    /// Dual estimate S⁻¹ − S⁻¹ ΔS S⁻¹ after a Newton step, when it is
    /// positive semidefinite in every block.
    fn dual_estimate(&self, evals: &[BlockEval], dir: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let nv = self.nvars;
        self.blocks
            .iter()
            .zip(evals)
            .map(|(b, ev)| {
                let ds = self.shifted(b, &dir.as_slice()[..nv], dir[nv]);
                let z = &ev.inv - &ev.inv * ds * &ev.inv;
                let z = (&z + z.transpose()) * 0.5;
                Cholesky::new(z.clone()).map(|_| z)
            })
            .collect()
    }

    /// Gradient and Hessian of −τ t + barrier at (x, t), variable N being t.
    fn derivatives(&self, x: &[f64], tau: f64, evals: &[BlockEval]) -> (DVector<f64>, DMatrix<f64>) {
        let nv = self.nvars;
        let mut g = DVector::zeros(nv + 1);
        let mut hess = DMatrix::zeros(nv + 1, nv + 1);
        g[nv] = -tau;
        for (b, ev) in self.blocks.iter().zip(evals) {
            let s = &ev.inv;
            let dim = b.dim;
            g[nv] += s.trace();
            hess[(nv, nv)] += s.norm_squared();
            let mut fs = DMatrix::<f64>::zeros(dim, dim);
            for (idx, (j, fj)) in b.terms.iter().enumerate() {
                g[*j] -= fj.trace_with(s);
                // M_j = S⁻¹ F_j S⁻¹, built from the rows touched by F_j
                let rows = fj.rows();
                for &r in &rows {
                    fs.row_mut(r).fill(0.0);
                }
                for &(p, q, v) in &fj.entries {
                    let (p, q) = (p as usize, q as usize);
                    for c in 0..dim {
                        fs[(p, c)] += v * s[(q, c)];
                    }
                    if p != q {
                        for c in 0..dim {
                            fs[(q, c)] += v * s[(p, c)];
                        }
                    }
                }
                let mut m = DMatrix::<f64>::zeros(dim, dim);
                for &r in &rows {
                    let scol = s.column(r);
                    let frow = fs.row(r);
                    m.ger(1.0, &scol, &frow.transpose(), 1.0);
                }
                hess[(*j, nv)] -= m.trace();
                for (i, fi) in b.terms[..=idx].iter() {
                    let v = fi.trace_with(&m);
                    hess[(*i, *j)] += v;
                    if i != j {
                        hess[(*j, *i)] += v;
                    }
                }
            }
        }
        for j in 0..nv {
            hess[(nv, j)] = hess[(j, nv)];
            let (a, c) = (self.box_bound - x[j], self.box_bound + x[j]);
            g[j] += 1.0 / a - 1.0 / c;
            hess[(j, j)] += 1.0 / (a * a) + 1.0 / (c * c);
        }
        (g, hess)
    }

    /// Runs the barrier method from a strictly feasible x0 with aᵀx0 = 1.
    pub fn solve(&self, x0: &[f64], opts: &SolverOptions) -> SolveResult {
        let nv = self.nvars;
        let mut x = x0.to_vec();
        let mut t = self.min_eigenvalue(&x) - 1.0;
        let mut tau = opts.initial_tau;
        let m = self.degree();
        let mut steps = 0;
        let mut a = DVector::zeros(nv + 1);
        for (j, v) in self.normalization.iter().enumerate() {
            a[j] = *v;
        }
        let mut upper = f64::INFINITY;
        loop {
            // centering
            let mut centered = false;
            while steps < opts.max_newton {
                let Some(evals) = self.evaluate_blocks(&x, t) else {
                    return self.result(SolveStatus::Stalled, x, t, upper, steps);
                };
                let (g, hess) = self.derivatives(&x, tau, &evals);
                steps += 1;
                let Some(chol) = ScaledCholesky::new(hess) else {
                    return self.result(SolveStatus::Stalled, x, t, upper, steps);
                };
                let w1 = chol.solve(&g);
                let w2 = chol.solve(&a);
                let nu = -a.dot(&w1) / a.dot(&w2);
                let dir = -(w1 + w2 * nu);
                let decrement = -g.dot(&dir);
                let zs = self.dual_estimate(&evals, &dir).or_else(|| Some(evals.iter().map(|e| e.inv.clone()).collect()));
                if let Some(zs) = zs {
                    upper = upper.min(self.dual_bound(&zs));
                }
                if opts.stop_when_infeasible && upper < opts.target_margin {
                    return self.result(SolveStatus::Infeasible, x, t, upper, steps);
                }
                if !decrement.is_finite() || decrement < -1e-6 {
                    return self.result(SolveStatus::Stalled, x, t, upper, steps);
                }
                if decrement / 2.0 < 1e-8 {
                    centered = true;
                    break;
                }
                let f0 = -tau * t + self.barrier(&x, t).unwrap_or(f64::INFINITY);
                // the damped step 1/(1+λ) stays in the domain and decreases a
                // self-concordant function, so it is accepted without the
                // sufficient-decrease test that rounding can defeat
                let damped = 1.0 / (1.0 + decrement.sqrt());
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha > 1e-3 * damped {
                    let xn: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, d)| xi + alpha * d).collect();
                    let tn = t + alpha * dir[nv];
                    if let Some(b) = self.barrier(&xn, tn) {
                        if alpha <= damped || -tau * tn + b <= f0 - 0.25 * alpha * decrement {
                            x = xn;
                            t = tn;
                            accepted = true;
                            break;
                        }
                    }
                    alpha = if alpha > damped { (alpha * 0.5).max(damped) } else { alpha * 0.5 };
                }
                if t > opts.target_margin && opts.stop_when_infeasible {
                    return self.result(SolveStatus::Feasible, x, t, upper, steps);
                }
                if !accepted {
                    break;
                }
            }
            if !centered {
                return self.result(SolveStatus::Stalled, x, t, upper, steps);
            }
            if upper - t <= opts.gap_tol * t.abs().max(1e-12) || m / tau <= opts.gap_tol * t.abs().max(1e-12) {
                let status = if t > opts.target_margin { SolveStatus::Feasible } else { SolveStatus::Converged };
                return self.result(status, x, t, upper, steps);
            }
            tau *= opts.tau_growth;
        }
    }

    fn result(&self, status: SolveStatus, x: Vec<f64>, t: f64, upper: f64, steps: usize) -> SolveResult {
        SolveResult { status, x, margin: t, upper_bound: upper, newton_steps: steps }
    }
}

/// Jacobi-scaled Cholesky factor of a positive semidefinite matrix, with a
/// growing diagonal shift when rounding makes it indefinite.
struct ScaledCholesky {
    d: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl ScaledCholesky {
    fn new(h: DMatrix<f64>) -> Option<Self> {
        let n = h.nrows();
        let d = DVector::from_iterator(n, h.diagonal().iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }));
        let mut hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * d[i] * d[j]);
        let mut shift = 0.0;
        for _ in 0..8 {
            if let Some(chol) = Cholesky::new(hs.clone()) {
                return Some(Self { d, chol });
            }
            let next = if shift == 0.0 { 1e-13 } else { shift * 10.0 };
            for i in 0..n {
                hs[(i, i)] += next - shift;
            }
            shift = next;
        }
        None
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let bs = b.component_mul(&self.d);
        self.chol.solve(&bs).component_mul(&self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    /// Lyapunov LMI: P ⪰ tI, −(AᵀP + PA) ⪰ tI, tr P = 1, for 2x2 symmetric P.
    fn lyapunov(a: DMatrix<f64>) -> LmiSystem {
        let basis = [dmatrix![1.0, 0.0; 0.0, 0.0], dmatrix![0.0, 1.0; 1.0, 0.0], dmatrix![0.0, 0.0; 0.0, 1.0]];
        let mut p = LmiBlock { name: "P".into(), dim: 2, terms: vec![] };
        let mut l = LmiBlock { name: "lyap".into(), dim: 2, terms: vec![] };
        for (j, e) in basis.iter().enumerate() {
            p.terms.push((j, SparseSym::from_dense(e)));
            let neg = -(a.transpose() * e + e * &a);
            l.terms.push((j, SparseSym::from_dense(&neg)));
        }
        LmiSystem { nvars: 3, blocks: vec![p, l], normalization: vec![1.0, 0.0, 1.0], box_bound: 1e3 }
    }

    #[test]
    fn stable_matrix_is_certified() {
        let sys = lyapunov(dmatrix![-1.0, 2.0; 0.0, -3.0]);
        let r = sys.solve(&[0.5, 0.0, 0.5], &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Feasible);
        assert!(sys.min_eigenvalue(&r.x) > 0.0);
    }

    #[test]
    fn unstable_matrix_is_rejected() {
        let sys = lyapunov(dmatrix![0.5, 1.0; 0.0, -1.0]);
        let r = sys.solve(&[0.5, 0.0, 0.5], &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.upper_bound < 1e-8);
    }

    #[test]
    fn optimal_margin_matches_closed_form() {
        // A = −I: blocks P and 2P, tr P = 1, best margin is 1/2 at P = I/2
        let sys = lyapunov(dmatrix![-1.0, 0.0; 0.0, -1.0]);
        let opts = SolverOptions { stop_when_infeasible: false, gap_tol: 1e-9, ..Default::default() };
        let r = sys.solve(&[0.6, 0.1, 0.4], &opts);
        assert!((r.margin - 0.5).abs() < 1e-6, "{}", r.margin);
        assert!(r.upper_bound >= r.margin);
    }
}
