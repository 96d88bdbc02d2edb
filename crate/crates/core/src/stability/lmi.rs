//! Robust stability LMIs for the sampled-data loop in z coordinates and
//! their assembly as a sparse feasibility problem.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sdp::{LmiBlock, LmiSystem, SparseSym};
use super::uncertainty::nominal_closed_loop;
use crate::linalg::{block, lambda_max, lambda_min};
use crate::matrix_time::ContinuousRealization;

/// Decision variables of the stability LMIs. All matrices act on z ∈ ℝ^{n_z}
/// with n_z = 2n; ξ = [z; z_k; φ_k] has dimension 3 n_z.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateVars {
    pub p: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
    pub u4: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub n1: DMatrix<f64>,
    pub n2: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub varepsilon1: f64,
    pub varepsilon2: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

impl CertificateVars {
    pub fn n_z(&self) -> usize {
        self.p.nrows()
    }

    /// min{ε1/(2ϵ1), ε2/(6ϵ2)}: the largest 2δ_A² + φ² the certificate tolerates.
    pub fn tolerance(&self) -> f64 {
        (self.varepsilon1 / (2.0 * self.epsilon1)).min(self.varepsilon2 / (6.0 * self.epsilon2))
    }

    /// The block matrix 𝐔 = [[U1, [U2 U3]ᵀ], [[U2 U3], U4]].
    pub fn big_u(&self) -> DMatrix<f64> {
        let u23 = block(&[&[&self.u2, &self.u3]]);
        block(&[&[&self.u1, &u23.transpose()], &[&u23, &self.u4]])
    }
}

/// The four LMIs as stated: `c28 ⪰ 0` and `c29, c30, c31 ⪯ 0`.
#[derive(Clone, Debug)]
pub struct LmiBlocks {
    pub c28: DMatrix<f64>,
    pub c29: DMatrix<f64>,
    pub c30: DMatrix<f64>,
    pub c31: DMatrix<f64>,
}

/// Smallest eigenvalue of each constraint in its ⪰ 0 orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiMargins {
    pub c28: f64,
    pub c29: f64,
    pub c30: f64,
    pub c31: f64,
    pub p: f64,
    pub r: f64,
    pub psi: f64,
    pub epsilon: f64,
}

impl LmiMargins {
    pub fn min(&self) -> f64 {
        [self.c28, self.c29, self.c30, self.c31, self.p, self.r, self.psi, self.epsilon]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

fn he(x: &DMatrix<f64>) -> DMatrix<f64> {
    x + x.transpose()
}

/// Selection matrices E1, E2, E3 with E_i ξ the i-th n_z block of ξ.
fn selectors(nz: usize) -> [DMatrix<f64>; 3] {
    std::array::from_fn(|i| {
        let mut e = DMatrix::zeros(nz, 3 * nz);
        e.view_mut((0, i * nz), (nz, nz)).fill_with_identity();
        e
    })
}

/// Ξ0, Ξ1 and Ξ2 for closed-loop matrices 𝒜, 𝒜_c.
fn xi_terms(cal_a: &DMatrix<f64>, cal_ac: &DMatrix<f64>, v: &CertificateVars) -> [DMatrix<f64>; 3] {
    let nz = cal_a.nrows();
    let zn = DMatrix::zeros(nz, nz);
    let [e1, e2, e3] = selectors(nz);
    let phi0 = block(&[&[cal_a, cal_ac, &zn]]);
    let phi1 = &e1 - &e2;
    let phi2 = &e1 + &e2 - &e3 * 2.0;
    let phi3 = block(&[&[&zn, cal_ac, cal_a]]);
    let phi4 = block(&[&[&e1], &[&e2]]);
    let phi5 = block(&[&[&phi0], &[&DMatrix::zeros(nz, 3 * nz)]]);
    let big_u = v.big_u();
    let e1t = e1.transpose();
    let e2t = e2.transpose();
    let e3t = e3.transpose();
    let phi0t = phi0.transpose();
    let phi1t = phi1.transpose();
    let phi4t = phi4.transpose();

    let xi0 = he(&(&e1t * &v.p * &phi0)) + &big_u
        - &phi1t * &v.w1 * &phi1
        - he(&(&phi1t * &v.w2 * &e2))
        - &e1t * &v.h * &e1
        + he(&(-(&phi1t * &v.n1) - phi2.transpose() * &v.n2
            + (&e1t - &e3t) * (&v.u2 * &e1 + &v.u3 * &e2 + &v.u4 * &e3)
            + &phi1t * &v.q))
        + &v.psi;
    let e2fe2 = &e2t * &v.f * &e2;
    let xi1 = he(&(&phi0t * (&v.w1 * &phi1 + &v.w2 * &e2 + &v.h * &e1))) + &e2fe2 + &phi0t * &v.r * &phi0;
    let xi2 = -&e2fe2 + he(&(&phi4t * &v.u1 * &phi5 + &e3t * &v.u2 * &phi0 - phi3.transpose() * &v.q));

    [xi0, xi1, xi2]
}

/// Evaluates the LMIs at the given variables for closed-loop matrices 𝒜, 𝒜_c.
pub fn assemble(cal_a: &DMatrix<f64>, cal_ac: &DMatrix<f64>, h: f64, v: &CertificateVars) -> LmiBlocks {
    let nz = cal_a.nrows();
    let zn = DMatrix::zeros(nz, nz);
    let [e1, e2, e3] = selectors(nz);
    let phi0 = block(&[&[cal_a, cal_ac, &zn]]);
    let phi1 = &e1 - &e2;
    let phi4 = block(&[&[&e1], &[&e2]]);
    let [xi0, xi1, xi2] = xi_terms(cal_a, cal_ac, v);
    let big_u = v.big_u();
    let e1t = e1.transpose();
    let e2t = e2.transpose();
    let e3t = e3.transpose();
    let phi0t = phi0.transpose();
    let phi1t = phi1.transpose();
    let phi4t = phi4.transpose();

    let y0 = &e1t * &v.p;
    // Y1 collects every term multiplying Δ0 in the perturbed Ξ1
    let y1 = &phi1t * &v.w1 + &e2t * v.w2.transpose() + &e1t * &v.h + &phi0t * &v.r;
    let y01 = &y0 + &y1 * h;
    let y2 = block(&[&[&(&phi4t * &v.u1), &(&e3t * &v.u2), &(-v.q.transpose())]]);
    let y02 = block(&[&[&y0, &(y2 * h)]]);

    let i3 = DMatrix::<f64>::identity(3 * nz, 3 * nz);
    let c28 = &big_u - &e2t * &v.h * &e2;
    let c29 = block(&[
        &[&(&xi0 + &xi1 * h + &i3 * v.varepsilon1), &y01],
        &[&y01.transpose(), &(DMatrix::identity(nz, nz) * -v.epsilon1)],
    ]);
    let c30 = &v.r * h - DMatrix::identity(nz, nz) * v.epsilon1;
    let hn1 = &v.n1 * h;
    let hn2 = &v.n2 * h;
    let z5 = DMatrix::zeros(nz, 5 * nz);
    let c31 = block(&[
        &[&(&xi0 + &xi2 * h + &i3 * v.varepsilon2), &hn1.transpose(), &hn2.transpose(), &y02],
        &[&hn1, &(&v.r * -h), &zn, &z5],
        &[&hn2, &zn, &(&v.r * (-3.0 * h)), &z5],
        &[&y02.transpose(), &z5.transpose(), &z5.transpose(), &(DMatrix::identity(5 * nz, 5 * nz) * -v.epsilon2)],
    ]);
    LmiBlocks { c28, c29, c30, c31 }
}

/// Margins of every constraint at the given variables.
pub fn margins(cal_a: &DMatrix<f64>, cal_ac: &DMatrix<f64>, h: f64, v: &CertificateVars) -> LmiMargins {
    let b = assemble(cal_a, cal_ac, h, v);
    LmiMargins {
        c28: lambda_min(&b.c28),
        c29: -lambda_max(&b.c29),
        c30: -lambda_max(&b.c30),
        c31: -lambda_max(&b.c31),
        p: lambda_min(&v.p),
        r: lambda_min(&v.r),
        psi: lambda_min(&v.psi),
        epsilon: v.epsilon1.min(v.epsilon2),
    }
}

/// Bound on every solver variable; keeps the margin problem bounded.
const BOX_BOUND: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Sym,
    Full,
    Scalar,
}

/// Order of the variables in the solver vector. Ψ is restricted to ψ I,
/// which loses nothing because Ψ only enters Ξ0 with a positive sign.
const LAYOUT: [(&str, Kind, usize, usize); 16] = [
    ("p", Kind::Sym, 1, 1),
    ("r", Kind::Sym, 1, 1),
    ("u1", Kind::Sym, 2, 2),
    ("u2", Kind::Full, 1, 1),
    ("u3", Kind::Full, 1, 1),
    ("u4", Kind::Sym, 1, 1),
    ("f", Kind::Sym, 1, 1),
    ("h", Kind::Sym, 1, 1),
    ("w1", Kind::Sym, 1, 1),
    ("w2", Kind::Full, 1, 1),
    ("q", Kind::Full, 1, 3),
    ("n1", Kind::Full, 1, 3),
    ("n2", Kind::Full, 1, 3),
    ("psi", Kind::Scalar, 0, 0),
    ("epsilon1", Kind::Scalar, 0, 0),
    ("epsilon2", Kind::Scalar, 0, 0),
];

fn count(kind: Kind, rows: usize, cols: usize) -> usize {
    match kind {
        Kind::Sym => rows * (rows + 1) / 2,
        Kind::Full => rows * cols,
        Kind::Scalar => 1,
    }
}

/// The stability LMIs of one plant and sampling period.
#[derive(Clone, Debug)]
pub struct LmiProblem {
    pub cal_a: DMatrix<f64>,
    pub cal_ac: DMatrix<f64>,
    pub h: f64,
    nvars: usize,
    base: Vec<LmiBlock>,
}

impl LmiProblem {
    pub fn new(cr: &ContinuousRealization, h: f64) -> Self {
        let (cal_a, cal_ac) = nominal_closed_loop(cr);
        Self::from_matrices(cal_a, cal_ac, h)
    }

    pub fn from_matrices(cal_a: DMatrix<f64>, cal_ac: DMatrix<f64>, h: f64) -> Self {
        let nz = cal_a.nrows();
        let nvars = LAYOUT.iter().map(|&(_, k, r, c)| count(k, r * nz, c * nz)).sum();
        let mut p = Self { cal_a, cal_ac, h, nvars, base: Vec::new() };
        p.base = p.probe(0.0, 0..nvars);
        p
    }

    pub fn n_z(&self) -> usize {
        self.cal_a.nrows()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    fn scalar_index(&self, name: &str) -> usize {
        let nz = self.n_z();
        let mut i = 0;
        for &(n, k, r, c) in &LAYOUT {
            if n == name {
                return i;
            }
            i += count(k, r * nz, c * nz);
        }
        unreachable!("unknown variable {name}")
    }

    /// Variables from the solver vector, with ε1 = 2ρϵ1 and ε2 = 6ρϵ2.
    pub fn unpack(&self, x: &[f64], ratio: f64) -> CertificateVars {
        let nz = self.n_z();
        let mut it = x.iter().copied();
        let mut mats: Vec<DMatrix<f64>> = Vec::new();
        let mut scalars = Vec::new();
        for &(_, kind, r, c) in &LAYOUT {
            match kind {
                Kind::Sym => {
                    let d = r * nz;
                    let mut m = DMatrix::zeros(d, d);
                    for j in 0..d {
                        for i in 0..=j {
                            let v = it.next().expect("vector length");
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                    mats.push(m);
                }
                Kind::Full => {
                    let (rr, cc) = (r * nz, c * nz);
                    mats.push(DMatrix::from_iterator(rr, cc, it.by_ref().take(rr * cc)));
                }
                Kind::Scalar => scalars.push(it.next().expect("vector length")),
            }
        }
        let [p, r, u1, u2, u3, u4, f, h, w1, w2, q, n1, n2]: [DMatrix<f64>; 13] =
            mats.try_into().expect("thirteen matrix variables");
        let (psi, epsilon1, epsilon2) = (scalars[0], scalars[1], scalars[2]);
        CertificateVars {
            p,
            r,
            u1,
            u2,
            u3,
            u4,
            f,
            h,
            w1,
            w2,
            q,
            n1,
            n2,
            psi: DMatrix::identity(3 * nz, 3 * nz) * psi,
            varepsilon1: 2.0 * ratio * epsilon1,
            varepsilon2: 6.0 * ratio * epsilon2,
            epsilon1,
            epsilon2,
        }
    }

    /// Solver blocks, all in ⪰ 0 orientation.
    fn blocks_at(&self, v: &CertificateVars, x: &[f64]) -> Vec<DMatrix<f64>> {
        let b = assemble(&self.cal_a, &self.cal_ac, self.h, v);
        let s = |i: usize| DMatrix::from_element(1, 1, x[i]);
        vec![
            v.p.clone(),
            v.r.clone(),
            s(self.scalar_index("psi")),
            s(self.scalar_index("epsilon1")),
            s(self.scalar_index("epsilon2")),
            b.c28,
            -b.c29,
            -b.c30,
            -b.c31,
        ]
    }

    /// Coefficient matrices of the listed variables: each block is linear
    /// with no constant term, so F_j is the block evaluated at e_j.
    fn probe(&self, ratio: f64, vars: impl Iterator<Item = usize>) -> Vec<LmiBlock> {
        const NAMES: [&str; 9] = ["P", "R", "psi", "epsilon1", "epsilon2", "c28", "c29", "c30", "c31"];
        let mut x = vec![0.0; self.nvars];
        let mut out: Vec<LmiBlock> = Vec::new();
        for j in vars {
            x[j] = 1.0;
            let v = self.unpack(&x, ratio);
            let blocks = self.blocks_at(&v, &x);
            if out.is_empty() {
                out = blocks
                    .iter()
                    .zip(NAMES)
                    .map(|(b, name)| LmiBlock { name: name.into(), dim: b.nrows(), terms: vec![] })
                    .collect();
            }
            for (dst, b) in out.iter_mut().zip(&blocks) {
                let s = SparseSym::from_dense(b);
                if !s.entries.is_empty() {
                    dst.terms.push((j, s));
                }
            }
            x[j] = 0.0;
        }
        out
    }

    /// The feasibility problem at ratio ρ. The LMIs are homogeneous, so Ψ is
    /// normalized to I; normalizing a trace instead admits the degenerate
    /// point with P, R and Ψ zero, which pins the margin of every infeasible
    /// instance at exactly zero.
    pub fn system(&self, ratio: f64) -> LmiSystem {
        let e1 = self.scalar_index("epsilon1");
        let e2 = self.scalar_index("epsilon2");
        let mut blocks = self.base.clone();
        if ratio != 0.0 {
            let extra = self.probe(ratio, [e1, e2].into_iter());
            for (b, x) in blocks.iter_mut().zip(extra) {
                b.terms.retain(|(j, _)| *j != e1 && *j != e2);
                b.terms.extend(x.terms);
                b.terms.sort_by_key(|(j, _)| *j);
            }
        }
        let mut normalization = vec![0.0; self.nvars];
        normalization[self.scalar_index("psi")] = 1.0;
        LmiSystem { nvars: self.nvars, blocks, normalization, box_bound: BOX_BOUND }
    }

    /// Starting point: identities for the symmetric variables and ones for
    /// the scalars, zero elsewhere.
    pub fn initial_point(&self) -> Vec<f64> {
        let nz = self.n_z();
        let mut x = vec![0.0; self.nvars];
        let mut idx = 0;
        for &(_, kind, r, c) in &LAYOUT {
            match kind {
                Kind::Sym => {
                    let d = r * nz;
                    for j in 0..d {
                        x[idx + j * (j + 1) / 2 + j] = 1.0;
                    }
                }
                Kind::Scalar => x[idx] = 1.0,
                Kind::Full => {}
            }
            idx += count(kind, r * nz, c * nz);
        }
        x
    }
}
