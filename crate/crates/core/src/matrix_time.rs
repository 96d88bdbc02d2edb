//! Matrix exponential and logarithm, zero-order-hold discretization and the
//! continuous-time "virtual" realization of a quantized discrete controller.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{block, is_finite, one_norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixTimeError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sampling period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("matrix logarithm undefined: eigenvalue {re}{im:+}i on the closed negative real axis")]
    LogUndefined { re: f64, im: f64 },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
}

/// Continuous-time plant (A, B, C) with observer gain L and feedback gain K.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl ContinuousRealization {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        k: DMatrix<f64>,
        l: DMatrix<f64>,
    ) -> Result<Self, MatrixTimeError> {
        let cr = Self { a, b, c, k, l };
        cr.validate()?;
        Ok(cr)
    }

    pub fn validate(&self) -> Result<(), MatrixTimeError> {
        let n = self.a.nrows();
        let (m, r) = (self.b.ncols(), self.c.nrows());
        let checks = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, m)),
            ("C", self.c.shape(), (r, n)),
            ("K", self.k.shape(), (m, n)),
            ("L", self.l.shape(), (n, r)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(MatrixTimeError::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if n == 0 || m == 0 || r == 0 {
            return Err(MatrixTimeError::Shape("empty realization".into()));
        }
        for mat in [&self.a, &self.b, &self.c, &self.k, &self.l] {
            if !is_finite(mat) {
                return Err(MatrixTimeError::NonFinite);
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn r(&self) -> usize {
        self.c.nrows()
    }
}

/// Exact ZOH discretization over one period h.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteRealization {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub l_d: DMatrix<f64>,
    /// G_h = ∫_0^h e^{Aτ} dτ.
    pub gramian: DMatrix<f64>,
    pub h: f64,
}

/// Continuous realization whose ZOH discretization reproduces given
/// (quantized) discrete matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualRealization {
    pub a_v: DMatrix<f64>,
    pub b_v: DMatrix<f64>,
    pub l_v: DMatrix<f64>,
    /// G_h(A_v)^{-1} Ā_d, the gain on the state quantization error.
    pub d: DMatrix<f64>,
    pub gramian: DMatrix<f64>,
}

fn check_square(a: &DMatrix<f64>) -> Result<(), MatrixTimeError> {
    if !a.is_square() {
        return Err(MatrixTimeError::NotSquare(a.nrows(), a.ncols()));
    }
    if !is_finite(a) {
        return Err(MatrixTimeError::NonFinite);
    }
    Ok(())
}

fn check_period(h: f64) -> Result<(), MatrixTimeError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(MatrixTimeError::InvalidPeriod(h));
    }
    Ok(())
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1, 2.097847961257068, 5.371920351148152];

/// (U, V) for a diagonal Padé approximant of degree m <= 9.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut u = &id * b[1];
    let mut v = &id * b[0];
    let mut p = id.clone();
    for j in 1..b.len() / 2 {
        p = &p * &a2;
        u += &p * b[2 * j + 1];
        v += &p * b[2 * j];
    }
    (a * u, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE13;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (a * u_inner, v)
}

fn pade_ratio(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>, MatrixTimeError> {
    let den = &v - &u;
    let num = v + u;
    den.lu().solve(&num).ok_or(MatrixTimeError::Singular("Padé denominator"))
}

/// Matrix exponential by scaling and squaring with Padé approximants.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MatrixTimeError> {
    check_square(a)?;
    let norm = one_norm(a);
    for (coeffs, theta) in [(&PADE3[..], THETA[0]), (&PADE5[..], THETA[1]), (&PADE7[..], THETA[2]), (&PADE9[..], THETA[3])] {
        if norm <= theta {
            let (u, v) = pade_low(a, coeffs);
            return pade_ratio(u, v);
        }
    }
    let s = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
    let scaled = a * 2f64.powi(-s);
    let (u, v) = pade13(&scaled);
    let mut r = pade_ratio(u, v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !is_finite(&r) {
        return Err(MatrixTimeError::NonFinite);
    }
    Ok(r)
}

fn check_log_spectrum(a: &DMatrix<f64>) -> Result<(), MatrixTimeError> {
    let eig = a.clone().complex_eigenvalues();
    let scale = one_norm(a).max(f64::MIN_POSITIVE);
    for z in eig.iter() {
        if z.im.abs() <= 1e-12 * scale && z.re <= 1e-14 * scale {
            return Err(MatrixTimeError::LogUndefined { re: z.re, im: z.im });
        }
    }
    Ok(())
}

/// Principal square root by the Denman–Beavers iteration.
pub fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MatrixTimeError> {
    check_square(a)?;
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or(MatrixTimeError::Singular("square root iteration"))?;
        let zi = z.clone().try_inverse().ok_or(MatrixTimeError::Singular("square root iteration"))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = one_norm(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * one_norm(&y) {
            return Ok(y);
        }
    }
    Err(MatrixTimeError::NoConvergence("Denman–Beavers square root"))
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// After repeated square roots bring X close to I, log(X) = 2 atanh(Z) with
/// Z = (X - I)(X + I)^{-1}, summed as an odd power series.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MatrixTimeError> {
    check_square(a)?;
    check_log_spectrum(a)?;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut s = 0;
    while one_norm(&(&x - &id)) > 0.25 {
        x = sqrtm(&x)?;
        s += 1;
        if s > 64 {
            return Err(MatrixTimeError::NoConvergence("logarithm scaling"));
        }
    }
    let num = &x - &id;
    let den = &x + &id;
    // Z = (X - I)(X + I)^{-1}; the factors commute
    let z = den.transpose().lu().solve(&num.transpose()).ok_or(MatrixTimeError::Singular("logarithm"))?.transpose();
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut sum = z;
    for k in 1..60 {
        term = &term * &z2;
        let add = &term / (2 * k + 1) as f64;
        let small = one_norm(&add) <= 1e-18 * one_norm(&sum).max(f64::MIN_POSITIVE);
        sum += add;
        if small {
            break;
        }
    }
    Ok(sum * 2f64.powi(s + 1))
}

/// G_h(A) = ∫_0^h e^{Aτ} dτ together with e^{Ah}, from one augmented exponential.
pub fn exp_and_gramian(a: &DMatrix<f64>, h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), MatrixTimeError> {
    check_square(a)?;
    check_period(h)?;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let zero = DMatrix::<f64>::zeros(n, n);
    let aug = block(&[&[a, &id], &[&zero, &zero]]) * h;
    let e = expm(&aug)?;
    let ad = e.view((0, 0), (n, n)).into_owned();
    let g = e.view((0, n), (n, n)).into_owned();
    Ok((ad, g))
}

pub fn gramian(a: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>, MatrixTimeError> {
    Ok(exp_and_gramian(a, h)?.1)
}

/// A_d = e^{Ah}, B_d = G_h B, L_d = G_h L.
pub fn discretize_zoh(cr: &ContinuousRealization, h: f64) -> Result<DiscreteRealization, MatrixTimeError> {
    cr.validate()?;
    let (a_d, g) = exp_and_gramian(&cr.a, h)?;
    Ok(DiscreteRealization { b_d: &g * &cr.b, l_d: &g * &cr.l, a_d, gramian: g, h })
}

/// A_v = log(Ā_d)/h, B_v = G_h(A_v)^{-1} B̄_d, L_v = G_h(A_v)^{-1} L̄_d,
/// D = G_h(A_v)^{-1} Ā_d.
pub fn virtual_realization(
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    l_d: &DMatrix<f64>,
    h: f64,
) -> Result<VirtualRealization, MatrixTimeError> {
    check_square(a_d)?;
    check_period(h)?;
    let n = a_d.nrows();
    if b_d.nrows() != n || l_d.nrows() != n {
        return Err(MatrixTimeError::Shape("B_d and L_d must have as many rows as A_d".into()));
    }
    let a_v = logm(a_d)? / h;
    let g = gramian(&a_v, h)?;
    let lu = g.clone().lu();
    let solve = |m: &DMatrix<f64>| lu.solve(m).ok_or(MatrixTimeError::Singular("G_h(A_v)"));
    Ok(VirtualRealization { b_v: solve(b_d)?, l_v: solve(l_d)?, d: solve(a_d)?, a_v, gramian: g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1.0)
    }

    #[test]
    fn exp_of_diagonal_and_nilpotent() {
        let d = dmatrix![1.0, 0.0; 0.0, -2.0];
        let e = expm(&d).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-2f64).exp()).abs() < 1e-16);
        let n = dmatrix![0.0, 3.0; 0.0, 0.0];
        assert_eq!(expm(&n).unwrap(), dmatrix![1.0, 3.0; 0.0, 1.0]);
    }

    #[test]
    fn exp_of_rotation_generator() {
        let w = 7.3;
        let r = expm(&dmatrix![0.0, -w; w, 0.0]).unwrap();
        let want = dmatrix![w.cos(), -w.sin(); w.sin(), w.cos()];
        assert!(close(&r, &want, 1e-13));
    }

    #[test]
    fn exp_of_large_norm_uses_squaring() {
        let a = dmatrix![-50.0, 10.0; 0.0, -60.0];
        let e = expm(&a).unwrap();
        // upper-triangular closed form: (e^a - e^b) c / (a - b)
        let off = ((-50f64).exp() - (-60f64).exp()) * 10.0 / 10.0;
        assert!((e[(0, 1)] - off).abs() < 1e-13 * off);
        assert!((e[(0, 0)] - (-50f64).exp()).abs() < 1e-13 * (-50f64).exp());
    }

    #[test]
    fn log_inverts_exp() {
        let a = dmatrix![-1.0, 0.4, 0.0; 0.2, -3.0, 1.0; 0.0, -2.0, -0.5];
        let back = logm(&expm(&a).unwrap()).unwrap();
        assert!(close(&back, &a, 1e-12));
        let rot = dmatrix![0.0, -2.0; 2.0, 0.0];
        assert!(close(&logm(&expm(&rot).unwrap()).unwrap(), &rot, 1e-12));
    }

    #[test]
    fn log_rejects_negative_real_eigenvalues() {
        assert!(matches!(logm(&dmatrix![-1.0, 0.0; 0.0, 2.0]), Err(MatrixTimeError::LogUndefined { .. })));
        assert!(matches!(logm(&dmatrix![0.0, 1.0; 0.0, 1.0]), Err(MatrixTimeError::LogUndefined { .. })));
    }

    #[test]
    fn gramian_of_scalar() {
        let (e, g) = exp_and_gramian(&dmatrix![-2.0], 0.5).unwrap();
        assert!((e[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
        assert!((g[(0, 0)] - (1.0 - (-1f64).exp()) / 2.0).abs() < 1e-15);
        // singular A: ∫ e^{0 τ} = h
        assert!((gramian(&dmatrix![0.0], 0.3).unwrap()[(0, 0)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zoh_of_double_integrator() {
        let cr = ContinuousRealization::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            dmatrix![-1.0, -1.0],
            dmatrix![1.0; 1.0],
        )
        .unwrap();
        let h = 0.1;
        let d = discretize_zoh(&cr, h).unwrap();
        assert!(close(&d.a_d, &dmatrix![1.0, h; 0.0, 1.0], 1e-15));
        assert!(close(&d.b_d, &dmatrix![h * h / 2.0; h], 1e-15));
        assert!(close(&d.l_d, &dmatrix![h + h * h / 2.0; h], 1e-15));
    }

    #[test]
    fn virtual_realization_reproduces_discrete_matrices() {
        let a = dmatrix![-1.0, 0.5; -0.3, -2.0];
        let b = dmatrix![0.0; 1.0];
        let l = dmatrix![1.0; 0.2];
        let h = 0.2;
        let (ad, g) = exp_and_gramian(&a, h).unwrap();
        let v = virtual_realization(&ad, &(&g * &b), &(&g * &l), h).unwrap();
        assert!(close(&v.a_v, &a, 1e-12));
        assert!(close(&v.b_v, &b, 1e-12));
        assert!(close(&v.l_v, &l, 1e-12));
        assert!(close(&(&v.gramian * &v.d), &ad, 1e-12));
    }

    #[test]
    fn shape_errors() {
        assert!(expm(&DMatrix::zeros(2, 3)).is_err());
        assert!(discretize_zoh(
            &ContinuousRealization {
                a: DMatrix::zeros(2, 2),
                b: DMatrix::zeros(3, 1),
                c: DMatrix::zeros(1, 2),
                k: DMatrix::zeros(1, 2),
                l: DMatrix::zeros(2, 1),
            },
            0.1
        )
        .is_err());
        assert!(exp_and_gramian(&dmatrix![1.0], 0.0).is_err());
    }
}
