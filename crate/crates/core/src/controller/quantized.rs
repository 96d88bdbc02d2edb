//! Integer encodings of the discrete controller and the unencrypted quantized
//! reference recursion.

use nalgebra::{DMatrix, DVector};

use super::{ControllerError, StepRecord};
use crate::matrix_time::DiscreteRealization;
use crate::quantizer::{encode_one, GainSchedule};

/// Magnitude limit for integers in the unencrypted reference path.
pub const REFERENCE_INT_LIMIT: u128 = 1 << 100;

/// Dense row-major integer matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i128>,
}

impl IntMatrix {
    /// round(gain * m) element-wise.
    pub fn encode(m: &DMatrix<f64>, gain: f64) -> Result<Self, ControllerError> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(encode_one(m[(i, j)], gain, REFERENCE_INT_LIMIT)?);
            }
        }
        Ok(Self { rows: m.nrows(), cols: m.ncols(), data })
    }

    /// Real matrix data / gain.
    pub fn decode(&self, gain: f64) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&v| v as f64 / gain))
    }

    pub fn matvec(&self, x: &[i128]) -> Result<Vec<i128>, ControllerError> {
        if x.len() != self.cols {
            return Err(ControllerError::Dimension { expected: self.cols, found: x.len() });
        }
        self.data
            .chunks(self.cols)
            .map(|row| {
                row.iter().zip(x).try_fold(0i128, |acc, (a, b)| {
                    a.checked_mul(*b).and_then(|p| acc.checked_add(p)).ok_or(ControllerError::IntegerOverflow)
                })
            })
            .collect()
    }

    /// Row-wise Σ_j |m_ij| x_j, saturating; bounds |m y| for |y_j| ≤ x_j.
    pub fn abs_bound(&self, x: &[u128]) -> Vec<u128> {
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).fold(0u128, |acc, (a, b)| acc.saturating_add(a.unsigned_abs().saturating_mul(*b))))
            .collect()
    }

    pub fn max_abs(&self) -> u128 {
        self.data.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
    }
}

/// ⌊Λ²A_d⌉, ⌊ΛB_d⌉, ⌊ΛL_d⌉, ⌊ΛC⌉, ⌊ΛK⌉.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedMatrices {
    pub lambda: f64,
    pub h: f64,
    pub a_d: IntMatrix,
    pub b_d: IntMatrix,
    pub l_d: IntMatrix,
    pub c: IntMatrix,
    pub k: IntMatrix,
}

impl QuantizedMatrices {
    pub fn new(
        disc: &DiscreteRealization,
        c: &DMatrix<f64>,
        k: &DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self, ControllerError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ControllerError::Config(format!("static gain {lambda} must be positive")));
        }
        Ok(Self {
            lambda,
            h: disc.h,
            a_d: IntMatrix::encode(&disc.a_d, lambda * lambda)?,
            b_d: IntMatrix::encode(&disc.b_d, lambda)?,
            l_d: IntMatrix::encode(&disc.l_d, lambda)?,
            c: IntMatrix::encode(c, lambda)?,
            k: IntMatrix::encode(k, lambda)?,
        })
    }

    pub fn a_bar(&self) -> DMatrix<f64> {
        self.a_d.decode(self.lambda * self.lambda)
    }

    pub fn b_bar(&self) -> DMatrix<f64> {
        self.b_d.decode(self.lambda)
    }

    pub fn l_bar(&self) -> DMatrix<f64> {
        self.l_d.decode(self.lambda)
    }

    pub fn c_bar(&self) -> DMatrix<f64> {
        self.c.decode(self.lambda)
    }

    pub fn k_bar(&self) -> DMatrix<f64> {
        self.k.decode(self.lambda)
    }

    pub fn n(&self) -> usize {
        self.a_d.rows
    }

    pub fn m(&self) -> usize {
        self.k.rows
    }

    pub fn r(&self) -> usize {
        self.c.rows
    }
}

pub(crate) fn to_vector(ints: &[i128], gain: f64) -> DVector<f64> {
    DVector::from_iterator(ints.len(), ints.iter().map(|&v| v as f64 / gain))
}

pub(crate) fn encode_vector(x: &DVector<f64>, gain: f64, limit: u128) -> Result<Vec<i128>, ControllerError> {
    x.iter().map(|&v| encode_one(v, gain, limit).map_err(ControllerError::from)).collect()
}

/// The quantized recursion run on integers:
/// u = K̄ χ̄, χ(t_{k+1}) = Ā_d χ̄ + B̄_d ū + L̄_d(ȳ − C̄ χ̄).
#[derive(Clone, Debug)]
pub struct QuantizedController {
    pub mats: QuantizedMatrices,
    pub schedule: GainSchedule,
    pub chi: DVector<f64>,
    pub k: usize,
}

impl QuantizedController {
    pub fn new(mats: QuantizedMatrices, schedule: GainSchedule, chi0: DVector<f64>) -> Result<Self, ControllerError> {
        schedule.validate()?;
        if (schedule.static_gain - mats.lambda).abs() > 0.0 {
            return Err(ControllerError::Config("schedule and matrices use different static gains".into()));
        }
        if chi0.len() != mats.n() {
            return Err(ControllerError::Dimension { expected: mats.n(), found: chi0.len() });
        }
        Ok(Self { mats, schedule, chi: chi0, k: 0 })
    }

    /// One step of the reference recursion; advances the internal state.
    pub fn step(&mut self, y: &DVector<f64>) -> Result<StepRecord, ControllerError> {
        let rec = quantized_step(&self.mats, &self.schedule, self.k, &self.chi, y)?;
        self.chi = rec.chi_next.clone();
        self.k += 1;
        Ok(rec)
    }
}

/// Stateless form of the reference recursion at step `k`.
pub fn quantized_step(
    mats: &QuantizedMatrices,
    schedule: &GainSchedule,
    k: usize,
    chi: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<StepRecord, ControllerError> {
    if y.len() != mats.r() {
        return Err(ControllerError::Dimension { expected: mats.r(), found: y.len() });
    }
    let lam_k = schedule.dynamic_gain(k)?;
    let out_gain = schedule.output_gain(k)?;
    let next_gain = schedule.state_update_gain(k)?;
    let chi_scaled = encode_vector(chi, lam_k, REFERENCE_INT_LIMIT)?;
    let y_scaled = encode_vector(y, out_gain, REFERENCE_INT_LIMIT)?;
    let u_scaled = mats.k.matvec(&chi_scaled)?;
    let c_chi = mats.c.matvec(&chi_scaled)?;
    let terms = [
        mats.a_d.matvec(&chi_scaled)?,
        mats.b_d.matvec(&u_scaled)?,
        mats.l_d.matvec(&y_scaled)?,
        mats.l_d.matvec(&c_chi)?,
    ];
    let chi_next_scaled = (0..mats.n())
        .map(|i| {
            terms[0][i]
                .checked_add(terms[1][i])
                .and_then(|v| v.checked_add(terms[2][i]))
                .and_then(|v| v.checked_sub(terms[3][i]))
                .ok_or(ControllerError::IntegerOverflow)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StepRecord {
        k,
        chi_bar: to_vector(&chi_scaled, lam_k),
        y_bar: to_vector(&y_scaled, out_gain),
        u: to_vector(&u_scaled, out_gain),
        chi_next: to_vector(&chi_next_scaled, next_gain),
        chi_scaled,
        y_scaled,
        u_scaled,
        chi_next_scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn toy() -> QuantizedMatrices {
        let disc = DiscreteRealization {
            a_d: dmatrix![0.9, 0.1; 0.0, 0.8],
            b_d: dmatrix![0.0; 0.1],
            l_d: dmatrix![0.2; 0.05],
            gramian: DMatrix::identity(2, 2),
            h: 0.1,
        };
        QuantizedMatrices::new(&disc, &dmatrix![1.0, 0.0], &dmatrix![-0.5, -1.25], 10.0).unwrap()
    }

    #[test]
    fn encodings() {
        let q = toy();
        assert_eq!(q.a_d.data, vec![90, 10, 0, 80]);
        assert_eq!(q.k.data, vec![-5, -13]);
        assert_eq!(q.k_bar(), dmatrix![-0.5, -1.3]);
    }

    #[test]
    fn one_step_by_hand() {
        let q = toy();
        let s = GainSchedule::fixed(10.0, 2.0).unwrap();
        let rec = quantized_step(&q, &s, 0, &dvector![1.0, -0.5], &dvector![0.26]).unwrap();
        assert_eq!(rec.chi_scaled, vec![2, -1]);
        assert_eq!(rec.y_scaled, vec![5]);
        assert_eq!(rec.u_scaled, vec![-10 + 13]);
        // A: [180 - 10, -80], B: [0, 3], L y: [10, 5]*... L=[2, 1] (0.05*10 = 0.5 -> 1)
        assert_eq!(q.l_d.data, vec![2, 1]);
        // L (y - C chi) = [2, 1] * (5 - 20)
        assert_eq!(rec.chi_next_scaled, vec![170 + 0 - 30, -80 + 3 - 15]);
        assert_eq!(rec.chi_next, dvector![140.0 / 200.0, -92.0 / 200.0]);
        assert_eq!(rec.u, dvector![0.15]);
    }
}
