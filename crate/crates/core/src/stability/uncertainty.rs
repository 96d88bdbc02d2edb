//! Closed-loop matrices in the coordinates z = [x − χ_v; χ_v] and the
//! uncertainty realized by a particular quantized controller.

use nalgebra::DMatrix;

use crate::linalg::{block, block_diag};
use crate::matrix_time::{virtual_realization, ContinuousRealization, MatrixTimeError, VirtualRealization};

/// 𝒜 = diag(A, A) and 𝒜_c = [[−LC, 0], [LC, BK]].
pub fn nominal_closed_loop(cr: &ContinuousRealization) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = cr.n();
    let lc = &cr.l * &cr.c;
    let z = DMatrix::zeros(n, n);
    let cal_a = block_diag(&[&cr.a, &cr.a]);
    let cal_ac = block(&[&[&(-&lc), &z], &[&lc, &(&cr.b * &cr.k)]]);
    (cal_a, cal_ac)
}

/// Perturbations of the virtual realization relative to the nominal plant.
#[derive(Clone, Debug)]
pub struct RealizedUncertainty {
    pub virt: VirtualRealization,
    pub delta_a: DMatrix<f64>,
    pub delta_b: DMatrix<f64>,
    pub delta_l: DMatrix<f64>,
    pub k_tilde: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    /// Δ𝒜 = [[0, −ΔA], [0, ΔA]].
    pub delta_cal_a: DMatrix<f64>,
    /// Δ𝒜_c = [[−ΔL C, (L+ΔL)C̃ − ΔB(K+K̃)], [ΔL C, ΔB(K+K̃) + B K̃ − (L+ΔL)C̃]].
    pub delta_cal_ac: DMatrix<f64>,
    /// ℳ with η = ℳ [χ̃; ỹ].
    pub eta_gain: DMatrix<f64>,
}

impl RealizedUncertainty {
    /// Builds the realized uncertainty for quantized controller matrices
    /// (Ā_d, B̄_d, L̄_d, C̄, K̄).
    pub fn new(
        cr: &ContinuousRealization,
        a_bar: &DMatrix<f64>,
        b_bar: &DMatrix<f64>,
        l_bar: &DMatrix<f64>,
        c_bar: &DMatrix<f64>,
        k_bar: &DMatrix<f64>,
        h: f64,
    ) -> Result<Self, MatrixTimeError> {
        let virt = virtual_realization(a_bar, b_bar, l_bar, h)?;
        let n = cr.n();
        let delta_a = &virt.a_v - &cr.a;
        let delta_b = &virt.b_v - &cr.b;
        let delta_l = &virt.l_v - &cr.l;
        let k_tilde = k_bar - &cr.k;
        let c_tilde = c_bar - &cr.c;
        let z = DMatrix::zeros(n, n);
        let delta_cal_a = block(&[&[&z, &(-&delta_a)], &[&z, &delta_a]]);
        let dlc = &delta_l * &cr.c;
        let lv_ct = &virt.l_v * &c_tilde;
        let db_k = &delta_b * k_bar;
        let delta_cal_ac = block(&[
            &[&(-&dlc), &(&lv_ct - &db_k)],
            &[&dlc, &(&db_k + &cr.b * &k_tilde - &lv_ct)],
        ]);
        let lv_c = &virt.l_v * c_bar;
        let m11 = -(&delta_b * k_bar) + &lv_c - &virt.d;
        let m21 = &virt.b_v * k_bar - &lv_c + &virt.d;
        let eta_gain = block(&[&[&m11, &(-&virt.l_v)], &[&m21, &virt.l_v]]);
        Ok(Self { virt, delta_a, delta_b, delta_l, k_tilde, c_tilde, delta_cal_a, delta_cal_ac, eta_gain })
    }

    /// ‖ℳ‖_F.
    pub fn eta_gain_norm(&self) -> f64 {
        self.eta_gain.norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_time::exp_and_gramian;
    use nalgebra::dmatrix;

    #[test]
    fn unquantized_matrices_give_zero_uncertainty() {
        let cr = ContinuousRealization::new(
            dmatrix![-1.0, 0.3; 0.0, -2.0],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            dmatrix![-0.5, -0.5],
            dmatrix![1.0; 0.5],
        )
        .unwrap();
        let h = 0.1;
        let (ad, g) = exp_and_gramian(&cr.a, h).unwrap();
        let u = RealizedUncertainty::new(&cr, &ad, &(&g * &cr.b), &(&g * &cr.l), &cr.c, &cr.k, h).unwrap();
        assert!(u.delta_cal_a.norm() < 1e-12);
        assert!(u.delta_cal_ac.norm() < 1e-11);
        // with no quantization ℳ reduces to [[LC − G⁻¹A_d, −L], [BK − LC + G⁻¹A_d, L]]
        let d = g.clone().lu().solve(&ad).unwrap();
        let lc = &cr.l * &cr.c;
        assert!((u.eta_gain.view((0, 0), (2, 2)) - (&lc - &d)).norm() < 1e-11);
        assert!((u.eta_gain.view((2, 0), (2, 2)) - (&cr.b * &cr.k - &lc + &d)).norm() < 1e-11);
    }
}
