use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;

use cipherloop::controller::{EncryptedSession, QuantizedController, QuantizedMatrices};
use cipherloop::crypto::wire::lwe_to_bytes;
use cipherloop::crypto::{
    add, decompose, decrypt, decrypt_scaled, encrypt, encrypt_gsw, encryption_rng, external_product, keygen,
    recompose, scalar_mul, CryptoParams, LweCiphertext, NoiseBudget,
};
use cipherloop::matrix_time::{
    discretize_zoh, exp_and_gramian, expm, logm, virtual_realization, ContinuousRealization, DiscreteRealization,
};
use cipherloop::plant_sim::{dc_motor, mrms, run_closed_loop, ClosedLoopSetup, ControllerMode, Propagator};
use cipherloop::quantizer::{error_bound, GainSchedule, UniformQuantizer};
use cipherloop::stability::{
    check_certificate, inverse_square_gain_sum, log_perturbation_bound, perturbation_level, schedule_admissible,
    solve_feasibility, FeasibilityOptions, LmiProblem,
};

fn matrix(n: usize, m: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, n * m).prop_map(move |v| DMatrix::from_row_slice(n, m, &v))
}

fn params() -> impl Strategy<Value = (CryptoParams, u128)> {
    (40u32..=126, 1usize..=6, 0u64..=8, any::<u64>()).prop_flat_map(|(bits, n, e, seed)| {
        let p = CryptoParams::new(bits, n, 1, e, seed).unwrap();
        // gains with 2 e_max < G and room for messages
        ((2 * e + 2).max(4).ilog2() + 1..=bits / 2).prop_map(move |g| (p.clone(), 1u128 << g))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaled_round_trip((p, g) in params(), frac in -1.0f64..1.0) {
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let limit = ((p.half_q() - p.e_max() as u128 - 1) / g) as f64;
        let m = (frac * limit) as i128;
        let c = encrypt(m, g, &key, &p, &mut rng).unwrap();
        prop_assert_eq!(decrypt_scaled(&c, g, &key, &p).unwrap(), m);
        prop_assert!(c.body.iter().all(|&r| r < p.q()));
    }

    #[test]
    fn additive_and_scalar_laws((p, g) in params(), a in -1000i128..1000, b in -1000i128..1000, k in -50i128..50) {
        prop_assume!(((a.abs() + b.abs()) * k.abs().max(1)) as u128 * g < p.half_q() / 2);
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let ca = encrypt(a, g, &key, &p, &mut rng).unwrap();
        let cb = encrypt(b, g, &key, &p, &mut rng).unwrap();
        let (ea, eb) = (decrypt(&ca, &key, &p).unwrap(), decrypt(&cb, &key, &p).unwrap());
        let sum = add(&ca, &cb, &p).unwrap();
        // Dec is exactly additive: G(a + b) + (e_a + e_b)
        prop_assert_eq!(decrypt(&sum, &key, &p).unwrap(), ea + eb);
        prop_assert_eq!(decrypt(&scalar_mul(k, &ca, &p).unwrap(), &key, &p).unwrap(), k * ea);
        if sum.budget.is_exact() {
            prop_assert_eq!(decrypt_scaled(&sum, g, &key, &p).unwrap(), a + b);
        }
    }

    #[test]
    fn recomposition_inverts_decomposition(bits in 8u32..=126, n in 1usize..5, seed in any::<u64>()) {
        let p = CryptoParams::new(bits, n, 1, 0, seed).unwrap();
        let mut rng = encryption_rng(&p);
        let body: Vec<u128> = (0..p.lwe_len()).map(|_| rand::Rng::random::<u128>(&mut rng) & (p.q() - 1)).collect();
        let c = LweCiphertext { body: body.clone(), budget: NoiseBudget { error_bound: 0, gain: 1 } };
        let d = decompose(&c, &p).unwrap();
        prop_assert!(d.digits.iter().all(|&x| x < p.omega()));
        prop_assert_eq!(recompose(&d, &p).unwrap(), body);
    }

    #[test]
    fn external_product_noise_stays_in_bound(seed in any::<u64>(), m1 in -100i128..100, m2 in -1000i128..1000) {
        let p = CryptoParams::new(64, 3, 1, 2, seed).unwrap();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let g = encrypt_gsw(m1, &key, &p, &mut rng).unwrap();
        let c = encrypt(m2, 1 << 16, &key, &p, &mut rng).unwrap();
        let raw_c = decrypt(&c, &key, &p).unwrap();
        let out = decrypt(&external_product(&g, &c, &p).unwrap(), &key, &p).unwrap();
        let bound = (p.e_max() as u128) * (p.omega() - 1) * p.digits() as u128 * p.lwe_len() as u128;
        prop_assert!((out - m1 * raw_c).unsigned_abs() <= bound);
    }

    #[test]
    fn fixed_seed_gives_identical_ciphertexts(seed in any::<u64>(), m in -10_000i128..10_000) {
        let p = CryptoParams::new(96, 4, 1, 1, seed).unwrap();
        let bytes = || {
            let key = keygen(&p);
            let mut rng = encryption_rng(&p);
            let c = encrypt(m, 1 << 20, &key, &p, &mut rng).unwrap();
            lwe_to_bytes(&c, &p)
        };
        prop_assert_eq!(bytes(), bytes());
    }

    #[test]
    fn quantizer_error_and_idempotence(x in matrix(3, 4, 100.0), gain in 0.01f64..1e6) {
        let q = UniformQuantizer::new(gain).unwrap();
        let once = q.quantize(&x);
        prop_assert!((&once - &x).norm() <= error_bound(3, 4, gain) * (1.0 + 1e-12));
        prop_assert_eq!(q.quantize(&once), once);
    }

    #[test]
    fn power_schedule_summability(p in 0.05f64..3.0, lambda in 1.0f64..1e5) {
        let s = GainSchedule::power(lambda, p).unwrap();
        prop_assert_eq!(s.dynamic_gain(0).unwrap(), 1.0);
        prop_assert!((1..50).all(|k| s.dynamic_gain(k).unwrap() > 0.0));
        let check = schedule_admissible(&s);
        prop_assert_eq!(check.is_admissible(), p > 0.5);
        prop_assert_eq!(inverse_square_gain_sum(&s, None).unwrap().is_finite(), p > 0.5);
        // for p ≤ 1/2 each decade adds at least Σ 1/k ≥ ln 10
        let sums: Vec<f64> = check.partial_sums.iter().map(|&(_, v)| v).collect();
        if p <= 0.5 {
            prop_assert!(sums.windows(2).all(|w| w[1] - w[0] >= 10f64.ln() - 1e-9), "{sums:?}");
        }
    }
}

fn stable_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, 1.0).prop_map(move |m| m - DMatrix::identity(n, n) * 1.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exp_log_round_trips(a in stable_matrix(3), h in 0.001f64..0.5) {
        let ah = &a * h;
        let e = expm(&ah).unwrap();
        prop_assert!((logm(&e).unwrap() - &ah).norm() <= 1e-10 * ah.norm().max(1.0));
        prop_assert!((expm(&logm(&e).unwrap()).unwrap() - &e).norm() <= 1e-10 * e.norm());
    }

    #[test]
    fn virtual_realization_rediscretizes(a in stable_matrix(3), b in matrix(3, 1, 1.0), l in matrix(3, 1, 1.0),
                                        h in 0.005f64..0.3, lambda in 1e2f64..1e5) {
        let d = DiscreteRealization { a_d: expm(&(&a * h)).unwrap(), b_d: b.clone(), l_d: l.clone(), gramian: DMatrix::identity(3, 3), h };
        let q = |m: &DMatrix<f64>, g: f64| UniformQuantizer::new(g).unwrap().quantize(m);
        let (ab, bb, lb) = (q(&d.a_d, lambda * lambda), q(&b, lambda), q(&l, lambda));
        let v = virtual_realization(&ab, &bb, &lb, h).unwrap();
        let (ad, g) = exp_and_gramian(&v.a_v, h).unwrap();
        prop_assert!((ad - &ab).norm() <= 1e-8 * ab.norm());
        prop_assert!((&g * &v.b_v - &bb).norm() <= 1e-8 * bb.norm().max(1e-12));
        prop_assert!((&g * &v.l_v - &lb).norm() <= 1e-8 * lb.norm().max(1e-12));
        prop_assert!((&g * &v.d - &ab).norm() <= 1e-8 * ab.norm());
    }

    #[test]
    fn propagator_semigroup(a in matrix(3, 3, 2.0), b in matrix(3, 1, 1.0), x in matrix(3, 1, 1.0), u in -1.0f64..1.0, dt in 1e-4f64..0.05) {
        let x = DVector::from_column_slice(x.as_slice());
        let u = DVector::from_vec(vec![u]);
        let small = Propagator::new(&a, &b, dt).unwrap();
        let big = Propagator::new(&a, &b, 10.0 * dt).unwrap();
        let stepped = (0..10).fold(x.clone(), |s, _| small.apply(&s, &u));
        let once = big.apply(&x, &u);
        prop_assert!((&stepped - &once).norm() <= 1e-10 * once.norm().max(1.0));
    }

    /// ‖log(X + Δ) − log X‖ never exceeds its bound, whatever the direction of Δ.
    #[test]
    fn log_perturbation_bound_holds(a in stable_matrix(3), h in 0.005f64..0.3, dir in matrix(3, 3, 1.0), gamma_exp in -9.0f64..-3.0) {
        prop_assume!(dir.norm() > 1e-3);
        let x = expm(&(&a * h)).unwrap();
        let gamma = 10f64.powf(gamma_exp);
        if let Some(bound) = log_perturbation_bound(&x, gamma) {
            let delta = &dir * (gamma / dir.norm());
            let moved = (logm(&(&x + delta)).unwrap() - logm(&x).unwrap()).norm();
            prop_assert!(moved <= bound * (1.0 + 1e-9) + 1e-13, "{moved} > {bound}");
        }
    }

    #[test]
    fn perturbation_level_decreases_with_gain(h in 0.002f64..0.02, e0 in 3.0f64..8.0, steps in 2usize..6) {
        let cr = dc_motor();
        let levels: Vec<f64> = (0..steps).map(|i| perturbation_level(&cr, h, 10f64.powf(e0 + 0.5 * i as f64))).collect();
        prop_assert!(levels.windows(2).all(|w| w[1] <= w[0]), "{levels:?}");
    }

    #[test]
    fn mrms_of_a_constant(c in -10.0f64..10.0, window in 0.1f64..5.0) {
        let t: Vec<f64> = (0..=600).map(|i| i as f64 * 0.01).collect();
        let s = vec![c; t.len()];
        let v = mrms(&t, &s, 6.0, window).unwrap();
        prop_assert!((v - c.abs()).abs() <= 1e-12 * c.abs().max(1.0));
    }
}

fn toy_discrete(a: &DMatrix<f64>, h: f64) -> DiscreteRealization {
    DiscreteRealization { a_d: a.clone(), b_d: dmatrix![0.02; 0.1], l_d: dmatrix![0.3; 0.1], gramian: DMatrix::identity(2, 2), h }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The encrypted controller reproduces the integer reference recursion bit for bit.
    #[test]
    fn encrypted_matches_quantized(a in matrix(2, 2, 0.4), lambda in 10.0f64..1e3, p in 0.6f64..2.0,
                                   ys in prop::collection::vec(-1.0f64..1.0, 12), seed in any::<u64>()) {
        let disc = toy_discrete(&(a + DMatrix::identity(2, 2) * 0.5), 0.1);
        let mats = QuantizedMatrices::new(&disc, &dmatrix![1.0, 0.0], &dmatrix![-0.4, -0.7], lambda).unwrap();
        let sched = GainSchedule::power(lambda, p).unwrap();
        let params = CryptoParams::new(126, 2, 1, 1, seed).unwrap();
        let chi0 = DVector::from_vec(vec![0.1, -0.2]);
        let mut plain = QuantizedController::new(mats.clone(), sched.clone(), chi0.clone()).unwrap();
        let mut enc = EncryptedSession::new(&mats, sched, params, 1 << 40, chi0, None).unwrap();
        for y in ys {
            let y = DVector::from_vec(vec![y]);
            prop_assert_eq!(plain.step(&y).unwrap(), enc.step(&y).unwrap());
        }
    }

    /// Samples sit at t_k = k h exactly and the trace is time-ordered.
    #[test]
    fn sample_instants_are_exact(h in 0.01f64..0.2, steps in 5usize..40, substeps in 1usize..20) {
        let setup = ClosedLoopSetup {
            realization: ContinuousRealization::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![-1.0], dmatrix![1.0]).unwrap(),
            h,
            horizon: h * steps as f64,
            substeps,
            x0: DVector::from_vec(vec![1.0]),
            chi0: DVector::zeros(1),
            mode: ControllerMode::Ideal,
            transcript_config: None,
        };
        let run = run_closed_loop(&setup).unwrap();
        prop_assert!(run.trace.t.windows(2).all(|w| w[1] > w[0]));
        for (k, s) in run.samples.iter().enumerate() {
            prop_assert_eq!(s.k, k);
            prop_assert_eq!(s.t, k as f64 * h);
        }
    }

    /// Every certificate the solver emits passes the independent checker, and
    /// breaking it makes the checker reject it.
    #[test]
    fn solver_and_checker_agree(a in -2.0f64..0.5, k in -3.0f64..-0.5, l in 0.5f64..3.0, h in 0.02f64..0.3) {
        let cr = ContinuousRealization::new(dmatrix![a], dmatrix![1.0], dmatrix![1.0], dmatrix![k], dmatrix![l]).unwrap();
        let problem = LmiProblem::new(&cr, h);
        let opts = FeasibilityOptions { maximize_ratio: false, ..FeasibilityOptions::default() };
        if let Some(cert) = solve_feasibility(&problem, &opts).certificate() {
            let report = check_certificate(cert, &problem, 0.0);
            prop_assert!(report.feasible, "{:?}", report.violations());
            prop_assert_eq!(&report.margins, &cert.margins);
            let mut broken = cert.clone();
            broken.vars.p = -broken.vars.p.clone();
            prop_assert!(!check_certificate(&broken, &problem, 0.0).feasible);
        }
    }
}

#[test]
fn discretization_matches_dc_motor_samples() {
    // the closed-form ZOH agrees with stepping the exact propagator
    let cr = dc_motor();
    let d = discretize_zoh(&cr, 0.01).unwrap();
    let prop = Propagator::new(&cr.a, &cr.b, 0.0001).unwrap();
    let x0 = DVector::from_vec(vec![0.3, -1.0, 0.5]);
    let u = DVector::from_vec(vec![2.0]);
    let stepped = (0..100).fold(x0.clone(), |x, _| prop.apply(&x, &u));
    let direct = &d.a_d * &x0 + &d.b_d * &u;
    assert!((stepped - &direct).norm() <= 1e-10 * direct.norm());
}
