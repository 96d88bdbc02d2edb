use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};

use cipherloop::controller::{quantized_step, PlantCodec, QuantizedMatrices};
use cipherloop::crypto::{self, encrypt, encrypt_gsw, external_product, keygen, CryptoParams};
use cipherloop::matrix_time::{discretize_zoh, expm};
use cipherloop::plant_sim::dc_motor;
use cipherloop::quantizer::GainSchedule;
use cipherloop::stability::{solve_feasibility, FeasibilityOptions, LmiProblem};

const H: f64 = 0.005;
const LAMBDA: f64 = 9.1e4;

fn matrix_exponential(c: &mut Criterion) {
    let cr = dc_motor();
    let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.1 - 0.5);
    c.bench_function("expm 6x6", |b| b.iter(|| expm(black_box(&a)).unwrap()));
    c.bench_function("discretize dc motor", |b| b.iter(|| discretize_zoh(black_box(&cr), H).unwrap()));
}

fn external_products(c: &mut Criterion) {
    let params = CryptoParams::new(126, 8, 1, 1, 5).unwrap();
    let key = keygen(&params);
    let mut rng = crypto::encryption_rng(&params);
    let g = encrypt_gsw(-4321, &key, &params, &mut rng).unwrap();
    let ct = encrypt(987, 1 << 44, &key, &params, &mut rng).unwrap();
    c.bench_function("external product (q=2^126, n=8)", |b| {
        b.iter(|| external_product(black_box(&g), black_box(&ct), &params).unwrap())
    });
}

fn controller_steps(c: &mut Criterion) {
    let cr = dc_motor();
    let disc = discretize_zoh(&cr, H).unwrap();
    let mats = QuantizedMatrices::new(&disc, &cr.c, &cr.k, LAMBDA).unwrap();
    let schedule = GainSchedule::fixed(LAMBDA, 30.0).unwrap();
    let y = DVector::from_vec(vec![0.1]);
    let chi = DVector::from_fn(mats.n(), |i, _| 0.01 * i as f64);
    c.bench_function("quantized controller step", |b| {
        b.iter(|| quantized_step(&mats, &schedule, 40, black_box(&chi), black_box(&y)).unwrap())
    });

    let params = CryptoParams::new(126, 8, 1, 1, 5).unwrap();
    let mut codec = PlantCodec::new(params, schedule, 1 << 44).unwrap();
    let controller = codec.encrypt_matrices(&mats).unwrap();
    let (y_ct, _) = codec.encode_output(&y, 40).unwrap();
    let (chi_ct, _) = codec.encode_state(&chi, 40).unwrap();
    c.bench_function("encrypted controller step", |b| {
        b.iter(|| controller.step(black_box(&y_ct), black_box(&chi_ct)).unwrap())
    });
}

fn lmi_solve(c: &mut Criterion) {
    let problem = LmiProblem::new(&dc_motor(), H);
    let opts = FeasibilityOptions { maximize_ratio: false, ..FeasibilityOptions::default() };
    let mut g = c.benchmark_group("lmi");
    g.sample_size(10);
    g.bench_function("feasibility at h=0.005", |b| b.iter(|| solve_feasibility(black_box(&problem), &opts)));
    g.finish();
}

criterion_group!(benches, matrix_exponential, external_products, controller_steps, lmi_solve);
criterion_main!(benches);
