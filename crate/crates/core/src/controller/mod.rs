//! Discrete observer-based controllers: ideal, quantized and encrypted.
//!
//! All three implement the recursion
//! u(t_k) = K χ(t_k),
//! χ(t_{k+1}) = A_d χ(t_k) + B_d u(t_k) + L_d (y(t_k) − C χ(t_k)).
//! The quantized form runs it on the integer encodings; the encrypted form
//! evaluates the same integer arithmetic under LWE/GSW encryption.

mod encrypted;
mod quantized;
pub mod transcript;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::matrix_time::DiscreteRealization;
use crate::quantizer::QuantizerError;

pub use encrypted::{EncryptedController, EncryptedSession, PlantCodec};
pub use quantized::{quantized_step, IntMatrix, QuantizedController, QuantizedMatrices, REFERENCE_INT_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("crypto: {0}")]
    Crypto(#[from] CryptoError),
    #[error("quantizer: {0}")]
    Quantizer(#[from] QuantizerError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("integer overflow in the quantized recursion")]
    IntegerOverflow,
    #[error("controller outputs may reach {bound}, beyond the plaintext range {limit}")]
    PlaintextRange { bound: u128, limit: u128 },
    #[error("configuration: {0}")]
    Config(String),
}

/// Everything produced by one controller step.
///
/// The `*_scaled` vectors are the exact integers exchanged with the encrypted
/// controller: χ̄ at gain Λ_k, ȳ and u at gain ΛΛ_k, the next state at Λ²Λ_k.
/// The real vectors are those integers divided by their gains.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub chi_scaled: Vec<i128>,
    pub y_scaled: Vec<i128>,
    pub u_scaled: Vec<i128>,
    pub chi_next_scaled: Vec<i128>,
    pub chi_bar: DVector<f64>,
    pub y_bar: DVector<f64>,
    pub u: DVector<f64>,
    pub chi_next: DVector<f64>,
}

/// Unquantized discrete observer controller.
#[derive(Clone, Debug)]
pub struct IdealController {
    pub disc: DiscreteRealization,
    pub c: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
    pub chi: DVector<f64>,
    pub k: usize,
}

impl IdealController {
    pub fn new(disc: DiscreteRealization, c: DMatrix<f64>, k_gain: DMatrix<f64>, chi0: DVector<f64>) -> Self {
        Self { disc, c, k_gain, chi: chi0, k: 0 }
    }

    /// Returns (u(t_k), χ(t_{k+1})) and advances.
    pub fn step(&mut self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let u = &self.k_gain * &self.chi;
        let innov = y - &self.c * &self.chi;
        let next = &self.disc.a_d * &self.chi + &self.disc.b_d * &u + &self.disc.l_d * innov;
        self.chi = next.clone();
        self.k += 1;
        (u, next)
    }
}
