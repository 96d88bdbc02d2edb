//! LWE and GSW encryption over Z_q with q = 2^L.
//!
//! LWE ciphertexts encrypt scaled integer vectors and support addition and
//! integer scalar multiplication. GSW ciphertexts encrypt integer multipliers
//! and act on LWE ciphertexts through the external product
//! `Enc'(m) · D(c)`, where `D` is the base-omega gadget decomposition.

mod gsw;
mod lwe;
mod params;
pub mod wire;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub use gsw::{encrypt_gsw, encrypt_gsw_matrix, external_product, gsw_matvec, GswCiphertext, GswMatrix};
pub use lwe::{
    add, decompose, decrypt, decrypt_scaled, encrypt, encrypt_vector, keygen, recompose,
    scalar_mul, sub, DigitVector, LweCiphertext, NoiseBudget, SecretKey,
};
pub use params::{CryptoParams, MAX_MODULUS_BITS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("gain mismatch: {left} vs {right}")]
    GainMismatch { left: u128, right: u128 },
    #[error("plaintext {value} times gain {gain} does not fit below q/2")]
    PlaintextOverflow { value: i128, gain: u128 },
    #[error("noise budget exceeded: error bound {bound} needs 2*bound < gain {gain}")]
    NoiseBudgetExceeded { bound: u128, gain: u128 },
    #[error("malformed ciphertext stream: {0}")]
    Malformed(String),
}

/// Stream identifiers for the ChaCha generator; key generation and
/// encryption randomness never share a stream.
const KEY_STREAM: u64 = 0;
const ENCRYPTION_STREAM: u64 = 1;

/// Generator for key material derived from `params.seed`.
pub fn key_rng(params: &CryptoParams) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed());
    rng.set_stream(KEY_STREAM);
    rng
}

/// Generator for encryption randomness derived from `params.seed`.
pub fn encryption_rng(params: &CryptoParams) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed());
    rng.set_stream(ENCRYPTION_STREAM);
    rng
}
