//! Scheme parameters and residue arithmetic modulo q = 2^L.

use serde::{Deserialize, Serialize};

use super::CryptoError;

/// Largest supported modulus exponent. Centered representatives of residues
/// modulo 2^126 fit comfortably in `i128`.
pub const MAX_MODULUS_BITS: u32 = 126;

/// Public parameters of the LWE/GSW scheme.
///
/// The modulus is a power of two and the digit base `omega` is a power of two
/// with `omega^digits == q`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CryptoParams {
    modulus_bits: u32,
    n_key: usize,
    omega_bits: u32,
    e_max: u64,
    seed: u64,
}

impl CryptoParams {
    /// Builds parameters for `q = 2^modulus_bits` and `omega = 2^omega_bits`.
    pub fn new(
        modulus_bits: u32,
        n_key: usize,
        omega_bits: u32,
        e_max: u64,
        seed: u64,
    ) -> Result<Self, CryptoError> {
        if !(2..=MAX_MODULUS_BITS).contains(&modulus_bits) {
            return Err(CryptoError::InvalidParams(format!(
                "modulus exponent {modulus_bits} outside 2..={MAX_MODULUS_BITS}"
            )));
        }
        if n_key == 0 {
            return Err(CryptoError::InvalidParams("key dimension must be positive".into()));
        }
        if omega_bits == 0 || modulus_bits % omega_bits != 0 {
            return Err(CryptoError::InvalidParams(format!(
                "digit base 2^{omega_bits} does not divide modulus 2^{modulus_bits} into whole digits"
            )));
        }
        if e_max as u128 >= (1u128 << (modulus_bits - 2)) {
            return Err(CryptoError::InvalidParams("error bound too large for modulus".into()));
        }
        Ok(Self { modulus_bits, n_key, omega_bits, e_max, seed })
    }

    /// Builds parameters from the numeric values `q`, `omega` and `d`.
    pub fn from_values(
        q: u128,
        n_key: usize,
        omega: u128,
        digits: usize,
        e_max: u64,
        seed: u64,
    ) -> Result<Self, CryptoError> {
        if !q.is_power_of_two() || !omega.is_power_of_two() || omega < 2 {
            return Err(CryptoError::InvalidParams(
                "q and omega must be powers of two with omega >= 2".into(),
            ));
        }
        let modulus_bits = q.trailing_zeros();
        let omega_bits = omega.trailing_zeros();
        if omega_bits as usize * digits != modulus_bits as usize {
            return Err(CryptoError::InvalidParams(format!(
                "omega^d = 2^{} differs from q = 2^{modulus_bits}",
                omega_bits as usize * digits
            )));
        }
        Self::new(modulus_bits, n_key, omega_bits, e_max, seed)
    }

    pub fn modulus_bits(&self) -> u32 {
        self.modulus_bits
    }

    pub fn q(&self) -> u128 {
        1u128 << self.modulus_bits
    }

    pub fn half_q(&self) -> u128 {
        1u128 << (self.modulus_bits - 1)
    }

    pub fn n_key(&self) -> usize {
        self.n_key
    }

    pub fn omega(&self) -> u128 {
        1u128 << self.omega_bits
    }

    pub fn omega_bits(&self) -> u32 {
        self.omega_bits
    }

    /// Number of base-omega digits per residue.
    pub fn digits(&self) -> usize {
        (self.modulus_bits / self.omega_bits) as usize
    }

    pub fn e_max(&self) -> u64 {
        self.e_max
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Returns a copy with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Length of an LWE ciphertext, n_key + 1.
    pub fn lwe_len(&self) -> usize {
        self.n_key + 1
    }

    /// Length of a digit vector, d (n_key + 1).
    pub fn digit_len(&self) -> usize {
        self.digits() * self.lwe_len()
    }

    #[inline]
    pub(crate) fn mask(&self) -> u128 {
        self.q() - 1
    }

    #[inline]
    pub(crate) fn reduce(&self, x: u128) -> u128 {
        x & self.mask()
    }

    #[inline]
    pub(crate) fn add(&self, a: u128, b: u128) -> u128 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub(crate) fn sub(&self, a: u128, b: u128) -> u128 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub(crate) fn mul(&self, a: u128, b: u128) -> u128 {
        a.wrapping_mul(b) & self.mask()
    }

    /// Maps a signed integer to its residue in [0, q).
    #[inline]
    pub fn to_residue(&self, m: i128) -> u128 {
        (m as u128) & self.mask()
    }

    /// Centered representative in [-q/2, q/2).
    #[inline]
    pub fn centered(&self, r: u128) -> i128 {
        let r = self.reduce(r);
        if r >= self.half_q() {
            r as i128 - self.q() as i128
        } else {
            r as i128
        }
    }

    /// Worst-case error added by one external product, e_max (omega - 1) d (n_key + 1).
    pub fn external_product_error(&self) -> u128 {
        (self.e_max as u128)
            .saturating_mul(self.omega() - 1)
            .saturating_mul(self.digit_len() as u128)
    }
}

impl Default for CryptoParams {
    fn default() -> Self {
        Self::new(126, 8, 1, 1, 0x5eed).expect("default parameters are valid")
    }
}
