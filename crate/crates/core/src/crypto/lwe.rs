//! LWE ciphertexts, noise bookkeeping and gadget decomposition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CryptoError, CryptoParams};

/// Secret key k in Z_q^{n_key}.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    key: Vec<u128>,
}

impl SecretKey {
    pub fn len(&self) -> usize {
        self.key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key.is_empty()
    }

    pub(crate) fn as_slice(&self) -> &[u128] {
        &self.key
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecretKey(<{} residues>)", self.key.len())
    }
}

/// Public worst-case bookkeeping carried by every LWE ciphertext.
///
/// `error_bound` bounds |Dec(c) - gain * m| and `gain` is the encryption gain G.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub error_bound: u128,
    pub gain: u128,
}

impl NoiseBudget {
    /// True while rounding Dec(c)/G is guaranteed to return m.
    pub fn is_exact(&self) -> bool {
        self.error_bound.saturating_mul(2) < self.gain
    }
}

/// LWE ciphertext [G m + k^T a + e; a] mod q.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LweCiphertext {
    pub body: Vec<u128>,
    pub budget: NoiseBudget,
}

/// Base-omega digits of an LWE ciphertext laid out as
/// [digit 0 of every entry, digit 1 of every entry, ...], so that
/// H D(c) = c with H = [I, omega I, ..., omega^{d-1} I].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigitVector {
    pub digits: Vec<u128>,
}

pub fn keygen(params: &CryptoParams) -> SecretKey {
    let mut rng = super::key_rng(params);
    let mask = params.mask();
    let key = (0..params.n_key()).map(|_| rng.random::<u128>() & mask).collect();
    SecretKey { key }
}

pub(crate) fn sample_error<R: Rng + ?Sized>(rng: &mut R, e_max: u64) -> i128 {
    if e_max == 0 {
        return 0;
    }
    let e = e_max as i128;
    rng.random_range(-e..=e)
}

fn check_key(key: &SecretKey, params: &CryptoParams) -> Result<(), CryptoError> {
    if key.len() != params.n_key() {
        return Err(CryptoError::DimensionMismatch { expected: params.n_key(), found: key.len() });
    }
    Ok(())
}

fn check_gain(gain: u128, params: &CryptoParams) -> Result<(), CryptoError> {
    if gain == 0 || gain >= params.half_q() {
        return Err(CryptoError::InvalidParams(format!("gain {gain} outside (0, q/2)")));
    }
    Ok(())
}

/// Encrypts the integer `m` with gain `gain`: Enc(G m).
pub fn encrypt<R: Rng + ?Sized>(
    m: i128,
    gain: u128,
    key: &SecretKey,
    params: &CryptoParams,
    rng: &mut R,
) -> Result<LweCiphertext, CryptoError> {
    check_key(key, params)?;
    check_gain(gain, params)?;
    let scaled = m
        .checked_mul(gain as i128)
        .filter(|v| v.unsigned_abs() + params.e_max() as u128 <= params.half_q() - 1)
        .ok_or(CryptoError::PlaintextOverflow { value: m, gain })?;
    let mask = params.mask();
    let a: Vec<u128> = (0..params.n_key()).map(|_| rng.random::<u128>() & mask).collect();
    let e = sample_error(rng, params.e_max());
    let mut b = params.to_residue(scaled + e);
    for (ki, ai) in key.as_slice().iter().zip(&a) {
        b = params.add(b, params.mul(*ki, *ai));
    }
    let mut body = Vec::with_capacity(params.lwe_len());
    body.push(b);
    body.extend(a);
    Ok(LweCiphertext { body, budget: NoiseBudget { error_bound: params.e_max() as u128, gain } })
}

pub fn encrypt_vector<R: Rng + ?Sized>(
    m: &[i128],
    gain: u128,
    key: &SecretKey,
    params: &CryptoParams,
    rng: &mut R,
) -> Result<Vec<LweCiphertext>, CryptoError> {
    m.iter().map(|&mi| encrypt(mi, gain, key, params, rng)).collect()
}

/// Raw decryption [1, -k^T] c, returned as a centered representative.
pub fn decrypt(c: &LweCiphertext, key: &SecretKey, params: &CryptoParams) -> Result<i128, CryptoError> {
    check_key(key, params)?;
    check_len(c, params)?;
    let mut acc = c.body[0];
    for (ki, ci) in key.as_slice().iter().zip(&c.body[1..]) {
        acc = params.sub(acc, params.mul(*ki, *ci));
    }
    Ok(params.centered(acc))
}

/// Decrypts and removes the gain: round(Dec(c) / G).
///
/// Refuses when the tracked error bound no longer guarantees exact recovery.
pub fn decrypt_scaled(
    c: &LweCiphertext,
    gain: u128,
    key: &SecretKey,
    params: &CryptoParams,
) -> Result<i128, CryptoError> {
    check_gain(gain, params)?;
    if c.budget.gain != gain {
        return Err(CryptoError::GainMismatch { left: c.budget.gain, right: gain });
    }
    if !c.budget.is_exact() {
        return Err(CryptoError::NoiseBudgetExceeded { bound: c.budget.error_bound, gain });
    }
    let v = decrypt(c, key, params)?;
    Ok(div_round(v, gain as i128))
}

/// Integer division rounding to nearest, ties away from zero.
fn div_round(v: i128, g: i128) -> i128 {
    let q = v.div_euclid(g);
    let r = v.rem_euclid(g);
    // v = q g + r with 0 <= r < g
    if 2 * r > g || (2 * r == g && v >= 0) {
        q + 1
    } else {
        q
    }
}

fn check_len(c: &LweCiphertext, params: &CryptoParams) -> Result<(), CryptoError> {
    if c.body.len() != params.lwe_len() {
        return Err(CryptoError::DimensionMismatch { expected: params.lwe_len(), found: c.body.len() });
    }
    Ok(())
}

fn check_pair(c1: &LweCiphertext, c2: &LweCiphertext, params: &CryptoParams) -> Result<(), CryptoError> {
    check_len(c1, params)?;
    check_len(c2, params)?;
    if c1.budget.gain != c2.budget.gain {
        return Err(CryptoError::GainMismatch { left: c1.budget.gain, right: c2.budget.gain });
    }
    Ok(())
}

pub fn add(c1: &LweCiphertext, c2: &LweCiphertext, params: &CryptoParams) -> Result<LweCiphertext, CryptoError> {
    check_pair(c1, c2, params)?;
    let body = c1.body.iter().zip(&c2.body).map(|(a, b)| params.add(*a, *b)).collect();
    Ok(LweCiphertext {
        body,
        budget: NoiseBudget {
            error_bound: c1.budget.error_bound.saturating_add(c2.budget.error_bound),
            gain: c1.budget.gain,
        },
    })
}

pub fn sub(c1: &LweCiphertext, c2: &LweCiphertext, params: &CryptoParams) -> Result<LweCiphertext, CryptoError> {
    check_pair(c1, c2, params)?;
    let body = c1.body.iter().zip(&c2.body).map(|(a, b)| params.sub(*a, *b)).collect();
    Ok(LweCiphertext {
        body,
        budget: NoiseBudget {
            error_bound: c1.budget.error_bound.saturating_add(c2.budget.error_bound),
            gain: c1.budget.gain,
        },
    })
}

/// Multiplies by a public integer k.
pub fn scalar_mul(k: i128, c: &LweCiphertext, params: &CryptoParams) -> Result<LweCiphertext, CryptoError> {
    check_len(c, params)?;
    let kr = params.to_residue(k);
    let body = c.body.iter().map(|x| params.mul(kr, *x)).collect();
    Ok(LweCiphertext {
        body,
        budget: NoiseBudget {
            error_bound: c.budget.error_bound.saturating_mul(k.unsigned_abs()),
            gain: c.budget.gain,
        },
    })
}

pub fn decompose(c: &LweCiphertext, params: &CryptoParams) -> Result<DigitVector, CryptoError> {
    check_len(c, params)?;
    Ok(decompose_residues(&c.body, params))
}

pub(crate) fn decompose_residues(body: &[u128], params: &CryptoParams) -> DigitVector {
    let w = params.omega_bits();
    let digit_mask = params.omega() - 1;
    let len = body.len();
    let mut digits = vec![0u128; params.digits() * len];
    for (j, chunk) in digits.chunks_mut(len).enumerate() {
        let shift = w * j as u32;
        for (slot, r) in chunk.iter_mut().zip(body) {
            *slot = (r >> shift) & digit_mask;
        }
    }
    DigitVector { digits }
}

/// Inverse of `decompose`: H D.
pub fn recompose(d: &DigitVector, params: &CryptoParams) -> Result<Vec<u128>, CryptoError> {
    let len = params.lwe_len();
    if d.digits.len() != params.digit_len() {
        return Err(CryptoError::DimensionMismatch { expected: params.digit_len(), found: d.digits.len() });
    }
    let mut out = vec![0u128; len];
    for (j, chunk) in d.digits.chunks(len).enumerate() {
        let weight = 1u128 << (params.omega_bits() * j as u32);
        for (o, digit) in out.iter_mut().zip(chunk) {
            *o = params.add(*o, params.mul(weight, *digit));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::encryption_rng;

    fn small() -> CryptoParams {
        CryptoParams::new(48, 4, 1, 2, 7).unwrap()
    }

    #[test]
    fn scalar_digit_example() {
        // 13 = 1 + 0*2 + 1*4 + 1*8 with q = 16, omega = 2
        let p = CryptoParams::new(4, 1, 1, 0, 0).unwrap();
        let d = decompose_residues(&[13], &p);
        assert_eq!(d.digits, vec![1, 0, 1, 1]);
    }

    #[test]
    fn decompose_recompose_roundtrip() {
        let p = CryptoParams::new(12, 2, 2, 0, 0).unwrap();
        let c = LweCiphertext { body: vec![4095, 17, 2048], budget: NoiseBudget { error_bound: 0, gain: 1 } };
        let d = decompose(&c, &p).unwrap();
        assert_eq!(d.digits.len(), 18);
        assert!(d.digits.iter().all(|&x| x < 4));
        assert_eq!(recompose(&d, &p).unwrap(), c.body);
    }

    #[test]
    fn raw_decryption_error_is_bounded() {
        let p = small();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        for m in [-5i128, 0, 3, 1000] {
            let c = encrypt(m, 1, &key, &p, &mut rng).unwrap();
            let e = decrypt(&c, &key, &p).unwrap() - m;
            assert!(e.abs() <= 2);
        }
    }

    #[test]
    fn scaled_roundtrip_and_linearity() {
        let p = small();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let g = 1 << 10;
        let a = encrypt(-37, g, &key, &p, &mut rng).unwrap();
        let b = encrypt(12, g, &key, &p, &mut rng).unwrap();
        assert_eq!(decrypt_scaled(&add(&a, &b, &p).unwrap(), g, &key, &p).unwrap(), -25);
        assert_eq!(decrypt_scaled(&sub(&a, &b, &p).unwrap(), g, &key, &p).unwrap(), -49);
        let s = scalar_mul(-3, &a, &p).unwrap();
        assert_eq!(s.budget.error_bound, 6);
        assert_eq!(decrypt_scaled(&s, g, &key, &p).unwrap(), 111);
    }

    #[test]
    fn refuses_exhausted_budget_and_mismatched_gain() {
        let p = small();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let c = encrypt(1, 4, &key, &p, &mut rng).unwrap();
        assert!(matches!(
            decrypt_scaled(&c, 4, &key, &p),
            Err(CryptoError::NoiseBudgetExceeded { .. })
        ));
        let d = encrypt(1, 8, &key, &p, &mut rng).unwrap();
        assert!(matches!(add(&c, &d, &p), Err(CryptoError::GainMismatch { .. })));
    }

    #[test]
    fn plaintext_overflow_is_reported() {
        let p = CryptoParams::new(20, 2, 1, 1, 0).unwrap();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        assert!(matches!(
            encrypt(1 << 12, 1 << 8, &key, &p, &mut rng),
            Err(CryptoError::PlaintextOverflow { .. })
        ));
    }

    #[test]
    fn rounding_ties_away_from_zero() {
        assert_eq!(div_round(5, 2), 3);
        assert_eq!(div_round(-5, 2), -3);
        assert_eq!(div_round(-4, 3), -1);
        assert_eq!(div_round(-5, 3), -2);
        assert_eq!(div_round(7, 4), 2);
    }
}
