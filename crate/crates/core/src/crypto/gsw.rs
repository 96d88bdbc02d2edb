//! GSW encryption of integer multipliers and the external product.

use rand::Rng;

use super::lwe::{decompose_residues, sample_error, DigitVector, LweCiphertext, NoiseBudget, SecretKey};
use super::{CryptoError, CryptoParams};

/// GSW ciphertext Enc'(m), an (n_key + 1) x d (n_key + 1) matrix stored row-major.
///
/// `multiplier_bound` is public bookkeeping used to update the noise budget of
/// external products.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GswCiphertext {
    pub body: Vec<u128>,
    pub multiplier_bound: u128,
}

/// Matrix of GSW ciphertexts, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GswMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<GswCiphertext>,
}

impl GswMatrix {
    pub fn get(&self, i: usize, j: usize) -> &GswCiphertext {
        &self.entries[i * self.cols + j]
    }
}

/// Enc'(m) = m H + [k^T a_i + e_i; a_i]_i mod q.
pub fn encrypt_gsw<R: Rng + ?Sized>(
    m: i128,
    key: &SecretKey,
    params: &CryptoParams,
    rng: &mut R,
) -> Result<GswCiphertext, CryptoError> {
    encrypt_gsw_with_bound(m, m.unsigned_abs(), key, params, rng)
}

fn encrypt_gsw_with_bound<R: Rng + ?Sized>(
    m: i128,
    multiplier_bound: u128,
    key: &SecretKey,
    params: &CryptoParams,
    rng: &mut R,
) -> Result<GswCiphertext, CryptoError> {
    if key.len() != params.n_key() {
        return Err(CryptoError::DimensionMismatch { expected: params.n_key(), found: key.len() });
    }
    if m.unsigned_abs() >= params.half_q() {
        return Err(CryptoError::PlaintextOverflow { value: m, gain: 1 });
    }
    let rows = params.lwe_len();
    let cols = params.digit_len();
    let mask = params.mask();
    let mr = params.to_residue(m);
    let mut body = vec![0u128; rows * cols];
    for col in 0..cols {
        let mut top = params.to_residue(sample_error(rng, params.e_max()));
        for row in 1..rows {
            let a = rng.random::<u128>() & mask;
            body[row * cols + col] = a;
            top = params.add(top, params.mul(key.as_slice()[row - 1], a));
        }
        body[col] = top;
        // m H: column col = j (n+1) + i carries m omega^j in row i
        let i = col % rows;
        let j = col / rows;
        let weight = 1u128 << (params.omega_bits() * j as u32);
        let idx = i * cols + col;
        body[idx] = params.add(body[idx], params.mul(mr, weight));
    }
    Ok(GswCiphertext { body, multiplier_bound })
}

/// Encrypts an integer matrix (row-major). All entries share the public
/// multiplier bound max |m_ij|.
pub fn encrypt_gsw_matrix<R: Rng + ?Sized>(
    m: &[i128],
    rows: usize,
    cols: usize,
    key: &SecretKey,
    params: &CryptoParams,
    rng: &mut R,
) -> Result<GswMatrix, CryptoError> {
    if m.len() != rows * cols {
        return Err(CryptoError::DimensionMismatch { expected: rows * cols, found: m.len() });
    }
    let bound = m.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
    let entries = m
        .iter()
        .map(|&v| encrypt_gsw_with_bound(v, bound, key, params, rng))
        .collect::<Result<_, _>>()?;
    Ok(GswMatrix { rows, cols, entries })
}

fn check_gsw(g: &GswCiphertext, params: &CryptoParams) -> Result<(), CryptoError> {
    let expected = params.lwe_len() * params.digit_len();
    if g.body.len() != expected {
        return Err(CryptoError::DimensionMismatch { expected, found: g.body.len() });
    }
    Ok(())
}

fn apply_digits(g: &GswCiphertext, d: &DigitVector, params: &CryptoParams, acc: &mut [u128]) {
    let cols = params.digit_len();
    for (row, slot) in g.body.chunks_exact(cols).zip(acc.iter_mut()) {
        let mut s = 0u128;
        for (a, b) in row.iter().zip(&d.digits) {
            s = s.wrapping_add(a.wrapping_mul(*b));
        }
        *slot = slot.wrapping_add(s);
    }
}

fn product_error(g: &GswCiphertext, budget: &NoiseBudget, params: &CryptoParams) -> u128 {
    g.multiplier_bound
        .saturating_mul(budget.error_bound)
        .saturating_add(params.external_product_error())
}

/// c1 ⊙ c2 = Enc'(m1) D(c2) mod q.
pub fn external_product(
    g: &GswCiphertext,
    c: &LweCiphertext,
    params: &CryptoParams,
) -> Result<LweCiphertext, CryptoError> {
    check_gsw(g, params)?;
    if c.body.len() != params.lwe_len() {
        return Err(CryptoError::DimensionMismatch { expected: params.lwe_len(), found: c.body.len() });
    }
    let d = decompose_residues(&c.body, params);
    let mut body = vec![0u128; params.lwe_len()];
    apply_digits(g, &d, params, &mut body);
    for v in &mut body {
        *v = params.reduce(*v);
    }
    Ok(LweCiphertext {
        body,
        budget: NoiseBudget { error_bound: product_error(g, &c.budget, params), gain: c.budget.gain },
    })
}

/// Encrypted matrix-vector product: out_i = sum_j M_ij ⊙ c_j.
pub fn gsw_matvec(
    m: &GswMatrix,
    c: &[LweCiphertext],
    params: &CryptoParams,
) -> Result<Vec<LweCiphertext>, CryptoError> {
    if c.len() != m.cols {
        return Err(CryptoError::DimensionMismatch { expected: m.cols, found: c.len() });
    }
    let gain = match c.first() {
        Some(first) => first.budget.gain,
        None => 0,
    };
    let mut digits = Vec::with_capacity(c.len());
    for ci in c {
        if ci.body.len() != params.lwe_len() {
            return Err(CryptoError::DimensionMismatch { expected: params.lwe_len(), found: ci.body.len() });
        }
        if ci.budget.gain != gain {
            return Err(CryptoError::GainMismatch { left: gain, right: ci.budget.gain });
        }
        digits.push(decompose_residues(&ci.body, params));
    }
    let mut out = Vec::with_capacity(m.rows);
    for i in 0..m.rows {
        let mut body = vec![0u128; params.lwe_len()];
        let mut bound = 0u128;
        for j in 0..m.cols {
            let g = m.get(i, j);
            check_gsw(g, params)?;
            apply_digits(g, &digits[j], params, &mut body);
            bound = bound.saturating_add(product_error(g, &c[j].budget, params));
        }
        for v in &mut body {
            *v = params.reduce(*v);
        }
        out.push(LweCiphertext { body, budget: NoiseBudget { error_bound: bound, gain } });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{decrypt, decrypt_scaled, encrypt, encryption_rng, keygen};

    #[test]
    fn external_product_decrypts_to_product() {
        let p = CryptoParams::new(64, 3, 1, 1, 11).unwrap();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let g = 1u128 << 16;
        for (m1, m2) in [(3i128, 5i128), (-7, 11), (0, 9), (120, -33)] {
            let gm = encrypt_gsw(m1, &key, &p, &mut rng).unwrap();
            let c = encrypt(m2, g, &key, &p, &mut rng).unwrap();
            let prod = external_product(&gm, &c, &p).unwrap();
            assert_eq!(decrypt_scaled(&prod, g, &key, &p).unwrap(), m1 * m2);
            let raw = decrypt(&prod, &key, &p).unwrap() - (g as i128) * m1 * m2;
            assert!(raw.unsigned_abs() <= prod.budget.error_bound);
        }
    }

    #[test]
    fn matvec_matches_integer_product() {
        let p = CryptoParams::new(80, 2, 2, 1, 3).unwrap();
        let key = keygen(&p);
        let mut rng = encryption_rng(&p);
        let g = 1u128 << 20;
        let m = [2i128, -1, 0, 4, 3, -5];
        let x = [7i128, -2, 9];
        let gm = encrypt_gsw_matrix(&m, 2, 3, &key, &p, &mut rng).unwrap();
        let cx: Vec<_> = x.iter().map(|&v| encrypt(v, g, &key, &p, &mut rng).unwrap()).collect();
        let out = gsw_matvec(&gm, &cx, &p).unwrap();
        let got: Vec<i128> = out.iter().map(|c| decrypt_scaled(c, g, &key, &p).unwrap()).collect();
        assert_eq!(got, vec![2 * 7 + 2 + 0, 4 * 7 - 6 - 45]);
        // three products, each 5 * 1 + 1 * (4 - 1) * 40 * 3
        assert_eq!(out[0].budget.error_bound, 3 * (5 + 360));
    }
}
