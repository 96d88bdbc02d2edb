//! Little-endian binary encoding of ciphertexts.
//!
//! A stream starts with a header `CLWE`, version, q (u128), n_key (u32),
//! omega (u128) and d (u32). Residues are written as 16-byte little-endian
//! integers. LWE records carry their noise budget (gain, error bound) ahead of
//! the n_key + 1 residues; GSW records carry the multiplier bound ahead of
//! the (n_key + 1) d (n_key + 1) residues.

use std::io::{Read, Write};

use super::{CryptoError, CryptoParams, GswCiphertext, GswMatrix, LweCiphertext, NoiseBudget};

const MAGIC: &[u8; 4] = b"CLWE";
const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WireHeader {
    pub q: u128,
    pub n_key: u32,
    pub omega: u128,
    pub digits: u32,
}

impl WireHeader {
    pub fn of(params: &CryptoParams) -> Self {
        Self {
            q: params.q(),
            n_key: params.n_key() as u32,
            omega: params.omega(),
            digits: params.digits() as u32,
        }
    }

    pub fn matches(&self, params: &CryptoParams) -> bool {
        *self == Self::of(params)
    }
}

fn io_err(e: std::io::Error) -> CryptoError {
    CryptoError::Malformed(e.to_string())
}

fn put_u128<W: Write>(w: &mut W, v: u128) -> Result<(), CryptoError> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<(), CryptoError> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn get_u128<R: Read>(r: &mut R) -> Result<u128, CryptoError> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u128::from_le_bytes(b))
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, CryptoError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_header<W: Write>(w: &mut W, params: &CryptoParams) -> Result<(), CryptoError> {
    let h = WireHeader::of(params);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    put_u128(w, h.q)?;
    put_u32(w, h.n_key)?;
    put_u128(w, h.omega)?;
    put_u32(w, h.digits)
}

pub fn read_header<R: Read>(r: &mut R) -> Result<WireHeader, CryptoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CryptoError::Malformed("bad magic".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v).map_err(io_err)?;
    if u16::from_le_bytes(v) != VERSION {
        return Err(CryptoError::Malformed(format!("unsupported version {}", u16::from_le_bytes(v))));
    }
    Ok(WireHeader { q: get_u128(r)?, n_key: get_u32(r)?, omega: get_u128(r)?, digits: get_u32(r)? })
}

/// Reads a header and checks it against `params`.
pub fn expect_header<R: Read>(r: &mut R, params: &CryptoParams) -> Result<(), CryptoError> {
    let h = read_header(r)?;
    if !h.matches(params) {
        return Err(CryptoError::Malformed(format!("header {h:?} does not match parameters")));
    }
    Ok(())
}

pub fn write_lwe<W: Write>(w: &mut W, c: &LweCiphertext) -> Result<(), CryptoError> {
    put_u128(w, c.budget.gain)?;
    put_u128(w, c.budget.error_bound)?;
    c.body.iter().try_for_each(|x| put_u128(w, *x))
}

pub fn read_lwe<R: Read>(r: &mut R, params: &CryptoParams) -> Result<LweCiphertext, CryptoError> {
    let gain = get_u128(r)?;
    let error_bound = get_u128(r)?;
    let body = (0..params.lwe_len()).map(|_| get_residue(r, params)).collect::<Result<_, _>>()?;
    Ok(LweCiphertext { body, budget: NoiseBudget { error_bound, gain } })
}

fn get_residue<R: Read>(r: &mut R, params: &CryptoParams) -> Result<u128, CryptoError> {
    let v = get_u128(r)?;
    if v >= params.q() {
        return Err(CryptoError::Malformed(format!("residue {v} not below q")));
    }
    Ok(v)
}

pub fn write_lwe_vec<W: Write>(w: &mut W, cs: &[LweCiphertext]) -> Result<(), CryptoError> {
    put_u32(w, cs.len() as u32)?;
    cs.iter().try_for_each(|c| write_lwe(w, c))
}

pub fn read_lwe_vec<R: Read>(r: &mut R, params: &CryptoParams) -> Result<Vec<LweCiphertext>, CryptoError> {
    let n = get_u32(r)? as usize;
    (0..n).map(|_| read_lwe(r, params)).collect()
}

pub fn write_gsw<W: Write>(w: &mut W, g: &GswCiphertext) -> Result<(), CryptoError> {
    put_u128(w, g.multiplier_bound)?;
    g.body.iter().try_for_each(|x| put_u128(w, *x))
}

pub fn read_gsw<R: Read>(r: &mut R, params: &CryptoParams) -> Result<GswCiphertext, CryptoError> {
    let multiplier_bound = get_u128(r)?;
    let len = params.lwe_len() * params.digit_len();
    let body = (0..len).map(|_| get_residue(r, params)).collect::<Result<_, _>>()?;
    Ok(GswCiphertext { body, multiplier_bound })
}

pub fn write_gsw_matrix<W: Write>(w: &mut W, m: &GswMatrix) -> Result<(), CryptoError> {
    put_u32(w, m.rows as u32)?;
    put_u32(w, m.cols as u32)?;
    m.entries.iter().try_for_each(|g| write_gsw(w, g))
}

pub fn read_gsw_matrix<R: Read>(r: &mut R, params: &CryptoParams) -> Result<GswMatrix, CryptoError> {
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    let entries = (0..rows * cols).map(|_| read_gsw(r, params)).collect::<Result<_, _>>()?;
    Ok(GswMatrix { rows, cols, entries })
}

/// Self-contained encoding of one LWE ciphertext: header plus record.
pub fn lwe_to_bytes(c: &LweCiphertext, params: &CryptoParams) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, params).expect("writing to a Vec cannot fail");
    write_lwe(&mut out, c).expect("writing to a Vec cannot fail");
    out
}

pub fn lwe_from_bytes(bytes: &[u8], params: &CryptoParams) -> Result<LweCiphertext, CryptoError> {
    let mut r = bytes;
    expect_header(&mut r, params)?;
    let c = read_lwe(&mut r, params)?;
    if !r.is_empty() {
        return Err(CryptoError::Malformed(format!("{} trailing bytes", r.len())));
    }
    Ok(c)
}
