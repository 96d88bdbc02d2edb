//! Binary transcript of every ciphertext exchanged in an encrypted run.
//!
//! Layout: `CLTR`, version, the ciphertext stream header, e_max, seed, noise
//! gain, the run configuration (length-prefixed UTF-8), the five controller
//! GSW matrices, 𝛘(0), then one record per step with 𝐲, 𝐮, 𝛘′ and the
//! re-encrypted 𝛘 for the next step.

use std::io::{Read, Write};

use super::{ControllerError, EncryptedController};
use crate::crypto::wire::{
    expect_header, read_gsw_matrix, read_header, read_lwe_vec, write_gsw_matrix, write_header, write_lwe_vec,
};
use crate::crypto::{CryptoError, CryptoParams, LweCiphertext};

const MAGIC: &[u8; 4] = b"CLTR";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptRecord {
    pub k: u64,
    pub y: Vec<LweCiphertext>,
    pub u: Vec<LweCiphertext>,
    pub chi_prime: Vec<LweCiphertext>,
    pub chi_next: Vec<LweCiphertext>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub params: CryptoParams,
    pub noise_gain: u128,
    pub config: String,
    pub controller: EncryptedController,
    pub chi0: Vec<LweCiphertext>,
    pub records: Vec<TranscriptRecord>,
}

/// Outcome of re-evaluating the recorded controller inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplayCheck {
    Match { records: usize },
    Mismatch { record: usize, field: &'static str },
}

fn malformed(msg: impl Into<String>) -> ControllerError {
    ControllerError::Crypto(CryptoError::Malformed(msg.into()))
}

fn io(e: std::io::Error) -> ControllerError {
    malformed(e.to_string())
}

impl Transcript {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ControllerError> {
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        write_header(w, &self.params)?;
        w.write_all(&self.params.e_max().to_le_bytes()).map_err(io)?;
        w.write_all(&self.params.seed().to_le_bytes()).map_err(io)?;
        w.write_all(&self.noise_gain.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.config.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(self.config.as_bytes()).map_err(io)?;
        let c = &self.controller;
        for m in [&c.a_d, &c.b_d, &c.l_d, &c.c, &c.k] {
            write_gsw_matrix(w, m)?;
        }
        write_lwe_vec(w, &self.chi0)?;
        w.write_all(&(self.records.len() as u32).to_le_bytes()).map_err(io)?;
        for r in &self.records {
            w.write_all(&r.k.to_le_bytes()).map_err(io)?;
            for v in [&r.y, &r.u, &r.chi_prime, &r.chi_next] {
                write_lwe_vec(w, v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ControllerError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(malformed("not a transcript"));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v).map_err(io)?;
        if u16::from_le_bytes(v) != VERSION {
            return Err(malformed("unsupported transcript version"));
        }
        let h = read_header(r)?;
        let e_max = u64::from_le_bytes(read_array(r)?);
        let seed = u64::from_le_bytes(read_array(r)?);
        let noise_gain = u128::from_le_bytes(read_array(r)?);
        let params = CryptoParams::from_values(h.q, h.n_key as usize, h.omega, h.digits as usize, e_max, seed)?;
        let len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io)?;
        let config = String::from_utf8(buf).map_err(|e| malformed(e.to_string()))?;
        let mut mats = Vec::with_capacity(5);
        for _ in 0..5 {
            mats.push(read_gsw_matrix(r, &params)?);
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("five matrices read");
        let controller =
            EncryptedController { a_d: next(), b_d: next(), l_d: next(), c: next(), k: next(), params: params.clone() };
        let chi0 = read_lwe_vec(r, &params)?;
        let count = u32::from_le_bytes(read_array(r)?) as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let k = u64::from_le_bytes(read_array(r)?);
            records.push(TranscriptRecord {
                k,
                y: read_lwe_vec(r, &params)?,
                u: read_lwe_vec(r, &params)?,
                chi_prime: read_lwe_vec(r, &params)?,
                chi_next: read_lwe_vec(r, &params)?,
            });
        }
        Ok(Self { params, noise_gain, config, controller, chi0, records })
    }

    /// Recomputes every controller step from the recorded 𝐲 and 𝛘 without
    /// the key and compares against the recorded 𝐮 and 𝛘′.
    pub fn verify_controller(&self) -> Result<ReplayCheck, ControllerError> {
        let mut chi = &self.chi0;
        for (i, r) in self.records.iter().enumerate() {
            if r.k != i as u64 {
                return Ok(ReplayCheck::Mismatch { record: i, field: "k" });
            }
            let (u, chi_prime) = self.controller.step(&r.y, chi)?;
            if u != r.u {
                return Ok(ReplayCheck::Mismatch { record: i, field: "u" });
            }
            if chi_prime != r.chi_prime {
                return Ok(ReplayCheck::Mismatch { record: i, field: "chi_prime" });
            }
            chi = &r.chi_next;
        }
        Ok(ReplayCheck::Match { records: self.records.len() })
    }

    /// Checks the ciphertext header of a raw stream against these parameters.
    pub fn header_matches<R: Read>(&self, r: &mut R) -> bool {
        expect_header(r, &self.params).is_ok()
    }
}

/// Index of the first record at which two transcripts differ, if any.
pub fn first_divergence(a: &Transcript, b: &Transcript) -> Option<usize> {
    if a.params != b.params || a.noise_gain != b.noise_gain || a.controller != b.controller || a.chi0 != b.chi0 {
        return Some(0);
    }
    let common = a.records.len().min(b.records.len());
    (0..common)
        .find(|&i| a.records[i] != b.records[i])
        .or((a.records.len() != b.records.len()).then_some(common))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], ControllerError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(io)?;
    Ok(b)
}
