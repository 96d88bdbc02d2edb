//! Cloud-side encrypted controller and the plant-side codec holding the key.

use nalgebra::DVector;
use rand_chacha::ChaCha20Rng;

use super::quantized::{encode_vector, to_vector, QuantizedMatrices};
use super::transcript::{Transcript, TranscriptRecord};
use super::{ControllerError, StepRecord};
use crate::crypto::{
    add, decrypt_scaled, encrypt, encrypt_gsw_matrix, encryption_rng, gsw_matvec, keygen, sub, CryptoParams,
    GswMatrix, LweCiphertext, SecretKey,
};
use crate::quantizer::GainSchedule;

/// Encrypted controller matrices. Holds no key material.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedController {
    pub params: CryptoParams,
    pub a_d: GswMatrix,
    pub b_d: GswMatrix,
    pub l_d: GswMatrix,
    pub c: GswMatrix,
    pub k: GswMatrix,
}

fn combine(
    a: Vec<LweCiphertext>,
    b: Vec<LweCiphertext>,
    c: Vec<LweCiphertext>,
    d: Vec<LweCiphertext>,
    params: &CryptoParams,
) -> Result<Vec<LweCiphertext>, ControllerError> {
    a.iter()
        .zip(&b)
        .zip(&c)
        .zip(&d)
        .map(|(((a, b), c), d)| {
            let s = add(&add(a, b, params)?, c, params)?;
            Ok(sub(&s, d, params)?)
        })
        .collect()
}

impl EncryptedController {
    /// Evaluates 𝐮 = 𝐊 D(𝛘) and
    /// 𝛘′ = 𝐀_d D(𝛘) + 𝐁_d D(𝐮) + 𝐋_d D(𝐲) − 𝐋_d D(𝐂 D(𝛘)).
    pub fn step(
        &self,
        y: &[LweCiphertext],
        chi: &[LweCiphertext],
    ) -> Result<(Vec<LweCiphertext>, Vec<LweCiphertext>), ControllerError> {
        let p = &self.params;
        let u = gsw_matvec(&self.k, chi, p)?;
        let c_chi = gsw_matvec(&self.c, chi, p)?;
        let next = combine(
            gsw_matvec(&self.a_d, chi, p)?,
            gsw_matvec(&self.b_d, &u, p)?,
            gsw_matvec(&self.l_d, y, p)?,
            gsw_matvec(&self.l_d, &c_chi, p)?,
            p,
        )?;
        Ok((u, next))
    }

    pub fn n(&self) -> usize {
        self.a_d.rows
    }

    pub fn r(&self) -> usize {
        self.c.rows
    }
}

/// Plant-side encoder/decoder. Owns the secret key and the single seeded
/// stream that supplies all encryption randomness.
pub struct PlantCodec {
    params: CryptoParams,
    key: SecretKey,
    rng: ChaCha20Rng,
    schedule: GainSchedule,
    noise_gain: u128,
}

impl PlantCodec {
    pub fn new(params: CryptoParams, schedule: GainSchedule, noise_gain: u128) -> Result<Self, ControllerError> {
        schedule.validate()?;
        if noise_gain < 2 || noise_gain >= params.half_q() {
            return Err(ControllerError::Config(format!("noise gain {noise_gain} outside [2, q/2)")));
        }
        Ok(Self { key: keygen(&params), rng: encryption_rng(&params), params, schedule, noise_gain })
    }

    pub fn params(&self) -> &CryptoParams {
        &self.params
    }

    pub fn noise_gain(&self) -> u128 {
        self.noise_gain
    }

    pub fn schedule(&self) -> &GainSchedule {
        &self.schedule
    }

    pub fn key(&self) -> &SecretKey {
        &self.key
    }

    /// Largest scaled integer whose G-multiple still fits below q/2.
    pub fn plaintext_limit(&self) -> u128 {
        (self.params.half_q() - self.params.e_max() as u128 - 1) / self.noise_gain
    }

    pub fn encrypt_matrices(&mut self, mats: &QuantizedMatrices) -> Result<EncryptedController, ControllerError> {
        let p = &self.params;
        let rng = &mut self.rng;
        let key = &self.key;
        let mut enc = |m: &super::IntMatrix| encrypt_gsw_matrix(&m.data, m.rows, m.cols, key, p, rng);
        Ok(EncryptedController {
            a_d: enc(&mats.a_d)?,
            b_d: enc(&mats.b_d)?,
            l_d: enc(&mats.l_d)?,
            c: enc(&mats.c)?,
            k: enc(&mats.k)?,
            params: p.clone(),
        })
    }

    fn encrypt_ints(&mut self, ints: &[i128]) -> Result<Vec<LweCiphertext>, ControllerError> {
        ints.iter()
            .map(|&v| Ok(encrypt(v, self.noise_gain, &self.key, &self.params, &mut self.rng)?))
            .collect()
    }

    /// 𝐲 = Enc(G ⌊ΛΛ_k y⌉).
    pub fn encode_output(&mut self, y: &DVector<f64>, k: usize) -> Result<(Vec<LweCiphertext>, Vec<i128>), ControllerError> {
        let ints = encode_vector(y, self.schedule.output_gain(k)?, self.plaintext_limit())?;
        Ok((self.encrypt_ints(&ints)?, ints))
    }

    /// 𝛘 = Enc(G ⌊Λ_k χ⌉).
    pub fn encode_state(&mut self, chi: &DVector<f64>, k: usize) -> Result<(Vec<LweCiphertext>, Vec<i128>), ControllerError> {
        let ints = encode_vector(chi, self.schedule.dynamic_gain(k)?, self.plaintext_limit())?;
        Ok((self.encrypt_ints(&ints)?, ints))
    }

    /// Scaled integers behind a vector of ciphertexts.
    pub fn decode(&self, c: &[LweCiphertext]) -> Result<Vec<i128>, ControllerError> {
        c.iter().map(|ci| Ok(decrypt_scaled(ci, self.noise_gain, &self.key, &self.params)?)).collect()
    }
}

/// Plant-side codec, cloud-side controller and the current encrypted state.
pub struct EncryptedSession {
    pub codec: PlantCodec,
    pub controller: EncryptedController,
    mats: QuantizedMatrices,
    chi_ct: Vec<LweCiphertext>,
    chi_scaled: Vec<i128>,
    chi: DVector<f64>,
    k: usize,
    transcript: Option<Transcript>,
}

impl EncryptedSession {
    /// Encrypts the controller matrices and χ(0). With `record`, every
    /// exchanged ciphertext is kept in a transcript tagged with `config`.
    pub fn new(
        mats: &QuantizedMatrices,
        schedule: GainSchedule,
        params: CryptoParams,
        noise_gain: u128,
        chi0: DVector<f64>,
        record: Option<String>,
    ) -> Result<Self, ControllerError> {
        if (schedule.static_gain - mats.lambda).abs() > 0.0 {
            return Err(ControllerError::Config("schedule and matrices use different static gains".into()));
        }
        if chi0.len() != mats.n() {
            return Err(ControllerError::Dimension { expected: mats.n(), found: chi0.len() });
        }
        let mut codec = PlantCodec::new(params, schedule, noise_gain)?;
        let controller = codec.encrypt_matrices(mats)?;
        let (chi_ct, chi_scaled) = codec.encode_state(&chi0, 0)?;
        let transcript = record.map(|config| Transcript {
            params: codec.params().clone(),
            noise_gain,
            config,
            controller: controller.clone(),
            chi0: chi_ct.clone(),
            records: Vec::new(),
        });
        Ok(Self { codec, controller, mats: mats.clone(), chi_ct, chi_scaled, chi: chi0, k: 0, transcript })
    }

    /// Worst-case magnitude of u and χ′ given the plaintexts about to be
    /// sent. Arithmetic mod q silently wraps, so a step whose outputs might
    /// leave the plaintext range is refused instead of decrypting garbage.
    fn output_bound(&self, y_scaled: &[i128]) -> u128 {
        let m = &self.mats;
        let abs = |v: &[i128]| v.iter().map(|x| x.unsigned_abs()).collect::<Vec<_>>();
        let (chi, y) = (abs(&self.chi_scaled), abs(y_scaled));
        let u = m.k.abs_bound(&chi);
        let terms = [m.a_d.abs_bound(&chi), m.b_d.abs_bound(&u), m.l_d.abs_bound(&y), m.l_d.abs_bound(&m.c.abs_bound(&chi))];
        let next = (0..m.n()).map(|i| terms.iter().fold(0u128, |acc, t| acc.saturating_add(t[i])));
        u.iter().copied().chain(next).max().unwrap_or(0)
    }

    pub fn step(&mut self, y: &DVector<f64>) -> Result<StepRecord, ControllerError> {
        let k = self.k;
        let (y_ct, y_scaled) = self.codec.encode_output(y, k)?;
        let (bound, limit) = (self.output_bound(&y_scaled), self.codec.plaintext_limit());
        if bound > limit {
            return Err(ControllerError::PlaintextRange { bound, limit });
        }
        let (u_ct, chi_prime_ct) = self.controller.step(&y_ct, &self.chi_ct)?;
        let u_scaled = self.codec.decode(&u_ct)?;
        let chi_next_scaled = self.codec.decode(&chi_prime_ct)?;
        let schedule = self.codec.schedule();
        let lam_k = schedule.dynamic_gain(k)?;
        let out_gain = schedule.output_gain(k)?;
        let chi_next = to_vector(&chi_next_scaled, schedule.state_update_gain(k)?);
        let (next_ct, next_scaled) = self.codec.encode_state(&chi_next, k + 1)?;
        if let Some(t) = &mut self.transcript {
            t.records.push(TranscriptRecord {
                k: k as u64,
                y: y_ct,
                u: u_ct,
                chi_prime: chi_prime_ct,
                chi_next: next_ct.clone(),
            });
        }
        let chi_scaled = std::mem::replace(&mut self.chi_scaled, next_scaled);
        let rec = StepRecord {
            k,
            chi_bar: to_vector(&chi_scaled, lam_k),
            y_bar: to_vector(&y_scaled, out_gain),
            u: to_vector(&u_scaled, out_gain),
            chi_next: chi_next.clone(),
            chi_scaled,
            y_scaled,
            u_scaled,
            chi_next_scaled,
        };
        self.chi_ct = next_ct;
        self.chi = chi_next;
        self.k += 1;
        Ok(rec)
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.chi
    }

    /// Current encrypted controller state.
    pub fn encrypted_state(&self) -> &[LweCiphertext] {
        &self.chi_ct
    }

    pub fn take_transcript(&mut self) -> Option<Transcript> {
        self.transcript.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::QuantizedController;
    use crate::matrix_time::DiscreteRealization;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn setup() -> (QuantizedMatrices, GainSchedule) {
        let disc = DiscreteRealization {
            a_d: dmatrix![0.95, 0.1; -0.05, 0.9],
            b_d: dmatrix![0.01; 0.1],
            l_d: dmatrix![0.3; 0.1],
            gramian: DMatrix::identity(2, 2),
            h: 0.1,
        };
        let mats = QuantizedMatrices::new(&disc, &dmatrix![1.0, 0.0], &dmatrix![-0.4, -0.7], 1e3).unwrap();
        (mats, GainSchedule::power(1e3, 1.0).unwrap())
    }

    #[test]
    fn matches_quantized_reference_bit_for_bit() {
        let (mats, sched) = setup();
        let params = CryptoParams::new(100, 4, 1, 1, 42).unwrap();
        let chi0 = dvector![0.2, -0.1];
        let mut enc = EncryptedSession::new(&mats, sched.clone(), params, 1 << 24, chi0.clone(), None).unwrap();
        let mut reference = QuantizedController::new(mats, sched, chi0).unwrap();
        let mut y = 0.7;
        for _ in 0..20 {
            let a = enc.step(&dvector![y]).unwrap();
            let b = reference.step(&dvector![y]).unwrap();
            assert_eq!(a, b);
            y = 0.8 * y - 0.05;
        }
    }

    #[test]
    fn noise_budget_grows_within_a_step_and_resets() {
        let (mats, sched) = setup();
        let params = CryptoParams::new(100, 4, 1, 1, 1).unwrap();
        let mut s = EncryptedSession::new(&mats, sched, params.clone(), 1 << 24, dvector![0.0, 0.0], None).unwrap();
        let fresh = params.e_max() as u128;
        assert!(s.encrypted_state().iter().all(|c| c.budget.error_bound == fresh));
        let (y_ct, _) = s.codec.encode_output(&dvector![0.5], 0).unwrap();
        let (u, chi_p) = s.controller.step(&y_ct, s.encrypted_state()).unwrap();
        assert!(u.iter().all(|c| c.budget.error_bound > fresh));
        assert!(chi_p.iter().all(|c| c.budget.error_bound > u[0].budget.error_bound));
        s.step(&dvector![0.5]).unwrap();
        assert!(s.encrypted_state().iter().all(|c| c.budget.error_bound == fresh));
    }

    #[test]
    fn exhausted_budget_is_an_error() {
        let (mats, sched) = setup();
        let params = CryptoParams::new(100, 4, 1, 1, 1).unwrap();
        let mut s = EncryptedSession::new(&mats, sched, params, 64, dvector![0.0, 0.0], None).unwrap();
        assert!(matches!(
            s.step(&dvector![0.5]),
            Err(ControllerError::Crypto(crate::crypto::CryptoError::NoiseBudgetExceeded { .. }))
        ));
    }

    #[test]
    fn outputs_beyond_plaintext_range_are_refused() {
        let (mats, sched) = setup();
        let params = CryptoParams::new(126, 4, 1, 1, 1).unwrap();
        let mut s = EncryptedSession::new(&mats, sched, params, 1 << 44, dvector![0.0, 0.0], None).unwrap();
        // ⌊Λ y⌉ = 10²² fits below 2^81, but L̄_d ȳ = 3·10²⁴ would wrap mod q
        assert!(s.step(&dvector![1e15]).is_ok());
        assert!(matches!(s.step(&dvector![1e19]), Err(ControllerError::PlaintextRange { .. })));
    }
}
