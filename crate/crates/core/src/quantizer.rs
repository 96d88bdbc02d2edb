//! Uniform quantization Q_Θ(x) = round(Θ x) / Θ and gain schedules.

use nalgebra::{allocator::Allocator, DefaultAllocator, Dim, Matrix, OMatrix, RawStorage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizerError {
    #[error("quantization gain must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("value {value} scaled by {gain} is not representable below {limit}")]
    Overflow { value: f64, gain: f64, limit: u128 },
    #[error("explicit gain schedule has {len} entries, step {k} requested")]
    ScheduleExhausted { k: usize, len: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Round to nearest integer with ties away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformQuantizer {
    gain: f64,
}

impl UniformQuantizer {
    pub fn new(gain: f64) -> Result<Self, QuantizerError> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(QuantizerError::InvalidGain(gain));
        }
        Ok(Self { gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        round_half_away(self.gain * x) / self.gain
    }

    /// Element-wise quantization of a vector or matrix.
    pub fn quantize<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(&self, x: &Matrix<f64, R, C, S>) -> OMatrix<f64, R, C>
    where
        DefaultAllocator: Allocator<R, C>,
    {
        x.map(|v| self.apply(v))
    }

    /// Worst-case Frobenius error of quantizing a rows x cols array.
    pub fn error_bound(&self, rows: usize, cols: usize) -> f64 {
        error_bound(rows, cols, self.gain)
    }
}

/// sqrt(rows cols) / (2 Θ).
pub fn error_bound(rows: usize, cols: usize, gain: f64) -> f64 {
    ((rows * cols) as f64).sqrt() / (2.0 * gain)
}

/// Integer encoding round(Θ x) of every element; `limit` is an exclusive
/// bound on the magnitude of each integer.
pub fn encode_integer(x: &[f64], gain: f64, limit: u128) -> Result<Vec<i128>, QuantizerError> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(QuantizerError::InvalidGain(gain));
    }
    x.iter().map(|&v| encode_one(v, gain, limit)).collect()
}

pub(crate) fn encode_one(v: f64, gain: f64, limit: u128) -> Result<i128, QuantizerError> {
    let s = round_half_away(gain * v);
    // f64 values below 2^126 convert exactly to i128
    if !s.is_finite() || s.abs() >= 2f64.powi(126) || (s.abs() as u128) >= limit {
        return Err(QuantizerError::Overflow { value: v, gain, limit });
    }
    Ok(s as i128)
}

/// Dynamic gain rule Λ_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Λ_k = value for every k.
    Fixed { value: f64 },
    /// Λ_k = k^p for k >= 1, Λ_0 = 1.
    Power { exponent: f64 },
    /// Λ_k = values[k].
    Explicit { values: Vec<f64> },
}

/// Static gain Λ together with the dynamic gain rule Λ_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub static_gain: f64,
    #[serde(flatten)]
    pub kind: ScheduleKind,
    #[serde(default)]
    pub cap: Option<f64>,
}

impl GainSchedule {
    pub fn new(static_gain: f64, kind: ScheduleKind, cap: Option<f64>) -> Result<Self, QuantizerError> {
        let s = Self { static_gain, kind, cap };
        s.validate()?;
        Ok(s)
    }

    pub fn power(static_gain: f64, exponent: f64) -> Result<Self, QuantizerError> {
        Self::new(static_gain, ScheduleKind::Power { exponent }, None)
    }

    pub fn fixed(static_gain: f64, value: f64) -> Result<Self, QuantizerError> {
        Self::new(static_gain, ScheduleKind::Fixed { value }, None)
    }

    pub fn validate(&self) -> Result<(), QuantizerError> {
        UniformQuantizer::new(self.static_gain)?;
        match &self.kind {
            ScheduleKind::Fixed { value } => {
                UniformQuantizer::new(*value)?;
            }
            ScheduleKind::Power { exponent } => {
                if !exponent.is_finite() || *exponent < 0.0 {
                    return Err(QuantizerError::InvalidSchedule(format!("exponent {exponent}")));
                }
            }
            ScheduleKind::Explicit { values } => {
                if values.is_empty() {
                    return Err(QuantizerError::InvalidSchedule("empty explicit schedule".into()));
                }
                for v in values {
                    UniformQuantizer::new(*v)?;
                }
            }
        }
        if let Some(c) = self.cap {
            UniformQuantizer::new(c)?;
        }
        Ok(())
    }

    /// Λ_k, clamped at the cap when one is set.
    pub fn dynamic_gain(&self, k: usize) -> Result<f64, QuantizerError> {
        let raw = match &self.kind {
            ScheduleKind::Fixed { value } => *value,
            ScheduleKind::Power { exponent } => {
                if k == 0 {
                    1.0
                } else {
                    (k as f64).powf(*exponent)
                }
            }
            ScheduleKind::Explicit { values } => *values
                .get(k)
                .ok_or(QuantizerError::ScheduleExhausted { k, len: values.len() })?,
        };
        Ok(match self.cap {
            Some(c) => raw.min(c),
            None => raw,
        })
    }

    /// Λ Λ_k, the gain of outputs and inputs at step k.
    pub fn output_gain(&self, k: usize) -> Result<f64, QuantizerError> {
        Ok(self.static_gain * self.dynamic_gain(k)?)
    }

    /// Λ^2 Λ_k, the gain of the updated controller state at step k.
    pub fn state_update_gain(&self, k: usize) -> Result<f64, QuantizerError> {
        Ok(self.static_gain * self.static_gain * self.dynamic_gain(k)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn ties_round_away_from_zero() {
        let q = UniformQuantizer::new(2.0).unwrap();
        assert_eq!(q.apply(0.25), 0.5);
        assert_eq!(q.apply(-0.25), -0.5);
        assert_eq!(q.apply(0.74), 0.5);
        assert_eq!(q.apply(0.76), 1.0);
    }

    #[test]
    fn quantizes_vectors_and_matrices() {
        let q = UniformQuantizer::new(10.0).unwrap();
        assert_eq!(q.quantize(&dvector![0.123, -0.456]), dvector![0.1, -0.5]);
        let m = q.quantize(&dmatrix![1.04, 2.06; -3.01, 0.0]);
        assert_eq!(m, dmatrix![1.0, 2.1; -3.0, 0.0]);
        assert!((q.error_bound(2, 2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn integer_encoding_and_overflow() {
        assert_eq!(encode_integer(&[1.26, -0.5], 10.0, 100).unwrap(), vec![13, -5]);
        assert!(encode_integer(&[10.0], 10.0, 100).is_err());
        assert!(encode_integer(&[f64::NAN], 10.0, 100).is_err());
        assert!(UniformQuantizer::new(0.0).is_err());
        assert!(UniformQuantizer::new(f64::INFINITY).is_err());
    }

    #[test]
    fn schedules() {
        let s = GainSchedule::power(100.0, 2.0).unwrap();
        assert_eq!(s.dynamic_gain(0).unwrap(), 1.0);
        assert_eq!(s.dynamic_gain(3).unwrap(), 9.0);
        assert_eq!(s.state_update_gain(2).unwrap(), 40000.0);
        let capped = GainSchedule::new(1.0, ScheduleKind::Power { exponent: 2.0 }, Some(50.0)).unwrap();
        assert_eq!(capped.dynamic_gain(10).unwrap(), 50.0);
        let e = GainSchedule::new(1.0, ScheduleKind::Explicit { values: vec![1.0, 2.0] }, None).unwrap();
        assert_eq!(e.dynamic_gain(1).unwrap(), 2.0);
        assert!(matches!(e.dynamic_gain(2), Err(QuantizerError::ScheduleExhausted { .. })));
        assert!(GainSchedule::fixed(1.0, -1.0).is_err());
    }

    #[test]
    fn schedule_toml_shape() {
        let s: GainSchedule = toml::from_str("static_gain = 1e4\nkind = \"power\"\nexponent = 2.0\n").unwrap();
        assert_eq!(s, GainSchedule::power(1e4, 2.0).unwrap());
    }
}
