//! Register-level conversions between 16-bit raw words and engineering units.

use serde::{Deserialize, Serialize};

use super::ModbusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterKind {
    U16,
    I16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Read,
    ReadWrite,
}

/// One holding register: engineering value = raw * scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSpec {
    pub address: u16,
    pub name: String,
    pub kind: RegisterKind,
    pub scale: f64,
    pub unit: String,
    pub access: Access,
}

impl RegisterSpec {
    pub fn new(
        address: u16,
        name: &str,
        kind: RegisterKind,
        scale: f64,
        unit: &str,
        access: Access,
    ) -> Self {
        Self {
            address,
            name: name.to_string(),
            kind,
            scale,
            unit: unit.to_string(),
            access,
        }
    }

    pub fn writable(&self) -> bool {
        self.access == Access::ReadWrite
    }

    /// Decimal scales 10^k; returns the integer divisor for k < 0.
    fn divisor(&self) -> Option<f64> {
        (self.scale < 1.0).then(|| (1.0 / self.scale).round())
    }

    fn range(&self) -> (f64, f64) {
        match self.kind {
            RegisterKind::U16 => (0.0, f64::from(u16::MAX)),
            RegisterKind::I16 => (f64::from(i16::MIN), f64::from(i16::MAX)),
        }
    }
}

/// Scales are decimal powers so that fixed-point values are exact.
pub(crate) fn is_decimal_scale(scale: f64) -> bool {
    (-4..=3).any(|k| scale == 10f64.powi(k) || (k < 0 && scale == 1.0 / 10f64.powi(-k)))
}

fn scaled(spec: &RegisterSpec, engineering: f64) -> f64 {
    match spec.divisor() {
        Some(div) => engineering * div,
        None => engineering / spec.scale,
    }
}

/// Encodes an engineering value, rounding half away from zero.
pub fn encode_value(spec: &RegisterSpec, engineering: f64) -> Result<u16, ModbusError> {
    let raw = scaled(spec, engineering).round();
    let (lo, hi) = spec.range();
    if !raw.is_finite() || raw < lo || raw > hi {
        return Err(ModbusError::Encode {
            register: spec.name.clone(),
            value: engineering,
        });
    }
    Ok(match spec.kind {
        RegisterKind::U16 => raw as u16,
        RegisterKind::I16 => (raw as i16) as u16,
    })
}

/// Like [`encode_value`] but clamps to the register range instead of failing.
pub fn encode_saturating(spec: &RegisterSpec, engineering: f64) -> u16 {
    let (lo, hi) = spec.range();
    let raw = if engineering.is_nan() {
        0.0
    } else {
        scaled(spec, engineering).round().clamp(lo, hi)
    };
    match spec.kind {
        RegisterKind::U16 => raw as u16,
        RegisterKind::I16 => (raw as i16) as u16,
    }
}

pub fn decode_value(spec: &RegisterSpec, raw: u16) -> f64 {
    let n = match spec.kind {
        RegisterKind::U16 => f64::from(raw),
        RegisterKind::I16 => f64::from(raw as i16),
    };
    match spec.divisor() {
        Some(div) => n / div,
        None => n * spec.scale,
    }
}
