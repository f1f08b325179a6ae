use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, WntkError};

/// A user supplied pointwise nonlinearity and its derivative.
///
/// Custom activations are expected to have bounded `|σ(0)|`, bounded `σ̇`
/// and Lipschitz `σ̇`; nothing checks this at runtime.
#[derive(Clone, Copy)]
pub struct SmoothActivation {
    pub name: &'static str,
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
}

impl fmt::Debug for SmoothActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothActivation").field("name", &self.name).finish()
    }
}

/// Coordinate-wise nonlinearity shared by every layer.
///
/// ReLU gets closed-form Gaussian moments; everything else is integrated
/// numerically.
#[derive(Clone, Copy, Debug)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Identity,
    Smooth(SmoothActivation),
}

impl PartialEq for ActivationKind {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl ActivationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Identity => "identity",
            ActivationKind::Smooth(s) => s.name,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "tanh" => Ok(ActivationKind::Tanh),
            "identity" | "linear" => Ok(ActivationKind::Identity),
            other => Err(WntkError::InvalidArgument(format!(
                "unknown activation '{other}' (expected relu, tanh or identity)"
            ))),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Identity => x,
            ActivationKind::Smooth(s) => (s.value)(x),
        }
    }

    /// Derivative; the ReLU subgradient at exactly 0 is 0.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::Smooth(s) => (s.derivative)(x),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Serialized by name; only the built-in activations can be read back.
impl Serialize for ActivationKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ActivationKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        ActivationKind::parse(&name).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_subgradient_at_zero() {
        assert_eq!(ActivationKind::Relu.derivative(0.0), 0.0);
        assert_eq!(ActivationKind::Relu.derivative(1e-300), 1.0);
    }

    #[test]
    fn parse_round_trip() {
        for a in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Identity] {
            assert_eq!(ActivationKind::parse(a.name()).unwrap(), a);
        }
        assert!(ActivationKind::parse("gelu").is_err());
    }
}
