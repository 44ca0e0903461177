//! Provenance tags carried by every constant that ends up in a report.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Supplied by the user.
    Declared,
    /// Sampled estimate; a lower bound of a supremum (or an upper bound of an infimum).
    Estimated,
    /// Fitted against Monte-Carlo data.
    Calibrated,
    /// Computed in closed form from other quantities.
    Derived,
    /// Derived from an estimate whose direction makes the result optimistic.
    Optimistic,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Declared => "declared",
            Provenance::Estimated => "estimated",
            Provenance::Calibrated => "calibrated",
            Provenance::Derived => "derived",
            Provenance::Optimistic => "optimistic",
        })
    }
}

/// A scalar with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tagged {
    #[serde(with = "finite_or_string")]
    pub value: f64,
    pub provenance: Provenance,
}

impl Tagged {
    pub fn new(value: f64, provenance: Provenance) -> Self {
        Tagged { value, provenance }
    }

    pub fn declared(value: f64) -> Self {
        Self::new(value, Provenance::Declared)
    }

    pub fn estimated(value: f64) -> Self {
        Self::new(value, Provenance::Estimated)
    }

    pub fn derived(value: f64) -> Self {
        Self::new(value, Provenance::Derived)
    }

    /// Derived value that inherits any estimate-based tag from its inputs.
    pub fn derived_from(value: f64, inputs: &[Tagged]) -> Self {
        let tainted = inputs.iter().any(|t| {
            matches!(
                t.provenance,
                Provenance::Estimated | Provenance::Optimistic | Provenance::Calibrated
            )
        });
        Self::new(
            value,
            if tainted {
                Provenance::Estimated
            } else {
                Provenance::Derived
            },
        )
    }
}

/// JSON has no representation for infinities; they are written as strings.
pub(crate) mod finite_or_string {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(de::Error::custom),
        }
    }
}
