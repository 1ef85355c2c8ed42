use serde::{Deserialize, Serialize};

/// One option price split into the leading-order term and its first correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceDecomposition {
    pub leading: f64,
    pub correction: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<PricingWarning>,
}

impl PriceDecomposition {
    pub fn new(leading: f64, correction: f64) -> Self {
        PriceDecomposition {
            leading,
            correction,
            total: leading + correction,
            warnings: Vec::new(),
        }
    }
}

/// Conditions under which a price is returned but should not be trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PricingWarning {
    /// Maturity shorter than one day; the expansion in `epsilon` is not valid there.
    AsymptoticsInvalid { tau: f64 },
}

/// Shortest maturity for which the asymptotic formulas are trusted.
pub const MIN_ASYMPTOTIC_TAU: f64 = 1.0 / 365.0;

pub(crate) fn maturity_warnings(tau: f64) -> Vec<PricingWarning> {
    if tau < MIN_ASYMPTOTIC_TAU {
        vec![PricingWarning::AsymptoticsInvalid { tau }]
    } else {
        Vec::new()
    }
}
