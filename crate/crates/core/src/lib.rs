//! Option pricing and calibration for a multiscale stochastic volatility model.
//!
//! The variance is driven by a fast mean-reverting factor `Y` and a slow CIR
//! factor `Z`. SPX options are priced by a Fourier integral of an effective
//! Heston characteristic function plus a first-order correction; VIX options
//! by an expectation against the non-central chi-squared law of `Z`.
//!
//! ```
//! use msvol::{price_spx, HiddenState, ModelParams, QuadratureConfig, SpxOptionSpec};
//!
//! let p = ModelParams::REFERENCE;
//! let spec = SpxOptionSpec::call(2000.0, 2000.0, 30.0 / 365.0);
//! let price = price_spx(&spec, HiddenState::new(0.02, 0.02), &p, &QuadratureConfig::default()).unwrap();
//! assert!(price.total > 0.0 && price.total < 2000.0);
//! ```

pub mod calibrate;
pub mod data;
pub mod error;
pub mod heston;
pub mod implied;
pub mod mc;
pub mod model;
pub mod ncx2;
pub mod optim;
pub mod price;
pub mod quad;
pub mod spx;
pub mod vix;

pub use calibrate::{calibrate_heston, calibrate_msv, CalibrationConfig, CalibrationResult, Fitted};
pub use error::{Error, Result};
pub use heston::HestonParams;
pub use implied::{bs_implied_vol, vix_normal_implied_vol};
pub use model::{HiddenState, ModelParams, QuadratureConfig};
pub use price::{PriceDecomposition, PricingWarning};
pub use spx::{price_spx, SpxOptionSpec};
pub use vix::{price_vix, VixOptionSpec};

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book_chapters! {
    book_introduction => "introduction.md",
    book_model => "model.md",
    book_spx => "spx.md",
    book_vix => "vix.md",
    book_implied => "implied.md",
    book_monte_carlo => "monte-carlo.md",
    book_calibration => "calibration.md",
    book_data => "data.md",
    book_cli => "cli.md",
}
