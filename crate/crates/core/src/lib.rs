//! Meta-learners for conditional average treatment effect (CATE) estimation.
//!
//! * [`nn`]: dense networks, Adam and early-stopped training.
//! * [`arch`]: TNet and the SNet family of nuisance architectures.
//! * [`learners`]: plug-in, RA, PW and DR learners with cross-fitting.
//! * [`dgp`]: the simulation settings and sweeps.
//! * [`theory`]: closed-form conditional means and remainders of pseudo-outcomes.
//! * [`data`]: datasets, CSV exchange, IHDP rescaling, result files.
//! * [`experiment`]: declarative, seeded benchmark runs.

/// Serializes a `Display + FromStr` enum as its string form.
macro_rules! string_serde {
    ($t:ty) => {
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }

        impl TryFrom<String> for $t {
            type Error = $crate::Error;

            fn try_from(s: String) -> $crate::Result<Self> {
                s.parse()
            }
        }
    };
}
pub(crate) use string_serde;

pub mod arch;
pub mod data;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod nn;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
