//! First-stage nuisance architectures: TNet and the SNet family.
//!
//! | kind      | representations                 | mu_w heads see      | pi head sees |
//! |-----------|---------------------------------|---------------------|--------------|
//! | TNet      | none (one solo net per function) | own solo net       | own solo net |
//! | SNet1     | Phi                             | Phi                 | own solo net |
//! | SNet2     | Phi                             | Phi                 | Phi          |
//! | SNet3     | Phi_O, Phi_C, Phi_W             | (Phi_O, Phi_C)      | (Phi_C, Phi_W) |
//! | SNetFull  | Phi_O, Phi_C, Phi_W, Phi_mu0, Phi_mu1 | (Phi_O, Phi_C, Phi_mu_w) | (Phi_C, Phi_W) |
//!
//! The L2 penalty covers head (hypothesis) weights only; solo networks count
//! as heads in full. The orthogonalization penalty acts on the first weight
//! matrix of each representation of SNet3 and SNetFull.

mod fit;
mod network;
mod ortho;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainConfig;

pub use fit::{
    build, fit, fit_snet1, fit_snet2, fit_snet3, fit_snet_full, fit_tnet, FittedNet, NuisanceModel,
    NuisancePredictions, Plan,
};
pub use network::{
    head_net, representation, Head, HeadInput, HeadTarget, LossTerms, MultiHeadNet, NuisanceTask,
    Representation,
};
pub use ortho::{ortho_gradient, ortho_penalty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ArchitectureKind {
    TNet,
    SNet1,
    SNet2,
    SNet3,
    SNetFull,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 5] = [
        ArchitectureKind::TNet,
        ArchitectureKind::SNet1,
        ArchitectureKind::SNet2,
        ArchitectureKind::SNet3,
        ArchitectureKind::SNetFull,
    ];

    /// Whether the propensity head is part of the jointly trained network.
    pub fn has_builtin_propensity(self) -> bool {
        matches!(
            self,
            ArchitectureKind::SNet2 | ArchitectureKind::SNet3 | ArchitectureKind::SNetFull
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            ArchitectureKind::TNet => "TNet",
            ArchitectureKind::SNet1 => "SNet-1",
            ArchitectureKind::SNet2 => "SNet-2",
            ArchitectureKind::SNet3 => "SNet-3",
            ArchitectureKind::SNetFull => "SNet",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchitectureKind::TNet => "tnet",
            ArchitectureKind::SNet1 => "snet1",
            ArchitectureKind::SNet2 => "snet2",
            ArchitectureKind::SNet3 => "snet3",
            ArchitectureKind::SNetFull => "snet",
        };
        f.write_str(s)
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "tnet" => Ok(ArchitectureKind::TNet),
            "snet1" | "tarnet" => Ok(ArchitectureKind::SNet1),
            "snet2" | "dragonnet" => Ok(ArchitectureKind::SNet2),
            "snet3" | "drcfr" => Ok(ArchitectureKind::SNet3),
            "snet" | "snetfull" => Ok(ArchitectureKind::SNetFull),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

crate::string_serde!(ArchitectureKind);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snet3Widths {
    pub outcome: usize,
    pub confounder: usize,
    pub treatment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnetWidths {
    pub outcome: usize,
    pub confounder: usize,
    pub treatment: usize,
    pub mu0: usize,
    pub mu1: usize,
}

/// Sizes and penalties shared by all architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub rep_layers: usize,
    pub head_layers: usize,
    pub head_units: usize,
    /// Width of every hidden layer of an unshared function's own trunk.
    pub solo_units: usize,
    /// Width of the single shared representation of SNet1 and SNet2.
    pub snet_units: usize,
    pub snet3: Snet3Widths,
    pub snet: SnetWidths,
    pub ortho_gamma: f64,
    pub binary_outcome: bool,
    pub train: TrainConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::full()
    }
}

impl ArchConfig {
    /// Published sizes: 3x200 trunks, 2x100 heads.
    pub fn full() -> Self {
        ArchConfig {
            rep_layers: 3,
            head_layers: 2,
            head_units: 100,
            solo_units: 200,
            snet_units: 200,
            snet3: Snet3Widths {
                outcome: 50,
                confounder: 150,
                treatment: 50,
            },
            snet: SnetWidths {
                outcome: 50,
                confounder: 100,
                treatment: 100,
                mu0: 50,
                mu1: 50,
            },
            ortho_gamma: 0.01,
            binary_outcome: false,
            train: TrainConfig::default(),
        }
    }

    /// Desk-scale sizes with the same proportions: trunks of 48 units split
    /// 3:1:1 (SNet3) and 2:2:1:1:1 (SNetFull), heads of 50, 300 epochs.
    pub fn reduced() -> Self {
        ArchConfig {
            rep_layers: 3,
            head_layers: 2,
            head_units: 50,
            solo_units: 48,
            snet_units: 48,
            snet3: Snet3Widths {
                outcome: 12,
                confounder: 36,
                treatment: 12,
            },
            snet: SnetWidths {
                outcome: 12,
                confounder: 24,
                treatment: 24,
                mu0: 12,
                mu1: 12,
            },
            ortho_gamma: 0.01,
            binary_outcome: false,
            train: TrainConfig {
                max_epochs: 300,
                ..TrainConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.rep_layers == 0 || self.head_units == 0 || self.solo_units == 0 {
            return Err(Error::Config("layer counts and widths must be positive".into()));
        }
        if !(self.ortho_gamma >= 0.0 && self.ortho_gamma.is_finite()) {
            return Err(Error::Config("ortho_gamma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// An estimated nuisance function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    Mu0,
    Mu1,
    Pi,
}

/// Layers and per-layer units available to one estimated function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Budget {
    pub units: Vec<usize>,
}

impl Budget {
    pub fn layers(&self) -> usize {
        self.units.len()
    }

    pub fn total_units(&self) -> usize {
        self.units.iter().sum()
    }
}

/// Hidden layers and units feeding `estimand` under `kind`, from config arithmetic.
pub fn budget(kind: ArchitectureKind, config: &ArchConfig, estimand: Estimand) -> Budget {
    let trunk = match (kind, estimand) {
        (ArchitectureKind::TNet, _) | (ArchitectureKind::SNet1, Estimand::Pi) => config.solo_units,
        (ArchitectureKind::SNet1 | ArchitectureKind::SNet2, _) => config.snet_units,
        (ArchitectureKind::SNet3, Estimand::Pi) => config.snet3.confounder + config.snet3.treatment,
        (ArchitectureKind::SNet3, _) => config.snet3.outcome + config.snet3.confounder,
        (ArchitectureKind::SNetFull, Estimand::Pi) => config.snet.confounder + config.snet.treatment,
        (ArchitectureKind::SNetFull, Estimand::Mu0) => {
            config.snet.outcome + config.snet.confounder + config.snet.mu0
        }
        (ArchitectureKind::SNetFull, Estimand::Mu1) => {
            config.snet.outcome + config.snet.confounder + config.snet.mu1
        }
    };
    let mut units = vec![trunk; config.rep_layers];
    units.extend(std::iter::repeat_n(config.head_units, config.head_layers));
    Budget { units }
}
