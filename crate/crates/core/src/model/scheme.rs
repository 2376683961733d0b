use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which signals a model reads and predicts.
///
/// * `S2M`: slave state → next master state, teacher-forced.
/// * `SM2SM`: (slave, master) → next (slave, master), predictions fed back.
/// * `S2SM`: slave state → next (slave, master), predicted slave fed back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    S2M,
    SM2SM,
    S2SM,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::S2M, Scheme::SM2SM, Scheme::S2SM];

    /// Input width for per-robot state width `d`.
    pub fn input_dim(self, d: usize) -> usize {
        match self {
            Scheme::S2M | Scheme::S2SM => d,
            Scheme::SM2SM => 2 * d,
        }
    }

    /// Output width for per-robot state width `d`. Two-robot outputs are
    /// laid out slave first, then master.
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Scheme::S2M => d,
            Scheme::SM2SM | Scheme::S2SM => 2 * d,
        }
    }

    pub fn predicts_slave(self) -> bool {
        !matches!(self, Scheme::S2M)
    }

    pub fn validate_k(self, k: usize) -> Result<(), String> {
        match (self, k) {
            (_, 0) => Err("autoregression number must be >= 1".into()),
            (Scheme::S2M, k) if k != 1 => {
                Err(format!("S2M is not autoregressive; k must be 1, got {k}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::S2M => "S2M",
            Scheme::SM2SM => "SM2SM",
            Scheme::S2SM => "S2SM",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "S2M" => Ok(Scheme::S2M),
            "SM2SM" => Ok(Scheme::SM2SM),
            "S2SM" => Ok(Scheme::S2SM),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}
