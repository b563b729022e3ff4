//! Adversarial patrolling simulator.
//!
//! A patroller moves over a weighted graph of sites; an attacker picks a
//! site, a start time, and a duration, accruing the site's utility per slot
//! until either the duration elapses or the patroller arrives and a penalty
//! is charged. The crate provides closed-form analysis of Markov-chain
//! patrol strategies, several randomized schedule generators, and an
//! empirical attacker best-response oracle over sampled schedules.

pub mod error;
pub mod harness;
pub mod instance;
pub mod markov;
pub mod oracle;
pub mod schedule;
pub mod schedulers;
pub mod tours;

use serde::{Deserialize, Serialize};

/// What the attacker observes before committing to an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Sees the patroller's position at every slot and can condition on it.
    Full,
    /// Only notices the patroller leaving the attacked site.
    Local,
    /// Sees nothing; attacks at a stationary random moment.
    None,
}

impl Visibility {
    pub const ALL: [Visibility; 3] = [Visibility::Full, Visibility::Local, Visibility::None];

    pub fn label(self) -> &'static str {
        match self {
            Visibility::Full => "full",
            Visibility::Local => "local",
            Visibility::None => "none",
        }
    }
}

impl std::str::FromStr for Visibility {
    type Err = error::Error;

    fn from_str(s: &str) -> error::Result<Self> {
        match s {
            "full" => Ok(Visibility::Full),
            "local" => Ok(Visibility::Local),
            "none" => Ok(Visibility::None),
            other => Err(error::Error::Config(format!(
                "unknown visibility model {other:?}; expected full, local, or none"
            ))),
        }
    }
}

impl std::fmt::Display for Visibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

pub use error::{Error, Result};
pub use instance::{GraphInstance, PolyUtility, Site, UtilitySpec};
