//! Preset control problems and the assumption audit.

pub mod audit;
pub mod hyperbolic;
pub mod lq;
pub mod ou;
pub mod parabolic;
pub mod qwiener;
pub mod reaction;
pub mod sine;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::ControlProblem;

pub use audit::{audit_assumptions, audit_preset, AuditOptions, AuditReport};
pub use lq::{build_lq_benchmark, LqClosedForm, LqSpec, RiccatiFlow};
pub use ou::{flow_preset, ou_preset, ou_with_rate};
pub use parabolic::{build_parabolic, SpdeSetting};
pub use hyperbolic::build_hyperbolic;
pub use qwiener::QWienerSpec;
pub use reaction::{ReactionKind, ReactionSpec};

/// Galerkin truncation of an SPDE preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpdeSpec {
    /// State modes `N`; the noise uses the same number of modes.
    pub modes: usize,
    /// `q_i = i^{−q_exponent}`.
    pub q_exponent: f64,
    pub reaction: ReactionKind,
    pub controls: Vec<f64>,
    pub horizon: f64,
}

impl Default for SpdeSpec {
    fn default() -> Self {
        let s = SpdeSetting::default();
        Self {
            modes: 16,
            q_exponent: 3.0,
            reaction: ReactionKind::default(),
            controls: s.controls,
            horizon: s.horizon,
        }
    }
}

impl SpdeSpec {
    pub fn q(&self) -> Result<QWienerSpec> {
        QWienerSpec::power_law(self.modes, self.q_exponent)
    }

    fn setting(&self) -> SpdeSetting {
        SpdeSetting {
            controls: self.controls.clone(),
            horizon: self.horizon,
        }
    }
}

fn default_ou_rate() -> f64 {
    -1.0
}

fn default_horizon() -> f64 {
    1.0
}

/// A problem as named in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ProblemSpec {
    Ou {
        #[serde(default = "default_ou_rate")]
        rate: f64,
    },
    Parabolic(SpdeSpec),
    Hyperbolic(SpdeSpec),
    Lq(LqSpec),
    /// Zero coefficients on a diagonal generator.
    Flow {
        rates: Vec<f64>,
        #[serde(default = "default_horizon")]
        horizon: f64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ControlProblem> {
        match self {
            ProblemSpec::Ou { rate } => ou_with_rate(*rate),
            ProblemSpec::Parabolic(s) => build_parabolic(&s.reaction.build()?, &s.q()?, s.modes, &s.setting()),
            ProblemSpec::Hyperbolic(s) => build_hyperbolic(&s.reaction.build()?, &s.q()?, s.modes, &s.setting()),
            ProblemSpec::Lq(s) => lq::build_lq_problem(s),
            ProblemSpec::Flow { rates, horizon } => flow_preset(rates.clone(), *horizon),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_build() {
        let cases = [
            (r#"{"preset":"ou"}"#, 1),
            (r#"{"preset":"parabolic","modes":8}"#, 8),
            (r#"{"preset":"hyperbolic","modes":4,"reaction":{"name":"zero"}}"#, 8),
            (r#"{"preset":"lq","rates":[-1,-1],"drift_gain":[0,0],"drift_shift":[0,0],"state_weight":[2,2],"terminal_weight":[1,1]}"#, 2),
            (r#"{"preset":"flow","rates":[0,-1,-4]}"#, 3),
        ];
        for (json, dim) in cases {
            let spec: ProblemSpec = serde_json::from_str(json).unwrap();
            assert_eq!(spec.build().unwrap().dim(), dim, "{json}");
        }
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"preset":"nope"}"#).is_err());
    }
}
