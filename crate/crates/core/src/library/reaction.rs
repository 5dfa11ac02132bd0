//! Pointwise reaction, noise and reward terms of the SPDE examples.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(t, ξ, y, u) ↦ value`
pub type FieldFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `α(t, y, u)`
pub type RewardFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `β(y)`
pub type TerminalRewardFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reaction `f`, noise amplitude `h`, running reward `α` and terminal reward `β`.
#[derive(Clone)]
pub struct ReactionSpec {
    pub f: FieldFn,
    pub h: FieldFn,
    pub alpha: RewardFn,
    pub beta: TerminalRewardFn,
    /// The running cost becomes `∫α − discount·y`.
    pub discount: f64,
    /// Lipschitz/growth constant of `f, h, α, β`.
    pub lip_const: f64,
    /// `sup |h|`, used by tail remainders.
    pub h_sup: f64,
}

impl std::fmt::Debug for ReactionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReactionSpec")
            .field("discount", &self.discount)
            .field("lip_const", &self.lip_const)
            .field("h_sup", &self.h_sup)
            .finish_non_exhaustive()
    }
}

/// Named reaction terms with parameters, as they appear in problem files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ReactionKind {
    /// `f = u − g sin y`, `h = c(½ + ¼ sin y + ¼ u)`,
    /// `α = 0.2 cos y − ½u²`, `β = 1 − √(1+y²)`; controls in `[−1, 1]`.
    Sine {
        #[serde(default = "default_gain")]
        drift_gain: f64,
        #[serde(default = "default_noise")]
        noise_level: f64,
        #[serde(default)]
        discount: f64,
    },
    /// Every term vanishes.
    Zero,
    /// `f = h = α = 0`, `β(y) = y`.
    LinearTerminal,
    /// `h ≡ level`, everything else zero.
    ConstantNoise { level: f64 },
}

fn default_gain() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    0.02
}

impl Default for ReactionKind {
    fn default() -> Self {
        ReactionKind::Sine {
            drift_gain: default_gain(),
            noise_level: default_noise(),
            discount: 0.0,
        }
    }
}

impl ReactionKind {
    pub fn build(&self) -> Result<ReactionSpec> {
        Ok(match *self {
            ReactionKind::Sine {
                drift_gain: g,
                noise_level: c,
                discount,
            } => {
                if !(g.is_finite() && c.is_finite() && discount.is_finite()) {
                    return Err(Error::Argument("reaction parameters must be finite".into()));
                }
                ReactionSpec {
                    f: Arc::new(move |_, _, y, u| u - g * y.sin()),
                    h: Arc::new(move |_, _, y, u| c * (0.5 + 0.25 * y.sin() + 0.25 * u)),
                    alpha: Arc::new(|_, y, u| 0.2 * y.cos() - 0.5 * u * u),
                    beta: Arc::new(|y| 1.0 - (1.0 + y * y).sqrt()),
                    discount,
                    lip_const: (1.0 + g.abs()).max(1.0).max(discount.abs()),
                    h_sup: c.abs(),
                }
            }
            ReactionKind::Zero => ReactionSpec {
                f: Arc::new(|_, _, _, _| 0.0),
                h: Arc::new(|_, _, _, _| 0.0),
                alpha: Arc::new(|_, _, _| 0.0),
                beta: Arc::new(|_| 0.0),
                discount: 0.0,
                lip_const: 1.0,
                h_sup: 0.0,
            },
            ReactionKind::LinearTerminal => ReactionSpec {
                f: Arc::new(|_, _, _, _| 0.0),
                h: Arc::new(|_, _, _, _| 0.0),
                alpha: Arc::new(|_, _, _| 0.0),
                beta: Arc::new(|y| y),
                discount: 0.0,
                lip_const: 1.0,
                h_sup: 0.0,
            },
            ReactionKind::ConstantNoise { level } => ReactionSpec {
                f: Arc::new(|_, _, _, _| 0.0),
                h: Arc::new(move |_, _, _, _| level),
                alpha: Arc::new(|_, _, _| 0.0),
                beta: Arc::new(|_| 0.0),
                discount: 0.0,
                lip_const: level.abs().max(1.0),
                h_sup: level.abs(),
            },
        })
    }
}
