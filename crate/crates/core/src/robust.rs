//! Robust losses and the Triggs correction.
//!
//! Losses act on the squared norm `s = ‖r̄‖²` of a whitened residual. The
//! Huber and Cauchy parameters are thresholds on `‖r̄‖`, so the quadratic
//! region of `Huber { delta }` is `s ≤ delta²`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Below this value of `1 + 2 s ρ''/ρ'` the second-order correction is dropped.
const MIN_DISCRIMINANT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum LossFunction {
    #[default]
    Trivial,
    Huber {
        delta: f64,
    },
    Cauchy {
        scale: f64,
    },
}

/// `(ρ(s), ρ'(s), ρ''(s))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub rho: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LossFunction {
    pub fn evaluate(&self, s: f64) -> LossValue {
        debug_assert!(s >= 0.0, "squared norm must be non-negative");
        match *self {
            LossFunction::Trivial => LossValue {
                rho: s,
                d1: 1.0,
                d2: 0.0,
            },
            LossFunction::Huber { delta } => {
                let b = delta * delta;
                if s <= b {
                    LossValue {
                        rho: s,
                        d1: 1.0,
                        d2: 0.0,
                    }
                } else {
                    let r = s.sqrt();
                    LossValue {
                        rho: 2.0 * delta * r - b,
                        d1: delta / r,
                        d2: -0.5 * delta / (s * r),
                    }
                }
            }
            LossFunction::Cauchy { scale } => {
                let b = scale * scale;
                let q = 1.0 + s / b;
                LossValue {
                    rho: b * q.ln(),
                    d1: 1.0 / q,
                    d2: -1.0 / (b * q * q),
                }
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, LossFunction::Trivial)
    }
}

impl fmt::Display for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossFunction::Trivial => write!(f, "trivial"),
            LossFunction::Huber { delta } => write!(f, "huber:{delta}"),
            LossFunction::Cauchy { scale } => write!(f, "cauchy:{scale}"),
        }
    }
}

impl FromStr for LossFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let parse_param = |p: Option<&str>| -> Result<f64, String> {
            let p = p.ok_or_else(|| format!("loss '{name}' needs a parameter, e.g. '{name}:1.0'"))?;
            let v: f64 = p.parse().map_err(|_| format!("invalid loss parameter '{p}'"))?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(format!("loss parameter must be positive, got {v}"))
            }
        };
        match name.to_ascii_lowercase().as_str() {
            "trivial" | "none" => Ok(LossFunction::Trivial),
            "huber" => Ok(LossFunction::Huber {
                delta: parse_param(param)?,
            }),
            "cauchy" => Ok(LossFunction::Cauchy {
                scale: parse_param(param)?,
            }),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

impl TryFrom<String> for LossFunction {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LossFunction> for String {
    fn from(l: LossFunction) -> Self {
        l.to_string()
    }
}

/// Robust residual and Jacobian such that `J̆ᵀr̆ = ρ' J̄ᵀr̄` and
/// `J̆ᵀJ̆ = J̄ᵀ(ρ' I + 2ρ'' r̄r̄ᵀ)J̄` whenever the correction is defined.
pub fn triggs_correct(
    residual: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    loss: &LossFunction,
) -> (DVector<f64>, DMatrix<f64>) {
    if loss.is_trivial() {
        return (residual.clone(), jacobian.clone());
    }
    let s = residual.norm_squared();
    let LossValue { d1, d2, .. } = loss.evaluate(s);
    let sqrt_d1 = d1.sqrt();
    let alpha = if s == 0.0 || d2 == 0.0 {
        0.0
    } else {
        let disc = 1.0 + 2.0 * s * d2 / d1;
        if disc > MIN_DISCRIMINANT {
            1.0 - disc.sqrt()
        } else {
            0.0
        }
    };
    let r = residual * (sqrt_d1 / (1.0 - alpha));
    let mut j = jacobian * sqrt_d1;
    if alpha != 0.0 {
        // J̆ = √ρ' (I − α r̄r̄ᵀ/‖r̄‖²) J̄
        let rt_j = residual.transpose() * jacobian;
        j -= residual * rt_j * (alpha * sqrt_d1 / s);
    }
    (r, j)
}
