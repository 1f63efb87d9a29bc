//! Scalar state-feedback sub-policies for the decoupled error subsystems.

use serde::{Deserialize, Serialize};

use crate::dynamics::{discretize_mode, ScalarErrorSystem};
use crate::error::{domain, Result, ScgError};

/// Which closed loop acts on an input element: no input, delayed-state
/// feedback or fresh-state feedback. Ordered (zero, minus, plus) everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Zero,
    Minus,
    Plus,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Zero, Variant::Minus, Variant::Plus];

    pub fn index(self) -> usize {
        match self {
            Variant::Zero => 0,
            Variant::Minus => 1,
            Variant::Plus => 2,
        }
    }

    pub fn from_index(i: usize) -> Variant {
        Self::ALL[i]
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Variant::Zero => "k0",
            Variant::Minus => "k-",
            Variant::Plus => "k+",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackGains {
    /// Undelayed gains `(k11, k12)`.
    pub k1: [f64; 2],
    /// Effective delayed gains `(k21, k22)`.
    pub k2: [f64; 2],
    pub tau_steps: usize,
}

/// Gain `k` such that the closed loop `e' = (a - b k) e` discretizes to
/// `target_gamma`.
pub fn design_gain(sys: &ScalarErrorSystem, target_gamma: f64) -> Result<f64> {
    if sys.b == 0.0 {
        return Err(domain("input coefficient is zero: subsystem is uncontrollable"));
    }
    if !(target_gamma > 0.0) || !target_gamma.is_finite() {
        return Err(domain("target mode must be a positive finite scalar"));
    }
    let open_loop = (sys.a * sys.ts).exp();
    if target_gamma > open_loop * (1.0 + 1e-12) {
        return Err(domain(format!(
            "target mode {target_gamma} exceeds the open-loop mode {open_loop}"
        )));
    }
    Ok((sys.a - target_gamma.ln() / sys.ts) / sys.b)
}

/// Closed loop under `u = -k x(t - tau ts)` with the first-order delay
/// approximation `x(t - tau ts) = x(t) - tau ts x'(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayedMode {
    pub a_eff: f64,
    pub gamma: f64,
    /// Equivalent undelayed gain `k2` with `a - b k2 = a_eff`.
    pub k2: f64,
}

pub fn delayed_effective_gamma(sys: &ScalarErrorSystem, k: f64, tau_steps: usize) -> Result<DelayedMode> {
    let delay = tau_steps as f64 * sys.ts;
    let denom = 1.0 - k * sys.b * delay;
    if denom.abs() < 1e-12 {
        return Err(ScgError::Analysis(
            "first-order delay approximation is singular (k b tau ts = 1)".into(),
        ));
    }
    let a_eff = (sys.a - k * sys.b) / denom;
    let gamma = (a_eff * sys.ts).exp();
    let k2 = if sys.b != 0.0 { (sys.a - a_eff) / sys.b } else { 0.0 };
    Ok(DelayedMode { a_eff, gamma, k2 })
}

/// Evaluates `-K1 x`, `-K2 x` or zero on the error state `x = [e_v, e_theta]`.
pub fn feedback_policy(x: [f64; 2], gains: &FeedbackGains, variant: Variant) -> [f64; 2] {
    let k = match variant {
        Variant::Zero => return [0.0, 0.0],
        Variant::Minus => gains.k2,
        Variant::Plus => gains.k1,
    };
    [-k[0] * x[0], -k[1] * x[1]]
}

/// Mode values `(zero, minus, plus)` of the two subsystems for given
/// undelayed targets, plus the gains that realize them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeTable {
    pub gammas: [[f64; 3]; 2],
    pub gains: FeedbackGains,
}

pub fn mode_table(
    subsystems: [&ScalarErrorSystem; 2],
    plus_targets: [f64; 2],
    tau_steps: usize,
) -> Result<ModeTable> {
    let mut gammas = [[0.0; 3]; 2];
    let mut k1 = [0.0; 2];
    let mut k2 = [0.0; 2];
    for (i, sys) in subsystems.iter().enumerate() {
        let k = design_gain(sys, plus_targets[i])?;
        let delayed = delayed_effective_gamma(sys, k, tau_steps)?;
        gammas[i] = [discretize_mode(sys, 0.0), delayed.gamma, discretize_mode(sys, k)];
        k1[i] = k;
        k2[i] = delayed.k2;
    }
    Ok(ModeTable {
        gammas,
        gains: FeedbackGains { k1, k2, tau_steps },
    })
}
