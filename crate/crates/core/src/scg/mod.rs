//! Shared-control game orchestration: slot schedules, episodes, rewards and
//! the training loop.

mod episode;
mod train;

pub use episode::{
    baseline_run, run_fixed_roles, run_simplified, ControlSetup, EpisodeSim, PeriodOutcome, SimplifiedSpec,
};
pub use train::{train, CiCriterion, EpisodeSummary, GraphRefresh, TrainOutput, TrainSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ObstacleSpec, RoadSpec, SafetyMargins, Variant};
use crate::dynamics::{ControlInput, VehicleState};
use crate::error::Result;
use crate::mjls::{transition_row, InputElement, RoleCensus};

/// Static description of the obstacle scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub road: RoadSpec,
    pub obstacle: ObstacleSpec,
    pub margins: SafetyMargins,
    pub start: VehicleState,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub v_target: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            road: RoadSpec::default(),
            obstacle: ObstacleSpec::default(),
            margins: SafetyMargins { lateral: 0.5, longitudinal: 1.25 },
            start: VehicleState::new(0.0, 0.0, 0.0, 15.0),
            warmup_steps: 100,
            max_steps: 400,
            v_target: 15.0,
        }
    }
}

/// Acting variant per step of one role period, `[throttle, steering]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchedule {
    pub slots: Vec<[Variant; 2]>,
}

impl SlotSchedule {
    pub fn uniform(k: usize, variants: [Variant; 2]) -> Self {
        Self { slots: vec![variants; k] }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn uses(&self, v: Variant) -> bool {
        self.slots.iter().any(|s| s.contains(&v))
    }
}

/// Inverse-CDF draw from a `(zero, minus, plus)` row.
pub fn categorical(row: &[f64; 3], u: f64) -> Variant {
    if u < row[0] {
        Variant::Zero
    } else if u < row[0] + row[1] {
        Variant::Minus
    } else if row[2] > 0.0 || row[1] == 0.0 {
        Variant::Plus
    } else {
        Variant::Minus
    }
}

/// Draws one acting variant per step and element, i.i.d. from the
/// transition row of that element's census.
pub fn assign_slots<R: Rng + ?Sized>(census: &RoleCensus, k: usize, rng: &mut R) -> Result<SlotSchedule> {
    let rows = [
        transition_row(census, InputElement::Throttle)?,
        transition_row(census, InputElement::Steering)?,
    ];
    let slots = (0..k)
        .map(|_| {
            let t = categorical(&rows[0], rng.gen());
            let s = categorical(&rows[1], rng.gen());
            [t, s]
        })
        .collect();
    Ok(SlotSchedule { slots })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalEvent {
    Passed,
    Collision,
    OffRoad,
    Timeout,
}

/// One simulated step: the state reached after applying `input`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub state: VehicleState,
    pub input: ControlInput,
    pub variants: [Variant; 2],
    /// State the delayed controller was evaluated on this step, if it ran.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delayed_source: Option<VehicleState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub initial: VehicleState,
    pub trajectory: Vec<StepRecord>,
    pub interval_rewards: Vec<f64>,
    pub terminal_event: TerminalEvent,
    pub terminal_reward: f64,
    pub episode_return: f64,
    /// Largest envelope violation by the actual trajectory.
    pub max_violation: f64,
    pub infeasible_solves: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostics: Option<String>,
}

impl EpisodeRecord {
    /// Rewards per role period with the terminal reward added to the last.
    pub fn period_rewards(&self) -> Vec<f64> {
        let mut r = self.interval_rewards.clone();
        if let Some(last) = r.last_mut() {
            *last += self.terminal_reward;
        }
        r
    }

    pub fn r1_total(&self) -> f64 {
        self.interval_rewards.iter().sum()
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        EpisodeOutcome {
            terminal_event: self.terminal_event,
            steps: self.trajectory.len(),
            r1_total: self.r1_total(),
            episode_return: self.episode_return,
            max_violation: self.max_violation,
            infeasible_solves: self.infeasible_solves,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Scalar digest of an episode for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub terminal_event: TerminalEvent,
    pub steps: usize,
    pub r1_total: f64,
    pub episode_return: f64,
    pub max_violation: f64,
    pub infeasible_solves: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostics: Option<String>,
}

/// Speed penalty of one role interval: zero at or above the target.
pub fn interval_reward(v_avg: f64, v_target: f64) -> f64 {
    if v_avg >= v_target {
        0.0
    } else {
        -(v_target - v_avg).powi(2)
    }
}

pub const TERMINAL_REWARD: f64 = 500.0;

pub fn terminal_reward(event: TerminalEvent) -> f64 {
    match event {
        TerminalEvent::Passed => TERMINAL_REWARD,
        _ => -TERMINAL_REWARD,
    }
}

/// `sum_j gamma^j r_j` over role periods.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Corners of a `length x width` rectangle centered at `(x, y)` with yaw `theta`.
pub fn footprint(x: f64, y: f64, theta: f64, length: f64, width: f64) -> [[f64; 2]; 4] {
    let (s, c) = theta.sin_cos();
    let (hl, hw) = (0.5 * length, 0.5 * width);
    let mut out = [[0.0; 2]; 4];
    for (i, (a, b)) in [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].into_iter().enumerate() {
        out[i] = [x + c * a - s * b, y + s * a + c * b];
    }
    out
}

/// Separating-axis overlap test of two convex quadrilaterals.
pub fn rectangles_overlap(p: &[[f64; 2]; 4], q: &[[f64; 2]; 4]) -> bool {
    for poly in [p, q] {
        for i in 0..4 {
            let a = poly[i];
            let b = poly[(i + 1) % 4];
            let axis = [b[1] - a[1], a[0] - b[0]];
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (p_lo, p_hi) = proj(p);
            let (q_lo, q_hi) = proj(q);
            if p_hi < q_lo || q_hi < p_lo {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn rewards() {
        assert_eq!(interval_reward(15.0, 15.0), 0.0);
        assert_eq!(interval_reward(16.0, 15.0), 0.0);
        assert_eq!(interval_reward(13.0, 15.0), -4.0);
        assert_eq!(terminal_reward(TerminalEvent::Collision), -500.0);
        assert_eq!(terminal_reward(TerminalEvent::Timeout), -500.0);
        assert_eq!(terminal_reward(TerminalEvent::Passed), 500.0);
        assert!((discounted_return(&[1.0, 2.0, 4.0], 0.5) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn oversubscribed_throttle_is_all_delayed() {
        let census = RoleCensus { n11: 90.0, n12: 0.0, n21: 0.0, n22: 10.0, rho_s: 8.0, k: 80 };
        let s = assign_slots(&census, 80, &mut stream(0, Purpose::Slots, &[])).unwrap();
        assert!(s.slots.iter().all(|v| v[0] == Variant::Minus));
        assert!(s.slots.iter().all(|v| v[1] == Variant::Plus));
    }

    #[test]
    fn empty_census_all_zero() {
        let census = RoleCensus { n11: 0.0, n12: 0.0, n21: 0.0, n22: 0.0, rho_s: 8.0, k: 30 };
        let s = assign_slots(&census, 30, &mut stream(0, Purpose::Slots, &[])).unwrap();
        assert_eq!(s, SlotSchedule::uniform(30, [Variant::Zero; 2]));
    }

    #[test]
    fn categorical_edges() {
        assert_eq!(categorical(&[0.0, 1.0, 0.0], 0.999_999), Variant::Minus);
        assert_eq!(categorical(&[0.5, 0.0, 0.5], 0.5), Variant::Plus);
        assert_eq!(categorical(&[1.0, 0.0, 0.0], 0.3), Variant::Zero);
    }

    #[test]
    fn footprint_overlap() {
        let obs = footprint(100.0, 0.0, 0.0, 5.0, 2.0);
        assert!(rectangles_overlap(&footprint(96.0, 0.0, 0.0, 5.0, 2.0), &obs));
        assert!(!rectangles_overlap(&footprint(94.0, 0.0, 0.0, 5.0, 2.0), &obs));
        assert!(!rectangles_overlap(&footprint(100.0, 2.01, 0.0, 5.0, 2.0), &obs));
        assert!(rectangles_overlap(&footprint(100.0, 1.99, 0.0, 5.0, 2.0), &obs));
        // Rotated car whose bounding box overlaps but body does not.
        let tilted = footprint(104.3, 3.3, std::f64::consts::FRAC_PI_4, 5.0, 2.0);
        assert!(!rectangles_overlap(&tilted, &obs));
    }
}
