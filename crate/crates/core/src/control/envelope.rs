//! Environment envelope: time-indexed linear state constraints `h x <= g`
//! encoding the road boundaries and the visible obstacle.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PlantParams, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub lanes: usize,
    pub lane_width: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self { lanes: 3, lane_width: 6.0 }
    }
}

impl RoadSpec {
    /// Distance from the road centerline to either edge.
    pub fn half_width(&self) -> f64 {
        0.5 * self.lanes as f64 * self.lane_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub visibility: f64,
}

impl Default for ObstacleSpec {
    fn default() -> Self {
        Self {
            x: 100.0,
            y: 0.0,
            length: 5.0,
            width: 2.0,
            visibility: 30.0,
        }
    }
}

impl ObstacleSpec {
    pub fn visible_from(&self, px: f64) -> bool {
        (self.x - px).abs() <= self.visibility
    }

    pub fn rear(&self) -> f64 {
        self.x + 0.5 * self.length
    }

    pub fn front(&self) -> f64 {
        self.x - 0.5 * self.length
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyMargins {
    pub lateral: f64,
    pub longitudinal: f64,
}

impl SafetyMargins {
    pub fn for_plant(plant: &PlantParams) -> Self {
        Self {
            lateral: 0.5,
            longitudinal: 0.25 * plant.length,
        }
    }
}

/// One constraint row on the predicted state at `step` (1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeRow {
    pub step: usize,
    pub h: [f64; 4],
    pub g: f64,
}

impl EnvelopeRow {
    pub fn slack(&self, x: &VehicleState) -> f64 {
        self.g - (self.h[0] * x.px + self.h[1] * x.py + self.h[2] * x.theta + self.h[3] * x.v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeConstraint {
    pub horizon: usize,
    pub rows: Vec<EnvelopeRow>,
    /// The current state already violates the static bounds.
    pub infeasible_start: bool,
}

impl EnvelopeConstraint {
    pub fn rows_at(&self, step: usize) -> impl Iterator<Item = &EnvelopeRow> {
        self.rows.iter().filter(move |r| r.step == step)
    }

    pub fn avoidance_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.h[1] < 0.0 && r.g < 0.0).count()
    }
}

/// Geometry shared by envelope construction and state checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeGeometry {
    pub road: RoadSpec,
    pub margins: SafetyMargins,
    pub car_length: f64,
    pub car_width: f64,
}

impl EnvelopeGeometry {
    pub fn new(road: RoadSpec, margins: SafetyMargins, plant: &PlantParams) -> Self {
        Self {
            road,
            margins,
            car_length: plant.length,
            car_width: plant.width,
        }
    }

    pub fn lateral_limit(&self) -> f64 {
        self.road.half_width() - 0.5 * self.car_width
    }

    fn overlaps_slab(&self, px: f64, obstacle: &ObstacleSpec) -> bool {
        let lo = obstacle.front() - self.margins.longitudinal;
        let hi = obstacle.rear() + self.margins.longitudinal;
        px + 0.5 * self.car_length >= lo && px - 0.5 * self.car_length <= hi
    }

    /// Smallest lateral position that passes the obstacle on the left.
    pub fn pass_line(&self, obstacle: &ObstacleSpec) -> f64 {
        obstacle.y + 0.5 * obstacle.width + 0.5 * self.car_width + self.margins.lateral
    }

    fn rows_for(&self, step: usize, px: f64, obstacle: Option<&ObstacleSpec>, out: &mut Vec<EnvelopeRow>) {
        let lim = self.lateral_limit();
        out.push(EnvelopeRow { step, h: [0.0, 1.0, 0.0, 0.0], g: lim });
        out.push(EnvelopeRow { step, h: [0.0, -1.0, 0.0, 0.0], g: lim });
        // Corner rows: a corner sits at most (L/2)|theta| + W/2 from the
        // center laterally, so these keep the whole footprint on the road.
        let arm = 0.5 * self.car_length;
        for (sy, st) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            out.push(EnvelopeRow { step, h: [0.0, sy, st * arm, 0.0], g: lim });
        }
        if let Some(obs) = obstacle {
            if self.overlaps_slab(px, obs) {
                out.push(EnvelopeRow {
                    step,
                    h: [0.0, -1.0, 0.0, 0.0],
                    g: -self.pass_line(obs),
                });
            }
        }
    }

    /// Envelope rows for steps `1..=px_pred.len()` given predicted
    /// longitudinal positions. `obstacle` is passed only when visible.
    pub fn build_along(
        &self,
        state: &VehicleState,
        px_pred: &[f64],
        obstacle: Option<&ObstacleSpec>,
    ) -> EnvelopeConstraint {
        let mut rows = Vec::with_capacity(3 * px_pred.len());
        for (i, &px) in px_pred.iter().enumerate() {
            self.rows_for(i + 1, px, obstacle, &mut rows);
        }
        EnvelopeConstraint {
            horizon: px_pred.len(),
            rows,
            infeasible_start: state.py.abs() > self.lateral_limit(),
        }
    }

    /// Largest violation of the envelope by an actual state (0 when satisfied).
    pub fn violation(&self, state: &VehicleState, obstacle: Option<&ObstacleSpec>) -> f64 {
        let mut rows = Vec::with_capacity(3);
        self.rows_for(0, state.px, obstacle, &mut rows);
        rows.iter().map(|r| (-r.slack(state)).max(0.0)).fold(0.0, f64::max)
    }
}

/// Envelope over `horizon` steps with a constant-velocity prediction of `px`.
pub fn build_envelope(
    state: &VehicleState,
    obstacle: Option<&ObstacleSpec>,
    geometry: &EnvelopeGeometry,
    horizon: usize,
    ts: f64,
) -> EnvelopeConstraint {
    let vx = state.theta.cos() * state.v;
    let px: Vec<f64> = (1..=horizon).map(|k| state.px + vx * ts * k as f64).collect();
    geometry.build_along(state, &px, obstacle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> EnvelopeGeometry {
        let plant = PlantParams::default();
        EnvelopeGeometry::new(RoadSpec::default(), SafetyMargins::for_plant(&plant), &plant)
    }

    #[test]
    fn road_only_envelope() {
        let g = geometry();
        let s = VehicleState::new(30.0, 0.0, 0.0, 15.0);
        let env = build_envelope(&s, None, &g, 100, 0.02);
        assert_eq!(env.rows.len(), 600);
        for r in &env.rows {
            assert_eq!(r.g, 8.0);
            assert_eq!(r.h[1].abs(), 1.0);
            assert!(r.h[2] == 0.0 || r.h[2].abs() == 2.5);
        }
        assert!(!env.infeasible_start);
    }

    #[test]
    fn visibility_boundary() {
        let obs = ObstacleSpec::default();
        assert!(obs.visible_from(71.0));
        assert!(obs.visible_from(70.0));
        assert!(!obs.visible_from(69.9));
        assert!(obs.visible_from(130.0));
    }

    #[test]
    fn avoidance_rows_when_overlapping() {
        let g = geometry();
        let obs = ObstacleSpec::default();
        let s = VehicleState::new(71.0, 0.0, 0.0, 15.0);
        let env = build_envelope(&s, Some(&obs), &g, 100, 0.02);
        assert!(env.avoidance_rows() > 0);
        for r in env.rows.iter().filter(|r| r.g < 0.0) {
            assert_eq!(r.g, -2.5);
            let px = 71.0 + 0.3 * r.step as f64;
            assert!(px >= 93.75 - 1e-9 && px <= 106.25 + 1e-9);
        }
    }

    #[test]
    fn no_avoidance_rows_past_obstacle() {
        let g = geometry();
        let obs = ObstacleSpec::default();
        let s = VehicleState::new(108.0, 3.0, 0.0, 15.0);
        let env = build_envelope(&s, Some(&obs), &g, 100, 0.02);
        assert_eq!(env.avoidance_rows(), 0);
    }

    #[test]
    fn infeasible_start_flagged() {
        let g = geometry();
        let s = VehicleState::new(0.0, 8.5, 0.0, 15.0);
        assert!(build_envelope(&s, None, &g, 10, 0.02).infeasible_start);
        assert!(g.violation(&s, None) > 0.49);
    }
}
