use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    assign_slots, discounted_return, footprint, interval_reward, rectangles_overlap, terminal_reward, EpisodeRecord,
    ScenarioSpec, SlotSchedule, StepRecord, TerminalEvent,
};
use crate::control::{DelayedPolicy, EnvelopeGeometry, MpcController, MpcProblem, Variant};
use crate::dynamics::{step_kinematic, ControlInput, PlantParams, VehicleState};
use crate::error::{Result, ScgError};
use crate::mjls::RoleCensus;

/// Everything needed to build the per-episode controllers.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSetup {
    pub problem: MpcProblem,
    pub plant: PlantParams,
    /// Information delay of the delayed controller, in steps.
    pub tau: usize,
}

impl ControlSetup {
    pub fn geometry(&self, scenario: &ScenarioSpec) -> EnvelopeGeometry {
        EnvelopeGeometry::new(scenario.road, scenario.margins, &self.plant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodOutcome {
    pub steps: usize,
    pub v_avg: f64,
    pub reward: f64,
    pub terminal: Option<TerminalEvent>,
}

/// Closed-loop simulation of one episode, advanced one role period at a time.
#[derive(Clone, Debug)]
pub struct EpisodeSim {
    scenario: ScenarioSpec,
    plant: PlantParams,
    geometry: EnvelopeGeometry,
    reference: ControlInput,
    plus: MpcController,
    minus: DelayedPolicy<MpcController>,
    tau: usize,
    /// Warmup and post-warmup states, oldest first.
    history: Vec<VehicleState>,
    applied: ControlInput,
    k: usize,
    trajectory: Vec<StepRecord>,
    interval_rewards: Vec<f64>,
    terminal: Option<TerminalEvent>,
    max_violation: f64,
    diagnostics: Option<String>,
}

impl EpisodeSim {
    /// Builds the controllers and runs the no-input warmup, whose states
    /// seed the delay buffer.
    pub fn new(scenario: &ScenarioSpec, setup: &ControlSetup) -> Result<Self> {
        let plant = setup.plant;
        let geometry = setup.geometry(scenario);
        let reference = plant.reference_input();
        let controller = MpcController::new(setup.problem.clone(), plant, geometry, Some(scenario.obstacle), reference)?;
        let mut minus = DelayedPolicy::new(controller.clone(), setup.tau);
        let mut history = Vec::with_capacity(scenario.warmup_steps + scenario.max_steps + 1);
        let mut x = scenario.start;
        history.push(x);
        for _ in 0..scenario.warmup_steps {
            x = step_kinematic(&x, &reference, &plant)?;
            history.push(x);
        }
        minus.prefill(&history[..history.len() - 1]);
        Ok(Self {
            scenario: *scenario,
            plant,
            geometry,
            reference,
            plus: controller,
            minus,
            tau: setup.tau,
            history,
            applied: reference,
            k: 0,
            trajectory: Vec::new(),
            interval_rewards: Vec::new(),
            terminal: None,
            max_violation: 0.0,
            diagnostics: None,
        })
    }

    pub fn state(&self) -> VehicleState {
        *self.history.last().expect("history holds the start state")
    }

    /// State observed through the information delay.
    pub fn delayed_state(&self) -> VehicleState {
        let n = self.history.len();
        self.history[n.saturating_sub(self.tau + 1)]
    }

    pub fn steps_taken(&self) -> usize {
        self.k
    }

    pub fn terminal(&self) -> Option<TerminalEvent> {
        self.terminal
    }

    pub fn history(&self) -> &[VehicleState] {
        &self.history
    }

    fn classify(&self, x: &VehicleState) -> Option<TerminalEvent> {
        let car = footprint(x.px, x.py, x.theta, self.plant.length, self.plant.width);
        let o = &self.scenario.obstacle;
        let obs = footprint(o.x, o.y, 0.0, o.length, o.width);
        if rectangles_overlap(&car, &obs) {
            return Some(TerminalEvent::Collision);
        }
        let edge = self.scenario.road.half_width();
        if car.iter().any(|c| c[1].abs() > edge) {
            return Some(TerminalEvent::OffRoad);
        }
        if x.px > o.rear() + self.plant.length {
            return Some(TerminalEvent::Passed);
        }
        if self.k >= self.scenario.max_steps {
            return Some(TerminalEvent::Timeout);
        }
        None
    }

    fn commands(&mut self, variants: [Variant; 2]) -> Result<(ControlInput, Option<VehicleState>)> {
        let current = self.state();
        self.minus.observe(current);
        let mut plus = None;
        let mut minus = None;
        let mut source = None;
        if variants.contains(&Variant::Plus) {
            plus = Some(self.plus.solve_at(self.k, &current, self.applied)?.input);
        }
        if variants.contains(&Variant::Minus) {
            let delayed = self.minus.delayed_state()?;
            source = Some(delayed);
            minus = Some(self.minus.inner.solve_at(self.k, &delayed, self.applied)?.input);
        }
        let mut u = self.reference;
        for (e, v) in variants.iter().enumerate() {
            let cmd = match v {
                Variant::Zero => self.reference,
                Variant::Minus => minus.expect("solved above"),
                Variant::Plus => plus.expect("solved above"),
            };
            u.set(e, cmd.get(e));
        }
        Ok((u, source))
    }

    /// Applies one step; returns the terminal event if the episode ended.
    pub fn step(&mut self, variants: [Variant; 2]) -> Result<Option<TerminalEvent>> {
        if self.terminal.is_some() {
            return Ok(self.terminal);
        }
        let (u, delayed_source) = match self.commands(variants) {
            Ok(c) => c,
            Err(e) => {
                self.diagnostics = Some(format!("controller failure at step {}: {e}", self.k));
                self.terminal = Some(TerminalEvent::Timeout);
                return Ok(self.terminal);
            }
        };
        let x = step_kinematic(&self.state(), &u, &self.plant)?;
        self.applied = u;
        self.k += 1;
        self.history.push(x);
        self.max_violation = self
            .max_violation
            .max(self.geometry.violation(&x, Some(&self.scenario.obstacle)));
        self.trajectory.push(StepRecord {
            k: self.k,
            state: x,
            input: u,
            variants,
            delayed_source,
        });
        self.terminal = self.classify(&x);
        Ok(self.terminal)
    }

    /// Runs one role period (or until the episode ends) and books its speed
    /// penalty.
    pub fn run_period(&mut self, schedule: &SlotSchedule) -> Result<PeriodOutcome> {
        if self.terminal.is_some() {
            return Err(ScgError::Domain("episode already finished".into()));
        }
        let mut v_sum = 0.0;
        let mut steps = 0;
        for slot in &schedule.slots {
            let ended = self.step(*slot)?;
            v_sum += self.state().v;
            steps += 1;
            if ended.is_some() {
                break;
            }
        }
        let v_avg = if steps == 0 { self.state().v } else { v_sum / steps as f64 };
        let r1 = interval_reward(v_avg, self.scenario.v_target);
        self.interval_rewards.push(r1);
        let reward = r1 + self.terminal.map_or(0.0, terminal_reward);
        Ok(PeriodOutcome { steps, v_avg, reward, terminal: self.terminal })
    }

    pub fn infeasible_solves(&self) -> usize {
        self.plus.stats.infeasible + self.minus.inner.stats.infeasible
    }

    pub fn finish(self, gamma: f64) -> EpisodeRecord {
        let terminal_event = self.terminal.unwrap_or(TerminalEvent::Timeout);
        let terminal_reward = terminal_reward(terminal_event);
        let initial = self.history[self.history.len() - 1 - self.k];
        let infeasible_solves = self.infeasible_solves();
        let mut record = EpisodeRecord {
            initial,
            trajectory: self.trajectory,
            interval_rewards: self.interval_rewards,
            terminal_event,
            terminal_reward,
            episode_return: 0.0,
            max_violation: self.max_violation,
            infeasible_solves,
            diagnostics: self.diagnostics,
        };
        record.episode_return = discounted_return(&record.period_rewards(), gamma);
        record
    }
}

/// Single-variant run driving both inputs every step.
pub fn baseline_run(
    variant: Variant,
    scenario: &ScenarioSpec,
    setup: &ControlSetup,
    role_period: usize,
    gamma: f64,
) -> Result<EpisodeRecord> {
    let mut sim = EpisodeSim::new(scenario, setup)?;
    let schedule = SlotSchedule::uniform(role_period, [variant; 2]);
    while sim.terminal().is_none() {
        sim.run_period(&schedule)?;
    }
    Ok(sim.finish(gamma))
}

/// Episode under a census held fixed for every role period.
pub fn run_fixed_roles<R: Rng + ?Sized>(
    census: &RoleCensus,
    scenario: &ScenarioSpec,
    setup: &ControlSetup,
    gamma: f64,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let mut sim = EpisodeSim::new(scenario, setup)?;
    while sim.terminal().is_none() {
        let schedule = assign_slots(census, census.k, rng)?;
        sim.run_period(&schedule)?;
    }
    Ok(sim.finish(gamma))
}

/// Scalar switched error dynamics `x_i <- gamma_i[variant] x_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedSpec {
    pub gammas: [[f64; 3]; 2],
    pub x0: [f64; 2],
    pub steps: usize,
}

/// Iterates the scalar jump system under slots drawn from `census`,
/// returning the error trajectory (including `x0`) and the variants used.
pub fn run_simplified<R: Rng + ?Sized>(
    spec: &SimplifiedSpec,
    census: &RoleCensus,
    rng: &mut R,
) -> Result<(Vec<[f64; 2]>, Vec<[Variant; 2]>)> {
    let mut x = spec.x0;
    let mut xs = Vec::with_capacity(spec.steps + 1);
    let mut used = Vec::with_capacity(spec.steps);
    xs.push(x);
    let k = census.k.max(1);
    while used.len() < spec.steps {
        let schedule = assign_slots(census, k.min(spec.steps - used.len()), rng)?;
        for slot in schedule.slots {
            for e in 0..2 {
                x[e] *= spec.gammas[e][slot[e].index()];
            }
            xs.push(x);
            used.push(slot);
        }
    }
    Ok((xs, used))
}
