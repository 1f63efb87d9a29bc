use serde::{Deserialize, Serialize};

use super::{assign_slots, ControlSetup, EpisodeRecord, EpisodeSim, ScenarioSpec, TerminalEvent};
use crate::error::{domain, Result, ScgError};
use crate::graph::{consensus_weights, random_connected_graph, CommGraph, WeightMatrix};
use crate::marl::{
    actor_phase, critic_phase, estimate_all, sample_roles, Group, JointActionEstimate, LearningRates, Observation,
    Population, Role, RoleCounts, Transition, FEATURE_DIM,
};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphRefresh {
    Period,
    Episode,
}

/// CI classification: smoothed return within `epsilon_fraction * |J0|` of `J0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiCriterion {
    pub j0: Option<f64>,
    pub epsilon_fraction: f64,
    /// Moving-average window over episodes.
    pub window: usize,
}

impl CiCriterion {
    pub fn epsilon(&self) -> Option<f64> {
        self.j0.map(|j| self.epsilon_fraction * j.abs())
    }

    pub fn classify(&self, smoothed: f64) -> Option<bool> {
        let j0 = self.j0?;
        Some(smoothed >= j0 - self.epsilon().unwrap_or(0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub n1: usize,
    pub n2: usize,
    pub rho_s: f64,
    pub role_period: usize,
    pub gamma: f64,
    pub rates: LearningRates,
    pub episodes: usize,
    pub seed: u64,
    pub d_min: usize,
    pub d_max: usize,
    pub graph_refresh: GraphRefresh,
    pub init_logits: [f64; 2],
    pub init_critic: [f64; FEATURE_DIM],
    pub ci: CiCriterion,
    /// Snapshot the population every this many episodes (0: final only).
    pub checkpoint_every: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n1 + self.n2 == 0 {
            return Err(domain("population is empty"));
        }
        if self.role_period == 0 {
            return Err(domain("role period must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(domain("discount must lie in [0, 1]"));
        }
        if !(self.rho_s >= 1.0 && self.rho_s.is_finite()) {
            return Err(domain("social power must be at least 1"));
        }
        if self.ci.window == 0 {
            return Err(domain("smoothing window must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub episode_return: f64,
    pub mean_pi1: [f64; 2],
    pub terminal_event: TerminalEvent,
    pub periods: usize,
    pub smoothed_return: f64,
    pub ci: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub curves: Vec<EpisodeSummary>,
    /// Per episode, every agent's throttle probability after the episode.
    pub policy_history: Vec<Vec<f64>>,
    pub population: Population,
    pub checkpoints: Vec<(usize, Population)>,
    pub first_record: Option<EpisodeRecord>,
    pub last_record: Option<EpisodeRecord>,
    /// Set when training stopped early; `population` is then the last
    /// finite state.
    pub aborted: Option<String>,
}

impl TrainOutput {
    pub fn final_ci(&self) -> Option<bool> {
        self.curves.last().and_then(|c| c.ci)
    }
}

struct PeriodContext {
    weights: WeightMatrix,
    roles: Vec<Role>,
    counts: RoleCounts,
    estimates: Vec<JointActionEstimate>,
    observations: Vec<Observation>,
}

fn build_graph(spec: &TrainSpec, episode: usize, period: usize) -> Result<CommGraph> {
    let n = spec.n1 + spec.n2;
    if n < 2 {
        return Ok(CommGraph::empty(n));
    }
    let d_max = spec.d_max.min(n - 1);
    let d_min = spec.d_min.min(d_max).max(1);
    let tag = match spec.graph_refresh {
        GraphRefresh::Period => period as u64,
        GraphRefresh::Episode => 0,
    };
    let mut rng = stream(spec.seed, Purpose::Graph, &[episode as u64, tag]);
    random_connected_graph(n, d_min, d_max, &mut rng)
}

fn observe(pop: &Population, sim: &EpisodeSim) -> Vec<Observation> {
    let now = Observation::from(&sim.state());
    let delayed = Observation::from(&sim.delayed_state());
    pop.agents
        .iter()
        .map(|a| match a.group {
            Group::Delayed => delayed,
            Group::Empowered => now,
        })
        .collect()
}

fn open_period(
    spec: &TrainSpec,
    pop: &Population,
    sim: &EpisodeSim,
    episode: usize,
    period: usize,
    cached: &mut Option<(CommGraph, WeightMatrix)>,
) -> Result<PeriodContext> {
    let refresh = cached.is_none() || spec.graph_refresh == GraphRefresh::Period;
    if refresh {
        let g = build_graph(spec, episode, period)?;
        let w = consensus_weights(&g);
        *cached = Some((g, w));
    }
    let (graph, weights) = cached.as_ref().expect("graph built above");
    let mut rng = stream(spec.seed, Purpose::Roles, &[episode as u64, period as u64]);
    let (roles, counts) = sample_roles(&pop.agents, &mut rng);
    let estimates = estimate_all(graph, pop, &roles);
    Ok(PeriodContext {
        weights: weights.clone(),
        roles,
        counts,
        estimates,
        observations: observe(pop, sim),
    })
}

fn transitions(ctx: &PeriodContext, reward: f64) -> Vec<Transition> {
    (0..ctx.roles.len())
        .map(|i| Transition {
            obs: ctx.observations[i],
            role: ctx.roles[i],
            a_hat: ctx.estimates[i],
            reward,
            next: None,
        })
        .collect()
}

fn run_training_episode(
    spec: &TrainSpec,
    pop: &mut Population,
    scenario: &ScenarioSpec,
    setup: &ControlSetup,
    episode: usize,
) -> Result<(EpisodeRecord, usize)> {
    let mut sim = EpisodeSim::new(scenario, setup)?;
    let mut cached = None;
    let mut ctx = open_period(spec, pop, &sim, episode, 0, &mut cached)?;
    let mut period = 0;
    loop {
        let census = ctx.counts.census(spec.rho_s, spec.role_period);
        let mut slot_rng = stream(spec.seed, Purpose::Slots, &[episode as u64, period as u64]);
        let schedule = assign_slots(&census, spec.role_period, &mut slot_rng)?;
        let outcome = sim.run_period(&schedule)?;
        let mut trs = transitions(&ctx, outcome.reward);
        // The actor step reads only this period's data and the pre-round
        // critics, so it runs first and the next roles come from the
        // updated policies.
        actor_phase(pop, &trs, &spec.rates)?;
        period += 1;
        if outcome.terminal.is_some() {
            critic_phase(pop, &trs, &ctx.weights, &spec.rates)?;
            break;
        }
        let next = open_period(spec, pop, &sim, episode, period, &mut cached)?;
        for (i, tr) in trs.iter_mut().enumerate() {
            tr.next = Some((next.observations[i], next.estimates[i]));
        }
        critic_phase(pop, &trs, &ctx.weights, &spec.rates)?;
        ctx = next;
    }
    if let Some(bad) = pop.agents.iter().find(|a| !a.is_finite()) {
        return Err(ScgError::NonFinite(format!("parameters of agent {} after episode {episode}", bad.id)));
    }
    Ok((sim.finish(spec.gamma), period))
}

/// Sequential consensus actor-critic training over whole episodes.
pub fn train(spec: &TrainSpec, scenario: &ScenarioSpec, setup: &ControlSetup) -> Result<TrainOutput> {
    spec.validate()?;
    let mut pop = Population::new(spec.n1, spec.n2, spec.rho_s);
    for a in &mut pop.agents {
        a.theta = spec.init_logits;
        a.omega = spec.init_critic;
    }
    let mut out = TrainOutput {
        curves: Vec::with_capacity(spec.episodes),
        policy_history: Vec::with_capacity(spec.episodes),
        population: pop.clone(),
        checkpoints: Vec::new(),
        first_record: None,
        last_record: None,
        aborted: None,
    };
    let mut returns: Vec<f64> = Vec::with_capacity(spec.episodes);
    for episode in 0..spec.episodes {
        let mut trial = pop.clone();
        let (record, periods) = match run_training_episode(spec, &mut trial, scenario, setup, episode) {
            Ok(r) => r,
            Err(e @ ScgError::NonFinite(_)) => {
                out.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        pop = trial;
        returns.push(record.episode_return);
        let lo = returns.len().saturating_sub(spec.ci.window);
        let smoothed = returns[lo..].iter().sum::<f64>() / (returns.len() - lo) as f64;
        out.curves.push(EpisodeSummary {
            episode,
            episode_return: record.episode_return,
            mean_pi1: pop.mean_prob_throttle(),
            terminal_event: record.terminal_event,
            periods,
            smoothed_return: smoothed,
            ci: spec.ci.classify(smoothed),
        });
        out.policy_history.push(pop.agents.iter().map(|a| a.prob_throttle()).collect());
        if spec.checkpoint_every > 0 && (episode + 1) % spec.checkpoint_every == 0 {
            out.checkpoints.push((episode + 1, pop.clone()));
        }
        if episode == 0 {
            out.first_record = Some(record);
        } else {
            out.last_record = Some(record);
        }
    }
    let done = out.curves.len();
    if out.checkpoints.last().map(|c| c.0) != Some(done) {
        out.checkpoints.push((done, pop.clone()));
    }
    out.population = pop;
    Ok(out)
}
