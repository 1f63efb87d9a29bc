//! Decentralized role learning: softmax role policies, the distributed
//! joint-action estimator, linear consensus critics and the actor update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Result, ScgError};
use crate::graph::{CommGraph, WeightMatrix};
use crate::mjls::{InputElement, RoleCensus};

/// A social role is the input element an agent commands for a role period.
pub type Role = InputElement;

pub const FEATURE_DIM: usize = 6;
/// Euclidean bound on the role logits.
pub const LOGIT_CLIP: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Observes the state with the information delay.
    Delayed,
    /// Undelayed observation; commands carry the group's social power.
    Empowered,
}

impl Group {
    pub fn number(self) -> u8 {
        match self {
            Group::Delayed => 1,
            Group::Empowered => 2,
        }
    }

    pub fn index(self) -> usize {
        self.number() as usize - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub group: Group,
    pub rho_s: f64,
    pub theta: [f64; 2],
    pub omega: [f64; FEATURE_DIM],
}

impl AgentState {
    pub fn new(id: usize, group: Group, rho_s: f64) -> Self {
        Self {
            id,
            group,
            rho_s: if group == Group::Delayed { 1.0 } else { rho_s },
            theta: [0.0; 2],
            omega: [0.0; FEATURE_DIM],
        }
    }

    pub fn prob_throttle(&self) -> f64 {
        policy_prob(&self.theta, Role::Throttle)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.omega.iter()).all(|v| v.is_finite())
    }
}

/// Agents ordered group 1 first, then group 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<AgentState>,
    pub n1: usize,
    pub n2: usize,
}

impl Population {
    pub fn new(n1: usize, n2: usize, rho_s: f64) -> Self {
        let agents = (0..n1 + n2)
            .map(|id| AgentState::new(id, if id < n1 { Group::Delayed } else { Group::Empowered }, rho_s))
            .collect();
        Self { agents, n1, n2 }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn group_size(&self, group: Group) -> usize {
        match group {
            Group::Delayed => self.n1,
            Group::Empowered => self.n2,
        }
    }

    /// Mean throttle probability per group (NaN for an empty group).
    pub fn mean_prob_throttle(&self) -> [f64; 2] {
        let mut sums = [0.0; 2];
        for a in &self.agents {
            sums[a.group.index()] += a.prob_throttle();
        }
        [sums[0] / self.n1 as f64, sums[1] / self.n2 as f64]
    }
}

/// Softmax over the two role logits.
pub fn policy_probs(theta: &[f64; 2]) -> [f64; 2] {
    let m = theta[0].max(theta[1]);
    let e0 = (theta[0] - m).exp();
    let e1 = (theta[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub fn policy_prob(theta: &[f64; 2], role: Role) -> f64 {
    policy_probs(theta)[role.index()]
}

/// Gradient of `log pi(role)` with respect to the logits.
pub fn score(theta: &[f64; 2], role: Role) -> [f64; 2] {
    let p = policy_probs(theta);
    let mut s = [-p[0], -p[1]];
    s[role.index()] += 1.0;
    s
}

pub fn clip_logits(theta: &mut [f64; 2]) {
    let norm = theta[0].hypot(theta[1]);
    if norm > LOGIT_CLIP {
        let f = LOGIT_CLIP / norm;
        theta[0] *= f;
        theta[1] *= f;
    }
}

/// Exact role counts: `n[g][r]` is the number of group-`g` agents on role `r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub n: [[usize; 2]; 2],
}

impl RoleCounts {
    pub fn from_roles(agents: &[AgentState], roles: &[Role]) -> Self {
        let mut c = Self::default();
        for (a, r) in agents.iter().zip(roles) {
            c.n[a.group.index()][r.index()] += 1;
        }
        c
    }

    /// `[n11, n21]`: throttle counts per group.
    pub fn throttle_counts(&self) -> [f64; 2] {
        [self.n[0][0] as f64, self.n[1][0] as f64]
    }

    pub fn census(&self, rho_s: f64, k: usize) -> RoleCensus {
        RoleCensus {
            n11: self.n[0][0] as f64,
            n12: self.n[0][1] as f64,
            n21: self.n[1][0] as f64,
            n22: self.n[1][1] as f64,
            rho_s,
            k,
        }
    }
}

/// Independent role draws, one uniform per agent in id order.
pub fn sample_roles<R: Rng + ?Sized>(agents: &[AgentState], rng: &mut R) -> (Vec<Role>, RoleCounts) {
    let roles: Vec<Role> = agents
        .iter()
        .map(|a| {
            if rng.gen::<f64>() < a.prob_throttle() {
                Role::Throttle
            } else {
                Role::Steering
            }
        })
        .collect();
    let counts = RoleCounts::from_roles(agents, &roles);
    (roles, counts)
}

/// An agent's estimate of `[n11, n21]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointActionEstimate {
    pub a_hat: [f64; 2],
}

/// Neighbor role tallies of one agent: `total[g]` neighbors in group `g`,
/// `throttle[g]` of which chose throttle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NeighborTally {
    pub total: [usize; 2],
    pub throttle: [usize; 2],
}

impl NeighborTally {
    pub fn collect(graph: &CommGraph, agents: &[AgentState], roles: &[Role], i: usize) -> Self {
        let mut t = Self::default();
        for &j in graph.neighbors(i) {
            let g = agents[j].group.index();
            t.total[g] += 1;
            if roles[j] == Role::Throttle {
                t.throttle[g] += 1;
            }
        }
        t
    }
}

/// Local estimate of the joint role selection: the own group's ratio counts
/// the agent itself, the other group's ratio uses neighbors only, and an
/// empty denominator falls back to half the group.
pub fn estimate_joint_action(
    own_group: Group,
    own_role: Role,
    tally: &NeighborTally,
    group_sizes: [usize; 2],
) -> JointActionEstimate {
    let mut a_hat = [0.0; 2];
    for g in 0..2 {
        let size = group_sizes[g] as f64;
        let (mut num, mut den) = (tally.throttle[g], tally.total[g]);
        if g == own_group.index() {
            den += 1;
            if own_role == Role::Throttle {
                num += 1;
            }
        }
        a_hat[g] = if den == 0 { 0.5 * size } else { size * num as f64 / den as f64 };
    }
    JointActionEstimate { a_hat }
}

pub fn estimate_all(graph: &CommGraph, pop: &Population, roles: &[Role]) -> Vec<JointActionEstimate> {
    let sizes = [pop.n1, pop.n2];
    (0..pop.len())
        .map(|i| {
            let tally = NeighborTally::collect(graph, &pop.agents, roles, i);
            estimate_joint_action(pop.agents[i].group, roles[i], &tally, sizes)
        })
        .collect()
}

/// The part of the car state entering the critic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub v: f64,
    pub py: f64,
}

impl From<&VehicleState> for Observation {
    fn from(s: &VehicleState) -> Self {
        Self { v: s.v, py: s.py }
    }
}

pub type Features = [f64; FEATURE_DIM];

/// `[1, a1/N1, a2/N2, (a1/N1)(a2/N2), v/15, py/9]`; a ratio whose group is
/// empty contributes 0.
pub fn critic_features(obs: &Observation, est: &JointActionEstimate, group_sizes: [usize; 2]) -> Features {
    let ratio = |g: usize| {
        if group_sizes[g] == 0 {
            0.0
        } else {
            est.a_hat[g] / group_sizes[g] as f64
        }
    };
    let (r1, r2) = (ratio(0), ratio(1));
    [1.0, r1, r2, r1 * r2, obs.v / 15.0, obs.py / 9.0]
}

pub fn q_value(omega: &Features, phi: &Features) -> f64 {
    omega.iter().zip(phi).map(|(w, f)| w * f).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub actor: f64,
    pub critic: f64,
    /// Discount inside the TD target; `None` leaves the target undiscounted.
    pub td_discount: Option<f64>,
}

/// Everything agent `i` saw over one role period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub role: Role,
    pub a_hat: JointActionEstimate,
    pub reward: f64,
    /// `None` at episode end: the next value is taken as zero.
    pub next: Option<(Observation, JointActionEstimate)>,
}

pub fn td_error(agent: &AgentState, tr: &Transition, group_sizes: [usize; 2], td_discount: Option<f64>) -> f64 {
    let phi = critic_features(&tr.obs, &tr.a_hat, group_sizes);
    let next = match &tr.next {
        Some((obs, est)) => q_value(&agent.omega, &critic_features(obs, est, group_sizes)),
        None => 0.0,
    };
    tr.reward + td_discount.unwrap_or(1.0) * next - q_value(&agent.omega, &phi)
}

/// Semi-gradient TD(0) step on the linear critic.
pub fn critic_update(
    agent: &AgentState,
    tr: &Transition,
    group_sizes: [usize; 2],
    rates: &LearningRates,
) -> Result<Features> {
    let delta = td_error(agent, tr, group_sizes, rates.td_discount);
    if !delta.is_finite() {
        return Err(ScgError::NonFinite(format!(
            "TD error of agent {} (reward {}, omega {:?})",
            agent.id, tr.reward, agent.omega
        )));
    }
    let phi = critic_features(&tr.obs, &tr.a_hat, group_sizes);
    let mut w = agent.omega;
    for (wi, fi) in w.iter_mut().zip(phi) {
        *wi += rates.critic * delta * fi;
    }
    Ok(w)
}

/// `omega_i <- sum_j C(i, j) omega_j`.
pub fn consensus_step(tilde: &[Features], weights: &WeightMatrix) -> Result<Vec<Features>> {
    let n = tilde.len();
    if weights.len() != n {
        return Err(ScgError::Dimension { expected: n, got: weights.len() });
    }
    let c = &weights.c;
    let mut out = vec![[0.0; FEATURE_DIM]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, w) in tilde.iter().enumerate() {
            let cij = c[(i, j)];
            if cij == 0.0 {
                continue;
            }
            for (o, v) in row.iter_mut().zip(w) {
                *o += cij * v;
            }
        }
    }
    Ok(out)
}

/// Own-group count shifted to reflect the agent playing `alt` instead of
/// its actual role.
fn counterfactual(est: &JointActionEstimate, group: Group, actual: Role, alt: Role, group_sizes: [usize; 2]) -> JointActionEstimate {
    let g = group.index();
    let mut a_hat = est.a_hat;
    match (actual, alt) {
        (Role::Throttle, Role::Steering) => a_hat[g] -= 1.0,
        (Role::Steering, Role::Throttle) => a_hat[g] += 1.0,
        _ => {}
    }
    a_hat[g] = a_hat[g].clamp(0.0, group_sizes[g] as f64);
    JointActionEstimate { a_hat }
}

/// Counterfactual advantage of the chosen role under the agent's critic.
pub fn advantage(agent: &AgentState, tr: &Transition, group_sizes: [usize; 2]) -> f64 {
    let q = |est: &JointActionEstimate| q_value(&agent.omega, &critic_features(&tr.obs, est, group_sizes));
    let probs = policy_probs(&agent.theta);
    let baseline: f64 = Role::ALL
        .iter()
        .map(|&alt| probs[alt.index()] * q(&counterfactual(&tr.a_hat, agent.group, tr.role, alt, group_sizes)))
        .sum();
    q(&tr.a_hat) - baseline
}

pub fn actor_update(agent: &AgentState, tr: &Transition, group_sizes: [usize; 2], rates: &LearningRates) -> [f64; 2] {
    let adv = advantage(agent, tr, group_sizes);
    let psi = score(&agent.theta, tr.role);
    let mut theta = [
        agent.theta[0] + rates.actor * adv * psi[0],
        agent.theta[1] + rates.actor * adv * psi[1],
    ];
    clip_logits(&mut theta);
    theta
}

/// Actor half of a learning round, evaluated on the pre-round critics.
pub fn actor_phase(pop: &mut Population, transitions: &[Transition], rates: &LearningRates) -> Result<()> {
    check_len(pop, transitions)?;
    let sizes = [pop.n1, pop.n2];
    let thetas: Vec<[f64; 2]> = pop
        .agents
        .iter()
        .zip(transitions)
        .map(|(a, tr)| actor_update(a, tr, sizes, rates))
        .collect();
    for (a, th) in pop.agents.iter_mut().zip(thetas) {
        a.theta = th;
    }
    Ok(())
}

/// Critic half: every TD step from the same snapshot, then one consensus
/// exchange.
pub fn critic_phase(
    pop: &mut Population,
    transitions: &[Transition],
    weights: &WeightMatrix,
    rates: &LearningRates,
) -> Result<()> {
    check_len(pop, transitions)?;
    let sizes = [pop.n1, pop.n2];
    let tilde = pop
        .agents
        .iter()
        .zip(transitions)
        .map(|(a, tr)| critic_update(a, tr, sizes, rates))
        .collect::<Result<Vec<_>>>()?;
    let omegas = consensus_step(&tilde, weights)?;
    for (a, w) in pop.agents.iter_mut().zip(omegas) {
        a.omega = w;
    }
    Ok(())
}

/// One full round: TD, consensus, then actor updates using the critics
/// from before the round.
pub fn learning_round(
    pop: &mut Population,
    transitions: &[Transition],
    weights: &WeightMatrix,
    rates: &LearningRates,
) -> Result<()> {
    let before = pop.clone();
    critic_phase(pop, transitions, weights, rates)?;
    let mut actors = before;
    actor_phase(&mut actors, transitions, rates)?;
    for (a, b) in pop.agents.iter_mut().zip(actors.agents) {
        a.theta = b.theta;
    }
    Ok(())
}

fn check_len(pop: &Population, transitions: &[Transition]) -> Result<()> {
    if transitions.len() != pop.len() {
        return Err(ScgError::Dimension { expected: pop.len(), got: transitions.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::consensus_weights;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_values() {
        assert_eq!(policy_prob(&[0.0, 0.0], Role::Throttle), 0.5);
        assert_abs_diff_eq!(policy_prob(&[9f64.ln(), 0.0], Role::Throttle), 0.9, epsilon = 1e-15);
        let a = policy_probs(&[1.3, -0.4]);
        let b = policy_probs(&[101.3, 99.6]);
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-14);
        assert_abs_diff_eq!(a[0] + a[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn score_at_ninety_percent() {
        let s = score(&[9f64.ln(), 0.0], Role::Throttle);
        assert_abs_diff_eq!(s[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn clip_keeps_direction() {
        let mut t = [60.0, -80.0];
        clip_logits(&mut t);
        assert_abs_diff_eq!(t[0], 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], -40.0, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_policies_census() {
        let mut pop = Population::new(4, 3, 8.0);
        for a in &mut pop.agents {
            a.theta = [40.0, -40.0];
        }
        let (_, c) = sample_roles(&pop.agents, &mut stream(1, Purpose::Roles, &[]));
        assert_eq!(c.n, [[4, 0], [3, 0]]);
    }

    #[test]
    fn binomial_concentration() {
        let pop = Population::new(10_000, 0, 1.0);
        let (_, c) = sample_roles(&pop.agents, &mut stream(5, Purpose::Roles, &[]));
        let frac = c.n[0][0] as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac));
    }

    #[test]
    fn estimator_case_a() {
        let tally = NeighborTally { total: [3, 2], throttle: [2, 1] };
        let e = estimate_joint_action(Group::Delayed, Role::Throttle, &tally, [90, 10]);
        assert_eq!(e.a_hat, [67.5, 5.0]);
        let e = estimate_joint_action(Group::Delayed, Role::Steering, &tally, [90, 10]);
        assert_eq!(e.a_hat, [45.0, 5.0]);
    }

    #[test]
    fn estimator_empty_fallback() {
        let tally = NeighborTally { total: [2, 0], throttle: [1, 0] };
        let e = estimate_joint_action(Group::Delayed, Role::Steering, &tally, [90, 10]);
        assert_eq!(e.a_hat[1], 5.0);
        let e = estimate_joint_action(Group::Empowered, Role::Throttle, &NeighborTally::default(), [0, 10]);
        assert_eq!(e.a_hat, [0.0, 10.0]);
    }

    #[test]
    fn features_and_range() {
        let e = JointActionEstimate { a_hat: [30.0, 0.0] };
        let phi = critic_features(&Observation { v: 15.0, py: 0.0 }, &e, [30, 5]);
        assert_eq!(phi, [1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let phi = critic_features(&Observation { v: 15.0, py: 0.0 }, &e, [30, 0]);
        assert_eq!(phi[2], 0.0);
    }

    fn transition(role: Role, reward: f64) -> Transition {
        let obs = Observation { v: 15.0, py: 1.0 };
        let a_hat = JointActionEstimate { a_hat: [3.0, 1.0] };
        Transition { obs, role, a_hat, reward, next: Some((obs, a_hat)) }
    }

    #[test]
    fn td_arithmetic() {
        let rates = LearningRates { actor: 0.1, critic: 0.01, td_discount: None };
        let mut agent = AgentState::new(0, Group::Delayed, 1.0);
        let tr = transition(Role::Throttle, 0.0);
        agent.omega = [0.3, -1.0, 2.0, 0.5, 0.1, 0.2];
        assert_eq!(critic_update(&agent, &tr, [5, 2], &rates).unwrap(), agent.omega);
        agent.omega = [0.0; FEATURE_DIM];
        let tr = transition(Role::Throttle, 1.0);
        let w = critic_update(&agent, &tr, [5, 2], &rates).unwrap();
        let phi = critic_features(&tr.obs, &tr.a_hat, [5, 2]);
        for (wi, fi) in w.iter().zip(phi) {
            assert_abs_diff_eq!(*wi, 0.01 * fi, epsilon = 1e-15);
        }
    }

    #[test]
    fn non_finite_td_rejected() {
        let rates = LearningRates { actor: 0.1, critic: 0.01, td_discount: None };
        let agent = AgentState::new(0, Group::Delayed, 1.0);
        let tr = transition(Role::Throttle, f64::NAN);
        assert!(matches!(critic_update(&agent, &tr, [5, 2], &rates), Err(ScgError::NonFinite(_))));
    }

    #[test]
    fn zero_advantage_at_flat_critic() {
        let rates = LearningRates { actor: 1.0, critic: 0.0, td_discount: None };
        let mut agent = AgentState::new(0, Group::Delayed, 1.0);
        agent.omega = [2.0, 0.0, 1.0, 0.0, 0.5, 0.0];
        let tr = transition(Role::Steering, 1.0);
        assert_eq!(actor_update(&agent, &tr, [5, 2], &rates), [0.0, 0.0]);
    }

    #[test]
    fn advantage_sign_follows_critic_slope() {
        let rates = LearningRates { actor: 1.0, critic: 0.0, td_discount: None };
        let mut agent = AgentState::new(0, Group::Delayed, 1.0);
        agent.omega = [0.0, 5.0, 0.0, 0.0, 0.0, 0.0];
        for role in Role::ALL {
            let th = actor_update(&agent, &transition(role, 0.0), [5, 2], &rates);
            assert!(th[0] > th[1], "{role:?}");
        }
    }

    #[test]
    fn consensus_fixed_points() {
        let w = [[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; 4];
        let g = CommGraph::path(4);
        assert_eq!(consensus_step(&w, &consensus_weights(&g)).unwrap()[2], w[2]);
        let v: Vec<Features> = (0..4).map(|i| [i as f64; FEATURE_DIM]).collect();
        assert_eq!(consensus_step(&v, &WeightMatrix::identity(4)).unwrap(), v);
        assert!(consensus_step(&v, &WeightMatrix::identity(3)).is_err());
    }

    #[test]
    fn zero_rates_leave_agents() {
        let mut pop = Population::new(3, 2, 4.0);
        for (i, a) in pop.agents.iter_mut().enumerate() {
            a.theta = [i as f64 * 0.1, 0.0];
            a.omega = [0.5; FEATURE_DIM];
        }
        let before = pop.clone();
        let trs: Vec<Transition> = (0..5).map(|_| transition(Role::Throttle, 3.0)).collect();
        let rates = LearningRates { actor: 0.0, critic: 0.0, td_discount: None };
        learning_round(&mut pop, &trs, &WeightMatrix::identity(5), &rates).unwrap();
        assert_eq!(pop, before);
    }

    #[test]
    fn split_phases_match_round() {
        let g = CommGraph::complete(5);
        let w = consensus_weights(&g);
        let mut pop = Population::new(3, 2, 4.0);
        for (i, a) in pop.agents.iter_mut().enumerate() {
            a.theta = [i as f64 * 0.3, -0.2];
            a.omega = [0.1 * i as f64, 1.0, -2.0, 0.3, 0.2, -0.1];
        }
        let trs: Vec<Transition> = (0..5).map(|i| transition(Role::ALL[i % 2], -1.5)).collect();
        let rates = LearningRates { actor: 0.3, critic: 0.05, td_discount: Some(0.9) };
        let mut a = pop.clone();
        learning_round(&mut a, &trs, &w, &rates).unwrap();
        let mut b = pop;
        actor_phase(&mut b, &trs, &rates).unwrap();
        critic_phase(&mut b, &trs, &w, &rates).unwrap();
        assert_eq!(a, b);
    }
}
