//! Delayed-observation wrapper: evaluates a policy on `x(k - tau)`.

use std::collections::VecDeque;

use super::Policy;
use crate::dynamics::{ControlInput, VehicleState};
use crate::error::{domain, Result};

/// Sliding window of the last `tau + 1` observed states.
#[derive(Clone, Debug)]
pub struct DelayBuffer {
    tau: usize,
    states: VecDeque<VehicleState>,
}

impl DelayBuffer {
    pub fn new(tau: usize) -> Self {
        Self {
            tau,
            states: VecDeque::with_capacity(tau + 1),
        }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: VehicleState) {
        if self.states.len() == self.tau + 1 {
            self.states.pop_front();
        }
        self.states.push_back(state);
    }

    /// State `tau` pushes before the latest; the oldest entry while the
    /// history is shorter than that.
    pub fn delayed(&self) -> Result<VehicleState> {
        self.states
            .front()
            .copied()
            .ok_or_else(|| domain("delay buffer is empty"))
    }
}

#[derive(Clone, Debug)]
pub struct DelayedPolicy<P> {
    pub inner: P,
    buffer: DelayBuffer,
    last_observed: Option<VehicleState>,
}

impl<P: Policy> DelayedPolicy<P> {
    pub fn new(inner: P, tau: usize) -> Self {
        Self {
            inner,
            buffer: DelayBuffer::new(tau),
            last_observed: None,
        }
    }

    /// Records a state without issuing a command (warmup history).
    pub fn observe(&mut self, state: VehicleState) {
        self.buffer.push(state);
    }

    pub fn prefill(&mut self, history: &[VehicleState]) {
        for s in history {
            self.buffer.push(*s);
        }
    }

    /// The state the next command would be computed from.
    pub fn delayed_state(&self) -> Result<VehicleState> {
        self.buffer.delayed()
    }

    /// Delayed state fed to the inner policy on the most recent command.
    pub fn last_observed(&self) -> Option<VehicleState> {
        self.last_observed
    }

    /// Commands from the history alone; the caller has already recorded the
    /// current state via [`DelayedPolicy::observe`].
    pub fn command_from_history(&mut self) -> Result<ControlInput> {
        let x = self.buffer.delayed()?;
        self.last_observed = Some(x);
        self.inner.command(&x)
    }
}

impl<P: Policy> Policy for DelayedPolicy<P> {
    fn command(&mut self, observed: &VehicleState) -> Result<ControlInput> {
        self.buffer.push(*observed);
        self.command_from_history()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Proportional lateral controller; deterministic function of the state.
    struct Lateral;
    impl Policy for Lateral {
        fn command(&mut self, x: &VehicleState) -> Result<ControlInput> {
            Ok(ControlInput::new(15.0 - x.v, -0.1 * x.py))
        }
    }

    fn state(k: usize) -> VehicleState {
        VehicleState::new(0.3 * k as f64, (k as f64 * 0.1).sin(), 0.0, 15.0 - 0.01 * k as f64)
    }

    #[test]
    fn zero_delay_is_transparent() {
        let mut d = DelayedPolicy::new(Lateral, 0);
        let mut p = Lateral;
        for k in 0..50 {
            assert_eq!(d.command(&state(k)).unwrap(), p.command(&state(k)).unwrap());
        }
    }

    #[test]
    fn constant_history_is_invisible() {
        let x = VehicleState::new(30.0, 0.0, 0.0, 15.0);
        let mut d = DelayedPolicy::new(Lateral, 100);
        d.prefill(&vec![x; 101]);
        assert_eq!(d.command(&x).unwrap(), Lateral.command(&x).unwrap());
    }

    #[test]
    fn reads_state_tau_steps_back() {
        let tau = 100;
        let mut d = DelayedPolicy::new(Lateral, tau);
        let warm: Vec<VehicleState> = (0..tau).map(state).collect();
        d.prefill(&warm);
        for k in tau..tau + 150 {
            let u = d.command(&state(k)).unwrap();
            assert_eq!(d.last_observed().unwrap(), state(k - tau));
            assert_eq!(u, Lateral.command(&state(k - tau)).unwrap());
        }
    }

    #[test]
    fn empty_buffer_rejected() {
        let mut d = DelayedPolicy::new(Lateral, 5);
        assert!(d.command_from_history().is_err());
    }
}
