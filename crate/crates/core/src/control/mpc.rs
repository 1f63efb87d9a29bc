//! Obstacle-avoidance MPC on the LTV linearization of the car.
//!
//! Decision variables are the input increments `dz_0..dz_{Nc-1}` (two
//! elements each), so the rate limits become simple bounds. Inputs beyond the
//! control horizon are held at `u_{Nc-1}`. The cost sums
//! `(x_k - x_ref)' Q (x_k - x_ref)` for `k = 1..Np` and
//! `(u_j - u_ref)' R (u_j - u_ref)` for `j = 0..Np-1`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::envelope::{EnvelopeConstraint, EnvelopeGeometry, ObstacleSpec};
use super::qp::{QpOutcome, QpProblem};
use super::Policy;
use crate::dynamics::{linearize_discretize, step_kinematic, ControlInput, LinearModel, PlantParams, VehicleState};
use crate::error::{domain, Result, ScgError};

#[derive(Clone, Debug, PartialEq)]
pub struct MpcProblem {
    pub np: usize,
    pub nc: usize,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    pub u_max: [f64; 2],
    pub du_max: [f64; 2],
    pub x_ref: Vector4<f64>,
    pub u_ref: Vector2<f64>,
}

fn is_psd_symmetric<const D: usize>(m: &nalgebra::SMatrix<f64, D, D>) -> bool
where
    nalgebra::Const<D>: nalgebra::DimMin<nalgebra::Const<D>, Output = nalgebra::Const<D>>,
{
    if (m - m.transpose()).amax() > 1e-12 {
        return false;
    }
    let dm = DMatrix::from_iterator(D, D, m.iter().copied());
    dm.symmetric_eigenvalues().iter().all(|&l| l >= -1e-12)
}

impl MpcProblem {
    pub fn validate(&self) -> Result<()> {
        if self.nc == 0 || self.nc > self.np {
            return Err(domain(format!("need 1 <= Nc <= Np, got Nc={} Np={}", self.nc, self.np)));
        }
        if !is_psd_symmetric(&self.q) || !is_psd_symmetric(&self.r) {
            return Err(domain("Q and R must be symmetric positive semi-definite"));
        }
        if !self.du_max.iter().all(|&d| d > 0.0) {
            return Err(domain("rate limits must be positive"));
        }
        if !self.u_max.iter().all(|&u| u > 0.0) {
            return Err(domain("input bounds must be positive"));
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        2 * self.nc
    }
}

/// Condensed QP together with the affine state prediction it was built from.
#[derive(Clone, Debug)]
pub struct CondensedMpc {
    pub qp: QpProblem,
    /// Constant term so that `qp.objective(z) + constant` equals the MPC cost.
    pub constant: f64,
    /// Number of leading rows that are rate/input bounds (the rest are envelope rows).
    pub bound_rows: usize,
    /// Horizon step of each envelope row, in row order after `bound_rows`.
    pub row_steps: Vec<usize>,
    pub free_states: Vec<Vector4<f64>>,
    pub sensitivity: Vec<DMatrix<f64>>,
}

impl CondensedMpc {
    pub fn predicted_state(&self, k: usize, z: &DVector<f64>) -> Vector4<f64> {
        if k == 0 {
            return self.free_states[0];
        }
        self.free_states[k] + &self.sensitivity[k] * z
    }
}

/// Applied input sequence `u_0..u_{Np-1}` for increments `z`.
pub fn inputs_from_increments(problem: &MpcProblem, u_prev: &ControlInput, z: &DVector<f64>) -> Vec<ControlInput> {
    let mut u = *u_prev;
    let mut out = Vec::with_capacity(problem.np);
    for j in 0..problem.np {
        if j < problem.nc {
            u.t += z[2 * j];
            u.delta += z[2 * j + 1];
        }
        out.push(u);
    }
    out
}

/// Builds the condensed QP. `models[k]` maps `x_k` to `x_{k+1}`.
pub fn condense(
    x0: &VehicleState,
    u_prev: &ControlInput,
    problem: &MpcProblem,
    models: &[LinearModel],
    envelope: &EnvelopeConstraint,
) -> Result<CondensedMpc> {
    let np = problem.np;
    let nc = problem.nc;
    let n = problem.n_vars();
    if models.len() < np {
        return Err(ScgError::Dimension { expected: np, got: models.len() });
    }
    let up = u_prev.to_vector();

    let mut free_states = Vec::with_capacity(np + 1);
    let mut sens: Vec<DMatrix<f64>> = Vec::with_capacity(np + 1);
    free_states.push(x0.to_vector());
    sens.push(DMatrix::zeros(4, n));
    for (k, m) in models.iter().take(np).enumerate() {
        let c = m.a * free_states[k] + m.b * up + m.d;
        let prev = &sens[k];
        let mut s = DMatrix::zeros(4, n);
        for row in 0..4 {
            for col in 0..n {
                let mut acc = 0.0;
                for l in 0..4 {
                    acc += m.a[(row, l)] * prev[(l, col)];
                }
                s[(row, col)] = acc;
            }
            let last = k.min(nc - 1);
            for i in 0..=last {
                s[(row, 2 * i)] += m.b[(row, 0)];
                s[(row, 2 * i + 1)] += m.b[(row, 1)];
            }
        }
        free_states.push(c);
        sens.push(s);
    }

    let mut h0 = DMatrix::<f64>::zeros(n, n);
    let mut g0 = DVector::<f64>::zeros(n);
    let mut c0 = 0.0;
    let q = &problem.q;
    let nz_q: Vec<(usize, usize, f64)> = (0..4)
        .flat_map(|a| (0..4).map(move |b| (a, b)))
        .filter(|&(a, b)| q[(a, b)] != 0.0)
        .map(|(a, b)| (a, b, q[(a, b)]))
        .collect();
    for k in 1..=np {
        let s = &sens[k];
        let e = free_states[k] - problem.x_ref;
        let qe = q * e;
        c0 += e.dot(&qe);
        for &(a, b, w) in &nz_q {
            for i in 0..n {
                let sai = w * s[(a, i)];
                if sai == 0.0 {
                    continue;
                }
                for j in 0..n {
                    h0[(i, j)] += sai * s[(b, j)];
                }
            }
        }
        for i in 0..n {
            let mut acc = 0.0;
            for a in 0..4 {
                acc += s[(a, i)] * qe[a];
            }
            g0[i] += acc;
        }
    }
    let r = &problem.r;
    let du = up - problem.u_ref;
    let rdu = r * du;
    c0 += np as f64 * du.dot(&rdu);
    for i in 0..nc {
        for e in 0..2 {
            g0[2 * i + e] += (np - i) as f64 * rdu[e];
            for i2 in 0..nc {
                let count = (np - i.max(i2)) as f64;
                for e2 in 0..2 {
                    h0[(2 * i + e, 2 * i2 + e2)] += r[(e, e2)] * count;
                }
            }
        }
    }

    let finite_u: Vec<usize> = (0..2).filter(|&e| problem.u_max[e].is_finite()).collect();
    let bound_rows = 2 * n + 2 * nc * finite_u.len();
    let m = bound_rows + envelope.rows.len();
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut b = DVector::<f64>::zeros(m);
    let mut row = 0;
    for i in 0..nc {
        for e in 0..2 {
            a[(row, 2 * i + e)] = 1.0;
            b[row] = problem.du_max[e];
            a[(row + 1, 2 * i + e)] = -1.0;
            b[row + 1] = problem.du_max[e];
            row += 2;
        }
    }
    for &e in &finite_u {
        for i in 0..nc {
            for i2 in 0..=i {
                a[(row, 2 * i2 + e)] = 1.0;
                a[(row + 1, 2 * i2 + e)] = -1.0;
            }
            b[row] = problem.u_max[e] - up[e];
            b[row + 1] = problem.u_max[e] + up[e];
            row += 2;
        }
    }
    for env in &envelope.rows {
        if env.step == 0 || env.step > np {
            return Err(domain(format!("envelope row at step {} outside horizon", env.step)));
        }
        let s = &sens[env.step];
        let c = &free_states[env.step];
        let mut hc = 0.0;
        for l in 0..4 {
            hc += env.h[l] * c[l];
        }
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..4 {
                acc += env.h[l] * s[(l, j)];
            }
            a[(row, j)] = acc;
        }
        b[row] = env.g - hc;
        row += 1;
    }

    Ok(CondensedMpc {
        qp: QpProblem {
            h: h0 * 2.0,
            g: g0 * 2.0,
            a,
            b,
        },
        constant: c0,
        bound_rows,
        row_steps: envelope.rows.iter().map(|r| r.step).collect(),
        free_states,
        sensitivity: sens,
    })
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub input: ControlInput,
    pub inputs: Vec<ControlInput>,
    pub increments: DVector<f64>,
    pub objective: f64,
    pub feasible: bool,
    /// Largest envelope violation of the predicted trajectory (0 when feasible).
    pub max_violation: f64,
}

/// Solves one MPC instance on a given LTV model sequence.
///
/// When the envelope cannot be met, returns the input sequence minimizing
/// the squared per-step envelope violations subject to the rate limits.
pub fn mpc_solve(
    x0: &VehicleState,
    u_prev: &ControlInput,
    problem: &MpcProblem,
    envelope: &EnvelopeConstraint,
    models: &[LinearModel],
) -> Result<MpcSolution> {
    let cond = condense(x0, u_prev, problem, models, envelope)?;
    match cond.qp.solve()? {
        Ok(sol) => {
            let inputs = inputs_from_increments(problem, u_prev, &sol.z);
            Ok(MpcSolution {
                input: inputs[0],
                inputs,
                objective: sol.objective + cond.constant,
                max_violation: cond.qp.max_violation(&sol.z),
                increments: sol.z,
                feasible: true,
            })
        }
        Err(QpOutcome::Infeasible) => least_violation(&cond, problem, u_prev),
    }
}

fn least_violation(cond: &CondensedMpc, problem: &MpcProblem, u_prev: &ControlInput) -> Result<MpcSolution> {
    let n = cond.qp.dim();
    let m = cond.qp.b.len();
    let mut steps = cond.row_steps.clone();
    steps.sort_unstable();
    steps.dedup();
    let ns = steps.len();
    let scale = 1.0 / cond.qp.h.diagonal().amax().max(1e-12);
    let slack_weight = 1e4;
    let mut h = DMatrix::<f64>::zeros(n + ns, n + ns);
    h.view_mut((0, 0), (n, n)).copy_from(&(&cond.qp.h * scale));
    for j in 0..ns {
        h[(n + j, n + j)] = slack_weight;
    }
    let mut g = DVector::<f64>::zeros(n + ns);
    g.rows_mut(0, n).copy_from(&(&cond.qp.g * scale));
    let mut a = DMatrix::<f64>::zeros(m + ns, n + ns);
    a.view_mut((0, 0), (m, n)).copy_from(&cond.qp.a);
    for (i, step) in cond.row_steps.iter().enumerate() {
        let j = steps.binary_search(step).expect("step listed");
        a[(cond.bound_rows + i, n + j)] = -1.0;
    }
    for j in 0..ns {
        a[(m + j, n + j)] = -1.0;
    }
    let mut b = DVector::<f64>::zeros(m + ns);
    b.rows_mut(0, m).copy_from(&cond.qp.b);
    let relaxed = QpProblem { h, g, a, b };
    let sol = relaxed
        .solve()?
        .map_err(|_| ScgError::Solver("relaxed MPC problem infeasible".into()))?;
    let z = sol.z.rows(0, n).into_owned();
    let inputs = inputs_from_increments(problem, u_prev, &z);
    Ok(MpcSolution {
        input: inputs[0],
        inputs,
        objective: cond.qp.objective(&z) + cond.constant,
        max_violation: cond.qp.max_violation(&z),
        increments: z,
        feasible: false,
    })
}

/// Rolls the nonlinear plant forward under `inputs` and linearizes along it.
pub fn linearize_along(
    x0: &VehicleState,
    inputs: &[ControlInput],
    plant: &PlantParams,
) -> Result<(Vec<VehicleState>, Vec<LinearModel>)> {
    let lim = std::f64::consts::FRAC_PI_2 - 1e-3;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut models = Vec::with_capacity(inputs.len());
    let mut x = *x0;
    states.push(x);
    for u in inputs {
        let u = ControlInput::new(u.t, u.delta.clamp(-lim, lim));
        models.push(linearize_discretize(&x, &u, plant)?);
        x = step_kinematic(&x, &u, plant)?;
        states.push(x);
    }
    Ok((states, models))
}

/// Counters for solver diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpcStats {
    pub solves: usize,
    pub infeasible: usize,
}

/// Receding-horizon controller with warm-start state: its own previous
/// command (for the rate limits) and its previous plan (for linearization).
#[derive(Clone, Debug)]
pub struct MpcController {
    pub problem: MpcProblem,
    pub plant: PlantParams,
    pub geometry: EnvelopeGeometry,
    pub obstacle: Option<ObstacleSpec>,
    u_prev: ControlInput,
    plan: Vec<ControlInput>,
    last_step: Option<usize>,
    pub stats: MpcStats,
    pub last_solution: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(
        problem: MpcProblem,
        plant: PlantParams,
        geometry: EnvelopeGeometry,
        obstacle: Option<ObstacleSpec>,
        u_prev: ControlInput,
    ) -> Result<Self> {
        problem.validate()?;
        plant.validate()?;
        Ok(Self {
            problem,
            plant,
            geometry,
            obstacle,
            u_prev,
            plan: Vec::new(),
            last_step: None,
            stats: MpcStats::default(),
            last_solution: None,
        })
    }

    pub fn previous_command(&self) -> ControlInput {
        self.u_prev
    }

    fn nominal_inputs(&self) -> Vec<ControlInput> {
        let np = self.problem.np;
        if self.plan.is_empty() {
            return vec![self.u_prev; np];
        }
        let mut nominal: Vec<ControlInput> = self.plan.iter().skip(1).copied().collect();
        let last = *self.plan.last().unwrap();
        nominal.resize(np, last);
        nominal
    }

    pub fn solve(&mut self, observed: &VehicleState) -> Result<MpcSolution> {
        let nominal = self.nominal_inputs();
        let (states, models) = linearize_along(observed, &nominal, &self.plant)?;
        let visible = self.obstacle.filter(|o| o.visible_from(observed.px));
        let px: Vec<f64> = states[1..].iter().map(|s| s.px).collect();
        let envelope = self.geometry.build_along(observed, &px, visible.as_ref());
        let sol = mpc_solve(observed, &self.u_prev, &self.problem, &envelope, &models)?;
        self.stats.solves += 1;
        if !sol.feasible {
            self.stats.infeasible += 1;
        }
        self.u_prev = sol.input;
        self.plan = sol.inputs.clone();
        self.last_solution = Some(sol.clone());
        Ok(sol)
    }
}

impl MpcController {
    /// Solves at step `k` with the rate limits anchored at `applied`, the
    /// input currently held by the actuators. The previous plan seeds the
    /// linearization only if it was computed at step `k - 1`.
    pub fn solve_at(&mut self, k: usize, observed: &VehicleState, applied: ControlInput) -> Result<MpcSolution> {
        if self.last_step.is_none_or(|s| s + 1 != k) {
            self.plan.clear();
        }
        self.u_prev = applied;
        let sol = self.solve(observed)?;
        self.last_step = Some(k);
        Ok(sol)
    }
}

impl Policy for MpcController {
    fn command(&mut self, observed: &VehicleState) -> Result<ControlInput> {
        Ok(self.solve(observed)?.input)
    }
}
