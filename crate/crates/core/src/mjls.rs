//! Markov jump linear system induced by the crowd's role distribution.
//!
//! Each input element switches between the closed loops (zero, minus, plus)
//! according to a Markov chain whose rows are fixed by the expected role
//! census. Mean-square stability holds iff the spectral radius of
//! `(P' ⊗ I) · blockdiag(Γ_j' ⊗ Γ_j)` is below one.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, ScgError};

/// Input element a role controls: role 1 drives throttle, role 2 steering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputElement {
    Throttle,
    Steering,
}

impl InputElement {
    pub const ALL: [InputElement; 2] = [InputElement::Throttle, InputElement::Steering];

    pub fn index(self) -> usize {
        match self {
            InputElement::Throttle => 0,
            InputElement::Steering => 1,
        }
    }

    /// 1-based role number.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn other(self) -> Self {
        match self {
            InputElement::Throttle => InputElement::Steering,
            InputElement::Steering => InputElement::Throttle,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MjlsModel {
    pub modes: Vec<DMatrix<f64>>,
    pub transition: DMatrix<f64>,
}

impl MjlsModel {
    pub fn new(modes: Vec<DMatrix<f64>>, transition: DMatrix<f64>) -> Result<Self> {
        let model = Self { modes, transition };
        model.validate()?;
        Ok(model)
    }

    /// Scalar modes with a transition matrix whose rows all equal `row`.
    pub fn scalar_constant_row(gammas: &[f64], row: &[f64]) -> Result<Self> {
        let na = gammas.len();
        if row.len() != na {
            return Err(ScgError::Dimension { expected: na, got: row.len() });
        }
        let modes = gammas.iter().map(|&g| DMatrix::from_element(1, 1, g)).collect();
        let p = DMatrix::from_fn(na, na, |_, j| row[j]);
        Self::new(modes, p)
    }

    pub fn state_dim(&self) -> usize {
        self.modes.first().map_or(0, |m| m.nrows())
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let na = self.modes.len();
        if na == 0 {
            return Err(domain("MJLS needs at least one mode"));
        }
        let n = self.state_dim();
        if self.modes.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(domain("all mode matrices must be n x n"));
        }
        if self.transition.nrows() != na || self.transition.ncols() != na {
            return Err(ScgError::Dimension { expected: na, got: self.transition.nrows() });
        }
        for r in 0..na {
            let row = self.transition.row(r);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(domain("transition probabilities must lie in [0, 1]"));
            }
            if (row.sum() - 1.0).abs() > 1e-12 {
                return Err(domain(format!("transition row {r} does not sum to one")));
            }
        }
        Ok(())
    }
}

/// Expected role counts per group for one role period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleCensus {
    pub n11: f64,
    pub n12: f64,
    pub n21: f64,
    pub n22: f64,
    pub rho_s: f64,
    pub k: usize,
}

impl RoleCensus {
    /// Expected census with group 1 choosing role 1 w.p. `q`, group 2 w.p. `m`.
    pub fn expected(n1: f64, n2: f64, q: f64, m: f64, rho_s: f64, k: usize) -> Self {
        Self {
            n11: q * n1,
            n12: (1.0 - q) * n1,
            n21: m * n2,
            n22: (1.0 - m) * n2,
            rho_s,
            k,
        }
    }

    /// Established division of labor: group 1 on throttle, group 2 on steering.
    pub fn post_dol(n1: f64, n2: f64, rho_s: f64, k: usize) -> Self {
        Self::expected(n1, n2, 1.0, 0.0, rho_s, k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.n11, self.n12, self.n21, self.n22];
        if all.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(domain("census counts must be finite and non-negative"));
        }
        if !(self.rho_s >= 1.0) {
            return Err(domain("social power must be at least 1"));
        }
        if self.k == 0 {
            return Err(domain("role period K must be positive"));
        }
        Ok(())
    }

    pub fn counts(&self, element: InputElement) -> (f64, f64) {
        match element {
            InputElement::Throttle => (self.n11, self.n21),
            InputElement::Steering => (self.n12, self.n22),
        }
    }

    /// Slot demand `(n_1i + rho n_2i) / K` on an element.
    pub fn load(&self, element: InputElement) -> f64 {
        let (a, b) = self.counts(element);
        (a + self.rho_s * b) / self.k as f64
    }
}

/// Row `[p(zero), p(minus), p(plus)]` of the constant-row transition matrix.
///
/// Oversubscribed elements (load above one) share all slots proportionally.
pub fn transition_row(census: &RoleCensus, element: InputElement) -> Result<[f64; 3]> {
    census.validate()?;
    let (n1, n2) = census.counts(element);
    let k = census.k as f64;
    let weighted = census.rho_s * n2;
    let load = (n1 + weighted) / k;
    if load <= 1.0 {
        Ok([(1.0 - n1 / k - weighted / k).max(0.0), n1 / k, weighted / k])
    } else {
        let total = n1 + weighted;
        Ok([0.0, n1 / total, weighted / total])
    }
}

pub fn transition_matrix(census: &RoleCensus, element: InputElement) -> Result<DMatrix<f64>> {
    let row = transition_row(census, element)?;
    Ok(DMatrix::from_fn(3, 3, |_, j| row[j]))
}

/// Second-moment operator `(P' ⊗ I_{n²}) · blockdiag(Γ_j' ⊗ Γ_j)`.
pub fn mss_operator(model: &MjlsModel) -> DMatrix<f64> {
    let n = model.state_dim();
    let na = model.mode_count();
    let n2 = n * n;
    let c = model.transition.transpose().kronecker(&DMatrix::<f64>::identity(n2, n2));
    let mut blocks = DMatrix::<f64>::zeros(na * n2, na * n2);
    for (j, g) in model.modes.iter().enumerate() {
        let kr = g.transpose().kronecker(g);
        blocks.view_mut((j * n2, j * n2), (n2, n2)).copy_from(&kr);
    }
    c * blocks
}

const DENSE_LIMIT: usize = 64;

fn dense_spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-15, 10_000)
        .ok_or(ScgError::NoConvergence { iterations: 10_000 })?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().map(|z: &Complex<f64>| z.norm()).fold(0.0, f64::max))
}

fn power_spectral_radius(m: &DMatrix<f64>, max_iter: usize) -> Option<f64> {
    let n = m.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_034).fract());
    v /= v.norm();
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let w = m * &v;
        let growth = w.norm();
        if growth == 0.0 {
            return Some(0.0);
        }
        if (growth - prev).abs() <= 1e-14 * growth.max(1.0) {
            return Some(growth);
        }
        prev = growth;
        v = w / growth;
    }
    // Oscillating growth (complex dominant pair) or slow convergence.
    None
}

/// Largest eigenvalue modulus. Dense Schur decomposition up to 64x64, power
/// iteration (with Schur fallback) beyond.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(ScgError::Dimension { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ScgError::NonFinite("matrix for spectral radius".into()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.nrows() <= DENSE_LIMIT {
        return dense_spectral_radius(m);
    }
    match power_spectral_radius(m, 20_000) {
        Some(r) => Ok(r),
        None => dense_spectral_radius(m),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MssVerdict {
    pub stable: bool,
    pub sigma: f64,
}

pub fn is_mss(model: &MjlsModel) -> Result<MssVerdict> {
    model.validate()?;
    let sigma = spectral_radius(&mss_operator(model))?;
    Ok(MssVerdict { stable: sigma < 1.0, sigma })
}

/// `Σ p_j γ_j²`: spectral radius of the second-moment operator for scalar
/// modes and a transition matrix with identical rows `p`.
pub fn scalar_mss_closed_form(p: &[f64; 3], gammas: &[f64; 3]) -> f64 {
    p.iter().zip(gammas).map(|(p, g)| p * g * g).sum()
}

/// Smallest share `f` of slots under mode `target` (the rest under `base`)
/// that makes `(1-f) γ_base² + f γ_target² < 1`. `None` if unreachable.
pub fn stabilizing_share(gamma_base: f64, gamma_target: f64) -> Option<f64> {
    let gb = gamma_base * gamma_base;
    let gt = gamma_target * gamma_target;
    if gb < 1.0 {
        return Some(0.0);
    }
    if gt >= 1.0 {
        return None;
    }
    Some((gb - 1.0) / (gb - gt))
}

/// Census model used by the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assignment {
    PostDol,
    Mixed { q: f64, m: f64 },
}

impl Assignment {
    pub fn census(&self, n1: f64, n2: f64, rho_s: f64, k: usize) -> RoleCensus {
        match *self {
            Assignment::PostDol => RoleCensus::post_dol(n1, n2, rho_s, k),
            Assignment::Mixed { q, m } => RoleCensus::expected(n1, n2, q, m, rho_s, k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n1_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub n2: usize,
    pub k: usize,
    /// Mode values `(zero, minus, plus)` for throttle and steering.
    pub gammas: [[f64; 3]; 2],
    pub assignment: Assignment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    #[serde(rename = "N1")]
    pub n1: usize,
    pub rho_s: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mss1: bool,
    pub mss2: bool,
    pub ci: bool,
}

/// Stability verdicts of both subsystems for one census.
pub fn census_verdicts(census: &RoleCensus, gammas: &[[f64; 3]; 2]) -> Result<[MssVerdict; 2]> {
    let mut out = [MssVerdict { stable: false, sigma: f64::NAN }; 2];
    for e in InputElement::ALL {
        let row = transition_row(census, e)?;
        let model = MjlsModel::scalar_constant_row(&gammas[e.index()], &row)?;
        out[e.index()] = is_mss(&model)?;
    }
    Ok(out)
}

/// Evaluates the stability grid, `N1` outer and `rho_s` inner.
pub fn ci_region_sweep(spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.n1_values.is_empty() || spec.rho_values.is_empty() {
        return Err(domain("sweep ranges must be non-empty"));
    }
    let cells: Vec<(usize, f64)> = spec
        .n1_values
        .iter()
        .flat_map(|&n1| spec.rho_values.iter().map(move |&r| (n1, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(n1, rho)| {
            let census = spec.assignment.census(n1 as f64, spec.n2 as f64, rho, spec.k);
            let [v1, v2] = census_verdicts(&census, &spec.gammas)?;
            Ok(SweepCell {
                n1,
                rho_s: rho,
                sigma1: v1.sigma,
                sigma2: v2.sigma,
                mss1: v1.stable,
                mss2: v2.stable,
                ci: v1.stable && v2.stable,
            })
        })
        .collect()
}

/// Linear fit `N1_min = slope * rho_s + intercept` through the smallest
/// CI-feasible `N1` of every `rho_s` column, plus the empirical threshold
/// forms `(N1 + rho N2) / K` and `rho N2 / N1` minimized over CI cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub boundary: Vec<(f64, usize)>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub min_load: Option<f64>,
    pub min_elite_ratio: Option<f64>,
}

pub fn summarize_boundary(cells: &[SweepCell], n2: usize, k: usize) -> BoundarySummary {
    let mut rhos: Vec<f64> = cells.iter().map(|c| c.rho_s).collect();
    rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rhos.dedup();
    let boundary: Vec<(f64, usize)> = rhos
        .iter()
        .filter_map(|&r| {
            cells
                .iter()
                .filter(|c| c.rho_s == r && c.ci)
                .map(|c| c.n1)
                .min()
                .map(|n| (r, n))
        })
        .collect();
    let (slope, intercept) = if boundary.len() >= 2 {
        let m = boundary.len() as f64;
        let mx = boundary.iter().map(|b| b.0).sum::<f64>() / m;
        let my = boundary.iter().map(|b| b.1 as f64).sum::<f64>() / m;
        let sxx: f64 = boundary.iter().map(|b| (b.0 - mx).powi(2)).sum();
        let sxy: f64 = boundary.iter().map(|b| (b.0 - mx) * (b.1 as f64 - my)).sum();
        if sxx > 0.0 {
            let s = sxy / sxx;
            (Some(s), Some(my - s * mx))
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };
    let ci_cells: Vec<&SweepCell> = cells.iter().filter(|c| c.ci).collect();
    let min_load = ci_cells
        .iter()
        .map(|c| (c.n1 as f64 + c.rho_s * n2 as f64) / k as f64)
        .reduce(f64::min);
    let min_elite_ratio = ci_cells
        .iter()
        .filter(|c| c.n1 > 0)
        .map(|c| c.rho_s * n2 as f64 / c.n1 as f64)
        .reduce(f64::min);
    BoundarySummary {
        boundary,
        slope,
        intercept,
        min_load,
        min_elite_ratio,
    }
}
