//! Run configuration: TOML sections with defaults, presets and dotted
//! `key=value` overrides.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::control::{mode_table, MpcProblem, ObstacleSpec, RoadSpec, SafetyMargins};
use crate::dynamics::{build_error_subsystems, PlantParams, VehicleState, DEFAULT_LAMBDA};
use crate::error::{Result, ScgError};
use crate::marl::{LearningRates, FEATURE_DIM};
use crate::scg::{CiCriterion, ControlSetup, ScenarioSpec, TrainSpec};

pub use crate::scg::GraphRefresh;

/// Mode values printed with the original scalar analysis,
/// `[[zero, minus, plus]; 2]` for throttle then steering.
pub const PRINTED_GAMMAS: [[f64; 3]; 2] = [[1.0017, 0.996, 0.9997], [1.0017, 1.053, 0.9897]];

fn cfg_err(msg: impl Into<String>) -> ScgError {
    ScgError::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub n1: usize,
    pub n2: usize,
    pub rho_s: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { n1: 90, n2: 10, rho_s: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    /// Steps between role re-selections.
    pub role_period: usize,
    /// Information delay of group 1, in steps.
    pub tau: usize,
    pub gamma: f64,
    pub episodes: usize,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub v_target: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            role_period: 80,
            tau: 100,
            gamma: 0.9,
            episodes: 300,
            warmup_steps: 100,
            max_steps: 400,
            v_target: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Discount inside the TD target; absent means undiscounted.
    pub td_discount: Option<f64>,
    pub init_logits: [f64; 2],
    /// Initial critic weights, shared by every agent.
    pub init_critic: [f64; FEATURE_DIM],
    pub checkpoint_every: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-4,
            critic_lr: 1e-2,
            td_discount: None,
            init_logits: [0.0, 0.0],
            init_critic: [0.0; FEATURE_DIM],
            checkpoint_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub np: usize,
    pub nc: usize,
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 2],
    pub u_max: [f64; 2],
    /// Defaults to `[30, (pi/30) ts]`.
    pub du_max: Option<[f64; 2]>,
    pub x_ref: [f64; 4],
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            np: 100,
            nc: 60,
            q_diag: [0.0, 1.0, 0.0, 1.0],
            r_diag: [0.1, 0.1],
            u_max: [f64::INFINITY; 2],
            du_max: None,
            x_ref: [0.0, 0.0, 0.0, 15.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub road: RoadSpec,
    pub obstacle: ObstacleSpec,
    pub margin_lateral: f64,
    /// Defaults to a quarter of the car length.
    pub margin_longitudinal: Option<f64>,
    pub start: [f64; 4],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road: RoadSpec::default(),
            obstacle: ObstacleSpec::default(),
            margin_lateral: 0.5,
            margin_longitudinal: None,
            start: [0.0, 0.0, 0.0, 15.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub d_min: usize,
    pub d_max: usize,
    pub refresh: GraphRefresh,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { d_min: 1, d_max: 10, refresh: GraphRefresh::Period }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSource {
    /// Reference mode values (PRINTED_GAMMAS).
    Printed,
    /// Recomputed from the scalar error subsystems.
    Derived,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub lambda: f64,
    pub v0: f64,
    pub plus_targets: [f64; 2],
    pub modes: ModeSource,
    /// Explicit `[[zero, minus, plus]; 2]` values; overrides `modes`.
    pub gammas: Option<[[f64; 3]; 2]>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            v0: 15.0,
            plus_targets: [0.9997, 0.9897],
            modes: ModeSource::Printed,
            gammas: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CiConfig {
    pub epsilon_fraction: f64,
    pub window: usize,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self { epsilon_fraction: 0.05, window: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub population: PopulationConfig,
    pub game: GameConfig,
    pub learning: LearningConfig,
    pub mpc: MpcConfig,
    pub plant: PlantParams,
    pub scenario: ScenarioConfig,
    pub graph: GraphConfig,
    pub theory: TheoryConfig,
    pub ci: CiConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            population: PopulationConfig::default(),
            game: GameConfig::default(),
            learning: LearningConfig::default(),
            mpc: MpcConfig::default(),
            plant: PlantParams::default(),
            scenario: ScenarioConfig::default(),
            graph: GraphConfig::default(),
            theory: TheoryConfig::default(),
            ci: CiConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Case1,
    Case2,
    Case3,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = ScgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(Preset::Case1),
            "case2" => Ok(Preset::Case2),
            "case3" => Ok(Preset::Case3),
            "desk" => Ok(Preset::Desk),
            other => Err(cfg_err(format!("unknown preset `{other}` (case1|case2|case3|desk)"))),
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = Self::default();
        match p {
            Preset::Case1 => {}
            Preset::Case2 => c.population.rho_s = 4.0,
            Preset::Case3 => c.population.n1 = 10,
            Preset::Desk => {
                c.population = PopulationConfig { n1: 30, n2: 5, rho_s: 8.0 };
                c.game.role_period = 30;
                c.game.episodes = 200;
                c.mpc.np = 100;
                c.mpc.nc = 8;
                c.scenario.obstacle.visibility = 33.0;
                c.learning.actor_lr = 0.02;
                c.learning.critic_lr = 0.1;
                c.learning.init_critic[0] = -320.0;
                c.learning.checkpoint_every = 0;
            }
        }
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScgError::Serde(e.to_string()))
    }

    /// Applies dotted overrides such as `mpc.np=50` or `population.rho_s=4`.
    /// Values are parsed as TOML, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root: toml::Value =
            toml::Value::try_from(self).map_err(|e| ScgError::Serde(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("override `{item}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut root, &path, value)?;
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        if p.n1 + p.n2 == 0 {
            return Err(cfg_err("population.n1 + population.n2 must be positive"));
        }
        if !(p.rho_s >= 1.0 && p.rho_s.is_finite()) {
            return Err(cfg_err("population.rho_s must be a finite value >= 1"));
        }
        let g = &self.game;
        if g.role_period == 0 || g.max_steps == 0 {
            return Err(cfg_err("game.role_period and game.max_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&g.gamma) {
            return Err(cfg_err("game.gamma must lie in [0, 1]"));
        }
        let l = &self.learning;
        if !(l.actor_lr >= 0.0 && l.critic_lr >= 0.0 && l.actor_lr.is_finite() && l.critic_lr.is_finite()) {
            return Err(cfg_err("learning rates must be finite and non-negative"));
        }
        if let Some(d) = l.td_discount {
            if !(0.0..=1.0).contains(&d) {
                return Err(cfg_err("learning.td_discount must lie in [0, 1]"));
            }
        }
        if !l.init_logits.iter().all(|v| v.is_finite()) {
            return Err(cfg_err("learning.init_logits must be finite"));
        }
        if !l.init_critic.iter().all(|v| v.is_finite()) {
            return Err(cfg_err("learning.init_critic must be finite"));
        }
        self.plant.validate().map_err(|e| cfg_err(format!("plant: {e}")))?;
        self.mpc_problem()?.validate().map_err(|e| cfg_err(format!("mpc: {e}")))?;
        let gr = &self.graph;
        if gr.d_min < 1 || gr.d_min > gr.d_max {
            return Err(cfg_err("graph degree bounds must satisfy 1 <= d_min <= d_max"));
        }
        let s = &self.scenario;
        if s.road.lanes == 0 || !(s.road.lane_width > 0.0) {
            return Err(cfg_err("scenario.road must have positive lanes and lane_width"));
        }
        if !(s.obstacle.length > 0.0 && s.obstacle.width > 0.0 && s.obstacle.visibility >= 0.0) {
            return Err(cfg_err("scenario.obstacle needs positive size and non-negative visibility"));
        }
        if !(self.ci.epsilon_fraction >= 0.0) || self.ci.window == 0 {
            return Err(cfg_err("ci.epsilon_fraction must be >= 0 and ci.window positive"));
        }
        if !(self.theory.lambda.is_finite() && self.theory.v0 > 0.0) {
            return Err(cfg_err("theory.lambda must be finite and theory.v0 positive"));
        }
        Ok(())
    }

    pub fn du_max(&self) -> [f64; 2] {
        self.mpc.du_max.unwrap_or([30.0, PI / 30.0 * self.plant.ts])
    }

    pub fn mpc_problem(&self) -> Result<MpcProblem> {
        let m = &self.mpc;
        let q = Matrix4::from_diagonal(&Vector4::from(m.q_diag));
        let r = Matrix2::from_diagonal(&Vector2::from(m.r_diag));
        let u_ref = self.plant.reference_input().to_vector();
        Ok(MpcProblem {
            np: m.np,
            nc: m.nc,
            q,
            r,
            u_max: m.u_max,
            du_max: self.du_max(),
            x_ref: Vector4::from(m.x_ref),
            u_ref,
        })
    }

    pub fn control_setup(&self) -> Result<ControlSetup> {
        Ok(ControlSetup {
            problem: self.mpc_problem()?,
            plant: self.plant,
            tau: self.game.tau,
        })
    }

    pub fn scenario(&self) -> ScenarioSpec {
        let s = &self.scenario;
        ScenarioSpec {
            road: s.road,
            obstacle: s.obstacle,
            margins: SafetyMargins {
                lateral: s.margin_lateral,
                longitudinal: s.margin_longitudinal.unwrap_or(0.25 * self.plant.length),
            },
            start: VehicleState::new(s.start[0], s.start[1], s.start[2], s.start[3]),
            warmup_steps: self.game.warmup_steps,
            max_steps: self.game.max_steps,
            v_target: self.game.v_target,
        }
    }

    pub fn rates(&self) -> LearningRates {
        LearningRates {
            actor: self.learning.actor_lr,
            critic: self.learning.critic_lr,
            td_discount: self.learning.td_discount,
        }
    }

    pub fn train_spec(&self, j0: Option<f64>) -> TrainSpec {
        TrainSpec {
            n1: self.population.n1,
            n2: self.population.n2,
            rho_s: self.population.rho_s,
            role_period: self.game.role_period,
            gamma: self.game.gamma,
            rates: self.rates(),
            episodes: self.game.episodes,
            seed: self.seed,
            d_min: self.graph.d_min,
            d_max: self.graph.d_max,
            graph_refresh: self.graph.refresh,
            init_logits: self.learning.init_logits,
            init_critic: self.learning.init_critic,
            ci: CiCriterion {
                j0,
                epsilon_fraction: self.ci.epsilon_fraction,
                window: self.ci.window,
            },
            checkpoint_every: self.learning.checkpoint_every,
        }
    }

    /// Mode values for the jump-system analysis.
    pub fn mode_gammas(&self) -> Result<[[f64; 3]; 2]> {
        if let Some(g) = self.theory.gammas {
            return Ok(g);
        }
        match self.theory.modes {
            ModeSource::Printed => Ok(PRINTED_GAMMAS),
            ModeSource::Derived => {
                let (s1, s2) = build_error_subsystems(self.theory.v0, &self.plant, self.theory.lambda)?;
                Ok(mode_table([&s1, &s2], self.theory.plus_targets, self.game.tau)?.gammas)
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, path: &[&str], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| cfg_err("empty override key"))?;
    let mut node = root;
    for p in parents {
        node = node
            .as_table_mut()
            .ok_or_else(|| cfg_err(format!("`{p}` is not a section")))?
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| cfg_err(format!("cannot set `{}`", path.join("."))))?;
    table.insert(last.to_string(), value);
    Ok(())
}
