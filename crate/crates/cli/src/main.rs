//! `scg`: command-line front end of the shared-control game lab.
//!
//! Every command resolves a [`RunConfig`] (preset or file, then `--set`
//! overrides), writes it as `config.toml` into its output directory and
//! only then starts computing, so any run can be repeated from its snapshot.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use scg_core::config::{ModeSource, Preset, RunConfig};
use scg_core::control::Variant;
use scg_core::graph::{consensus_weights, random_connected_graph};
use scg_core::mjls::{
    ci_region_sweep, census_verdicts, scalar_mss_closed_form, summarize_boundary, transition_row, Assignment,
    BoundarySummary, InputElement, RoleCensus, SweepSpec,
};
use scg_core::persist::{
    to_pretty_json, write_checkpoint_csv, write_curves_csv, write_policies_csv, write_sweep_csv,
    write_trajectory_jsonl, RunDir,
};
use scg_core::rng::{stream, Purpose};
use scg_core::scg::{baseline_run, train, EpisodeOutcome};
use scg_core::ScgError;

#[derive(Parser)]
#[command(name = "scg", version, about = "Shared-control game lab: MJLS analysis, role learning and MPC simulation")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Built-in configuration (case1, case2, case3, desk).
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<Preset>,
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `mpc.np=80`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Output root; each command writes into `<out>/<command>`.
    #[arg(long, global = true, env = "SCG_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Single-variant MPC runs (undelayed and delayed) and the reference return J0.
    Baseline,
    /// Consensus actor-critic training of the whole population.
    Train,
    /// Mode values, transition rows and mean-square stability of one census.
    Mjls(MjlsArgs),
    /// CI region over a grid of group-1 sizes and social powers.
    Sweep(SweepArgs),
    /// Sample communication graphs and check their consensus weights.
    GraphGen(GraphArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModesArg {
    Printed,
    Derived,
}

#[derive(Args)]
struct MjlsArgs {
    /// Mode values to analyse.
    #[arg(long, value_enum)]
    modes: Option<ModesArg>,
    /// Explicit modes: throttle zero,minus,plus then steering zero,minus,plus.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    gammas: Option<Vec<f64>>,
    /// Census counts n11,n12,n21,n22 (default: post-division-of-labour census).
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    census: Option<Vec<f64>>,
    /// Group-1 throttle probability for an expected mixed census.
    #[arg(long, requires = "m", conflicts_with = "census")]
    q: Option<f64>,
    /// Group-2 throttle probability for an expected mixed census.
    #[arg(long, requires = "q")]
    m: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Analytic,
    Learned,
}

#[derive(Args)]
struct SweepArgs {
    /// Group-1 sizes as `start:end:step` or a single value.
    #[arg(long, default_value = "0:90:10")]
    n1: String,
    /// Social powers as `start:end:step` or a single value.
    #[arg(long, default_value = "4:8:0.5")]
    rho: String,
    #[arg(long, value_enum, default_value = "analytic")]
    mode: SweepMode,
    /// Worker threads for the grid cells.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct GraphArgs {
    /// Node count (default: whole population).
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ScgError> for Failure {
    fn from(e: ScgError) -> Self {
        match e {
            ScgError::Config(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn resolve_config(common: &CommonArgs) -> CmdResult<RunConfig> {
    let base = match (&common.config, common.preset) {
        (Some(path), _) => RunConfig::load(path).map_err(config_error)?,
        (None, Some(p)) => RunConfig::preset(p),
        (None, None) => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.overrides).map_err(config_error)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.episodes {
        cfg.game.episodes = e;
    }
    cfg.validate().map_err(config_error)?;
    cfg.control_setup().map_err(config_error)?;
    Ok(cfg)
}

fn open_dir(common: &CommonArgs, name: &str, cfg: &RunConfig) -> CmdResult<RunDir> {
    let dir = RunDir::create(common.out.join(name))?;
    dir.write_text("config.toml", &cfg.to_toml_string()?)?;
    Ok(dir)
}

#[derive(Serialize)]
struct BaselineReport {
    j0: f64,
    plus: EpisodeOutcome,
    minus: EpisodeOutcome,
}

fn cmd_baseline(common: &CommonArgs) -> CmdResult {
    let cfg = resolve_config(common)?;
    let dir = open_dir(common, "baseline", &cfg)?;
    let scenario = cfg.scenario();
    let setup = cfg.control_setup()?;
    let plus = baseline_run(Variant::Plus, &scenario, &setup, cfg.game.role_period, cfg.game.gamma)?;
    let minus = baseline_run(Variant::Minus, &scenario, &setup, cfg.game.role_period, cfg.game.gamma)?;
    dir.write_with("baseline_plus.jsonl", |w| write_trajectory_jsonl(w, &plus))?;
    dir.write_with("baseline_minus.jsonl", |w| write_trajectory_jsonl(w, &minus))?;
    let report = BaselineReport { j0: plus.episode_return, plus: plus.outcome(), minus: minus.outcome() };
    dir.write_text("baseline.json", &to_pretty_json(&report)?)?;
    for (name, o) in [("k+", &report.plus), ("k-", &report.minus)] {
        println!(
            "{name}: {:?} after {} steps, R1 {:.3}, return {:.3}, max violation {:.3e}",
            o.terminal_event, o.steps, o.r1_total, o.episode_return, o.max_violation
        );
    }
    println!("J0 = {:.6}", report.j0);
    println!("wrote {}", dir.root().display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    j0: f64,
    episodes_completed: usize,
    final_mean_pi1: Option<[f64; 2]>,
    final_smoothed_return: Option<f64>,
    final_ci: Option<bool>,
    aborted: Option<String>,
}

fn cmd_train(common: &CommonArgs) -> CmdResult {
    let cfg = resolve_config(common)?;
    let dir = open_dir(common, "train", &cfg)?;
    let scenario = cfg.scenario();
    let setup = cfg.control_setup()?;
    let j0 = baseline_run(Variant::Plus, &scenario, &setup, cfg.game.role_period, cfg.game.gamma)?.episode_return;
    let out = train(&cfg.train_spec(Some(j0)), &scenario, &setup)?;
    dir.write_with("curves.csv", |w| write_curves_csv(w, &out.curves))?;
    dir.write_with("policies.csv", |w| write_policies_csv(w, &out.policy_history, &out.population))?;
    for (ep, pop) in &out.checkpoints {
        dir.write_with(&format!("checkpoints/checkpoint_{ep:05}.csv"), |w| write_checkpoint_csv(w, pop))?;
    }
    if let Some(r) = &out.first_record {
        dir.write_with("trajectory_first.jsonl", |w| write_trajectory_jsonl(w, r))?;
    }
    if let Some(r) = &out.last_record {
        dir.write_with("trajectory_last.jsonl", |w| write_trajectory_jsonl(w, r))?;
    }
    let last = out.curves.last();
    let report = TrainReport {
        j0,
        episodes_completed: out.curves.len(),
        final_mean_pi1: last.map(|c| c.mean_pi1),
        final_smoothed_return: last.map(|c| c.smoothed_return),
        final_ci: out.final_ci(),
        aborted: out.aborted.clone(),
    };
    dir.write_text("summary.json", &to_pretty_json(&report)?)?;
    if let Some(c) = last {
        println!(
            "episode {}: smoothed return {:.3} (J0 {:.3}), mean pi(1) group 1 {:.3}, group 2 {:.3}, CI {:?}",
            c.episode, c.smoothed_return, j0, c.mean_pi1[0], c.mean_pi1[1], c.ci
        );
    } else {
        println!("no episodes run (J0 {j0:.3})");
    }
    println!("wrote {}", dir.root().display());
    match out.aborted {
        Some(msg) => Err(Failure::Runtime(anyhow!("training aborted: {msg}"))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct ElementReport {
    element: u8,
    modes: [f64; 3],
    row: [f64; 3],
    sigma: f64,
    sigma_closed_form: f64,
    stable: bool,
}

#[derive(Serialize)]
struct MjlsReport {
    census: RoleCensus,
    elements: Vec<ElementReport>,
    ci: bool,
}

fn cmd_mjls(common: &CommonArgs, args: &MjlsArgs) -> CmdResult {
    let mut cfg = resolve_config(common)?;
    match args.modes {
        Some(ModesArg::Printed) => cfg.theory.modes = ModeSource::Printed,
        Some(ModesArg::Derived) => cfg.theory.modes = ModeSource::Derived,
        None => {}
    }
    if let Some(g) = &args.gammas {
        if g.len() != 6 {
            return Err(config_error(anyhow!("--gammas takes 6 values, got {}", g.len())));
        }
        cfg.theory.gammas = Some([[g[0], g[1], g[2]], [g[3], g[4], g[5]]]);
    }
    cfg.validate().map_err(config_error)?;
    let gammas = cfg.mode_gammas().map_err(config_error)?;
    let (n1, n2) = (cfg.population.n1 as f64, cfg.population.n2 as f64);
    let (rho, k) = (cfg.population.rho_s, cfg.game.role_period);
    let census = match (&args.census, args.q.zip(args.m)) {
        (Some(c), _) => {
            if c.len() != 4 {
                return Err(config_error(anyhow!("--census takes 4 counts, got {}", c.len())));
            }
            RoleCensus { n11: c[0], n12: c[1], n21: c[2], n22: c[3], rho_s: rho, k }
        }
        (None, Some((q, m))) => Assignment::Mixed { q, m }.census(n1, n2, rho, k),
        (None, None) => Assignment::PostDol.census(n1, n2, rho, k),
    };
    census.validate().map_err(config_error)?;
    let dir = open_dir(common, "mjls", &cfg)?;
    let verdicts = census_verdicts(&census, &gammas)?;
    let mut elements = Vec::new();
    for e in InputElement::ALL {
        let row = transition_row(&census, e)?;
        let modes = gammas[e.index()];
        let v = verdicts[e.index()];
        elements.push(ElementReport {
            element: e.number(),
            modes,
            row,
            sigma: v.sigma,
            sigma_closed_form: scalar_mss_closed_form(&row, &modes),
            stable: v.stable,
        });
    }
    let report = MjlsReport { census, ci: elements.iter().all(|e| e.stable), elements };
    dir.write_text("mjls.json", &to_pretty_json(&report)?)?;
    println!(
        "census n11={} n12={} n21={} n22={} rho_s={} K={}",
        census.n11, census.n12, census.n21, census.n22, census.rho_s, census.k
    );
    for e in &report.elements {
        println!(
            "element {}: modes {:?} row [{:.4}, {:.4}, {:.4}] sigma {:.6} -> {}",
            e.element,
            e.modes,
            e.row[0],
            e.row[1],
            e.row[2],
            e.sigma,
            if e.stable { "mean-square stable" } else { "not mean-square stable" }
        );
    }
    println!("collective intelligence: {}", report.ci);
    Ok(())
}

/// Parses `start:end:step` (inclusive) or a single value.
fn parse_range(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number `{p}` in range `{text}`")))
        .collect::<anyhow::Result<_>>()?;
    match parts.as_slice() {
        [v] => Ok(vec![*v]),
        [start, end, step] => {
            if !(*step > 0.0) || end < start {
                return Err(anyhow!("range `{text}` is empty"));
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(anyhow!("range `{text}` must be `start:end:step` or a single value")),
    }
}

fn parse_counts(text: &str) -> anyhow::Result<Vec<usize>> {
    parse_range(text)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(anyhow!("group size {v} is not a non-negative integer"))
            }
        })
        .collect()
}

#[derive(Serialize)]
struct ReferenceBoundary {
    form: &'static str,
    n1_slope: f64,
    n1_intercept: f64,
}

#[derive(Serialize)]
struct SweepReport {
    n2: usize,
    k: usize,
    gammas: [[f64; 3]; 2],
    fitted: BoundarySummary,
    reference: ReferenceBoundary,
}

const REFERENCE: ReferenceBoundary = ReferenceBoundary {
    form: "rho_s >= -0.1 * N1 + 10",
    n1_slope: -10.0,
    n1_intercept: 100.0,
};

struct LearnedCell {
    n1: usize,
    rho_s: f64,
    final_return: f64,
    smoothed_return: f64,
    mean_pi1: [f64; 2],
    ci: bool,
}

fn cmd_sweep(common: &CommonArgs, args: &SweepArgs) -> CmdResult {
    let cfg = resolve_config(common)?;
    let n1_values = parse_counts(&args.n1).map_err(config_error)?;
    let rho_values = parse_range(&args.rho).map_err(config_error)?;
    if rho_values.iter().any(|r| !(*r >= 1.0)) {
        return Err(config_error(anyhow!("social powers must be at least 1")));
    }
    let gammas = cfg.mode_gammas().map_err(config_error)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(config_error(anyhow!("--jobs must be positive")));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().context("building worker pool")?;
    let dir = open_dir(common, "sweep", &cfg)?;
    let spec = SweepSpec {
        n1_values: n1_values.clone(),
        rho_values: rho_values.clone(),
        n2: cfg.population.n2,
        k: cfg.game.role_period,
        gammas,
        assignment: Assignment::PostDol,
    };
    let cells = pool.install(|| ci_region_sweep(&spec))?;
    dir.write_with("sweep.csv", |w| write_sweep_csv(w, &cells))?;
    let report = SweepReport {
        n2: spec.n2,
        k: spec.k,
        gammas,
        fitted: summarize_boundary(&cells, spec.n2, spec.k),
        reference: REFERENCE,
    };
    dir.write_text("boundary.json", &to_pretty_json(&report)?)?;
    println!("analytic grid: {} cells, {} CI", cells.len(), cells.iter().filter(|c| c.ci).count());
    if let (Some(s), Some(b)) = (report.fitted.slope, report.fitted.intercept) {
        println!("fitted boundary: N1 = {s:.3} * rho_s + {b:.3} (reference: N1 = -10 * rho_s + 100)");
    }

    if let SweepMode::Learned = args.mode {
        let grid: Vec<(usize, f64)> =
            n1_values.iter().flat_map(|&n| rho_values.iter().map(move |&r| (n, r))).collect();
        let learned: Vec<LearnedCell> = pool.install(|| {
            grid.par_iter()
                .map(|&(n1, rho)| learned_cell(&cfg, n1, rho))
                .collect::<Result<_, ScgError>>()
        })?;
        dir.write_with("sweep_learned.csv", |w| {
            use std::io::Write;
            writeln!(w, "N1,rho_s,final_return,smoothed_return,mean_pi1_group1,mean_pi1_group2,ci")?;
            for c in &learned {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    c.n1, c.rho_s, c.final_return, c.smoothed_return, c.mean_pi1[0], c.mean_pi1[1], c.ci as u8
                )?;
            }
            Ok(())
        })?;
        println!("learned grid: {} cells, {} CI", learned.len(), learned.iter().filter(|c| c.ci).count());
    }
    println!("wrote {}", dir.root().display());
    Ok(())
}

fn learned_cell(cfg: &RunConfig, n1: usize, rho: f64) -> Result<LearnedCell, ScgError> {
    let mut cfg = cfg.clone();
    cfg.population.n1 = n1;
    cfg.population.rho_s = rho;
    let scenario = cfg.scenario();
    let setup = cfg.control_setup()?;
    let j0 = baseline_run(Variant::Plus, &scenario, &setup, cfg.game.role_period, cfg.game.gamma)?.episode_return;
    let out = train(&cfg.train_spec(Some(j0)), &scenario, &setup)?;
    let last = out.curves.last();
    Ok(LearnedCell {
        n1,
        rho_s: rho,
        final_return: last.map_or(f64::NAN, |c| c.episode_return),
        smoothed_return: last.map_or(f64::NAN, |c| c.smoothed_return),
        mean_pi1: last.map_or([f64::NAN; 2], |c| c.mean_pi1),
        ci: out.final_ci().unwrap_or(false),
    })
}

fn cmd_graph_gen(common: &CommonArgs, args: &GraphArgs) -> CmdResult {
    let cfg = resolve_config(common)?;
    let n = args.nodes.unwrap_or(cfg.population.n1 + cfg.population.n2);
    let d_max = cfg.graph.d_max.min(n.saturating_sub(1));
    let d_min = cfg.graph.d_min.min(d_max);
    let dir = open_dir(common, "graph-gen", &cfg)?;
    let mut summary = String::from("index,nodes,edges,min_degree,max_degree,connected,stochasticity_error\n");
    for i in 0..args.count {
        let mut rng = stream(cfg.seed, Purpose::Misc, &[i as u64]);
        let g = random_connected_graph(n, d_min, d_max, &mut rng)?;
        let w = consensus_weights(&g);
        let name = format!("graphs/graph_{i:04}.edges");
        dir.write_with(&name, |out| g.write_edge_list(out).map_err(ScgError::from))?;
        summary.push_str(&format!(
            "{i},{n},{},{},{},{},{:e}\n",
            g.edges().len(),
            g.min_degree(),
            g.max_degree(),
            g.is_connected() as u8,
            w.stochasticity_error()
        ));
    }
    dir.write_text("graphs.csv", &summary)?;
    println!("{} graph(s) on {n} nodes, degrees in [{d_min}, {d_max}]", args.count);
    println!("wrote {}", dir.root().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Baseline => cmd_baseline(&cli.common),
        Command::Train => cmd_train(&cli.common),
        Command::Mjls(a) => cmd_mjls(&cli.common, a),
        Command::Sweep(a) => cmd_sweep(&cli.common, a),
        Command::GraphGen(a) => cmd_graph_gen(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
