//! Text artifacts: CSV tables, JSON-lines trajectories, JSON summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! runs produce byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, ScgError};
use crate::marl::{Population, FEATURE_DIM};
use crate::mjls::SweepCell;
use crate::scg::{EpisodeRecord, EpisodeSummary};

pub const SWEEP_HEADER: &str = "N1,rho_s,sigma1,sigma2,mss1,mss2,ci";
pub const CURVES_HEADER: &str = "episode,return,mean_pi1_group1,mean_pi1_group2";
pub const POLICIES_HEADER: &str = "episode,agent,group,pi1";

pub fn checkpoint_header() -> String {
    let mut h = String::from("agent,group,rho_s,theta_1,theta_2");
    for i in 0..FEATURE_DIM {
        h.push_str(&format!(",omega_{i}"));
    }
    h
}

pub fn write_sweep_csv<W: Write>(mut out: W, cells: &[SweepCell]) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.n1, c.rho_s, c.sigma1, c.sigma2, c.mss1 as u8, c.mss2 as u8, c.ci as u8
        )?;
    }
    Ok(())
}

pub fn write_curves_csv<W: Write>(mut out: W, curves: &[EpisodeSummary]) -> Result<()> {
    writeln!(out, "{CURVES_HEADER}")?;
    for c in curves {
        writeln!(out, "{},{},{},{}", c.episode, c.episode_return, c.mean_pi1[0], c.mean_pi1[1])?;
    }
    Ok(())
}

/// Long format: one row per episode and agent.
pub fn write_policies_csv<W: Write>(mut out: W, history: &[Vec<f64>], pop: &Population) -> Result<()> {
    writeln!(out, "{POLICIES_HEADER}")?;
    for (e, probs) in history.iter().enumerate() {
        for (a, p) in pop.agents.iter().zip(probs) {
            writeln!(out, "{},{},{},{}", e, a.id, a.group.number(), p)?;
        }
    }
    Ok(())
}

pub fn write_checkpoint_csv<W: Write>(mut out: W, pop: &Population) -> Result<()> {
    writeln!(out, "{}", checkpoint_header())?;
    for a in &pop.agents {
        write!(out, "{},{},{},{},{}", a.id, a.group.number(), a.rho_s, a.theta[0], a.theta[1])?;
        for w in &a.omega {
            write!(out, ",{w}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// One JSON object per simulated step.
pub fn write_trajectory_jsonl<W: Write>(mut out: W, record: &EpisodeRecord) -> Result<()> {
    for step in &record.trajectory {
        serde_json::to_writer(&mut out, step).map_err(|e| ScgError::Serde(e.to_string()))?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| ScgError::Serde(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Output directory of one command invocation.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, text)?;
        Ok(p)
    }

    /// Writes through a buffered file handle.
    pub fn write_with<F>(&self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(&p)?);
        f(&mut w)?;
        w.flush()?;
        Ok(p)
    }
}
