use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use contention::GameSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Base,
    Quantized,
    Noisy,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Trd,
    NoiseRobust,
    Aggregate,
    Quantized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Symmetric Nash bargaining target.
    Nbs,
    /// Weighted Nash bargaining target (weights default to k).
    Weighted,
    /// Equal-payoff target.
    Egalitarian,
}

/// Every tunable of every command. The same struct is read from `--config`
/// files and from flags; flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Population sizes (comma separated); the first is used by single-game commands.
    #[arg(long, value_delimiter = ',', global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    /// Valuations: `ones`, `ramp` (k_i = i) or a comma-separated list.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<String>,
    /// Target profile, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    /// Strategy profile (start of dynamics, simulated profile, profile to verify).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<f64>>,
    /// Weights for the weighted bargaining target.
    #[arg(long, value_delimiter = ',', global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Number of quantization intervals.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    /// Observation noise half-width.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// TRD offset (defaults to n).
    #[arg(long, allow_negative_numbers = true, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    /// Manager transmission probability during simulation.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[arg(long, value_enum, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Grid points per axis for region exports.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[arg(long, value_enum, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleKind>,
    #[arg(long, value_enum, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<TargetKind>,
    /// Step limit for dynamics.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_t: Option<usize>,
    /// Iteration limit for the target solver.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Convergence tolerance.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(mut self, flags: &RunConfig) -> Self {
        overlay!(
            self, flags, n, k, target, profile, weights, m, epsilon, offset, p0, slots, seed, threads, out, format,
            mode, points, rule, kind, max_t, max_iter, tol
        );
        self
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    /// Size of the single game a command works on: the length of an explicit
    /// valuation list or profile, else the first `--n`.
    pub fn game_size(&self) -> Option<usize> {
        if let Some(list) = self.k.as_deref().and_then(|k| parse_list(k).ok()) {
            return Some(list.len());
        }
        self.target
            .as_ref()
            .or(self.profile.as_ref())
            .map(Vec::len)
            .or_else(|| self.n.as_ref().and_then(|v| v.first().copied()))
    }

    pub fn spec(&self) -> Result<GameSpec> {
        let n = self.game_size().context("cannot infer the number of users; pass --n")?;
        let spec = match self.k.as_deref().unwrap_or("ones") {
            "ones" => GameSpec::homogeneous(n)?,
            "ramp" => GameSpec::ramp(n)?,
            list => GameSpec::new(parse_list(list)?)?,
        };
        for (name, v) in [("target", &self.target), ("profile", &self.profile)] {
            if let Some(v) = v {
                if v.len() != spec.n() {
                    bail!(contention::Error::param(format!(
                        "--{name} has {} entries but the game has {} users",
                        v.len(),
                        spec.n()
                    )));
                }
            }
        }
        Ok(spec)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| contention::Error::param(format!("cannot parse valuation list `{s}`")).into())
        })
        .collect()
}
