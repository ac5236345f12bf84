//! `contention` command-line tool.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use contention::equilibrium::{
    find_unilateral_deviation, is_nash_intervened, is_stackelberg, EquilibriumVerdict, Witness,
};
use contention::game::{is_nash_base, payoff, utilization, write_region_csv};
use contention::intervention::intervened_payoff;
use contention::observation::{estimate_probabilities, simulate, OutcomeCounts};
use contention::region::{region, RegionMode};
use contention::report::{render_table1, render_table2, table1, table2, target_statistics};
use contention::targets::{
    egalitarian_target, nash_bargaining_target, nonsymmetric_nash_target, BargainingProblem, SolverConfig,
};
use contention::{dynamics, Error, GameSpec, InterventionRule};

use config::{Format, Mode, RuleKind, RunConfig, TargetKind};

#[derive(Parser)]
#[command(name = "contention", version, about = "Contention game solver and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Homogeneous users at the symmetric target.
    Table1,
    /// Heterogeneous users (k_i = i) under three targets.
    Table2,
    /// Export achievable payoff points for an observation mode.
    Region,
    /// Run the adjustment process from a second-class equilibrium.
    Dynamics,
    /// Simulate slots and estimate transmission probabilities.
    Simulate,
    /// Check a profile against an intervention rule.
    Verify,
    /// Payoffs of a profile, optionally under TRD intervention.
    Payoff,
    /// Compute a target profile.
    Target,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Table1 => "table1",
            Command::Table2 => "table2",
            Command::Region => "region",
            Command::Dynamics => "dynamics",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Payoff => "payoff",
            Command::Target => "target",
        }
    }
}

/// Some rows of a table could not be computed.
#[derive(Debug)]
struct SolverFailure(String);

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for SolverFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonConvergence { .. } => 3,
                Error::EstimationUndefined { .. } => 4,
                _ => 2,
            };
        }
        if cause.is::<SolverFailure>() {
            return 3;
        }
    }
    1
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::param(format!("--{flag} is required")).into())
}

/// Fills command defaults so the emitted config shows every value used.
fn resolve(cmd: Command, mut c: RunConfig) -> RunConfig {
    c.format.get_or_insert(Format::Csv);
    match cmd {
        Command::Table1 | Command::Table2 => {
            c.n.get_or_insert_with(|| vec![3, 10, 100]);
        }
        Command::Region => {
            let mode = *c.mode.get_or_insert(Mode::Base);
            if c.game_size().is_none() {
                c.n = Some(vec![2]);
            }
            c.k.get_or_insert_with(|| "ones".into());
            c.points.get_or_insert(101);
            match mode {
                Mode::Quantized => {
                    c.m.get_or_insert(5);
                }
                Mode::Noisy => {
                    c.epsilon.get_or_insert(0.1);
                }
                _ => {}
            }
        }
        Command::Dynamics => {
            c.k.get_or_insert_with(|| "ones".into());
            c.max_t.get_or_insert(60);
            c.tol.get_or_insert(1e-12);
        }
        Command::Simulate => {
            c.k.get_or_insert_with(|| "ones".into());
            c.p0.get_or_insert(0.0);
            c.slots.get_or_insert(1_000_000);
            c.seed.get_or_insert(0);
        }
        Command::Verify => {
            c.k.get_or_insert_with(|| "ones".into());
            c.rule.get_or_insert(RuleKind::Trd);
            if c.profile.is_none() {
                c.profile = c.target.clone();
            }
        }
        Command::Payoff => {
            c.k.get_or_insert_with(|| "ones".into());
        }
        Command::Target => {
            c.k.get_or_insert_with(|| "ones".into());
            let kind = *c.kind.get_or_insert(TargetKind::Nbs);
            if kind == TargetKind::Egalitarian {
                let d = SolverConfig::default();
                c.tol.get_or_insert(d.tol);
                c.max_iter.get_or_insert(d.max_iter);
            }
        }
    }
    c
}

#[derive(Serialize)]
struct Resolved<'a> {
    command: &'a str,
    #[serde(flatten)]
    config: &'a RunConfig,
}

struct Ctx<'a> {
    command: &'a str,
    cfg: &'a RunConfig,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Ctx<'_> {
    fn resolved(&self) -> Resolved<'_> {
        Resolved {
            command: self.command,
            config: self.cfg,
        }
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.cfg.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    /// Writes a JSON document alongside the main output: a sidecar file
    /// when `--out` is set, stderr otherwise.
    fn side<T: Serialize>(&self, suffix: &str, label: &str, value: &T) -> Result<()> {
        match &self.cfg.out {
            Some(p) => {
                let path = sidecar(p, suffix);
                std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            None => eprintln!("{label}: {}", serde_json::to_string(value)?),
        }
        Ok(())
    }

    fn emit_csv(&self, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
        let mut sink = self.sink()?;
        write(&mut sink)?;
        sink.flush()?;
        self.side(".config.json", "config", &self.resolved())
    }

    fn emit_json<T: Serialize>(&self, result: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            config: Resolved<'a>,
            result: &'a T,
        }
        let mut sink = self.sink()?;
        serde_json::to_writer_pretty(
            &mut sink,
            &Doc {
                config: self.resolved(),
                result,
            },
        )?;
        writeln!(sink)?;
        sink.flush()?;
        Ok(())
    }

    fn emit<T: Serialize>(&self, result: &T, csv: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
        match self.cfg.format() {
            Format::Json => self.emit_json(result),
            Format::Csv => self.emit_csv(csv),
        }
    }
}

fn solver(c: &RunConfig) -> SolverConfig {
    let d = SolverConfig::default();
    SolverConfig {
        tol: c.tol.unwrap_or(d.tol),
        max_iter: c.max_iter.unwrap_or(d.max_iter),
    }
}

fn cmd_table1(ctx: &Ctx) -> Result<()> {
    let rows = table1(&need(&ctx.cfg.n, "n")?)?;
    ctx.emit(&rows, |w| w.write_all(render_table1(&rows).as_bytes()))
}

fn cmd_table2(ctx: &Ctx) -> Result<()> {
    let rows = table2(&need(&ctx.cfg.n, "n")?, solver(ctx.cfg))?;
    ctx.emit(&rows, |w| w.write_all(render_table2(&rows).as_bytes()))?;
    let failed: Vec<String> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} n={}: {e}", r.target.label(), r.n)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(SolverFailure(failed.join("; ")).into())
    }
}

fn cmd_region(ctx: &Ctx) -> Result<()> {
    let c = ctx.cfg;
    let spec = c.spec()?;
    let mode = match need(&c.mode, "mode")? {
        Mode::Base => RegionMode::Base,
        Mode::Quantized => RegionMode::Quantized { m: need(&c.m, "m")? },
        Mode::Noisy => RegionMode::Noisy {
            epsilon: need(&c.epsilon, "epsilon")?,
        },
        Mode::Aggregate => RegionMode::Aggregate,
    };
    let samples = region(&spec, mode, need(&c.points, "points")?)?;
    ctx.emit(&samples, |w| write_region_csv(w, spec.n(), &samples))
}

fn cmd_dynamics(ctx: &Ctx) -> Result<()> {
    let c = ctx.cfg;
    let spec = c.spec()?;
    let trace = dynamics::run_dynamics(
        &spec,
        &need(&c.target, "target")?,
        &need(&c.profile, "profile")?,
        need(&c.max_t, "max-t")?,
        need(&c.tol, "tol")?,
    )?;
    for v in &trace.violations {
        eprintln!("warning: convergence not guaranteed: {v}");
    }
    ctx.emit(&trace, |w| trace.write_csv(w))
}

#[derive(Serialize)]
struct SimulationResult {
    slots: usize,
    seed: u64,
    counts: OutcomeCounts,
    estimate: Option<contention::observation::EstimateReport>,
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let c = ctx.cfg;
    let spec = c.spec()?;
    let trace = simulate(
        &spec,
        &need(&c.profile, "profile")?,
        need(&c.p0, "p0")?,
        need(&c.slots, "slots")?,
        need(&c.seed, "seed")?,
    )?;
    let estimate = estimate_probabilities(&trace, spec.n());
    let result = SimulationResult {
        slots: trace.slot_count(),
        seed: trace.rng_seed,
        counts: trace.counts(),
        estimate: estimate.as_ref().ok().cloned(),
    };
    match c.format() {
        Format::Json => ctx.emit_json(&result)?,
        Format::Csv => {
            ctx.emit_csv(|w| trace.write_csv(w))?;
            if let Ok(report) = &estimate {
                ctx.side(".estimate.json", "estimate", report)?;
            }
        }
    }
    estimate.map(|_| ()).map_err(Into::into)
}

fn build_rule(c: &RunConfig, spec: &GameSpec) -> Result<InterventionRule> {
    let target = need(&c.target, "target")?;
    Ok(match need(&c.rule, "rule")? {
        RuleKind::Trd => match c.offset {
            Some(offset) => InterventionRule::trd_with_offset(target, offset)?,
            None => InterventionRule::trd(target)?,
        },
        RuleKind::NoiseRobust => InterventionRule::noise_robust(target, need(&c.epsilon, "epsilon")?)?,
        RuleKind::Quantized => InterventionRule::quantized(target, need(&c.m, "m")?)?,
        RuleKind::Aggregate => {
            if target.iter().any(|t| *t != target[0]) {
                return Err(Error::param("the aggregate rule needs a symmetric target").into());
            }
            InterventionRule::aggregate(target[0], spec.n())?
        }
    })
}

#[derive(Serialize)]
struct VerifyResult {
    rule: InterventionRule,
    stackelberg: bool,
    /// Closed-form classification, available for plain TRD.
    verdict: Option<EquilibriumVerdict>,
    unilateral_deviation: Option<Witness>,
}

fn cmd_verify(ctx: &Ctx) -> Result<()> {
    let c = ctx.cfg;
    let spec = c.spec()?;
    let rule = build_rule(c, &spec)?;
    let profile = need(&c.profile, "profile")?;
    let stackelberg = is_stackelberg(&spec, &rule, &profile)?;
    let plain = matches!(&rule, InterventionRule::Trd { offset, .. } if *offset == spec.n() as f64);
    let (verdict, unilateral_deviation) = if plain {
        let v = is_nash_intervened(&spec, &rule.target_profile(), &profile)?;
        let w = v.witness.clone();
        (Some(v), w)
    } else {
        (None, find_unilateral_deviation(&spec, &rule, &profile)?)
    };
    let result = VerifyResult {
        rule,
        stackelberg,
        verdict,
        unilateral_deviation,
    };
    ctx.emit(&result, |w| {
        writeln!(
            w,
            "stackelberg,class,witness_user,witness_deviation,payoff_before,payoff_after"
        )?;
        let class = result
            .verdict
            .as_ref()
            .map(|v| {
                serde_json::to_value(v.class)
                    .expect("enum")
                    .as_str()
                    .unwrap_or_default()
                    .to_string()
            })
            .unwrap_or_default();
        match &result.unilateral_deviation {
            Some(x) => writeln!(
                w,
                "{},{class},{},{},{},{}",
                result.stackelberg,
                x.user + 1,
                x.deviation,
                x.payoff_before,
                x.payoff_after
            ),
            None => writeln!(w, "{},{class},,,,", result.stackelberg),
        }
    })
}

#[derive(Serialize)]
struct PayoffResult {
    payoff: Vec<f64>,
    utilization: f64,
    nash_without_manager: bool,
    intervention_level: Option<f64>,
    intervened_payoff: Option<Vec<f64>>,
}

fn cmd_payoff(ctx: &Ctx) -> Result<()> {
    let c = ctx.cfg;
    let spec = c.spec()?;
    let p = need(&c.profile, "profile")?;
    let base = payoff(&spec, &p)?;
    let (level, intervened) = match &c.target {
        Some(t) => {
            let rule = match c.offset {
                Some(o) => InterventionRule::trd_with_offset(t.clone(), o)?,
                None => InterventionRule::trd(t.clone())?,
            };
            (Some(rule.evaluate(&p)?), Some(intervened_payoff(&spec, &rule, &p)?.0))
        }
        None => (None, None),
    };
    let result = PayoffResult {
        payoff: base.0,
        utilization: utilization(&p),
        nash_without_manager: is_nash_base(&p),
        intervention_level: level,
        intervened_payoff: intervened,
    };
    ctx.emit(&result, |w| {
        write!(w, "user,k,p,payoff")?;
        if result.intervened_payoff.is_some() {
            write!(w, ",intervened_payoff")?;
        }
        writeln!(w)?;
        for i in 0..p.len() {
            write!(w, "{},{},{},{}", i + 1, spec.k()[i], p[i], result.payoff[i])?;
            if let Some(u) = &result.intervened_payoff {
                write!(w, ",{}", u[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct TargetResult {
    profile: Vec<f64>,
    statistics: contention::report::Table2Values,
}

fn cmd_target(ctx: &Ctx) -> Result<()> {
    let c = ctx.cfg;
    let spec = c.spec()?;
    let problem = BargainingProblem::new(spec.clone());
    let profile = match need(&c.kind, "kind")? {
        TargetKind::Nbs => nash_bargaining_target(&problem)?,
        TargetKind::Weighted => {
            let w = c.weights.clone().unwrap_or_else(|| spec.k().to_vec());
            nonsymmetric_nash_target(&problem.with_weights(w)?)?
        }
        TargetKind::Egalitarian => egalitarian_target(&spec, solver(c))?,
    };
    let result = TargetResult {
        statistics: target_statistics(&spec, &profile)?,
        profile: profile.into_vec(),
    };
    ctx.emit(&result, |w| {
        writeln!(w, "user,k,p")?;
        for (i, p) in result.profile.iter().enumerate() {
            writeln!(w, "{},{},{}", i + 1, spec.k()[i], p)?;
        }
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Error::param(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let cfg = resolve(cli.command, file.overlay(&cli.flags));
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::param("--threads must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let ctx = Ctx {
        command: cli.command.name(),
        cfg: &cfg,
    };
    match cli.command {
        Command::Table1 => cmd_table1(&ctx),
        Command::Table2 => cmd_table2(&ctx),
        Command::Region => cmd_region(&ctx),
        Command::Dynamics => cmd_dynamics(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Verify => cmd_verify(&ctx),
        Command::Payoff => cmd_payoff(&ctx),
        Command::Target => cmd_target(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
