//! Command-line front end: configuration merging, dispatch and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use treeq::error::Error;
use treeq::experiments::*;
use treeq::gibbs::{IsingSystem, ModelParams};
use treeq::hardcore::{HCParams, HCSystem};
use treeq::spectral::{
    block_dynamics_gap, build_generator, build_hc_generator, logsob_upper_bound, spectral_gap_full,
};
use treeq::tree::{Boundary, TreeShape};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOGSOB_RESTARTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryArg {
    Plus,
    Minus,
    Free,
    Even,
    Odd,
}

impl BoundaryArg {
    pub fn boundary(self) -> Boundary {
        match self {
            BoundaryArg::Plus => Boundary::Plus,
            BoundaryArg::Minus => Boundary::Minus,
            BoundaryArg::Free => Boundary::Free,
            BoundaryArg::Even => Boundary::EvenBC,
            BoundaryArg::Odd => Boundary::OddBC,
        }
    }

    fn hardcore(self) -> bool {
        matches!(self, BoundaryArg::Even | BoundaryArg::Odd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RegimeArg {
    A,
    B,
    C,
}

/// Every setting of a run. Unset fields fall back to subcommand defaults.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[arg(skip)]
    pub subcommand: Option<String>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, value_enum)]
    pub boundary: Option<BoundaryArg>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    /// Number of evenly spaced probe times on [0, t-max].
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "TREEQ_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    /// Truncation constant c; depth = ⌈c·t-max⌉ when --depth is absent.
    #[arg(long)]
    pub truncation: Option<f64>,
    /// Distance weight for `contraction`.
    #[arg(long)]
    pub weight: Option<f64>,
    /// Sites flipped in the second start of `contraction`.
    #[arg(long, value_delimiter = ',')]
    pub flip: Option<Vec<usize>>,
    #[arg(long = "beta-min")]
    pub beta_min: Option<f64>,
    #[arg(long = "beta-max")]
    pub beta_max: Option<f64>,
    /// Grid size for `phase-diagram`.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

impl RunConfig {
    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            subcommand, b, beta, h, lambda, p, depth, boundary, t_max, probes, replicas, seed,
            workers, out, regime, truncation, weight, flip, beta_min, beta_max, points, tol
        )
    }
}

/// Flags and the optional config file for a subcommand.
#[derive(Parser, Debug)]
#[command(
    name = "treeq",
    version,
    about = "Glauber dynamics and Gibbs measures on regular trees"
)]
pub struct Invocation {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Subcommand, Debug)]
pub enum Sub {
    /// Ising deep quench from a Bernoulli(p) start.
    Quench(Flags),
    /// Hard-core deep quench from the two-stage law.
    HcQuench(Flags),
    /// Critical field h_c(β) over a grid of β.
    PhaseDiagram(Flags),
    /// Exact marginals from the tree recursion.
    Recursion(Flags),
    /// Exact spectral gap and a log-Sobolev upper bound.
    Gap(Flags),
    /// Block-dynamics gaps for every block radius.
    Blocks(Flags),
    /// Weighted Hamming contraction under the natural coupling.
    Contraction(Flags),
    /// Library self-checks against exhaustive oracles.
    Validate(Flags),
}

#[derive(Args, Debug)]
pub struct Flags {
    /// JSON file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

impl Sub {
    pub fn name(&self) -> &'static str {
        match self {
            Sub::Quench(_) => "quench",
            Sub::HcQuench(_) => "hc-quench",
            Sub::PhaseDiagram(_) => "phase-diagram",
            Sub::Recursion(_) => "recursion",
            Sub::Gap(_) => "gap",
            Sub::Blocks(_) => "blocks",
            Sub::Contraction(_) => "contraction",
            Sub::Validate(_) => "validate",
        }
    }

    fn flags(self) -> Flags {
        match self {
            Sub::Quench(f)
            | Sub::HcQuench(f)
            | Sub::PhaseDiagram(f)
            | Sub::Recursion(f)
            | Sub::Gap(f)
            | Sub::Blocks(f)
            | Sub::Contraction(f)
            | Sub::Validate(f) => f,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments; exit code 2.
    Usage(String),
    /// Failed run or failed validation; exit code 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        match e {
            Error::Param(m) => CliError::Usage(m),
            other => CliError::Failure(other.to_string()),
        }
    }
}

/// Resolve the effective configuration of an invocation.
pub fn resolve(sub: Sub) -> Result<RunConfig, CliError> {
    let name = sub.name().to_string();
    let flags = sub.flags();
    let base = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = &base.subcommand {
        if *s != name {
            return Err(CliError::Usage(format!(
                "config is for `{s}`, not `{name}`"
            )));
        }
    }
    let mut cfg = base.merged(flags.run);
    cfg.subcommand = Some(name);
    Ok(cfg)
}

/// What a finished run leaves behind.
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: serde_json::Value,
    /// Printed to stdout.
    pub message: String,
    pub passed: bool,
}

fn need<T: Copy>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn seeded(subcommand: &str) -> bool {
    matches!(subcommand, "quench" | "hc-quench" | "contraction" | "gap")
}

fn csv_file(name: &str, table: &Table) -> Result<(String, Vec<u8>), CliError> {
    Ok((name.to_string(), table.to_csv()?.into_bytes()))
}

fn spec_from(
    cfg: &RunConfig,
    model: ModelKind,
    default_p: f64,
) -> Result<ExperimentSpec, CliError> {
    let t_max = cfg.t_max.unwrap_or(10.0);
    let region = match (cfg.depth, cfg.truncation) {
        (Some(d), _) => RegionRule::Depth(d),
        (None, c) => RegionRule::Truncation {
            constant: c.unwrap_or(treeq::dynamics::DEFAULT_SAFETY_CONSTANT),
        },
    };
    let p = cfg.p.unwrap_or(default_p);
    Ok(ExperimentSpec {
        model,
        b: cfg.b.unwrap_or(2),
        beta: cfg.beta.unwrap_or(1.0),
        h: cfg.h.unwrap_or(0.0),
        lambda: cfg.lambda.unwrap_or(1.0),
        init: match model {
            ModelKind::Ising => InitialLaw::Bernoulli { p },
            ModelKind::Hardcore => InitialLaw::Nu { p },
        },
        region,
        probes: probe_grid(t_max, cfg.probes.unwrap_or(21)),
        replicas: cfg.replicas.unwrap_or(200),
        seed: need(cfg.seed, "seed")?,
        regime: cfg.regime.map(|r| match r {
            RegimeArg::A => RegimeTag::A,
            RegimeArg::B => RegimeTag::B,
            RegimeArg::C => RegimeTag::C,
        }),
    })
}

fn quench_output(name: &str, r: &QuenchReport) -> Result<RunOutput, CliError> {
    let last = r
        .table
        .rows
        .last()
        .map(|row| row[1].clone())
        .unwrap_or_default();
    let passed = r.summary.sandwich_violations == 0;
    Ok(RunOutput {
        files: vec![csv_file(&format!("{name}.csv"), &r.table)?],
        summary: to_json(&r.summary),
        message: format!(
            "depth {} target {} final rho {} sandwich violations {}/{}",
            r.summary.depth,
            r.summary.target,
            last,
            r.summary.sandwich_violations,
            r.summary.checks
        ),
        passed,
    })
}

fn ising_system(cfg: &RunConfig, default_depth: usize) -> Result<IsingSystem, CliError> {
    let params = ModelParams::new(
        cfg.beta.unwrap_or(1.0),
        cfg.h.unwrap_or(0.0),
        cfg.b.unwrap_or(2),
    )?;
    let shape = TreeShape::new(params.b, cfg.depth.unwrap_or(default_depth))?;
    let bc = cfg.boundary.unwrap_or(BoundaryArg::Plus);
    if bc.hardcore() {
        return Err(CliError::Usage(
            "even/odd boundaries belong to the hard-core model".into(),
        ));
    }
    Ok(IsingSystem::new(params, &shape, None, bc.boundary())?)
}

fn hc_system(cfg: &RunConfig, default_depth: usize) -> Result<HCSystem, CliError> {
    let params = HCParams::new(cfg.lambda.unwrap_or(1.0), cfg.b.unwrap_or(2))?;
    let shape = TreeShape::new(params.b, cfg.depth.unwrap_or(default_depth))?;
    Ok(HCSystem::new(
        params,
        &shape,
        None,
        cfg.boundary.unwrap_or(BoundaryArg::Even).boundary(),
    )?)
}

fn recursion(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let hardcore = cfg.boundary.is_some_and(BoundaryArg::hardcore)
        || (cfg.lambda.is_some() && cfg.beta.is_none());
    if hardcore {
        let sys = hc_system(cfg, 8)?;
        let field = sys.ratios();
        let mut t = Table::new(&["vertex", "level", "occupation"]);
        for v in sys.shape.vertices() {
            t.push(vec![
                v.to_string(),
                sys.shape.level(v).to_string(),
                cell(field.occupation(v)),
            ]);
        }
        let root = field.occupation(0);
        return Ok(RunOutput {
            files: vec![csv_file("recursion.csv", &t)?],
            summary: json!({ "root_occupation": root }),
            message: format!("root occupation {root:?}"),
            passed: true,
        });
    }
    let sys = ising_system(cfg, 8)?;
    let field = sys.ratios();
    let mut t = Table::new(&[
        "vertex",
        "level",
        "log_ratio",
        "plus_probability",
        "magnetization",
    ]);
    for v in sys.shape.vertices() {
        t.push(vec![
            v.to_string(),
            sys.shape.level(v).to_string(),
            cell(field.full[v].0),
            cell(field.plus_probability(v)),
            cell(field.magnetization(v)),
        ]);
    }
    let root = field.magnetization(0);
    Ok(RunOutput {
        files: vec![csv_file("recursion.csv", &t)?],
        summary: json!({ "root_magnetization": root }),
        message: format!("root magnetization {root:?}"),
        passed: true,
    })
}

fn phase_diagram(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let lo = cfg.beta_min.unwrap_or(0.1);
    let hi = cfg.beta_max.unwrap_or(5.0);
    let n = cfg.points.unwrap_or(50);
    if !(lo >= 0.0 && hi >= lo && n >= 1) {
        return Err(CliError::Usage(
            "need 0 <= beta-min <= beta-max and points >= 1".into(),
        ));
    }
    let betas: Vec<f64> = if n == 1 {
        vec![lo]
    } else {
        (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect()
    };
    let scan = phase_diagram_scan(cfg.b.unwrap_or(2), &betas, cfg.tol.unwrap_or(1e-9))?;
    Ok(RunOutput {
        files: vec![csv_file("phase_diagram.csv", &scan.table())?],
        summary: json!({ "monotone": scan.monotone, "asymptote": scan.asymptote }),
        message: format!(
            "{} points, monotone {}, asymptote {}",
            scan.rows.len(),
            scan.monotone,
            scan.asymptote
        ),
        passed: scan.monotone,
    })
}

fn gap(cfg: &RunConfig, seed: u64) -> Result<RunOutput, CliError> {
    let g = match cfg.boundary {
        Some(bc) if bc.hardcore() => build_hc_generator(&hc_system(cfg, 2)?)?,
        _ => build_generator(&ising_system(cfg, 2)?)?,
    };
    let full = spectral_gap_full(&g)?;
    let ls = logsob_upper_bound(&g, LOGSOB_RESTARTS, seed)?;
    let mut t = Table::new(&["states", "gap", "residual", "logsob_upper"]);
    t.push(vec![
        g.dim().to_string(),
        cell(full.gap),
        cell(full.residual),
        cell(ls.value),
    ]);
    Ok(RunOutput {
        files: vec![csv_file("gap.csv", &t)?],
        summary: json!({ "gap": full.gap, "logsob_upper": ls.value, "states": g.dim() }),
        message: format!("gap {:?} log-Sobolev upper bound {:?}", full.gap, ls.value),
        passed: true,
    })
}

fn blocks_cmd(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let sys = ising_system(cfg, 2)?;
    let mut t = Table::new(&["ell1", "blocks", "block_gap", "min_block_gap", "bound"]);
    let mut ok = true;
    for ell1 in 1..=sys.shape.depth() + 1 {
        let r = block_dynamics_gap(&sys, ell1)?;
        ok &= r.bound.is_finite();
        t.push(vec![
            ell1.to_string(),
            r.blocks.to_string(),
            cell(r.block_gap),
            cell(r.min_block_gap),
            cell(r.bound),
        ]);
    }
    Ok(RunOutput {
        files: vec![csv_file("blocks.csv", &t)?],
        summary: json!({ "rows": t.rows.len() }),
        message: format!("{} block radii", t.rows.len()),
        passed: ok,
    })
}

fn contraction(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let mut c = cfg.clone();
    c.p = Some(cfg.p.unwrap_or(0.5));
    c.depth = Some(cfg.depth.unwrap_or(8));
    c.beta = Some(cfg.beta.unwrap_or(0.5));
    let spec = spec_from(&c, ModelKind::Ising, 0.5)?;
    let (lo, hi) = contraction_window(spec.beta, spec.b)?;
    let weight = cfg.weight.unwrap_or(if hi.is_finite() {
        (lo * hi).sqrt()
    } else {
        1.0
    });
    let flips = cfg.flip.clone().unwrap_or_else(|| vec![0]);
    let r = contraction_experiment(&spec, weight, &flips)?;
    let message = match &r.fit {
        Some(f) => format!("rate {:?} 95% CI ({:?}, {:?})", f.rate, f.ci.0, f.ci.1),
        None => "no resolvable decay".to_string(),
    };
    Ok(RunOutput {
        files: vec![csv_file("contraction.csv", &r.table)?],
        summary: json!({ "weight": weight, "window": [r.window.0, r.window.1], "fit": to_json(&r.fit) }),
        message,
        passed: true,
    })
}

fn validate(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let checks = validation_suite(cfg.seed.unwrap_or(1))?;
    let mut t = Table::new(&["check", "passed", "max_error", "tolerance"]);
    for c in &checks {
        t.push(vec![
            c.name.clone(),
            (c.passed as u8).to_string(),
            cell(c.max_error),
            cell(c.tolerance),
        ]);
    }
    let passed = checks.iter().all(|c| c.passed);
    let message = checks
        .iter()
        .map(|c| format!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name))
        .collect::<Vec<_>>();
    Ok(RunOutput {
        files: vec![csv_file("validate.csv", &t)?],
        summary: to_json(&checks),
        message: message.join("\n"),
        passed,
    })
}

/// Run a resolved configuration without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let name = cfg.subcommand.as_deref().unwrap_or_default();
    if seeded(name) && cfg.seed.is_none() {
        return Err(CliError::Usage("--seed is required".into()));
    }
    match name {
        "quench" => quench_output(
            name,
            &quench_convergence(&spec_from(cfg, ModelKind::Ising, 0.95)?)?,
        ),
        "hc-quench" => quench_output(
            name,
            &hc_quench_convergence(&spec_from(cfg, ModelKind::Hardcore, 0.9)?)?,
        ),
        "phase-diagram" => phase_diagram(cfg),
        "recursion" => recursion(cfg),
        "gap" => gap(cfg, need(cfg.seed, "seed")?),
        "blocks" => blocks_cmd(cfg),
        "contraction" => contraction(cfg),
        "validate" => validate(cfg),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

/// Write the outputs and the manifest into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    out: &RunOutput,
    wall_time_s: f64,
) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    for (name, bytes) in &out.files {
        let path = dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    }
    let mut echo = cfg.clone();
    echo.out = None;
    echo.workers = None;
    let manifest = RunManifest::new(to_json(&echo), &out.files, out.summary.clone(), wall_time_s);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), text + "\n")
        .map_err(|e| CliError::Failure(format!("cannot write manifest: {e}")))?;
    Ok(manifest)
}

/// Full run of one invocation; returns the process exit code.
pub fn run(inv: Invocation) -> i32 {
    let outcome = (|| {
        let cfg = resolve(inv.command)?;
        let start = Instant::now();
        let out = match cfg.workers {
            Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Failure(format!("thread pool: {e}")))?
                .install(|| execute(&cfg))?,
            Some(_) => return Err(CliError::Usage("--workers must be positive".into())),
            None => execute(&cfg)?,
        };
        let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
        write_outputs(&dir, &cfg, &out, start.elapsed().as_secs_f64())?;
        println!("{}", out.message);
        if out.passed {
            Ok(())
        } else {
            Err(CliError::Failure("checks failed".into()))
        }
    })();
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
