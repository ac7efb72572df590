//! Desk-scale experiments: deep-quench convergence for both models, the
//! three-term decomposition, minus-path bounds, contraction under the
//! natural coupling, and the critical-field curve. Every experiment returns
//! tables with a documented header plus a serializable summary.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    run_coupled, Checkpoint, CouplingDriver, LazyBoundary, LazyIsing, DEFAULT_SAFETY_CONSTANT,
};
use crate::error::{Error, Result};
use crate::gibbs::{
    critical_beta1, critical_field, exact_sample, mu_plus_root, IsingSystem, ModelParams,
};
use crate::hardcore::{
    hc_mu_even_root, hc_order_leq, hc_sample_nu, parity_config, HCParams, HCSystem,
};
use crate::rng::{site_uniform, split_seed, DOMAIN_SPINS};
use crate::stats::{jackknife_se, sum, weighted_line_fit, Estimate, Z95};
use crate::tree::{
    obstacles_from_quench, sample_bernoulli_spins, Boundary, SpinConfig, TreeShape, Vertex,
};

/// Largest finite tree an experiment will allocate.
pub const MAX_EXPERIMENT_VERTICES: usize = 1 << 21;
/// Static and dynamic depth cap in the decomposition experiment.
pub const DECOMPOSITION_MAX_VERTICES: usize = 1 << 15;
pub const DOUBLING_REPLICAS: usize = 200;
/// Doubling check passes when the root disagrees in at most this fraction.
pub const DOUBLING_TOLERANCE: f64 = 0.02;
pub const FIT_BLOCKS: usize = 20;
const FIT_MAX_REL_ERROR: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ising,
    Hardcore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    /// Independent spins, P(+1) = p.
    Bernoulli {
        p: f64,
    },
    /// Hard-core two-stage law ν_{p,λ}.
    Nu {
        p: f64,
    },
    AllPlus,
    Explicit(SpinConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionRule {
    Depth(usize),
    /// depth = ⌈c·max(t_max, 1)⌉.
    Truncation {
        constant: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeTag {
    A,
    B,
    C,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelKind,
    pub b: usize,
    pub beta: f64,
    pub h: f64,
    pub lambda: f64,
    pub init: InitialLaw,
    pub region: RegionRule,
    pub probes: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub regime: Option<RegimeTag>,
}

impl ExperimentSpec {
    pub fn t_max(&self) -> f64 {
        self.probes.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::Param("at least one probe time is required".into()));
        }
        if self.probes.iter().any(|t| !(t.is_finite() && *t >= 0.0))
            || self.probes.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Param(
                "probe times must be finite, >= 0 and non-decreasing".into(),
            ));
        }
        if self.replicas < 2 {
            return Err(Error::Param("at least two replicas are required".into()));
        }
        match self.init {
            InitialLaw::Bernoulli { p } | InitialLaw::Nu { p } if !(0.0..=1.0).contains(&p) => {
                return Err(Error::Param(format!("p must lie in [0, 1], got {p}")));
            }
            _ => {}
        }
        match self.model {
            ModelKind::Ising => {
                ModelParams::new(self.beta, self.h, self.b)?;
            }
            ModelKind::Hardcore => {
                HCParams::new(self.lambda, self.b)?;
            }
        }
        capped_shape(self.b, self.depth()?, MAX_EXPERIMENT_VERTICES).map(|_| ())
    }

    /// Depth of the finite region.
    pub fn depth(&self) -> Result<usize> {
        match self.region {
            RegionRule::Depth(d) => Ok(d),
            RegionRule::Truncation { constant } if constant > 0.0 && constant.is_finite() => Ok(
                crate::dynamics::truncation_depth_for_time(self.t_max(), constant),
            ),
            RegionRule::Truncation { constant } => Err(Error::Param(format!(
                "truncation constant must be positive, got {constant}"
            ))),
        }
    }

    fn p(&self) -> Option<f64> {
        match self.init {
            InitialLaw::Bernoulli { p } | InitialLaw::Nu { p } => Some(p),
            InitialLaw::AllPlus => Some(1.0),
            InitialLaw::Explicit(_) => None,
        }
    }
}

/// Tree of the given depth, refusing sizes beyond `limit` vertices.
pub fn capped_shape(b: usize, depth: usize, limit: usize) -> Result<TreeShape> {
    let mut n: usize = 0;
    let mut width: usize = 1;
    for _ in 0..=depth {
        n = n.saturating_add(width);
        width = width.saturating_mul(b);
        if n > limit {
            return Err(Error::Size(format!(
                "depth {depth} with b = {b} exceeds {limit} vertices"
            )));
        }
    }
    TreeShape::new(b, depth)
}

/// Largest depth whose tree has at most `limit` vertices.
pub fn max_depth_within(b: usize, limit: usize) -> usize {
    let mut d = 0;
    while capped_shape(b, d + 1, limit).is_ok() {
        d += 1;
    }
    d
}

/// Rows of text cells under a header; numbers use Rust's shortest
/// round-trip representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn cell(x: f64) -> String {
    format!("{x:?}")
}

impl Table {
    pub fn new(columns: &[&str]) -> Table {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| cell(x)).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Domain(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputChecksum {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: serde_json::Value,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputChecksum>,
    pub summary: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(
        spec: serde_json::Value,
        outputs: &[(String, Vec<u8>)],
        summary: serde_json::Value,
        wall_time_s: f64,
    ) -> RunManifest {
        RunManifest {
            spec,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s,
            outputs: outputs
                .iter()
                .map(|(f, b)| OutputChecksum {
                    file: f.clone(),
                    sha256: sha256_hex(b),
                })
                .collect(),
            summary,
        }
    }

    /// Same spec, version, outputs and summary; wall time is ignored.
    pub fn reproduces(&self, other: &RunManifest) -> bool {
        self.spec == other.spec
            && self.version == other.version
            && self.outputs == other.outputs
            && self.summary == other.summary
    }
}

/// log|d_t| ≈ log A − c·t^α, fitted by weighted least squares on a grid of α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchFit {
    pub alpha: f64,
    pub alpha_ci: (f64, f64),
    pub rate: f64,
    pub r2: f64,
    pub points: usize,
}

fn alpha_grid() -> impl Iterator<Item = f64> {
    (1..=200).map(|k| 0.01 * k as f64)
}

fn stretch_point_fit(t: &[f64], dev: &[f64], w: &[f64]) -> Option<(f64, f64, f64)> {
    let y: Vec<f64> = dev.iter().map(|d| d.abs().ln()).collect();
    alpha_grid()
        .filter_map(|a| {
            let x: Vec<f64> = t.iter().map(|t| t.powf(a)).collect();
            weighted_line_fit(&x, &y, w).map(|f| (a, -f.slope, f.r2))
        })
        .max_by(|p, q| p.2.total_cmp(&q.2))
}

/// Points with t > 0 and |deviation| > 2 SE enter; the α interval comes
/// from a block jackknife over replicas.
fn stretch_fit(t: &[f64], blocks: &[Vec<f64>], target: f64) -> Option<StretchFit> {
    let k = t.len();
    let per = |rows: &[&Vec<f64>], j: usize| {
        Estimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())
    };
    let all: Vec<&Vec<f64>> = blocks.iter().collect();
    let est: Vec<Estimate> = (0..k).map(|j| per(&all, j)).collect();
    let idx: Vec<usize> = (0..k)
        .filter(|&j| {
            t[j] > 0.0 && est[j].se > 0.0 && (est[j].mean - target).abs() > 2.0 * est[j].se
        })
        .collect();
    if idx.len() < 3 {
        return None;
    }
    let w: Vec<f64> = idx
        .iter()
        .map(|&j| ((est[j].mean - target) / est[j].se).powi(2))
        .collect();
    let ts: Vec<f64> = idx.iter().map(|&j| t[j]).collect();
    let dev_of = |e: &[f64]| idx.iter().map(|&j| e[j] - target).collect::<Vec<f64>>();
    let means: Vec<f64> = est.iter().map(|e| e.mean).collect();
    let (alpha, rate, r2) = stretch_point_fit(&ts, &dev_of(&means), &w)?;
    let n = blocks.len();
    let nb = FIT_BLOCKS.min(n);
    let se = jackknife_se(nb, |b| {
        let keep: Vec<&Vec<f64>> = blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| i * nb / n != b)
            .map(|(_, r)| r)
            .collect();
        let m: Vec<f64> = (0..k).map(|j| per(&keep, j).mean).collect();
        let d = dev_of(&m);
        if d.iter().any(|x| *x == 0.0) {
            return alpha;
        }
        stretch_point_fit(&ts, &d, &w).map_or(alpha, |f| f.0)
    });
    Some(StretchFit {
        alpha,
        alpha_ci: (alpha - Z95 * se, alpha + Z95 * se),
        rate,
        r2,
        points: idx.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingCheck {
    pub depth: usize,
    pub doubled_depth: usize,
    pub t: f64,
    pub replicas: usize,
    pub disagreements: usize,
    pub fraction: f64,
    pub passed: bool,
}

impl DoublingCheck {
    fn new(depth: usize, doubled_depth: usize, t: f64, flags: &[bool]) -> DoublingCheck {
        let disagreements = flags.iter().filter(|&&d| d).count();
        let fraction = disagreements as f64 / flags.len().max(1) as f64;
        DoublingCheck {
            depth,
            doubled_depth,
            t,
            replicas: flags.len(),
            disagreements,
            fraction,
            passed: fraction <= DOUBLING_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchSummary {
    pub depth: usize,
    /// +1 when the run targets the plus (even) phase, −1 for the flipped regime.
    pub target_sign: i8,
    pub target: f64,
    pub sandwich_violations: u64,
    pub checks: u64,
    pub fit: Option<StretchFit>,
    pub doubling: Option<DoublingCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuenchReport {
    /// Columns: t, rho, se, target, gap, rho_extreme, rho_extreme_se,
    /// rho_opposite, rho_opposite_se.
    pub table: Table,
    pub summary: QuenchSummary,
}

pub const QUENCH_COLUMNS: [&str; 9] = [
    "t",
    "rho",
    "se",
    "target",
    "gap",
    "rho_extreme",
    "rho_extreme_se",
    "rho_opposite",
    "rho_opposite_se",
];

struct ReplicaOutcome {
    /// (main, extreme, opposite) root values per probe.
    roots: Vec<[f64; 3]>,
    violations: u64,
    checks: u64,
}

fn quench_table(probes: &[f64], outcomes: &[ReplicaOutcome], target: f64) -> Table {
    let mut table = Table::new(&QUENCH_COLUMNS);
    for (j, &t) in probes.iter().enumerate() {
        let col = |k: usize| {
            Estimate::from_samples(&outcomes.iter().map(|o| o.roots[j][k]).collect::<Vec<_>>())
        };
        let (m, e, o) = (col(0), col(1), col(2));
        table.push_f64(&[
            t,
            m.mean,
            m.se,
            target,
            m.mean - target,
            e.mean,
            e.se,
            o.mean,
            o.se,
        ]);
    }
    table
}

fn init_config(
    spec: &ExperimentSpec,
    shape: &TreeShape,
    seed: u64,
    nu: Option<(&HCParams, &Boundary)>,
) -> Result<SpinConfig> {
    match &spec.init {
        InitialLaw::Bernoulli { p } => sample_bernoulli_spins(shape, *p, seed),
        InitialLaw::Nu { p } => {
            let (params, bc) =
                nu.ok_or_else(|| Error::Param("ν starts apply to the hard-core model".into()))?;
            hc_sample_nu(params, *p, shape, bc, seed)
        }
        InitialLaw::AllPlus => Ok(vec![1; shape.n()]),
        InitialLaw::Explicit(c) if c.len() == shape.n() => Ok(c.clone()),
        InitialLaw::Explicit(c) => Err(Error::Param(format!(
            "explicit start has {} sites, the tree has {}",
            c.len(),
            shape.n()
        ))),
    }
}

fn ising_leq(a: &[i8], b: &[i8]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Ising deep quench. Three coupled copies run per replica: the main system
/// from η with boundary sign s, the constant-s start with the same
/// boundary, and η with the opposite boundary. With s = +1 the order
/// opposite ≤ main ≤ extreme is checked at every probe over all vertices.
/// s = −1 when p < 1/2.
pub fn quench_convergence(spec: &ExperimentSpec) -> Result<QuenchReport> {
    spec.validate()?;
    if spec.model != ModelKind::Ising {
        return Err(Error::Param(
            "quench_convergence runs the Ising model".into(),
        ));
    }
    let params = ModelParams::new(spec.beta, spec.h, spec.b)?;
    let depth = spec.depth()?;
    let shape = capped_shape(spec.b, depth, MAX_EXPERIMENT_VERTICES)?;
    let sign: i8 = if spec.p().unwrap_or(1.0) >= 0.5 {
        1
    } else {
        -1
    };
    let (same, opposite) = if sign == 1 {
        (Boundary::Plus, Boundary::Minus)
    } else {
        (Boundary::Minus, Boundary::Plus)
    };
    let main = IsingSystem::new(params, &shape, None, same)?;
    let opp = IsingSystem::new(params, &shape, None, opposite)?;
    let target = sign as f64 * mu_plus_root(&params, None);
    let driver = CouplingDriver::new(spec.seed, spec.t_max())?;
    let outcomes: Result<Vec<ReplicaOutcome>> = (0..spec.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let eta = init_config(spec, &shape, split_seed(spec.seed, i), None)?;
            let mut states = vec![eta.clone(), vec![sign; shape.n()], eta];
            let mut out = ReplicaOutcome {
                roots: Vec::with_capacity(spec.probes.len()),
                violations: 0,
                checks: 0,
            };
            run_coupled(
                &[&main, &main, &opp],
                &mut states,
                &driver.replica(i),
                &spec.probes,
                |cp, s| {
                    if let Checkpoint::Probe { .. } = cp {
                        out.roots
                            .push([s[0][0] as f64, s[1][0] as f64, s[2][0] as f64]);
                        let ordered = if sign == 1 {
                            ising_leq(&s[2], &s[0]) && ising_leq(&s[0], &s[1])
                        } else {
                            ising_leq(&s[1], &s[0]) && ising_leq(&s[0], &s[2])
                        };
                        out.checks += 1;
                        out.violations += !ordered as u64;
                    }
                },
            )?;
            Ok(out)
        })
        .collect();
    let outcomes = outcomes?;
    let table = quench_table(&spec.probes, &outcomes, target);
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| o.roots.iter().map(|r| r[0]).collect())
        .collect();
    let doubling = match spec.init {
        InitialLaw::Bernoulli { p } => Some(ising_doubling(&params, depth, sign, p, spec)?),
        InitialLaw::AllPlus => Some(ising_doubling(&params, depth, sign, 1.0, spec)?),
        _ => None,
    };
    Ok(QuenchReport {
        table,
        summary: QuenchSummary {
            depth,
            target_sign: sign,
            target,
            sandwich_violations: outcomes.iter().map(|o| o.violations).sum(),
            checks: outcomes.iter().map(|o| o.checks).sum(),
            fit: stretch_fit(&spec.probes, &rows, target),
            doubling,
        },
    })
}

/// Root spin at t = depth/c on depth L and 2L, same clocks and starts,
/// through the light cone.
fn ising_doubling(
    params: &ModelParams,
    depth: usize,
    sign: i8,
    p: f64,
    spec: &ExperimentSpec,
) -> Result<DoublingCheck> {
    let t = (depth as f64 / DEFAULT_SAFETY_CONSTANT).min(spec.t_max());
    let boundary = if sign == 1 {
        LazyBoundary::Plus
    } else {
        LazyBoundary::Minus
    };
    let n = DOUBLING_REPLICAS.min(spec.replicas);
    let driver = CouplingDriver::new(spec.seed, t.max(f64::MIN_POSITIVE))?;
    let all_free = |_: u128| true;
    let flags: Result<Vec<bool>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let s = split_seed(spec.seed, i);
            let init = move |v: u128| {
                if site_uniform(s, DOMAIN_SPINS, v) < p {
                    1
                } else {
                    -1
                }
            };
            let d = driver.replica(i);
            let mut a = LazyIsing::new(
                params.beta,
                params.h,
                params.b,
                depth,
                boundary,
                d,
                &init,
                &all_free,
            )?;
            let mut b = LazyIsing::new(
                params.beta,
                params.h,
                params.b,
                2 * depth,
                boundary,
                d,
                &init,
                &all_free,
            )?;
            Ok(a.spin(0, t) != b.spin(0, t))
        })
        .collect();
    Ok(DoublingCheck::new(depth, 2 * depth, t, &flags?))
}

/// Hard-core deep quench with ν_{p,λ} (or explicit) starts and the even
/// phase as target. The three coupled copies are: main (even boundary,
/// start η), extreme (even boundary, even parity start) and opposite (odd
/// boundary, start η), ordered opposite ≺ main ≺ extreme.
///
/// The interior depth is rounded up to an odd number so that the even
/// boundary is occupied.
pub fn hc_quench_convergence(spec: &ExperimentSpec) -> Result<QuenchReport> {
    spec.validate()?;
    if spec.model != ModelKind::Hardcore {
        return Err(Error::Param(
            "hc_quench_convergence runs the hard-core model".into(),
        ));
    }
    let params = HCParams::new(spec.lambda, spec.b)?;
    let requested = spec.depth()?;
    let depth = requested | 1;
    let shape = capped_shape(spec.b, depth, MAX_EXPERIMENT_VERTICES)?;
    let main = HCSystem::new(params, &shape, None, Boundary::EvenBC)?;
    let opp = HCSystem::new(params, &shape, None, Boundary::OddBC)?;
    let target = hc_mu_even_root(&params, None);
    let driver = CouplingDriver::new(spec.seed, spec.t_max())?;
    let even = parity_config(&shape, true);
    let outcomes: Result<Vec<ReplicaOutcome>> = (0..spec.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let eta = init_config(
                spec,
                &shape,
                split_seed(spec.seed, i),
                Some((&params, &Boundary::EvenBC)),
            )?;
            let mut states = vec![eta.clone(), even.clone(), eta];
            let mut out = ReplicaOutcome {
                roots: Vec::with_capacity(spec.probes.len()),
                violations: 0,
                checks: 0,
            };
            run_coupled(
                &[&main, &main, &opp],
                &mut states,
                &driver.replica(i),
                &spec.probes,
                |cp, s| {
                    if let Checkpoint::Probe { .. } = cp {
                        out.roots
                            .push([s[0][0] as f64, s[1][0] as f64, s[2][0] as f64]);
                        let ordered = hc_order_leq(&shape, &s[2], &s[0]).unwrap_or(false)
                            && hc_order_leq(&shape, &s[0], &s[1]).unwrap_or(false);
                        out.checks += 1;
                        out.violations += !ordered as u64;
                    }
                },
            )?;
            Ok(out)
        })
        .collect();
    let outcomes = outcomes?;
    let table = quench_table(&spec.probes, &outcomes, target);
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| o.roots.iter().map(|r| r[0]).collect())
        .collect();
    let doubling = Some(hc_doubling(&params, depth, spec)?);
    Ok(QuenchReport {
        table,
        summary: QuenchSummary {
            depth,
            target_sign: 1,
            target,
            sandwich_violations: outcomes.iter().map(|o| o.violations).sum(),
            checks: outcomes.iter().map(|o| o.checks).sum(),
            fit: stretch_fit(&spec.probes, &rows, target),
            doubling,
        },
    })
}

/// Finite-tree doubling for the hard-core model; the larger tree is capped
/// at `DECOMPOSITION_MAX_VERTICES` and kept odd.
fn hc_doubling(params: &HCParams, depth: usize, spec: &ExperimentSpec) -> Result<DoublingCheck> {
    let big =
        ((2 * depth).min(max_depth_within(params.b, DECOMPOSITION_MAX_VERTICES)) | 1).max(depth);
    let t = (depth as f64 / DEFAULT_SAFETY_CONSTANT).min(spec.t_max());
    let small_shape = capped_shape(params.b, depth, MAX_EXPERIMENT_VERTICES)?;
    let big_shape = capped_shape(params.b, big, MAX_EXPERIMENT_VERTICES)?;
    let small = HCSystem::new(*params, &small_shape, None, Boundary::EvenBC)?;
    let large = HCSystem::new(*params, &big_shape, None, Boundary::EvenBC)?;
    let n = DOUBLING_REPLICAS.min(spec.replicas);
    let driver = CouplingDriver::new(spec.seed, t)?;
    let flags: Result<Vec<bool>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let s = split_seed(spec.seed, i);
            let mut a = init_config(spec, &small_shape, s, Some((params, &Boundary::EvenBC)))?;
            let mut b = init_config(spec, &big_shape, s, Some((params, &Boundary::EvenBC)))?;
            crate::dynamics::run_to(&small, &mut a, &driver.replica(i), t)?;
            crate::dynamics::run_to(&large, &mut b, &driver.replica(i), t)?;
            Ok(a[0] != b[0])
        })
        .collect();
    Ok(DoublingCheck::new(depth, big, t, &flags?))
}

fn level_of(b: usize, mut v: u128) -> usize {
    let mut width = 1u128;
    let mut level = 0;
    while v >= width {
        v -= width;
        width *= b as u128;
        level += 1;
    }
    level
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub ell: usize,
    /// L = ⌈ℓ^γ⌉.
    pub big_l: usize,
    /// Depth used for terms (i) and (ii).
    pub finite_depth: usize,
    pub environments: usize,
    pub median_term_i: f64,
    /// Probes up to this time also carry term (iii).
    pub lazy_t_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    /// Columns: env, term_i.
    pub environments: Table,
    /// Columns: t, term_ii, term_ii_se, term_iii, term_iii_se, discrepancy, discrepancy_se.
    pub dynamics: Table,
    pub summary: DecompositionSummary,
}

/// Three-term decomposition. Each environment draws η ~ Bernoulli(p) and
/// ω(η, ℓ) (free up to level ℓ, η below).
///   (i)   |μ⁺_D(σ_r) − μ⁺_{D,ω}(σ_r)| with D = min(L, cap), both exact;
///   (ii)  ρ^{D,+}_{t,ω}(η) − μ⁺_{D,ω}(σ_r) by coupled dynamics;
///   (iii) ρ^{L,+}_{t,ω}(η) − ρ_{t,ω}(η), the second on depth 2L with minus
///         boundary, at the root through the light cone, for t ≤ L/4.
pub fn quench_decomposition(
    spec: &ExperimentSpec,
    ell: usize,
    gamma: f64,
    environments: usize,
) -> Result<Decomposition> {
    spec.validate()?;
    let p = match spec.init {
        InitialLaw::Bernoulli { p } => p,
        InitialLaw::AllPlus => 1.0,
        _ => {
            return Err(Error::Param(
                "the decomposition needs a Bernoulli start".into(),
            ))
        }
    };
    if !(gamma >= 1.0) || environments == 0 {
        return Err(Error::Param(
            "need γ >= 1 and at least one environment".into(),
        ));
    }
    let params = ModelParams::new(spec.beta, spec.h, spec.b)?;
    let big_l = (ell as f64).powf(gamma).ceil() as usize;
    let finite_depth = big_l
        .min(max_depth_within(spec.b, DECOMPOSITION_MAX_VERTICES))
        .max(ell);
    let shape = capped_shape(spec.b, finite_depth, MAX_EXPERIMENT_VERTICES)?;
    let mu_plus_d = mu_plus_root(&params, Some(finite_depth));
    let lazy_t_max = big_l as f64 / DEFAULT_SAFETY_CONSTANT;
    let lazy_probes: Vec<f64> = spec
        .probes
        .iter()
        .copied()
        .filter(|&t| t <= lazy_t_max)
        .collect();
    let driver = CouplingDriver::new(spec.seed, spec.t_max())?;
    let b = spec.b;
    struct EnvOut {
        term_i: f64,
        ii: Vec<Vec<f64>>,
        iii: Vec<Vec<(f64, f64)>>,
    }
    let envs: Result<Vec<EnvOut>> = (0..environments as u64)
        .into_par_iter()
        .map(|e| {
            let es = split_seed(spec.seed ^ 0x5eed_0001, e);
            let eta = sample_bernoulli_spins(&shape, p, es)?;
            let env = obstacles_from_quench(&shape, &eta, ell.min(finite_depth))?;
            let sys = IsingSystem::new(params, &shape, Some(&env), Boundary::Plus)?;
            let mu_omega = sys.ratios().magnetization(0);
            let term_i = (mu_plus_d - mu_omega).abs();
            let mut ii = Vec::with_capacity(spec.replicas);
            let mut iii = Vec::with_capacity(spec.replicas);
            let init = move |v: u128| {
                if site_uniform(es, DOMAIN_SPINS, v) < p {
                    1i8
                } else {
                    -1
                }
            };
            let free =
                move |v: u128| level_of(b, v) <= ell || site_uniform(es, DOMAIN_SPINS, v) < p;
            for i in 0..spec.replicas as u64 {
                let d = driver.replica(split_seed(e, i));
                let mut s = eta.clone();
                let mut roots = Vec::with_capacity(spec.probes.len());
                run_coupled(
                    &[&sys],
                    std::slice::from_mut(&mut s),
                    &d,
                    &spec.probes,
                    |cp, st| {
                        if let Checkpoint::Probe { .. } = cp {
                            roots.push(st[0][0] as f64 - mu_omega);
                        }
                    },
                )?;
                ii.push(roots);
                if !lazy_probes.is_empty() {
                    let mut up = LazyIsing::new(
                        params.beta,
                        params.h,
                        b,
                        big_l,
                        LazyBoundary::Plus,
                        d,
                        &init,
                        &free,
                    )?;
                    let mut down = LazyIsing::new(
                        params.beta,
                        params.h,
                        b,
                        2 * big_l,
                        LazyBoundary::Minus,
                        d,
                        &init,
                        &free,
                    )?;
                    iii.push(
                        lazy_probes
                            .iter()
                            .map(|&t| {
                                let (a, c) = (up.spin(0, t), down.spin(0, t));
                                ((a - c) as f64, (a != c) as u8 as f64)
                            })
                            .collect(),
                    );
                }
            }
            Ok(EnvOut { term_i, ii, iii })
        })
        .collect();
    let envs = envs?;
    let mut env_table = Table::new(&["env", "term_i"]);
    for (e, o) in envs.iter().enumerate() {
        env_table.push_f64(&[e as f64, o.term_i]);
    }
    let mut dyn_table = Table::new(&[
        "t",
        "term_ii",
        "term_ii_se",
        "term_iii",
        "term_iii_se",
        "discrepancy",
        "discrepancy_se",
    ]);
    for (j, &t) in spec.probes.iter().enumerate() {
        let ii = Estimate::from_samples(
            &envs
                .iter()
                .flat_map(|o| o.ii.iter().map(move |r| r[j]))
                .collect::<Vec<_>>(),
        );
        let (iii, disc) = if j < lazy_probes.len() {
            let a: Vec<f64> = envs
                .iter()
                .flat_map(|o| o.iii.iter().map(move |r| r[j].0))
                .collect();
            let c: Vec<f64> = envs
                .iter()
                .flat_map(|o| o.iii.iter().map(move |r| r[j].1))
                .collect();
            (Estimate::from_samples(&a), Estimate::from_samples(&c))
        } else {
            let nan = Estimate {
                mean: f64::NAN,
                se: f64::NAN,
                n: 0,
            };
            (nan, nan)
        };
        dyn_table.push_f64(&[t, ii.mean, ii.se, iii.mean, iii.se, disc.mean, disc.se]);
    }
    let mut ti: Vec<f64> = envs.iter().map(|o| o.term_i).collect();
    Ok(Decomposition {
        environments: env_table,
        dynamics: dyn_table,
        summary: DecompositionSummary {
            ell,
            big_l,
            finite_depth,
            environments,
            median_term_i: median(&mut ti),
            lazy_t_max,
        },
    })
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Σ_{d(x)=ℓ} Π_{z∈Γ_x, z≠r} ε^{−1}R_z(ω), over paths inside T(ω).
pub fn minus_path_bound(sys: &IsingSystem, ell: usize) -> Result<f64> {
    let shape = &sys.shape;
    if ell > shape.depth() {
        return Err(Error::Param(format!(
            "level {ell} exceeds depth {}",
            shape.depth()
        )));
    }
    let field = sys.ratios();
    let two_beta = 2.0 * sys.params.beta;
    let mut terms = Vec::new();
    for x in shape.level_range(ell) {
        let path = shape.path_to_descendant(0, x)?;
        if sys.is_active(0) && path.iter().all(|&z| sys.is_active(z)) {
            terms.push(
                path.iter()
                    .map(|&z| field.up[z].0 + two_beta)
                    .sum::<f64>()
                    .exp(),
            );
        }
    }
    Ok(sum(terms))
}

/// Indicator of a root-to-level-ℓ path of −1 spins inside T(ω).
pub fn has_minus_path(sys: &IsingSystem, sigma: &[i8], ell: usize) -> bool {
    let shape = &sys.shape;
    let mut frontier: Vec<Vertex> = vec![0];
    for _ in 0..ell {
        frontier = frontier
            .iter()
            .filter(|&&v| sys.is_active(v) && sigma[v] == -1)
            .flat_map(|&v| shape.children(v))
            .collect();
    }
    frontier.iter().any(|&v| sys.is_active(v) && sigma[v] == -1)
}

/// μ_ω(E_ℓ) by exhaustive enumeration.
pub fn minus_path_event_exact(sys: &IsingSystem, ell: usize) -> Result<f64> {
    let exact = sys.brute_force()?;
    Ok(exact.expectation(|s| has_minus_path(sys, s, ell) as u8 as f64))
}

/// μ_ω(E_ℓ) by exact sampling.
pub fn minus_path_event_monte_carlo(
    sys: &IsingSystem,
    ell: usize,
    n: usize,
    seed: u64,
) -> Estimate {
    let field = sys.ratios();
    let hits: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| has_minus_path(sys, &exact_sample(sys, &field, seed, i), ell) as u8 as f64)
        .collect();
    Estimate::from_samples(&hits)
}

pub const MINUS_PATH_TAIL: usize = 4;
pub const MINUS_PATH_MAX_ELL: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct MinusPathReport {
    /// Columns: env, bound, event, event_se.
    pub table: Table,
    pub median_bound: f64,
}

/// Product bound and the all-minus path event on environments ω(η, ℓ)
/// over a tree of depth ℓ + `MINUS_PATH_TAIL` with plus boundary.
/// `spec.replicas` exact samples per environment estimate the event.
pub fn minus_path_probability(
    spec: &ExperimentSpec,
    ell: usize,
    environments: usize,
) -> Result<MinusPathReport> {
    if ell == 0 || ell > MINUS_PATH_MAX_ELL {
        return Err(Error::Param(format!(
            "ℓ must lie in 1..={MINUS_PATH_MAX_ELL}"
        )));
    }
    let p = spec
        .p()
        .ok_or_else(|| Error::Param("the minus-path experiment needs a Bernoulli start".into()))?;
    let params = ModelParams::new(spec.beta, spec.h, spec.b)?;
    let shape = capped_shape(spec.b, ell + MINUS_PATH_TAIL, MAX_EXPERIMENT_VERTICES)?;
    let rows: Result<Vec<(f64, Estimate)>> = (0..environments as u64)
        .map(|e| {
            let es = split_seed(spec.seed, e);
            let eta = sample_bernoulli_spins(&shape, p, es)?;
            let env = obstacles_from_quench(&shape, &eta, ell)?;
            let sys = IsingSystem::new(params, &shape, Some(&env), Boundary::Plus)?;
            Ok((
                minus_path_bound(&sys, ell)?,
                minus_path_event_monte_carlo(&sys, ell, spec.replicas, es),
            ))
        })
        .collect();
    let rows = rows?;
    let mut table = Table::new(&["env", "bound", "event", "event_se"]);
    for (e, (bound, ev)) in rows.iter().enumerate() {
        table.push_f64(&[e as f64, *bound, ev.mean, ev.se]);
    }
    let mut bounds: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(MinusPathReport {
        table,
        median_bound: median(&mut bounds),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub r2: f64,
    pub points: usize,
    /// Upper end of the 95% interval below zero.
    pub negative_at_95: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionReport {
    /// Columns: t, distance, se, closed_form (β = 0 only, otherwise NaN).
    pub table: Table,
    pub fit: Option<RateFit>,
    pub window: (f64, f64),
}

/// Admissible weights (tanh β, 1/(b tanh β)); empty when β ≥ β₁.
pub fn contraction_window(beta: f64, b: usize) -> Result<(f64, f64)> {
    let th = beta.tanh();
    if beta >= critical_beta1(b) {
        return Err(Error::Param(format!(
            "β = {beta} is not below β₁({b}) = {}",
            critical_beta1(b)
        )));
    }
    Ok((
        th,
        if th > 0.0 {
            1.0 / (b as f64 * th)
        } else {
            f64::INFINITY
        },
    ))
}

/// E d_λ(σ^η_t, σ^ξ_t) under the natural coupling, where ξ is η with the
/// spins at `flips` reversed, on a finite tree with free boundary.
pub fn contraction_experiment(
    spec: &ExperimentSpec,
    lambda_weight: f64,
    flips: &[Vertex],
) -> Result<ContractionReport> {
    spec.validate()?;
    let window = contraction_window(spec.beta, spec.b)?;
    if !(lambda_weight > window.0 && lambda_weight < window.1) {
        return Err(Error::Param(format!(
            "weight {lambda_weight} outside ({}, {})",
            window.0, window.1
        )));
    }
    let params = ModelParams::new(spec.beta, spec.h, spec.b)?;
    let shape = capped_shape(spec.b, spec.depth()?, MAX_EXPERIMENT_VERTICES)?;
    if let Some(&v) = flips.iter().find(|&&v| v >= shape.n()) {
        return Err(Error::Domain(format!("site {v} outside the tree")));
    }
    let sys = IsingSystem::new(params, &shape, None, Boundary::Free)?;
    let weights: Vec<f64> = shape
        .vertices()
        .map(|v| lambda_weight.powi(shape.level(v) as i32))
        .collect();
    let driver = CouplingDriver::new(spec.seed, spec.t_max())?;
    let rows: Result<Vec<Vec<f64>>> = (0..spec.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let eta = init_config(spec, &shape, split_seed(spec.seed, i), None)?;
            let mut xi = eta.clone();
            for &v in flips {
                xi[v] = -eta[v];
            }
            let mut states = vec![eta, xi];
            let mut out = Vec::with_capacity(spec.probes.len());
            run_coupled(
                &[&sys, &sys],
                &mut states,
                &driver.replica(i),
                &spec.probes,
                |cp, s| {
                    if let Checkpoint::Probe { .. } = cp {
                        out.push(sum((0..s[0].len())
                            .filter(|&v| s[0][v] != s[1][v])
                            .map(|v| weights[v])));
                    }
                },
            )?;
            Ok(out)
        })
        .collect();
    let rows = rows?;
    let k = spec.probes.len();
    let est: Vec<Estimate> = (0..k)
        .map(|j| Estimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let mut sites = flips.to_vec();
    sites.sort_unstable();
    sites.dedup();
    let d0 = sum(sites.iter().map(|&v| weights[v]));
    let mut table = Table::new(&["t", "distance", "se", "closed_form"]);
    for (j, &t) in spec.probes.iter().enumerate() {
        let closed = if spec.beta == 0.0 {
            d0 * (-t).exp()
        } else {
            f64::NAN
        };
        table.push_f64(&[t, est[j].mean, est[j].se, closed]);
    }
    Ok(ContractionReport {
        table,
        fit: exponential_rate(&spec.probes, &rows),
        window,
    })
}

/// Weighted fit of log mean against t on points with positive mean and
/// relative SE ≤ 30%, with a block-jackknife SE for the slope.
pub fn exponential_rate(t: &[f64], rows: &[Vec<f64>]) -> Option<RateFit> {
    let k = t.len();
    let stats = |keep: &[&Vec<f64>]| -> Vec<Estimate> {
        (0..k)
            .map(|j| Estimate::from_samples(&keep.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect()
    };
    let all: Vec<&Vec<f64>> = rows.iter().collect();
    let est = stats(&all);
    let idx: Vec<usize> = (0..k)
        .filter(|&j| {
            est[j].mean > 0.0 && est[j].se > 0.0 && est[j].se <= FIT_MAX_REL_ERROR * est[j].mean
        })
        .collect();
    if idx.len() < 2 {
        return None;
    }
    let x: Vec<f64> = idx.iter().map(|&j| t[j]).collect();
    let w: Vec<f64> = idx
        .iter()
        .map(|&j| (est[j].mean / est[j].se).powi(2))
        .collect();
    let fit_of = |e: &[Estimate]| {
        let y: Vec<f64> = idx
            .iter()
            .map(|&j| e[j].mean.max(f64::MIN_POSITIVE).ln())
            .collect();
        weighted_line_fit(&x, &y, &w)
    };
    let line = fit_of(&est)?;
    let n = rows.len();
    let nb = FIT_BLOCKS.min(n);
    let se = jackknife_se(nb, |b| {
        let keep: Vec<&Vec<f64>> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| i * nb / n != b)
            .map(|(_, r)| r)
            .collect();
        fit_of(&stats(&keep)).map_or(line.slope, |f| f.slope)
    });
    let ci = (line.slope - Z95 * se, line.slope + Z95 * se);
    Some(RateFit {
        rate: line.slope,
        se,
        ci,
        r2: line.r2,
        points: idx.len(),
        negative_at_95: ci.1 < 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    /// Columns: beta, h_c, unique.
    pub rows: Vec<(f64, f64, bool)>,
    pub monotone: bool,
    /// b − 1.
    pub asymptote: f64,
}

impl PhaseDiagram {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["beta", "h_c", "unique"]);
        for &(b, h, u) in &self.rows {
            t.push(vec![cell(b), cell(h), (u as u8).to_string()]);
        }
        t
    }
}

/// h_c(β, b) over a β grid.
pub fn phase_diagram_scan(b: usize, betas: &[f64], tol: f64) -> Result<PhaseDiagram> {
    let rows: Result<Vec<(f64, f64, bool)>> = betas
        .par_iter()
        .map(|&beta| critical_field(beta, b, tol).map(|c| (beta, c.h_c, c.unique)))
        .collect();
    let rows = rows?;
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted.windows(2).all(|w| w[1].1 >= w[0].1 - 2.0 * tol);
    Ok(PhaseDiagram {
        rows,
        monotone,
        asymptote: b as f64 - 1.0,
    })
}

/// Evenly spaced probe times 0, t_max/(k−1), ..., t_max.
pub fn probe_grid(t_max: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![t_max],
        _ => (0..k).map(|i| t_max * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Summary as JSON for manifests.
pub fn to_json<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).unwrap_or(serde_json::Value::Null)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
}

fn check(name: &str, max_error: f64, tolerance: f64) -> ValidationCheck {
    ValidationCheck {
        name: name.to_string(),
        passed: max_error <= tolerance,
        max_error,
        tolerance,
    }
}

/// Trees with at most 13 vertices used by the oracle comparisons.
pub const ORACLE_TREES: [(usize, usize); 6] = [(2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)];
pub const ORACLE_BETAS: [f64; 5] = [0.3, 0.7, 1.2, 2.0, 5.0];
pub const ORACLE_FIELDS: [f64; 5] = [-1.0, -0.3, 0.0, 0.3, 1.0];
pub const ORACLE_ACTIVITIES: [f64; 4] = [0.5, 1.0, 4.0, 6.0];
pub const ORACLE_FIXED_BOUNDARIES: usize = 20;

/// Recursions against exhaustive enumeration, generator invariants, the
/// lazy engine against the finite engine, and the closed-form thresholds.
pub fn validation_suite(seed: u64) -> Result<Vec<ValidationCheck>> {
    use crate::gibbs::{brute_force_gibbs, critical_beta0, r_recursion};
    use crate::hardcore::{hc_lambda_c, hc_r_recursion};
    let mut out = Vec::new();
    let mut ising_err: f64 = 0.0;
    let mut hc_err: f64 = 0.0;
    for (k, &(b, depth)) in ORACLE_TREES.iter().enumerate() {
        let shape = TreeShape::new(b, depth)?;
        let mut bcs = vec![Boundary::Plus, Boundary::Minus, Boundary::Free];
        for j in 0..ORACLE_FIXED_BOUNDARIES as u64 {
            let s = split_seed(seed, 100 * k as u64 + j);
            bcs.push(Boundary::Fixed(
                (0..shape.boundary_len())
                    .map(|i| {
                        if site_uniform(s, DOMAIN_SPINS, i as u128) < 0.5 {
                            1
                        } else {
                            -1
                        }
                    })
                    .collect(),
            ));
        }
        let errs: Result<Vec<f64>> = bcs
            .par_iter()
            .map(|bc| {
                let mut err: f64 = 0.0;
                for &beta in &ORACLE_BETAS {
                    for &h in &ORACLE_FIELDS {
                        let params = ModelParams::new(beta, h, b)?;
                        let field = r_recursion(&params, &shape, None, bc)?;
                        let exact = brute_force_gibbs(&params, &shape, None, bc)?;
                        for v in shape.vertices() {
                            err = err
                                .max((field.plus_probability(v) - exact.plus_probability(v)).abs());
                        }
                    }
                }
                Ok(err)
            })
            .collect();
        ising_err = errs?.into_iter().fold(ising_err, f64::max);
        for bc in [Boundary::EvenBC, Boundary::OddBC, Boundary::Free] {
            for &lambda in &ORACLE_ACTIVITIES {
                let params = HCParams::new(lambda, b)?;
                let sys = HCSystem::new(params, &shape, None, bc.clone())?;
                let field = hc_r_recursion(&params, &shape, &bc)?;
                let exact = sys.brute_force()?;
                for v in shape.vertices() {
                    hc_err = hc_err.max((field.occupation(v) - exact.occupation(v)).abs());
                }
            }
        }
    }
    out.push(check("ising recursion vs enumeration", ising_err, 1e-10));
    out.push(check("hard-core recursion vs enumeration", hc_err, 1e-10));

    let shape = TreeShape::new(2, 2)?;
    let sys = IsingSystem::new(ModelParams::new(1.0, 0.2, 2)?, &shape, None, Boundary::Plus)?;
    let g = crate::spectral::build_generator(&sys)?;
    out.push(check(
        "generator reversibility",
        g.reversibility_residual(),
        1e-12,
    ));
    out.push(check(
        "generator stationarity",
        g.stationarity_residual(),
        1e-12,
    ));
    let hc = HCSystem::new(HCParams::new(2.0, 2)?, &shape, None, Boundary::EvenBC)?;
    let hg = crate::spectral::build_hc_generator(&hc)?;
    out.push(check(
        "hard-core generator reversibility",
        hg.reversibility_residual(),
        1e-12,
    ));

    let deep = TreeShape::new(2, 6)?;
    let lazy_sys = IsingSystem::new(ModelParams::new(0.9, 0.1, 2)?, &deep, None, Boundary::Plus)?;
    let mut mismatches = 0usize;
    let driver = CouplingDriver::new(seed, 3.0)?;
    let all_free = |_: u128| true;
    for i in 0..20u64 {
        let s = split_seed(seed, i);
        let init = move |v: u128| {
            if site_uniform(s, DOMAIN_SPINS, v) < 0.7 {
                1
            } else {
                -1
            }
        };
        let mut state = sample_bernoulli_spins(&deep, 0.7, s)?;
        crate::dynamics::run_to(&lazy_sys, &mut state, &driver.replica(i), 3.0)?;
        let mut lazy = LazyIsing::new(
            0.9,
            0.1,
            2,
            6,
            LazyBoundary::Plus,
            driver.replica(i),
            &init,
            &all_free,
        )?;
        mismatches += deep
            .vertices()
            .filter(|&v| lazy.spin(v as u128, 3.0) != state[v])
            .count();
    }
    out.push(check("light cone vs finite engine", mismatches as f64, 0.0));

    let b0 = (critical_beta0(2) - 0.5 * 3f64.ln()).abs();
    let b1 = (critical_beta1(2) - (1.0 + 2f64.sqrt()).ln()).abs();
    out.push(check("critical betas", b0.max(b1), 1e-12));
    let lc = (hc_lambda_c(2) - 4.0)
        .abs()
        .max((hc_lambda_c(3) - 1.6875).abs());
    out.push(check("critical activities", lc, 0.0));
    Ok(out)
}

/// Column name → column index map of a table, for consumers.
pub fn column_index(table: &Table) -> BTreeMap<String, usize> {
    table
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect()
}
