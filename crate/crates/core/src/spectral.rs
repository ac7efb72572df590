//! Exact generator spectra on small regions, block dynamics, variance-decay
//! gap estimation, the variance-mixing check and log-Sobolev upper bounds.
//!
//! States are bit masks over the active sites of a region, with the same
//! convention as [`crate::gibbs::ExactDistribution`] (Ising, bit set = +1)
//! and [`crate::hardcore::HCExact`] (hard-core, bit set = occupied, legal
//! masks only). Eigenvalues of −L are computed in L²(μ) through the
//! symmetrization D^{1/2} L D^{−1/2}, D = diag(μ).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_coupled, CouplingDriver};
use crate::error::{Error, Result};
use crate::gibbs::{exact_sample, logistic, path_weight, IsingSystem};
use crate::hardcore::HCSystem;
use crate::rng::{keyed_rng, split_seed, DOMAIN_AUX};
use crate::stats::{jackknife_se, sum, weighted_line_fit, Estimate};
use crate::tree::{SpinConfig, Vertex};

/// Free-site limit for exact generators.
pub const GENERATOR_MAX_SITES: usize = 15;
/// Dimensions up to this size use a dense eigensolver.
pub const DENSE_MAX: usize = 512;
pub const EIGEN_TOL: f64 = 1e-10;
const LANCZOS_BASIS: usize = 300;
const LANCZOS_RESTARTS: usize = 40;

/// Sparse heat-bath generator with its reversible measure.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    pub sites: Vec<Vertex>,
    pub template: SpinConfig,
    /// Value written at a site whose bit is set (+1 or occupied).
    pub high: i8,
    /// Value at a site whose bit is clear (−1 or vacant).
    pub low: i8,
    pub states: Vec<usize>,
    pub mu: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    exit: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn config(&self, k: usize) -> SpinConfig {
        let mut c = self.template.clone();
        for (i, &v) in self.sites.iter().enumerate() {
            c[v] = if self.states[k] >> i & 1 == 1 {
                self.high
            } else {
                self.low
            };
        }
        c
    }

    /// Index of a configuration of the region.
    pub fn index_of(&self, cfg: &[i8]) -> Option<usize> {
        let m: usize = self
            .sites
            .iter()
            .enumerate()
            .filter(|(_, &v)| cfg[v] == self.high)
            .map(|(i, _)| 1 << i)
            .sum();
        self.states.binary_search(&m).ok()
    }

    /// Off-diagonal jumps of state `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.rates[k]))
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i]
    }

    /// (L f)(i) = Σ_j L_ij (f_j − f_i).
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = self.row(i).map(|(j, r)| r * (f[j] - f[i])).sum();
        }
    }

    /// max |Σ_j L_ij| over rows; zero by construction.
    pub fn row_sum_residual(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.row(i).map(|(_, r)| r).sum::<f64>() - self.exit[i]).abs())
            .fold(0.0, f64::max)
    }

    /// max |μ_i L_ij − μ_j L_ji|.
    pub fn reversibility_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for (j, r) in self.row(i) {
                let back = self.row(j).find(|&(k, _)| k == i).map_or(0.0, |(_, r)| r);
                worst = worst.max((self.mu[i] * r - self.mu[j] * back).abs());
            }
        }
        worst
    }

    /// max_j |(μ L)_j|: stationarity of μ.
    pub fn stationarity_residual(&self) -> f64 {
        let mut flow = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            flow[i] -= self.mu[i] * self.exit[i];
            for (j, r) in self.row(i) {
                flow[j] += self.mu[i] * r;
            }
        }
        flow.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// −S g with S = D^{1/2} L D^{−1/2}.
    fn apply_sym(&self, sym: &[f64], g: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            let mut acc = self.exit[i] * g[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc -= sym[k] * g[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    fn sym_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.cols.len()];
        for i in 0..self.dim() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                w[k] = self.rates[k] * (self.mu[i] / self.mu[j]).sqrt();
            }
        }
        w
    }

    /// Dirichlet form ½ Σ_{i,j} μ_i L_ij (f_j − f_i)².
    pub fn dirichlet(&self, f: &[f64]) -> f64 {
        0.5 * sum((0..self.dim()).flat_map(|i| {
            self.row(i)
                .map(move |(j, r)| self.mu[i] * r * (f[j] - f[i]).powi(2))
        }))
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        let m = sum(f.iter().zip(&self.mu).map(|(a, p)| a * p));
        sum(f.iter().zip(&self.mu).map(|(a, p)| p * (a - m).powi(2)))
    }
}

fn from_rows(
    sites: Vec<Vertex>,
    template: SpinConfig,
    (high, low): (i8, i8),
    states: Vec<usize>,
    mu: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
) -> GeneratorMatrix {
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut exit = Vec::with_capacity(rows.len());
    for r in rows {
        exit.push(sum(r.iter().map(|x| x.1)));
        for (j, q) in r {
            cols.push(j);
            rates.push(q);
        }
        row_ptr.push(cols.len());
    }
    GeneratorMatrix {
        sites,
        template,
        high,
        low,
        states,
        mu,
        row_ptr,
        cols,
        rates,
        exit,
    }
}

/// Ising heat-bath generator on the active sites of `sys`.
pub fn build_generator(sys: &IsingSystem) -> Result<GeneratorMatrix> {
    let sites = sys.active_sites();
    if sites.len() > GENERATOR_MAX_SITES {
        return Err(Error::Size(format!(
            "{} free sites exceed the generator limit {GENERATOR_MAX_SITES}",
            sites.len()
        )));
    }
    let exact = sys.brute_force()?;
    let beta = sys.params.beta;
    let h = sys.params.h;
    let rows: Vec<Vec<(usize, f64)>> = (0..exact.probs.len())
        .into_par_iter()
        .map(|k| {
            let sigma = exact.config(k);
            sites
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let s = sigma[x] as f64;
                    (
                        k ^ (1 << i),
                        logistic(-2.0 * beta * s * (h + sys.local_field(&sigma, x))),
                    )
                })
                .collect()
        })
        .collect();
    let states = (0..exact.probs.len()).collect();
    Ok(from_rows(
        sites,
        exact.template,
        (1, -1),
        states,
        exact.probs,
        rows,
    ))
}

/// Hard-core heat-bath generator over legal configurations of `sys`.
pub fn build_hc_generator(sys: &HCSystem) -> Result<GeneratorMatrix> {
    let sites = sys.active_sites();
    if sites.len() > GENERATOR_MAX_SITES {
        return Err(Error::Size(format!(
            "{} free sites exceed the generator limit {GENERATOR_MAX_SITES}",
            sites.len()
        )));
    }
    let exact = sys.brute_force()?;
    let (pl, ql) = (sys.params.p_lambda(), sys.params.q_lambda());
    let rows = (0..exact.states.len())
        .map(|k| {
            let eta = exact.config(k);
            let mut r = Vec::new();
            for (i, &x) in sites.iter().enumerate() {
                let target = exact.states[k] ^ (1 << i);
                if eta[x] == 1 {
                    r.push((
                        exact
                            .states
                            .binary_search(&target)
                            .expect("vacating is legal"),
                        ql,
                    ));
                } else if sys.neighbours_vacant(&eta, x) {
                    r.push((
                        exact
                            .states
                            .binary_search(&target)
                            .expect("legal insertion"),
                        pl,
                    ));
                }
            }
            r
        })
        .collect();
    Ok(from_rows(
        sites,
        exact.template,
        (1, 0),
        exact.states,
        exact.probs,
        rows,
    ))
}

/// Eigenpair of a symmetric operator; `vector` has unit Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn project_out(null: &[f64], v: &mut [f64]) {
    let c = dot(null, v);
    axpy(-c, null, v);
}

/// Smallest eigenvalue of a symmetric positive semi-definite operator on
/// the orthogonal complement of the unit vector `null`.
pub fn smallest_on_complement(
    n: usize,
    op: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    null: &[f64],
) -> Result<Eigenpair> {
    if n < 2 {
        return Err(Error::Degenerate(n));
    }
    let residual_of = |v: &[f64], theta: f64| {
        let mut w = vec![0.0; n];
        op(v, &mut w);
        project_out(null, &mut w);
        axpy(-theta, v, &mut w);
        dot(&w, &w).sqrt()
    };
    if n <= DENSE_MAX {
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            op(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        let m = (&m + m.transpose()) * 0.5;
        let shift = (0..n)
            .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1.0;
        let nv = nalgebra::DVector::from_column_slice(null);
        let shifted = &m + &nv * nv.transpose() * shift;
        let eig = SymmetricEigen::new(shifted);
        let (k, &value) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let mut vector: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        project_out(null, &mut vector);
        normalize(&mut vector);
        let residual = residual_of(&vector, value);
        return Ok(Eigenpair {
            value,
            vector,
            residual,
            iterations: n,
        });
    }
    let mut rng = keyed_rng(0x1a2c_05, DOMAIN_AUX, n as u128);
    let mut start: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    project_out(null, &mut start);
    normalize(&mut start);
    let basis_max = LANCZOS_BASIS.min(n - 1);
    let mut iterations = 0;
    let mut best_residual = f64::INFINITY;
    for _ in 0..LANCZOS_RESTARTS {
        let mut q: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        loop {
            let j = q.len() - 1;
            let mut w = vec![0.0; n];
            op(&q[j], &mut w);
            iterations += 1;
            project_out(null, &mut w);
            alpha.push(dot(&q[j], &w));
            for _ in 0..2 {
                for qk in &q {
                    let c = dot(qk, &w);
                    axpy(-c, qk, &mut w);
                }
                project_out(null, &mut w);
            }
            let b = dot(&w, &w).sqrt();
            let k = alpha.len();
            let full = k >= basis_max || b < 1e-13;
            if k % 5 == 0 || full {
                let mut t = DMatrix::<f64>::zeros(k, k);
                for i in 0..k {
                    t[(i, i)] = alpha[i];
                    if i + 1 < k {
                        t[(i, i + 1)] = beta[i];
                        t[(i + 1, i)] = beta[i];
                    }
                }
                let eig = SymmetricEigen::new(t);
                let (idx, &theta) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("non-empty");
                let y = eig.eigenvectors.column(idx);
                let estimate = b * y[k - 1].abs();
                if estimate <= EIGEN_TOL * theta.abs().max(1.0) || full {
                    let mut ritz = vec![0.0; n];
                    for (i, qi) in q.iter().enumerate() {
                        axpy(y[i], qi, &mut ritz);
                    }
                    project_out(null, &mut ritz);
                    normalize(&mut ritz);
                    let residual = residual_of(&ritz, theta);
                    best_residual = best_residual.min(residual);
                    if residual <= EIGEN_TOL * theta.abs().max(1.0) {
                        return Ok(Eigenpair {
                            value: theta,
                            vector: ritz,
                            residual,
                            iterations,
                        });
                    }
                    start = ritz;
                    break;
                }
            }
            beta.push(b);
            for x in w.iter_mut() {
                *x /= b;
            }
            q.push(w);
        }
    }
    Err(Error::NoConvergence {
        residual: best_residual,
        iterations,
    })
}

/// Gap of −L in L²(μ) with its eigenfunction (normalized to μ(φ²) = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct GapResult {
    pub gap: f64,
    pub eigenfunction: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn spectral_gap_full(g: &GeneratorMatrix) -> Result<GapResult> {
    let sym = g.sym_weights();
    let null: Vec<f64> = g.mu.iter().map(|p| p.sqrt()).collect();
    let op = |x: &[f64], out: &mut [f64]| g.apply_sym(&sym, x, out);
    let ep = smallest_on_complement(g.dim(), &op, &null)?;
    let eigenfunction = ep.vector.iter().zip(&null).map(|(v, s)| v / s).collect();
    Ok(GapResult {
        gap: ep.value,
        eigenfunction,
        residual: ep.residual,
        iterations: ep.iterations,
    })
}

pub fn spectral_gap_exact(g: &GeneratorMatrix) -> Result<f64> {
    Ok(spectral_gap_full(g)?.gap)
}

/// Law at time `t` of the chain started in state `s0` (δ_{s0} e^{tL}),
/// by uniformization.
pub fn transition_law(g: &GeneratorMatrix, s0: usize, t: f64) -> Result<Vec<f64>> {
    if s0 >= g.dim() {
        return Err(Error::Domain(format!("state {s0} outside the state space")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Param(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    let n = g.dim();
    let lam = g.exit.iter().copied().fold(0.0, f64::max).max(1e-300);
    let lt = lam * t;
    let mut p = vec![0.0; n];
    p[s0] = 1.0;
    let mut out = vec![0.0; n];
    let mut log_w = -lt;
    let mut mass = 0.0;
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        axpy(w, &p, &mut out);
        mass += w;
        if (mass >= 1.0 - 1e-15 && k as f64 > lt) || k > 10_000_000 {
            break;
        }
        let mut next: Vec<f64> = p
            .iter()
            .zip(&g.exit)
            .map(|(pi, e)| pi * (1.0 - e / lam))
            .collect();
        for i in 0..n {
            if p[i] != 0.0 {
                for (j, r) in g.row(i) {
                    next[j] += p[i] * r / lam;
                }
            }
        }
        p = next;
        k += 1;
        log_w += lt.ln() - (k as f64).ln();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub t: f64,
    /// Var_μ(P_t f) = Cov_μ(f(σ_0), f(σ_{2t})).
    pub variance: f64,
    pub se: f64,
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecayFit {
    pub gap: f64,
    pub gap_se: f64,
    pub r2: f64,
    /// Set when R² < 0.9 or fewer than three points enter the fit.
    pub flagged: bool,
    pub points: Vec<VariancePoint>,
}

pub const VARIANCE_MAX_REL_ERROR: f64 = 0.3;
pub const JACKKNIFE_BLOCKS: usize = 20;

/// Fit of log Var_μ(P_t σ_root) against t from equilibrium starts drawn
/// exactly; the gap estimate is −slope/2.
pub fn variance_decay_gap(
    sys: &IsingSystem,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<VarianceDecayFit> {
    if n_samples < 2 * JACKKNIFE_BLOCKS {
        return Err(Error::Param(format!(
            "at least {} samples are required",
            2 * JACKKNIFE_BLOCKS
        )));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[0] < w[1])) || t_grid[0] < 0.0 {
        return Err(Error::Param(
            "time grid must be strictly increasing and non-negative".into(),
        ));
    }
    let field = sys.ratios();
    let mean = field.magnetization(0);
    let probes: Vec<f64> = t_grid.iter().map(|t| 2.0 * t).collect();
    let driver = CouplingDriver::new(split_seed(seed, u64::MAX), *probes.last().unwrap())?;
    let products: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut s = exact_sample(sys, &field, seed, i);
            let f0 = s[0] as f64;
            let mut out = Vec::with_capacity(probes.len());
            run_coupled(
                &[sys],
                std::slice::from_mut(&mut s),
                &driver.replica(i),
                &probes,
                |cp, st| {
                    if let crate::dynamics::Checkpoint::Probe { .. } = cp {
                        out.push(f0 * st[0][0] as f64);
                    }
                },
            )
            .expect("validated probes");
            out
        })
        .collect();
    let k = t_grid.len();
    let column = |j: usize, skip: Option<usize>| -> Vec<f64> {
        let block = n_samples / JACKKNIFE_BLOCKS;
        products
            .iter()
            .enumerate()
            .filter(|(i, _)| skip.map_or(true, |b| (i / block).min(JACKKNIFE_BLOCKS - 1) != b))
            .map(|(_, p)| p[j])
            .collect()
    };
    let mut points = Vec::with_capacity(k);
    for j in 0..k {
        let e = Estimate::from_samples(&column(j, None));
        let variance = e.mean - mean * mean;
        let used = variance > 0.0 && e.se <= VARIANCE_MAX_REL_ERROR * variance;
        points.push(VariancePoint {
            t: t_grid[j],
            variance,
            se: e.se,
            used,
        });
    }
    let idx: Vec<usize> = (0..k).filter(|&j| points[j].used).collect();
    if idx.len() < 2 {
        return Err(Error::Degenerate(idx.len()));
    }
    let fit_with = |vars: &[f64]| {
        let x: Vec<f64> = idx.iter().map(|&j| t_grid[j]).collect();
        let y: Vec<f64> = idx
            .iter()
            .map(|&j| vars[j].max(f64::MIN_POSITIVE).ln())
            .collect();
        let w: Vec<f64> = idx
            .iter()
            .map(|&j| (points[j].variance / points[j].se.max(1e-300)).powi(2))
            .collect();
        weighted_line_fit(&x, &y, &w)
    };
    let all: Vec<f64> = points.iter().map(|p| p.variance).collect();
    let fit = fit_with(&all).ok_or(Error::Degenerate(idx.len()))?;
    let gap = -fit.slope / 2.0;
    let gap_se = jackknife_se(JACKKNIFE_BLOCKS, |b| {
        let vars: Vec<f64> = (0..k)
            .map(|j| {
                let e = Estimate::from_samples(&column(j, Some(b)));
                e.mean - mean * mean
            })
            .collect();
        fit_with(&vars).map_or(gap, |f| -f.slope / 2.0)
    });
    Ok(VarianceDecayFit {
        gap,
        gap_se,
        r2: fit.r2,
        flagged: fit.r2 < 0.9 || idx.len() < 3,
        points,
    })
}

/// Blocks B_{x,ℓ₁}: the active descendants of x within ℓ₁ − 1 levels.
pub fn blocks(sys: &IsingSystem, ell1: usize) -> Vec<Vec<Vertex>> {
    let shape = &sys.shape;
    sys.active_sites()
        .into_iter()
        .map(|x| {
            let top = shape.level(x);
            let mut out = vec![x];
            let mut frontier = vec![x];
            for _ in 1..ell1 {
                frontier = frontier
                    .iter()
                    .flat_map(|&v| shape.children(v))
                    .filter(|&c| sys.is_active(c) && shape.level(c) < top + ell1)
                    .collect();
                out.extend(&frontier);
            }
            out
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockGap {
    pub ell1: usize,
    pub blocks: usize,
    /// Gap of the block chain (each block resampled at rate 1).
    pub block_gap: f64,
    /// min over blocks and boundary conditions of the single-site block gap.
    pub min_block_gap: f64,
    /// (1/ℓ₁)·min_block_gap·block_gap, a lower bound on the single-site gap.
    pub bound: f64,
}

pub const BLANKET_MAX_SITES: usize = 12;

pub fn block_dynamics_gap(sys: &IsingSystem, ell1: usize) -> Result<BlockGap> {
    if ell1 == 0 {
        return Err(Error::Param("block depth must be >= 1".into()));
    }
    let g = build_generator(sys)?;
    let family = blocks(sys, ell1);
    let pos = |v: Vertex| g.sites.iter().position(|&s| s == v).expect("active site");
    let masks: Vec<usize> = family
        .iter()
        .map(|b| b.iter().map(|&v| 1usize << pos(v)).sum())
        .collect();
    let n = g.dim();
    let sqrt_mu: Vec<f64> = g.mu.iter().map(|p| p.sqrt()).collect();
    let op = |x: &[f64], out: &mut [f64]| {
        // −L_B f = Σ_B (f − μ(f | outside B)), conjugated by √μ.
        let f: Vec<f64> = x.iter().zip(&sqrt_mu).map(|(a, s)| a / s).collect();
        let mut acc = vec![0.0; n];
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for &bm in &masks {
            for i in 0..n {
                let key = i & !bm;
                num[key] += g.mu[i] * f[i];
                den[key] += g.mu[i];
            }
            for i in 0..n {
                let key = i & !bm;
                acc[i] += f[i] - num[key] / den[key];
            }
            for i in 0..n {
                num[i & !bm] = 0.0;
                den[i & !bm] = 0.0;
            }
        }
        for i in 0..n {
            out[i] = acc[i] * sqrt_mu[i];
        }
    };
    let block_gap = smallest_on_complement(n, &op, &sqrt_mu)?.value;
    let mut min_block_gap = f64::INFINITY;
    for block in &family {
        min_block_gap = min_block_gap.min(worst_block_gap(sys, block)?);
    }
    Ok(BlockGap {
        ell1,
        blocks: family.len(),
        block_gap,
        min_block_gap,
        bound: min_block_gap * block_gap / ell1 as f64,
    })
}

/// Smallest single-site gap on `block` over all configurations of the
/// active sites adjacent to it.
fn worst_block_gap(sys: &IsingSystem, block: &[Vertex]) -> Result<f64> {
    let shape = &sys.shape;
    let inside = |v: Vertex| block.contains(&v);
    let mut blanket: Vec<Vertex> = Vec::new();
    for &v in block {
        let nbrs = shape.parent(v).into_iter().chain(shape.children(v));
        for w in nbrs {
            if !inside(w) && sys.is_active(w) && !blanket.contains(&w) {
                blanket.push(w);
            }
        }
    }
    if blanket.len() > BLANKET_MAX_SITES {
        return Err(Error::Size(format!(
            "block boundary has {} free sites",
            blanket.len()
        )));
    }
    let mut worst = f64::INFINITY;
    for m in 0..1usize << blanket.len() {
        let pinned: Vec<Option<i8>> = shape
            .vertices()
            .map(|v| {
                if inside(v) {
                    None
                } else if let Some(i) = blanket.iter().position(|&w| w == v) {
                    Some(if m >> i & 1 == 1 { 1 } else { -1 })
                } else {
                    Some(sys.pinned(v).unwrap_or(-1))
                }
            })
            .collect();
        let sub = IsingSystem::with_pinned(sys.params, shape, sys.boundary.clone(), pinned)?;
        let gap = if block.len() == 1 {
            1.0
        } else {
            spectral_gap_exact(&build_generator(&sub)?)?
        };
        worst = worst.min(gap);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmVertex {
    pub x: Vertex,
    /// Var_μ(μ(σ_x | σ_{D_{x,ℓ₁}})).
    pub conditional_variance: f64,
    pub variance: f64,
    pub ratio: f64,
    /// γ^{ℓ₁} Σ_{y∈D} W(Γ_{x,y}) with γ = tanh β.
    pub weight_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmCheck {
    pub ell1: usize,
    pub worst_ratio: f64,
    pub worst_vertex: Vertex,
    /// r^{ℓ₁} for the supplied r.
    pub threshold: f64,
    pub satisfied: bool,
    /// tanh(β)^{2ℓ₁}.
    pub tanh_bound: f64,
    pub vertices: Vec<VmVertex>,
}

/// Exact (ℓ₁, r^{ℓ₁})-mixing check. D_{x,ℓ₁} is the set of free interior
/// descendants of x at distance ℓ₁; when it is empty the conditional
/// expectation is constant.
pub fn vm_mixing_check(sys: &IsingSystem, ell1: usize, r: f64) -> Result<VmCheck> {
    let exact = sys.brute_force()?;
    let field = sys.ratios();
    let shape = &sys.shape;
    let gamma = sys.params.beta.tanh();
    let mut vertices = Vec::new();
    for x in sys.active_sites() {
        let d: Vec<Vertex> = if shape.level(x) + ell1 <= shape.depth() {
            shape
                .descendants_at_depth(x, ell1)
                .into_iter()
                .filter(|&y| sys.is_active(y))
                .collect()
        } else {
            Vec::new()
        };
        let xi = exact.sites.iter().position(|&s| s == x).expect("active");
        let bits: Vec<usize> = d
            .iter()
            .map(|&y| exact.sites.iter().position(|&s| s == y).expect("active"))
            .collect();
        let key = |s: usize| {
            bits.iter()
                .enumerate()
                .map(|(k, &b)| (s >> b & 1) << k)
                .sum::<usize>()
        };
        let groups = 1usize << bits.len();
        let mut num = vec![0.0; groups];
        let mut den = vec![0.0; groups];
        let mut mean = 0.0;
        for (s, &p) in exact.probs.iter().enumerate() {
            let sx = if s >> xi & 1 == 1 { 1.0 } else { -1.0 };
            num[key(s)] += p * sx;
            den[key(s)] += p;
            mean += p * sx;
        }
        let cond_var = if d.is_empty() {
            0.0
        } else {
            sum((0..groups)
                .filter(|&k| den[k] > 0.0)
                .map(|k| den[k] * (num[k] / den[k] - mean).powi(2)))
        };
        let variance = 1.0 - mean * mean;
        let ratio = if variance > 0.0 {
            cond_var / variance
        } else {
            0.0
        };
        let weight_bound = gamma.powi(ell1 as i32)
            * sum(d.iter().map(|&y| {
                path_weight(
                    &sys.params,
                    &field.up,
                    &shape.path_to_descendant(x, y).expect("descendant"),
                )
            }));
        vertices.push(VmVertex {
            x,
            conditional_variance: cond_var,
            variance,
            ratio,
            weight_bound,
        });
    }
    let (worst_vertex, worst_ratio) = vertices
        .iter()
        .map(|v| (v.x, v.ratio))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let threshold = r.powi(ell1 as i32);
    Ok(VmCheck {
        ell1,
        worst_ratio,
        worst_vertex,
        threshold,
        satisfied: worst_ratio <= threshold,
        tanh_bound: gamma.powi(2 * ell1 as i32),
        vertices,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSobolevBound {
    /// Smallest D(√f)/Ent(f) found: an upper bound on c_sob.
    pub value: f64,
    pub gap: f64,
    pub restarts: usize,
    pub degenerate_restarts: usize,
}

/// (1+x)ln(1+x) − x, accurate for small x.
fn ent_term(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 12.0 - x / 20.0)))
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

/// D(√f)/Ent(f) for f = e^g, in forms stable near constant f.
fn sobolev_ratio(g: &GeneratorMatrix, logf: &[f64]) -> Option<f64> {
    let c = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = logf.iter().map(|l| (l - c).exp()).collect();
    let fbar = sum(f.iter().zip(&g.mu).map(|(a, p)| a * p));
    let x: Vec<f64> = logf.iter().map(|l| (l - c - fbar.ln()).exp_m1()).collect();
    let ent = sum(x.iter().zip(&g.mu).map(|(xi, p)| p * ent_term(*xi)));
    let s: Vec<f64> = x.iter().map(|xi| (1.0 + xi).sqrt()).collect();
    let dir = 0.5
        * sum((0..g.dim()).flat_map(|i| {
            let (x, s) = (&x, &s);
            g.row(i)
                .map(move |(j, r)| g.mu[i] * r * ((x[j] - x[i]) / (s[i] + s[j])).powi(2))
        }));
    (ent > 1e-300 && ent.is_finite()).then(|| dir / ent)
}

/// Gradient of the ratio with respect to log f.
fn sobolev_gradient(g: &GeneratorMatrix, logf: &[f64], ratio: f64) -> Vec<f64> {
    let n = g.dim();
    let c = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = logf.iter().map(|l| (l - c).exp()).collect();
    let s: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
    let fbar = sum(f.iter().zip(&g.mu).map(|(a, p)| a * p));
    let x: Vec<f64> = f.iter().map(|v| v / fbar - 1.0).collect();
    let ent = fbar * sum(x.iter().zip(&g.mu).map(|(xi, p)| p * ent_term(*xi)));
    let lf = fbar.ln();
    (0..n)
        .map(|i| {
            let a_s: f64 = g.row(i).map(|(j, r)| g.mu[i] * r * (s[i] - s[j])).sum();
            let d_dir = a_s * s[i];
            let d_ent = g.mu[i] * f[i] * ((logf[i] - c) - lf);
            (d_dir - ratio * d_ent) / ent
        })
        .collect()
}

const LOGSOB_STEPS: usize = 200;
const LOGSOB_PERTURBATION: f64 = 1e-6;

/// Local descent over positive trial functions from random starts and from
/// f = 1 ± δ·φ with φ the gap eigenfunction. Returns the smallest ratio
/// seen, which bounds c_sob from above.
pub fn logsob_upper_bound(
    g: &GeneratorMatrix,
    n_restarts: usize,
    seed: u64,
) -> Result<LogSobolevBound> {
    let gap = spectral_gap_full(g)?;
    let n = g.dim();
    let mut best = f64::INFINITY;
    let mut degenerate = 0;
    let mut starts: Vec<Vec<f64>> = [1.0, -1.0]
        .iter()
        .map(|sgn| {
            gap.eigenfunction
                .iter()
                .map(|phi| (sgn * LOGSOB_PERTURBATION * phi).ln_1p())
                .collect()
        })
        .collect();
    for r in 0..n_restarts {
        let mut rng = keyed_rng(seed, DOMAIN_AUX, r as u128);
        starts.push((0..n).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect());
    }
    for (k, start) in starts.into_iter().enumerate() {
        let Some(mut val) = sobolev_ratio(g, &start) else {
            degenerate += 1;
            continue;
        };
        best = best.min(val);
        // Near-constant starts are already at the quadratic limit.
        if k < 2 {
            continue;
        }
        let mut cur = start;
        let mut step = 1.0;
        for _ in 0..LOGSOB_STEPS {
            let grad = sobolev_gradient(g, &cur, val);
            let norm = dot(&grad, &grad).sqrt();
            if !(norm > 1e-14) {
                break;
            }
            let mut accepted = false;
            while step > 1e-10 {
                let trial: Vec<f64> = cur
                    .iter()
                    .zip(&grad)
                    .map(|(c, d)| c - step * d / norm)
                    .collect();
                if let Some(v) = sobolev_ratio(g, &trial) {
                    if v < val - 1e-4 * step * norm {
                        cur = trial;
                        val = v;
                        step *= 1.5;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        best = best.min(val);
    }
    if !best.is_finite() {
        return Err(Error::Degenerate(degenerate));
    }
    Ok(LogSobolevBound {
        value: best,
        gap: gap.gap,
        restarts: n_restarts,
        degenerate_restarts: degenerate,
    })
}
