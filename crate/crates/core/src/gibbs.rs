//! Equilibrium of the Ising model on finite trees: likelihood-ratio
//! recursion, coupling coefficients, path weights, critical points, tail
//! bounds and an exhaustive oracle.
//!
//! Ratios are handled as natural logarithms. `+∞` marks a spin forced to −1
//! and `−∞` a spin forced to +1.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, site_uniform, split_seed, DOMAIN_AUX, DOMAIN_OBSTACLES};
use crate::stats::{sum, Estimate};
use crate::tree::{Boundary, ObstacleEnv, SpinConfig, TreeShape, Vertex};

/// Longest state space handled by exhaustive enumeration.
pub const BRUTE_FORCE_MAX_SITES: usize = 16;

pub const FIXED_POINT_TOL: f64 = 1e-13;
pub const FIXED_POINT_MAX_ITER: usize = 100_000;
pub const COEXISTENCE_GAP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub h: f64,
    pub b: usize,
}

impl ModelParams {
    /// `beta = 0` is accepted as the independent-spin limit.
    pub fn new(beta: f64, h: f64, b: usize) -> Result<ModelParams> {
        if b < 2 {
            return Err(Error::Param(format!(
                "branching factor must be >= 2, got {b}"
            )));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Param(format!(
                "inverse temperature must be finite and >= 0, got {beta}"
            )));
        }
        if !h.is_finite() {
            return Err(Error::Param(format!("field must be finite, got {h}")));
        }
        Ok(ModelParams { beta, h, b })
    }

    pub fn eps(&self) -> f64 {
        (-2.0 * self.beta).exp()
    }

    /// log of the field factor e^{−2βh}.
    pub fn log_field(&self) -> f64 {
        -2.0 * self.beta * self.h
    }

    fn check_shape(&self, shape: &TreeShape) -> Result<()> {
        if shape.b() != self.b {
            return Err(Error::Param(format!(
                "tree branching {} differs from model branching {}",
                shape.b(),
                self.b
            )));
        }
        Ok(())
    }
}

/// log R for one vertex.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogRatio(pub f64);

impl LogRatio {
    pub const FORCED_PLUS: LogRatio = LogRatio(f64::NEG_INFINITY);
    pub const FORCED_MINUS: LogRatio = LogRatio(f64::INFINITY);

    pub fn from_ratio(a: f64) -> Result<LogRatio> {
        if a.is_nan() || a < 0.0 {
            return Err(Error::Domain(format!(
                "ratio must be in [0, +inf], got {a}"
            )));
        }
        Ok(LogRatio(a.ln()))
    }

    pub fn ratio(self) -> f64 {
        self.0.exp()
    }

    pub fn plus_probability(self) -> f64 {
        logistic(-self.0)
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(a - b).abs()).exp().ln_1p()
}

/// log F_β(e^x) with F_β(a) = (ε + a)/(1 + εa).
pub fn log_f(beta: f64, x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        -2.0 * beta
    } else if x == f64::INFINITY {
        2.0 * beta
    } else {
        logaddexp(-2.0 * beta, x) - logaddexp(0.0, x - 2.0 * beta)
    }
}

fn log_two_sinh(y: f64) -> f64 {
    if y > 1.0 {
        y + (-(-2.0 * y).exp()).ln_1p()
    } else {
        (2.0 * y.sinh()).ln()
    }
}

/// log K_β(e^x) with K_β(a) = 1/(εa + 1) − 1/(a/ε + 1).
pub fn log_k(beta: f64, x: f64) -> f64 {
    if !x.is_finite() || beta == 0.0 {
        return f64::NEG_INFINITY;
    }
    log_two_sinh(2.0 * beta) + x - softplus(x - 2.0 * beta) - softplus(x + 2.0 * beta)
}

fn check_ratio(a: f64) -> Result<f64> {
    if a.is_nan() || a < 0.0 {
        Err(Error::Domain(format!(
            "ratio must be in [0, +inf], got {a}"
        )))
    } else {
        Ok(a.ln())
    }
}

pub fn f_beta(params: &ModelParams, a: f64) -> Result<f64> {
    Ok(log_f(params.beta, check_ratio(a)?).exp())
}

pub fn k_beta(params: &ModelParams, a: f64) -> Result<f64> {
    Ok(log_k(params.beta, check_ratio(a)?).exp())
}

/// Upward and full (two-sided) log-ratios for every vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioField {
    /// Ratio of the subtree below each vertex with the parent removed.
    pub up: Vec<LogRatio>,
    /// Ratio of the single-site marginal in the whole region.
    pub full: Vec<LogRatio>,
}

impl RatioField {
    pub fn root(&self) -> LogRatio {
        self.up[0]
    }

    pub fn plus_probability(&self, v: Vertex) -> f64 {
        self.full[v].plus_probability()
    }

    pub fn magnetization(&self, v: Vertex) -> f64 {
        2.0 * self.plus_probability(v) - 1.0
    }
}

/// An Ising region: tree, boundary, and vertices pinned to fixed spins.
/// Obstacles and vertices outside T(ω) are pinned to −1.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingSystem {
    pub params: ModelParams,
    pub shape: TreeShape,
    pub boundary: Boundary,
    pinned: Vec<Option<i8>>,
}

impl IsingSystem {
    pub fn new(
        params: ModelParams,
        shape: &TreeShape,
        obstacles: Option<&ObstacleEnv>,
        boundary: Boundary,
    ) -> Result<IsingSystem> {
        let pinned = match obstacles {
            None => vec![None; shape.n()],
            Some(env) => {
                if env.shape() != shape {
                    return Err(Error::Param(
                        "obstacle environment lives on a different tree".into(),
                    ));
                }
                shape
                    .vertices()
                    .map(|v| if env.in_component(v) { None } else { Some(-1) })
                    .collect()
            }
        };
        Self::with_pinned(params, shape, boundary, pinned)
    }

    pub fn with_pinned(
        params: ModelParams,
        shape: &TreeShape,
        boundary: Boundary,
        pinned: Vec<Option<i8>>,
    ) -> Result<IsingSystem> {
        params.check_shape(shape)?;
        boundary.validate_ising(shape)?;
        if pinned.len() != shape.n() {
            return Err(Error::Param(
                "pinning vector does not match the tree".into(),
            ));
        }
        if pinned.iter().flatten().any(|&s| s != 1 && s != -1) {
            return Err(Error::Param("pinned spins must be ±1".into()));
        }
        Ok(IsingSystem {
            params,
            shape: shape.clone(),
            boundary,
            pinned,
        })
    }

    pub fn pinned(&self, v: Vertex) -> Option<i8> {
        self.pinned[v]
    }

    pub fn is_active(&self, v: Vertex) -> bool {
        self.pinned[v].is_none()
    }

    pub fn active_sites(&self) -> Vec<Vertex> {
        self.shape
            .vertices()
            .filter(|&v| self.is_active(v))
            .collect()
    }

    /// Overwrite pinned entries of `sigma` with their pinned values.
    pub fn normalize(&self, sigma: &mut [i8]) {
        for (s, p) in sigma.iter_mut().zip(&self.pinned) {
            if let Some(v) = p {
                *s = *v;
            }
        }
    }

    /// A configuration with every active site set to `s`.
    pub fn constant_config(&self, s: i8) -> SpinConfig {
        self.pinned.iter().map(|p| p.unwrap_or(s)).collect()
    }

    /// Sum of the neighbour spins of `x`; absent (free) boundary sites count 0.
    pub fn local_field(&self, sigma: &[i8], x: Vertex) -> f64 {
        let mut s = 0i32;
        if let Some(y) = self.shape.parent(x) {
            s += sigma[y] as i32;
        }
        for c in self.shape.children(x) {
            s += sigma[c] as i32;
        }
        for slot in self.shape.boundary_slots(x) {
            if let Some(v) = self.boundary.spin(slot) {
                s += v as i32;
            }
        }
        s as f64
    }

    pub fn plus_probability(&self, sigma: &[i8], x: Vertex) -> f64 {
        logistic(2.0 * self.params.beta * (self.params.h + self.local_field(sigma, x)))
    }

    /// β times the Hamiltonian terms that involve at least one active site.
    pub fn log_weight(&self, sigma: &[i8]) -> f64 {
        let mut e = 0.0;
        for v in self.shape.vertices() {
            let act = self.is_active(v);
            if act {
                e += self.params.h * sigma[v] as f64;
            }
            if let Some(y) = self.shape.parent(v) {
                if act || self.is_active(y) {
                    e += (sigma[v] * sigma[y]) as f64;
                }
            }
            if act {
                for slot in self.shape.boundary_slots(v) {
                    if let Some(s) = self.boundary.spin(slot) {
                        e += (sigma[v] * s) as f64;
                    }
                }
            }
        }
        self.params.beta * e
    }

    fn child_messages(&self, v: Vertex, up: &[LogRatio]) -> f64 {
        let beta = self.params.beta;
        let mut acc = 0.0;
        for c in self.shape.children(v) {
            acc += log_f(beta, up[c].0);
        }
        for slot in self.shape.boundary_slots(v) {
            match self.boundary.spin(slot) {
                Some(1) => acc -= 2.0 * beta,
                Some(_) => acc += 2.0 * beta,
                None => {}
            }
        }
        acc
    }

    pub fn ratios(&self) -> RatioField {
        let n = self.shape.n();
        let beta = self.params.beta;
        let forced = |s: i8| {
            if s == 1 {
                LogRatio::FORCED_PLUS
            } else {
                LogRatio::FORCED_MINUS
            }
        };
        let mut up = vec![LogRatio(0.0); n];
        for v in (0..n).rev() {
            up[v] = match self.pinned[v] {
                Some(s) => forced(s),
                None => LogRatio(self.params.log_field() + self.child_messages(v, &up)),
            };
        }
        let mut full = up.clone();
        for v in 1..n {
            if self.pinned[v].is_some() {
                continue;
            }
            let y = self.shape.parent(v).expect("non-root");
            let cavity = match self.pinned[y] {
                Some(s) => forced(s).0,
                None => full[y].0 - log_f(beta, up[v].0),
            };
            full[v] = LogRatio(up[v].0 + log_f(beta, cavity));
        }
        RatioField { up, full }
    }

    /// Exact sample by sequential conditioning from the root down.
    pub fn sample<R: Rng>(&self, field: &RatioField, rng: &mut R) -> SpinConfig {
        let beta = self.params.beta;
        let mut sigma = vec![0i8; self.shape.n()];
        for v in self.shape.vertices() {
            sigma[v] = match self.pinned[v] {
                Some(s) => s,
                None => {
                    let x = match self.shape.parent(v) {
                        None => field.up[v].0,
                        Some(y) => field.up[v].0 - 2.0 * beta * sigma[y] as f64,
                    };
                    if rng.gen::<f64>() < logistic(-x) {
                        1
                    } else {
                        -1
                    }
                }
            };
        }
        sigma
    }

    pub fn brute_force(&self) -> Result<ExactDistribution> {
        let sites = self.active_sites();
        if sites.len() > BRUTE_FORCE_MAX_SITES {
            return Err(Error::Size(format!(
                "{} free sites exceed the exhaustive limit {BRUTE_FORCE_MAX_SITES}",
                sites.len()
            )));
        }
        let template = self.constant_config(-1);
        let count = 1usize << sites.len();
        let mut logw = Vec::with_capacity(count);
        let mut sigma = template.clone();
        for mask in 0..count {
            decode_mask(&sites, mask, &mut sigma);
            logw.push(self.log_weight(&sigma));
        }
        Ok(ExactDistribution::from_log_weights(sites, template, logw))
    }
}

fn decode_mask(sites: &[Vertex], mask: usize, sigma: &mut [i8]) {
    for (i, &v) in sites.iter().enumerate() {
        sigma[v] = if mask >> i & 1 == 1 { 1 } else { -1 };
    }
}

/// Exact law over the configurations of the active sites. Bit `i` of a state
/// index is set when `sites[i]` carries +1.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub sites: Vec<Vertex>,
    pub template: SpinConfig,
    pub probs: Vec<f64>,
}

impl ExactDistribution {
    fn from_log_weights(sites: Vec<Vertex>, template: SpinConfig, logw: Vec<f64>) -> Self {
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let z = sum(w.iter().copied());
        let probs = w.into_iter().map(|x| x / z).collect();
        ExactDistribution {
            sites,
            template,
            probs,
        }
    }

    pub fn config(&self, state: usize) -> SpinConfig {
        let mut sigma = self.template.clone();
        decode_mask(&self.sites, state, &mut sigma);
        sigma
    }

    pub fn expectation(&self, f: impl Fn(&[i8]) -> f64) -> f64 {
        let mut sigma = self.template.clone();
        sum(self.probs.iter().enumerate().map(|(s, p)| {
            decode_mask(&self.sites, s, &mut sigma);
            p * f(&sigma)
        }))
    }

    pub fn plus_probability(&self, v: Vertex) -> f64 {
        match self.sites.iter().position(|&s| s == v) {
            None => (self.template[v] == 1) as u8 as f64,
            Some(i) => sum(self
                .probs
                .iter()
                .enumerate()
                .filter(|(s, _)| s >> i & 1 == 1)
                .map(|(_, p)| *p)),
        }
    }

    pub fn magnetization(&self, v: Vertex) -> f64 {
        2.0 * self.plus_probability(v) - 1.0
    }
}

pub fn r_recursion(
    params: &ModelParams,
    shape: &TreeShape,
    obstacles: Option<&ObstacleEnv>,
    boundary: &Boundary,
) -> Result<RatioField> {
    Ok(IsingSystem::new(*params, shape, obstacles, boundary.clone())?.ratios())
}

pub fn brute_force_gibbs(
    params: &ModelParams,
    shape: &TreeShape,
    obstacles: Option<&ObstacleEnv>,
    boundary: &Boundary,
) -> Result<ExactDistribution> {
    IsingSystem::new(*params, shape, obstacles, boundary.clone())?.brute_force()
}

/// ∏_{z∈Γ} K_β(R_z); zero as soon as the path meets a pinned vertex.
pub fn path_weight(params: &ModelParams, ratios: &[LogRatio], path: &[Vertex]) -> f64 {
    let mut acc = 0.0;
    for &z in path {
        acc += log_k(params.beta, ratios[z].0);
    }
    acc.exp()
}

pub fn critical_beta0(b: usize) -> f64 {
    let b = b as f64;
    0.5 * ((b + 1.0) / (b - 1.0)).ln()
}

pub fn critical_beta1(b: usize) -> f64 {
    let s = (b as f64).sqrt();
    0.5 * ((s + 1.0) / (s - 1.0)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub log_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FixedPoint {
    pub fn magnetization(&self) -> f64 {
        (-0.5 * self.log_ratio).tanh()
    }
}

/// One step of the homogeneous map R ↦ e^{−2βh} F_β(R)^b in log form.
pub fn homogeneous_step(params: &ModelParams, x: f64) -> f64 {
    params.log_field() + params.b as f64 * log_f(params.beta, x)
}

/// Iterate the homogeneous map from `start` (±∞ allowed) until successive
/// values differ by less than [`FIXED_POINT_TOL`].
pub fn homogeneous_fixed_point(params: &ModelParams, start: f64) -> FixedPoint {
    let mut x = homogeneous_step(params, start);
    for it in 1..=FIXED_POINT_MAX_ITER {
        let next = homogeneous_step(params, x);
        if (next - x).abs() < FIXED_POINT_TOL {
            return FixedPoint {
                log_ratio: next,
                iterations: it,
                converged: true,
            };
        }
        x = next;
    }
    FixedPoint {
        log_ratio: x,
        iterations: FIXED_POINT_MAX_ITER,
        converged: false,
    }
}

/// Root magnetization under the plus boundary, on T_ℓ or in the limit.
pub fn mu_plus_root(params: &ModelParams, depth: Option<usize>) -> f64 {
    homogeneous_root(params, depth, f64::NEG_INFINITY)
}

pub fn mu_minus_root(params: &ModelParams, depth: Option<usize>) -> f64 {
    homogeneous_root(params, depth, f64::INFINITY)
}

fn homogeneous_root(params: &ModelParams, depth: Option<usize>, start: f64) -> f64 {
    match depth {
        Some(l) => {
            let mut x = start;
            for _ in 0..=l {
                x = homogeneous_step(params, x);
            }
            (-0.5 * x).tanh()
        }
        None => homogeneous_fixed_point(params, start).magnetization(),
    }
}

/// Whether the plus and minus fixed points differ at this field.
pub fn phases_coexist(params: &ModelParams) -> bool {
    let p = homogeneous_fixed_point(params, f64::NEG_INFINITY);
    let m = homogeneous_fixed_point(params, f64::INFINITY);
    (p.magnetization() - m.magnetization()).abs() > COEXISTENCE_GAP
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalField {
    pub h_c: f64,
    /// β ≤ β₀: the Gibbs measure is unique at every field.
    pub unique: bool,
}

/// Bisection for h_c(β, b) to within `tol`.
pub fn critical_field(beta: f64, b: usize, tol: f64) -> Result<CriticalField> {
    let base = ModelParams::new(beta, 0.0, b)?;
    if !(tol > 0.0) {
        return Err(Error::Param("tolerance must be positive".into()));
    }
    let at = |h: f64| phases_coexist(&ModelParams { h, ..base });
    if beta <= critical_beta0(b) || !at(0.0) {
        return Ok(CriticalField {
            h_c: 0.0,
            unique: true,
        });
    }
    let mut lo = 0.0;
    let mut hi = b as f64;
    while at(hi) {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalField {
        h_c: 0.5 * (lo + hi),
        unique: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub ell: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub k0: usize,
    pub sequence: Vec<TailEstimate>,
    pub sup: f64,
    pub diverged: bool,
    /// Stable fixed point of x ↦ c₁ + c₂x², when real.
    pub fixed_point: Option<f64>,
    pub below_fixed_point: bool,
}

fn up(x: f64) -> f64 {
    x.next_up()
}

/// Upper-bound recursion q_ℓ ≤ 2^{k₀+1}(2(1−p) + q_{ℓ−1}²), k₀ = ⌊4/a − 1⌋,
/// started at q₁ = 2(1−p). Every operation rounds upward, so each reported
/// value bounds the exact rational iterate from above.
pub fn r_tail_bound_recursion(a: f64, p: f64, b: usize, ell_max: usize) -> Result<TailBound> {
    if b != 2 {
        return Err(Error::Unsupported(format!(
            "analytic tail bound covers b = 2 only, got b = {b}"
        )));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Param(format!(
            "field margin must be positive, got {a}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Param(format!("p must lie in (0, 1), got {p}")));
    }
    let k0 = (4.0 / a - 1.0).floor().max(0.0) as usize;
    let c = 2f64.powi(k0 as i32 + 1);
    // 1 − p is exact for p in [1/2, 1) by Sterbenz; round up otherwise.
    let one_minus_p = if p >= 0.5 { 1.0 - p } else { up(1.0 - p) };
    let two_q = 2.0 * one_minus_p;
    // Scaling by the power of two c is exact.
    let c1 = c * two_q;
    let disc = 1.0 - 4.0 * c1 * c;
    let fixed_point = (disc >= 0.0).then(|| (1.0 - disc.sqrt()) / (2.0 * c));
    let mut sequence = Vec::with_capacity(ell_max);
    let mut q = two_q;
    let mut diverged = false;
    for ell in 1..=ell_max {
        if ell > 1 {
            q = c * up(two_q + up(q * q));
        }
        if q > 1.0 {
            diverged = true;
            q = 1.0;
        }
        sequence.push(TailEstimate {
            ell,
            k: 0,
            value: q,
        });
    }
    let sup = sequence.iter().map(|e| e.value).fold(0.0, f64::max);
    let below_fixed_point = match fixed_point {
        Some(x) => sequence.iter().all(|e| e.value <= x),
        None => false,
    };
    Ok(TailBound {
        k0,
        sequence,
        sup,
        diverged,
        fixed_point,
        below_fixed_point,
    })
}

/// Environment for R^ℓ: levels 0..ℓ−1 carry obstacles (root forced free),
/// free level-ℓ sites act as +1 boundary spins and obstacles there as −1.
fn tail_system(params: &ModelParams, p: f64, ell: usize, seed: u64) -> Result<IsingSystem> {
    let shape = TreeShape::new(params.b, ell - 1)?;
    let free = |v: usize| v == 0 || site_uniform(seed, DOMAIN_OBSTACLES, v as u128) < p;
    let flags: Vec<bool> = shape.vertices().map(free).collect();
    let env = ObstacleEnv::from_flags(&shape, flags)?;
    let n = shape.n();
    let bnd = (0..shape.boundary_len())
        .map(|i| if free(n + i) { 1 } else { -1 })
        .collect();
    IsingSystem::new(*params, &shape, Some(&env), Boundary::Fixed(bnd))
}

/// Monte Carlo estimate of P̃_p(R^ℓ ≥ ε) over environments with a free root.
pub fn r_tail_monte_carlo(
    params: &ModelParams,
    p: f64,
    ell: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_samples == 0 {
        return Err(Error::EmptySample);
    }
    if ell == 0 {
        return Err(Error::Param("tail depth must be >= 1".into()));
    }
    let log_eps = -2.0 * params.beta;
    let hits: Result<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let sys = tail_system(params, p, ell, split_seed(seed, i as u64))?;
            Ok((sys.ratios().root().0 >= log_eps) as u8 as f64)
        })
        .collect();
    Ok(Estimate::from_samples(&hits?))
}

/// Good/bad classification rule for the modified weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    /// Positive field margin `a`: good = regular with ⌊4/a⌋ − 1 regular vertices below.
    A { a: f64 },
    /// Zero field: good when at most (1 − 2a₁)b/2 off-path obstacles.
    B { a1: f64 },
    /// Critical field: good when at most (1 − a₁)b off-path obstacles.
    C { a1: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMoment {
    /// E exp(t Σ_x W(x)).
    pub moment: Estimate,
    /// E exp(t Σ_x W̃(x)) with the modified weights.
    pub modified_moment: Estimate,
    /// Fraction of path vertices in T(ω) classified good.
    pub good_fraction: f64,
    /// Good vertices whose K_β(R_z) exceeds u.
    pub good_above_u: usize,
}

struct WeightSample {
    w: f64,
    w_mod: f64,
    good: usize,
    classified: usize,
    good_above_u: usize,
}

fn weight_sample(sys: &IsingSystem, ell: usize, u: f64, regime: Regime) -> WeightSample {
    let shape = &sys.shape;
    let beta = sys.params.beta;
    let log_eps = -2.0 * beta;
    let field = sys.ratios();
    // (obstacles among off-path children, all free ones have R ≤ ε)
    let offpath = |z: usize, next: Option<usize>| -> (usize, bool) {
        let mut m = 0;
        let mut free_small = true;
        for y in shape.children(z).filter(|&y| Some(y) != next) {
            if !sys.is_active(y) {
                m += 1;
            } else if field.up[y].0 > log_eps {
                free_small = false;
            }
        }
        for slot in shape.boundary_slots(z) {
            if sys.boundary.spin(slot) == Some(-1) {
                m += 1;
            }
        }
        (m, free_small)
    };
    let b = shape.b() as f64;
    let mut out = WeightSample {
        w: 0.0,
        w_mod: 0.0,
        good: 0,
        classified: 0,
        good_above_u: 0,
    };
    let mut w_terms = Vec::new();
    let mut wm_terms = Vec::new();
    for x in shape.level_range(ell) {
        let path = shape.path_to_descendant(0, x).expect("descendant of root");
        if path.iter().any(|&z| !sys.is_active(z)) {
            continue;
        }
        w_terms.push(path_weight(&sys.params, &field.up, &path));
        let info: Vec<(usize, bool)> = path
            .iter()
            .enumerate()
            .map(|(i, &z)| offpath(z, path.get(i + 1).copied()))
            .collect();
        let regular: Vec<bool> = info.iter().map(|&(m, small)| m == 0 && small).collect();
        let mut wm = 1.0;
        for (i, &z) in path.iter().enumerate() {
            let (m, free_small) = info[i];
            let good = match regime {
                Regime::A { a } => {
                    let k0 = (4.0 / a).floor() as usize;
                    let below = regular[i + 1..].iter().take_while(|&&r| r).count();
                    regular[i] && below + 1 >= k0
                }
                Regime::B { a1 } => (m as f64) <= (1.0 - 2.0 * a1) * b / 2.0 && free_small,
                Regime::C { a1 } => (m as f64) <= (1.0 - a1) * b && free_small,
            };
            out.classified += 1;
            if good {
                out.good += 1;
                wm *= u;
                if log_k(beta, field.up[z].0).exp() > u {
                    out.good_above_u += 1;
                }
            }
        }
        wm_terms.push(wm);
    }
    out.w = sum(w_terms);
    out.w_mod = sum(wm_terms);
    out
}

/// Monte Carlo of the level-ℓ weight exponential moments over environments
/// with a free root; `tail` extra obstacle levels sit below level ℓ and the
/// level below those carries a plus boundary.
#[allow(clippy::too_many_arguments)]
pub fn modified_weight_moment(
    params: &ModelParams,
    p: f64,
    ell: usize,
    tail: usize,
    t: f64,
    u: f64,
    regime: Regime,
    n_samples: usize,
    seed: u64,
) -> Result<WeightMoment> {
    if n_samples == 0 {
        return Err(Error::EmptySample);
    }
    if !(t >= 0.0) {
        return Err(Error::Param("t must be >= 0".into()));
    }
    let shape = TreeShape::new(params.b, ell + tail)?;
    let samples: Result<Vec<WeightSample>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let s = split_seed(seed, i as u64);
            let flags = shape
                .vertices()
                .map(|v| v == 0 || site_uniform(s, DOMAIN_OBSTACLES, v as u128) < p)
                .collect();
            let env = ObstacleEnv::from_flags(&shape, flags)?;
            let sys = IsingSystem::new(*params, &shape, Some(&env), Boundary::Plus)?;
            Ok(weight_sample(&sys, ell, u, regime))
        })
        .collect();
    let samples = samples?;
    let m: Vec<f64> = samples.iter().map(|s| (t * s.w).exp()).collect();
    let mm: Vec<f64> = samples.iter().map(|s| (t * s.w_mod).exp()).collect();
    let good: usize = samples.iter().map(|s| s.good).sum();
    let classified: usize = samples.iter().map(|s| s.classified).sum();
    Ok(WeightMoment {
        moment: Estimate::from_samples(&m),
        modified_moment: Estimate::from_samples(&mm),
        good_fraction: if classified > 0 {
            good as f64 / classified as f64
        } else {
            0.0
        },
        good_above_u: samples.iter().map(|s| s.good_above_u).sum(),
    })
}

/// Exact sample of the Gibbs measure of `sys`, keyed by `(seed, index)`.
pub fn exact_sample(sys: &IsingSystem, field: &RatioField, seed: u64, index: u64) -> SpinConfig {
    let mut rng = keyed_rng(seed, DOMAIN_AUX, index as u128);
    sys.sample(field, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64, h: f64, b: usize) -> ModelParams {
        ModelParams::new(beta, h, b).unwrap()
    }

    #[test]
    fn f_beta_limits() {
        let p = params(0.8, 0.0, 2);
        let eps = p.eps();
        assert!((f_beta(&p, 0.0).unwrap() - eps).abs() < 1e-15);
        assert!((f_beta(&p, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((f_beta(&p, f64::INFINITY).unwrap() - 1.0 / eps).abs() < 1e-12);
        assert!(matches!(f_beta(&p, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn f_beta_matches_direct_formula() {
        let p = params(1.3, 0.0, 2);
        let eps = p.eps();
        for &a in &[1e-6, 0.01, 0.3, 2.0, 50.0, 1e5] {
            let direct = (eps + a) / (1.0 + eps * a);
            assert!((f_beta(&p, a).unwrap() / direct - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn k_beta_examples() {
        let p = params(1.0, 0.0, 2);
        assert!((k_beta(&p, 1.0).unwrap() - 0.7615941560).abs() < 1e-10);
        assert_eq!(k_beta(&p, 0.0).unwrap(), 0.0);
        assert_eq!(k_beta(&p, f64::INFINITY).unwrap(), 0.0);
        for &beta in &[0.2, 1.0, 3.0, 10.0] {
            let p = params(beta, 0.0, 2);
            assert!(k_beta(&p, 0.5 * p.eps()).unwrap() <= 0.5);
        }
    }

    #[test]
    fn k_beta_matches_direct_formula() {
        let p = params(0.7, 0.0, 2);
        let eps = p.eps();
        for &a in &[1e-3, 0.2, 1.0, 4.0, 300.0] {
            let direct = 1.0 / (eps * a + 1.0) - 1.0 / (a / eps + 1.0);
            assert!((k_beta(&p, a).unwrap() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn recursion_depth_zero() {
        let p = params(0.9, 0.0, 2);
        let t = TreeShape::new(2, 0).unwrap();
        let r = r_recursion(&p, &t, None, &Boundary::Plus).unwrap();
        assert!((r.root().ratio() - p.eps().powi(2)).abs() < 1e-15);
        let p = params(0.9, 0.4, 2);
        let r = r_recursion(&p, &t, None, &Boundary::Free).unwrap();
        assert!((r.root().ratio() - (-2.0 * 0.9 * 0.4f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn single_spin_oracle() {
        let p = params(0.6, 0.0, 2);
        let t = TreeShape::new(2, 0).unwrap();
        let d = brute_force_gibbs(&p, &t, None, &Boundary::Plus).unwrap();
        assert!((d.plus_probability(0) - 1.0 / (1.0 + (-4.0f64 * 0.6).exp())).abs() < 1e-15);
    }

    #[test]
    fn critical_betas() {
        assert!((critical_beta0(2) - 0.5493061).abs() < 1e-6);
        assert!((critical_beta1(2) - 0.8813736).abs() < 1e-6);
        for b in 2..=10 {
            assert!(critical_beta0(b) < critical_beta1(b));
        }
    }

    #[test]
    fn mu_plus_limits() {
        assert!((mu_plus_root(&params(20.0, 0.0, 2), None) - 1.0).abs() < 1e-8);
        let p = params(0.4, 0.0, 2);
        assert!((mu_plus_root(&p, None) - mu_minus_root(&p, None)).abs() < 1e-10);
    }

    #[test]
    fn tail_bound_divergence() {
        let t = r_tail_bound_recursion(0.5, 0.5, 2, 10).unwrap();
        assert!(t.diverged);
        assert!(matches!(
            r_tail_bound_recursion(1.0, 0.99, 3, 10),
            Err(Error::Unsupported(_))
        ));
    }
}
