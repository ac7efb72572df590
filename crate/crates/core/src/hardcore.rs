//! Hard-core lattice gas (independent sets) on the b-ary tree.
//!
//! Occupations are stored as `i8` values 0/1 so the dynamics engine of
//! [`crate::dynamics`] runs unchanged. Ratios are `R = P(occupied)/P(vacant)`
//! in plain floating point, with `+∞` for a pinned occupied site.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::HeatBath;
use crate::error::{Error, Result};
use crate::gibbs::{BRUTE_FORCE_MAX_SITES, FIXED_POINT_MAX_ITER, FIXED_POINT_TOL};
use crate::rng::{keyed_rng, site_uniform, DOMAIN_AUX, DOMAIN_NU_EVEN, DOMAIN_NU_ODD};
use crate::stats::sum;
use crate::tree::{Boundary, ObstacleEnv, SpinConfig, TreeShape, Vertex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HCParams {
    pub lambda: f64,
    pub b: usize,
}

impl HCParams {
    pub fn new(lambda: f64, b: usize) -> Result<HCParams> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Param(format!(
                "activity must be finite and > 0, got {lambda}"
            )));
        }
        if b < 2 {
            return Err(Error::Param(format!(
                "branching factor must be >= 2, got {b}"
            )));
        }
        Ok(HCParams { lambda, b })
    }

    pub fn p_lambda(&self) -> f64 {
        self.lambda / (1.0 + self.lambda)
    }

    pub fn q_lambda(&self) -> f64 {
        1.0 / (1.0 + self.lambda)
    }
}

/// Occupation of the τ^o configuration at a vertex of level `level`.
pub fn odd_config_value(level: usize) -> i8 {
    (level % 2 == 1) as i8
}

/// The τ^e (`even = true`) or τ^o configuration restricted to `shape`.
pub fn parity_config(shape: &TreeShape, even: bool) -> SpinConfig {
    shape
        .vertices()
        .map(|v| ((shape.level(v) % 2 == 0) == even) as i8)
        .collect()
}

/// σ ≺ η: σ ≤ η on even levels and σ ≥ η on odd levels.
pub fn hc_order_leq(shape: &TreeShape, sigma: &[i8], eta: &[i8]) -> Result<bool> {
    if sigma.len() != shape.n() || eta.len() != shape.n() {
        return Err(Error::Param(
            "configurations must live on the same region".into(),
        ));
    }
    Ok(shape.vertices().all(|v| {
        if shape.level(v) % 2 == 0 {
            sigma[v] <= eta[v]
        } else {
            sigma[v] >= eta[v]
        }
    }))
}

/// A hard-core region. Vertices outside T(ω) are pinned to τ^o, and so are
/// boundary sites whose parent leaf lies outside T(ω).
#[derive(Clone, Debug, PartialEq)]
pub struct HCSystem {
    pub params: HCParams,
    pub shape: TreeShape,
    pub boundary: Boundary,
    pinned: Vec<Option<i8>>,
    boundary_occ: Vec<bool>,
}

impl HCSystem {
    pub fn new(
        params: HCParams,
        shape: &TreeShape,
        obstacles: Option<&ObstacleEnv>,
        boundary: Boundary,
    ) -> Result<HCSystem> {
        if params.b != shape.b() {
            return Err(Error::Param(
                "parameter branching differs from the tree".into(),
            ));
        }
        boundary.validate_hardcore(shape)?;
        if let Some(env) = obstacles {
            if env.shape() != shape {
                return Err(Error::Param(
                    "obstacle environment lives on a different tree".into(),
                ));
            }
        }
        let inside = |v: Vertex| obstacles.map_or(true, |e| e.in_component(v));
        let pinned = shape
            .vertices()
            .map(|v| {
                if inside(v) {
                    None
                } else {
                    Some(odd_config_value(shape.level(v)))
                }
            })
            .collect();
        let bl = shape.depth() + 1;
        let mut boundary_occ = vec![false; shape.boundary_len()];
        for leaf in shape.leaves() {
            for slot in shape.boundary_slots(leaf) {
                boundary_occ[slot] = if inside(leaf) {
                    boundary.occupied(slot, bl)
                } else {
                    odd_config_value(bl) == 1
                };
            }
        }
        Ok(HCSystem {
            params,
            shape: shape.clone(),
            boundary,
            pinned,
            boundary_occ,
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

    pub fn boundary_occupied(&self, slot: usize) -> bool {
        self.boundary_occ[slot]
    }

    pub fn normalize(&self, eta: &mut [i8]) {
        for (s, p) in eta.iter_mut().zip(&self.pinned) {
            if let Some(v) = p {
                *s = *v;
            }
        }
    }

    /// All neighbours of `x` (boundary included) are vacant.
    pub fn neighbours_vacant(&self, eta: &[i8], x: Vertex) -> bool {
        self.shape.parent(x).map_or(true, |y| eta[y] == 0)
            && self.shape.children(x).all(|c| eta[c] == 0)
            && self.shape.boundary_slots(x).all(|s| !self.boundary_occ[s])
    }

    /// Independence, including edges to the boundary.
    pub fn is_legal(&self, eta: &[i8]) -> bool {
        eta.len() == self.shape.n()
            && self
                .shape
                .vertices()
                .all(|v| eta[v] == 0 || (eta[v] == 1 && self.neighbours_vacant(eta, v)))
    }

    fn occupy_probability_unchecked(&self, eta: &[i8], x: Vertex) -> f64 {
        if self.neighbours_vacant(eta, x) {
            self.params.p_lambda()
        } else {
            0.0
        }
    }

    pub fn ratios(&self) -> HCRatioField {
        let n = self.shape.n();
        let lambda = self.params.lambda;
        let forced = |s: i8| if s == 1 { f64::INFINITY } else { 0.0 };
        let mut up = vec![0.0; n];
        for v in (0..n).rev() {
            up[v] = match self.pinned[v] {
                Some(s) => forced(s),
                None => {
                    let mut r = lambda;
                    for c in self.shape.children(v) {
                        r /= 1.0 + up[c];
                    }
                    if self.shape.boundary_slots(v).any(|s| self.boundary_occ[s]) {
                        r = 0.0;
                    }
                    r
                }
            };
        }
        // down[v]: ratio at the parent of v with the subtree of v removed.
        let mut down = vec![0.0; n];
        let mut full = up.clone();
        for v in 1..n {
            let y = self.shape.parent(v).expect("non-root");
            down[v] = match self.pinned[y] {
                Some(s) => forced(s),
                None => {
                    let mut r = lambda;
                    for c in self.shape.children(y).filter(|&c| c != v) {
                        r /= 1.0 + up[c];
                    }
                    if y > 0 {
                        r /= 1.0 + down[y];
                    }
                    r
                }
            };
            if self.pinned[v].is_none() {
                full[v] = up[v] / (1.0 + down[v]);
            }
        }
        HCRatioField { up, full }
    }

    /// Exact sample of the Gibbs measure from the root down.
    pub fn sample<R: Rng>(&self, field: &HCRatioField, rng: &mut R) -> SpinConfig {
        let mut eta = vec![0i8; self.shape.n()];
        for v in self.shape.vertices() {
            eta[v] = match self.pinned[v] {
                Some(s) => s,
                None => {
                    let parent_occ = self.shape.parent(v).map_or(false, |y| eta[y] == 1);
                    let r = field.up[v];
                    (!parent_occ && rng.gen::<f64>() < occupation(r)) as i8
                }
            };
        }
        eta
    }

    /// Exhaustive law over the legal configurations of the active sites.
    pub fn brute_force(&self) -> Result<HCExact> {
        let sites = self.active_sites();
        if sites.len() > BRUTE_FORCE_MAX_SITES {
            return Err(Error::Size(format!(
                "{} free sites exceed the exhaustive limit {BRUTE_FORCE_MAX_SITES}",
                sites.len()
            )));
        }
        let mut template = vec![0i8; self.shape.n()];
        self.normalize(&mut template);
        let mut states = Vec::new();
        let mut weights = Vec::new();
        let mut eta = template.clone();
        for mask in 0..1usize << sites.len() {
            decode(&sites, mask, &mut eta);
            if self.is_legal(&eta) {
                states.push(mask);
                weights.push(self.params.lambda.powi(mask.count_ones() as i32));
            }
        }
        let z = sum(weights.iter().copied());
        let probs = weights.into_iter().map(|w| w / z).collect();
        Ok(HCExact {
            sites,
            template,
            states,
            probs,
        })
    }
}

fn occupation(r: f64) -> f64 {
    if r.is_infinite() {
        1.0
    } else {
        r / (1.0 + r)
    }
}

fn decode(sites: &[Vertex], mask: usize, eta: &mut [i8]) {
    for (i, &v) in sites.iter().enumerate() {
        eta[v] = (mask >> i & 1) as i8;
    }
}

/// Subtree ratios (`up`) and full conditional ratios (`full`).
#[derive(Clone, Debug, PartialEq)]
pub struct HCRatioField {
    pub up: Vec<f64>,
    pub full: Vec<f64>,
}

impl HCRatioField {
    pub fn root(&self) -> f64 {
        self.up[0]
    }

    pub fn occupation(&self, v: Vertex) -> f64 {
        occupation(self.full[v])
    }
}

/// Exact law over legal configurations: `states[k]` is a bit mask over
/// `sites` with probability `probs[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HCExact {
    pub sites: Vec<Vertex>,
    pub template: SpinConfig,
    pub states: Vec<usize>,
    pub probs: Vec<f64>,
}

impl HCExact {
    pub fn config(&self, k: usize) -> SpinConfig {
        let mut eta = self.template.clone();
        decode(&self.sites, self.states[k], &mut eta);
        eta
    }

    pub fn expectation(&self, f: impl Fn(&[i8]) -> f64) -> f64 {
        sum((0..self.states.len()).map(|k| self.probs[k] * f(&self.config(k))))
    }

    pub fn occupation(&self, v: Vertex) -> f64 {
        self.expectation(|eta| eta[v] as f64)
    }
}

pub fn hc_r_recursion(
    params: &HCParams,
    shape: &TreeShape,
    boundary: &Boundary,
) -> Result<HCRatioField> {
    Ok(HCSystem::new(*params, shape, None, boundary.clone())?.ratios())
}

pub fn hc_lambda_c(b: usize) -> f64 {
    let b = b as f64;
    b.powf(b) / (b - 1.0).powf(b + 1.0)
}

pub fn hc_homogeneous_step(params: &HCParams, r: f64) -> f64 {
    params.lambda / (1.0 + r).powi(params.b as i32)
}

/// Limits of the two-step map started from R = 0 (even phase at the root)
/// and from R = +∞ (odd phase).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HCPhases {
    pub even_ratio: f64,
    pub odd_ratio: f64,
    pub converged: bool,
}

impl HCPhases {
    pub fn even_occupation(&self) -> f64 {
        occupation(self.even_ratio)
    }

    pub fn odd_occupation(&self) -> f64 {
        occupation(self.odd_ratio)
    }

    pub fn split(&self, tol: f64) -> bool {
        (self.even_occupation() - self.odd_occupation()).abs() > tol
    }
}

pub fn hc_phases(params: &HCParams) -> HCPhases {
    let two = |r: f64| hc_homogeneous_step(params, hc_homogeneous_step(params, r));
    let mut even = params.lambda;
    let mut odd = 0.0;
    let mut converged = false;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let (e, o) = (two(even), two(odd));
        let done = (e - even).abs() <= FIXED_POINT_TOL * e.max(1.0)
            && (o - odd).abs() <= FIXED_POINT_TOL * o.max(1.0);
        even = e;
        odd = o;
        if done {
            converged = true;
            break;
        }
    }
    HCPhases {
        even_ratio: even,
        odd_ratio: odd,
        converged,
    }
}

/// Root occupation under μ^e_ℓ (`even`) or μ^o_ℓ; `None` gives the limit.
pub fn hc_mu_root(params: &HCParams, even: bool, depth: Option<usize>) -> f64 {
    match depth {
        None => {
            let ph = hc_phases(params);
            if even {
                ph.even_occupation()
            } else {
                ph.odd_occupation()
            }
        }
        Some(d) => {
            let boundary_occ = ((d + 1) % 2 == 0) == even;
            let mut r = if boundary_occ { f64::INFINITY } else { 0.0 };
            for _ in 0..=d {
                r = hc_homogeneous_step(params, r);
            }
            occupation(r)
        }
    }
}

pub fn hc_mu_even_root(params: &HCParams, depth: Option<usize>) -> f64 {
    hc_mu_root(params, true, depth)
}

/// ν_{p,λ}: even sites Bernoulli(p), then odd sites with no occupied
/// (even) neighbour occupied with probability p_λ. Even leaves adjacent to
/// an occupied boundary site stay vacant.
pub fn hc_sample_nu(
    params: &HCParams,
    p: f64,
    shape: &TreeShape,
    boundary: &Boundary,
    seed: u64,
) -> Result<SpinConfig> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Param(format!("p must lie in [0, 1], got {p}")));
    }
    let sys = HCSystem::new(*params, shape, None, boundary.clone())?;
    let mut eta = vec![0i8; shape.n()];
    let blocked = |v: Vertex| shape.boundary_slots(v).any(|s| sys.boundary_occupied(s));
    for v in shape.vertices().filter(|&v| shape.level(v) % 2 == 0) {
        eta[v] = (!blocked(v) && site_uniform(seed, DOMAIN_NU_EVEN, v as u128) < p) as i8;
    }
    let pl = params.p_lambda();
    for v in shape.vertices().filter(|&v| shape.level(v) % 2 == 1) {
        if sys.neighbours_vacant(&eta, v) {
            eta[v] = (site_uniform(seed, DOMAIN_NU_ODD, v as u128) < pl) as i8;
        }
    }
    Ok(eta)
}

/// Exact ν_{p,λ} law on a small tree, enumerated over the two stages.
/// Returned as (configuration, probability) pairs with distinct entries.
pub fn hc_nu_law(
    params: &HCParams,
    p: f64,
    shape: &TreeShape,
    boundary: &Boundary,
) -> Result<Vec<(SpinConfig, f64)>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Param(format!("p must lie in [0, 1], got {p}")));
    }
    let sys = HCSystem::new(*params, shape, None, boundary.clone())?;
    let even: Vec<Vertex> = shape
        .vertices()
        .filter(|&v| shape.level(v) % 2 == 0)
        .collect();
    let odd: Vec<Vertex> = shape
        .vertices()
        .filter(|&v| shape.level(v) % 2 == 1)
        .collect();
    if even.len() > BRUTE_FORCE_MAX_SITES || odd.len() > BRUTE_FORCE_MAX_SITES {
        return Err(Error::Size(
            "tree too large for the exact initial law".into(),
        ));
    }
    let mut law: std::collections::BTreeMap<SpinConfig, f64> = Default::default();
    let pl = params.p_lambda();
    for em in 0..1usize << even.len() {
        let mut eta = vec![0i8; shape.n()];
        let mut w = 1.0;
        for (i, &v) in even.iter().enumerate() {
            let blocked = shape.boundary_slots(v).any(|s| sys.boundary_occupied(s));
            let occ = em >> i & 1 == 1;
            w *= match (blocked, occ) {
                (true, true) => 0.0,
                (true, false) => 1.0,
                (false, true) => p,
                (false, false) => 1.0 - p,
            };
            eta[v] = occ as i8;
        }
        if w == 0.0 {
            continue;
        }
        let avail: Vec<Vertex> = odd
            .iter()
            .copied()
            .filter(|&v| sys.neighbours_vacant(&eta, v))
            .collect();
        for om in 0..1usize << avail.len() {
            let mut cfg = eta.clone();
            let mut wo = w;
            for (i, &v) in avail.iter().enumerate() {
                let occ = om >> i & 1 == 1;
                cfg[v] = occ as i8;
                wo *= if occ { pl } else { 1.0 - pl };
            }
            *law.entry(cfg).or_insert(0.0) += wo;
        }
    }
    Ok(law.into_iter().collect())
}

/// Heat-bath occupation probability at a free interior vertex.
pub fn hc_heat_bath_occupy_probability(sys: &HCSystem, eta: &[i8], x: Vertex) -> Result<f64> {
    if x >= sys.shape.n() || !sys.is_active(x) {
        return Err(Error::Domain(format!(
            "vertex {x} is not a free interior vertex"
        )));
    }
    Ok(sys.occupy_probability_unchecked(eta, x))
}

impl HeatBath for HCSystem {
    fn shape(&self) -> &TreeShape {
        &self.shape
    }

    fn is_active(&self, v: Vertex) -> bool {
        HCSystem::is_active(self, v)
    }

    fn update(&self, state: &[i8], x: Vertex, u: f64) -> i8 {
        let occ = (u < self.occupy_probability_unchecked(state, x)) as i8;
        debug_assert!(occ == 0 || self.neighbours_vacant(state, x));
        occ
    }

    fn normalize(&self, state: &mut [i8]) {
        HCSystem::normalize(self, state)
    }
}

/// Exact sample of the hard-core Gibbs measure keyed by `(seed, index)`.
pub fn hc_exact_sample(sys: &HCSystem, field: &HCRatioField, seed: u64, index: u64) -> SpinConfig {
    let mut rng = keyed_rng(seed, DOMAIN_AUX, index as u128);
    sys.sample(field, &mut rng)
}

pub const HC_TAIL_SOURCE: f64 = 12.0;
pub const HC_TAIL_QUADRATIC: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HCTailBound {
    /// q_0, q_1, ..., q_{ℓ_max}.
    pub sequence: Vec<f64>,
    pub sup: f64,
    pub diverged: bool,
    /// Stable root of x = c + 30x², when real.
    pub fixed_point: Option<f64>,
}

/// Iterate q_ℓ ≤ 12(1−p) + 30 q_{ℓ−2}² (b = 2) from q_0 = q_1 = 0, the
/// values forced by the even boundary. The iteration stops growing once a
/// value exceeds 1, which makes the bound vacuous.
pub fn hc_tail_recursion(p: f64, params: &HCParams, ell_max: usize) -> Result<HCTailBound> {
    if params.b != 2 {
        return Err(Error::Unsupported(
            "the hard-core tail recursion is available for b = 2 only".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Param(format!("p must lie in [0, 1], got {p}")));
    }
    let c = HC_TAIL_SOURCE * (1.0 - p);
    let disc = 1.0 - 4.0 * HC_TAIL_QUADRATIC * c;
    let fixed_point = (disc >= 0.0).then(|| 2.0 * c / (1.0 + disc.sqrt()));
    let mut seq = vec![0.0; ell_max + 1];
    let mut diverged = fixed_point.is_none();
    for l in 2..=ell_max {
        let prev = seq[l - 2];
        seq[l] = if prev > 1.0 {
            prev
        } else {
            c + HC_TAIL_QUADRATIC * prev * prev
        };
        if seq[l] > 1.0 {
            diverged = true;
        }
    }
    let sup = seq.iter().copied().fold(0.0, f64::max);
    Ok(HCTailBound {
        sequence: seq,
        sup,
        diverged,
        fixed_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_and_critical_activity() {
        let p = HCParams::new(3.0, 2).unwrap();
        assert_eq!(p.p_lambda(), 0.75);
        assert_eq!(p.p_lambda() + p.q_lambda(), 1.0);
        assert!(HCParams::new(0.0, 2).is_err());
        assert_eq!(hc_lambda_c(2), 4.0);
        assert_eq!(hc_lambda_c(3), 1.6875);
    }

    #[test]
    fn leaf_ratio_examples() {
        let shape = TreeShape::new(2, 0).unwrap();
        let p = HCParams::new(2.5, 2).unwrap();
        let f = hc_r_recursion(&p, &shape, &Boundary::Fixed(vec![0, 0])).unwrap();
        assert_eq!(f.root(), 2.5);
        let f = hc_r_recursion(&p, &shape, &Boundary::Fixed(vec![1, 0])).unwrap();
        assert_eq!(f.root(), 0.0);
    }

    #[test]
    fn tail_examples() {
        let p = HCParams::new(6.0, 2).unwrap();
        let t = hc_tail_recursion(1.0, &p, 50).unwrap();
        assert!(t.sequence.iter().all(|&q| q == 0.0) && !t.diverged);
        let t = hc_tail_recursion(0.999, &p, 200).unwrap();
        assert!(t.diverged && t.fixed_point.is_none());
        let t = hc_tail_recursion(0.9995, &p, 400).unwrap();
        assert!(!t.diverged && t.sup < 0.05);
        assert!(hc_tail_recursion(0.9, &HCParams::new(6.0, 3).unwrap(), 5).is_err());
    }

    #[test]
    fn occupy_probability_examples() {
        let shape = TreeShape::new(2, 1).unwrap();
        let sys =
            HCSystem::new(HCParams::new(3.0, 2).unwrap(), &shape, None, Boundary::Free).unwrap();
        assert_eq!(
            hc_heat_bath_occupy_probability(&sys, &[0, 0, 0], 0).unwrap(),
            0.75
        );
        assert_eq!(
            hc_heat_bath_occupy_probability(&sys, &[0, 1, 0], 0).unwrap(),
            0.0
        );
        assert!(hc_heat_bath_occupy_probability(&sys, &[0, 0, 0], 3).is_err());
    }
}
