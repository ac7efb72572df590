//! Continuous-time heat-bath dynamics under the grand coupling.
//!
//! Each vertex owns a rate-1 Poisson clock with uniform marks, drawn from the
//! ChaCha stream keyed by `(driver seed, CLOCK, vertex)`. An update at `x`
//! with mark `U` writes the "high" value (+1, or occupied) iff
//! `U < P(high | neighbours)`. Every coupled trajectory reads the same
//! clocks, so monotone rules preserve the partial order pathwise.
//!
//! Replica `i` of a driver with seed `s` uses seed `split_seed(s, i)`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{logistic, IsingSystem};
use crate::rng::{keyed_rng, split_seed, DOMAIN_CLOCK};
use crate::stats::Estimate;
use crate::tree::{SpinConfig, TreeShape, Vertex};

/// A local heat-bath rule on a finite tree.
pub trait HeatBath: Sync {
    fn shape(&self) -> &TreeShape;
    fn is_active(&self, v: Vertex) -> bool;
    /// Value written at `x` when its clock rings with mark `u`.
    fn update(&self, state: &[i8], x: Vertex, u: f64) -> i8;
    /// Force pinned sites to their fixed values.
    fn normalize(&self, state: &mut [i8]);
}

impl HeatBath for IsingSystem {
    fn shape(&self) -> &TreeShape {
        &self.shape
    }

    fn is_active(&self, v: Vertex) -> bool {
        IsingSystem::is_active(self, v)
    }

    fn update(&self, state: &[i8], x: Vertex, u: f64) -> i8 {
        if u < self.plus_probability(state, x) {
            1
        } else {
            -1
        }
    }

    fn normalize(&self, state: &mut [i8]) {
        IsingSystem::normalize(self, state)
    }
}

/// P(new spin = +1) for the heat-bath update at a free interior vertex.
pub fn heat_bath_plus_probability(sys: &IsingSystem, sigma: &[i8], x: Vertex) -> Result<f64> {
    if x >= sys.shape.n() || !sys.is_active(x) {
        return Err(Error::Domain(format!(
            "vertex {x} is not a free interior vertex"
        )));
    }
    Ok(sys.plus_probability(sigma, x))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDriver {
    pub seed: u64,
    pub horizon: f64,
}

impl CouplingDriver {
    pub fn new(seed: u64, horizon: f64) -> Result<CouplingDriver> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Param(format!(
                "horizon must be finite and >= 0, got {horizon}"
            )));
        }
        Ok(CouplingDriver { seed, horizon })
    }

    pub fn replica(&self, i: u64) -> CouplingDriver {
        CouplingDriver {
            seed: split_seed(self.seed, i),
            horizon: self.horizon,
        }
    }

    pub fn clock(&self, v: u128) -> VertexClock {
        VertexClock {
            rng: keyed_rng(self.seed, DOMAIN_CLOCK, v),
            t: 0.0,
            horizon: self.horizon,
        }
    }

    /// All events of vertex `v` up to the horizon.
    pub fn events(&self, v: u128) -> Vec<(f64, f64)> {
        let mut c = self.clock(v);
        std::iter::from_fn(|| c.next_event()).collect()
    }
}

pub struct VertexClock {
    rng: ChaCha8Rng,
    t: f64,
    horizon: f64,
}

impl VertexClock {
    /// Next `(time, mark)` not beyond the horizon.
    pub fn next_event(&mut self) -> Option<(f64, f64)> {
        let gap: f64 = self.rng.sample(Exp1);
        let mark: f64 = self.rng.gen();
        self.t += gap;
        (self.t <= self.horizon).then_some((self.t, mark))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Update {
    pub t: f64,
    pub v: Vertex,
    pub value: i8,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub updates: Vec<Update>,
    pub probe_times: Vec<f64>,
    pub snapshots: Vec<SpinConfig>,
}

/// Where the coupled engine reports back to its observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Checkpoint {
    Event { t: f64, v: Vertex },
    Probe { index: usize, t: f64 },
}

struct Pending {
    t: f64,
    v: Vertex,
    mark: f64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed: BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.v.cmp(&self.v))
    }
}

fn check_probes(probes: &[f64], driver: &CouplingDriver) -> Result<()> {
    for w in probes.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(Error::Param("probe times must be non-decreasing".into()));
        }
    }
    if let Some(&last) = probes.last() {
        if !(last >= 0.0) {
            return Err(Error::Param("probe times must be >= 0".into()));
        }
        if last > driver.horizon {
            return Err(Error::Horizon {
                time: last,
                horizon: driver.horizon,
            });
        }
    }
    Ok(())
}

/// Run several systems in lockstep on one driver. Systems may live on trees
/// of different depths (same branching); an event at `v` updates every system
/// in which `v` is an active interior vertex. The observer sees every event
/// and every probe time, in time order.
pub fn run_coupled<M: HeatBath>(
    models: &[&M],
    states: &mut [SpinConfig],
    driver: &CouplingDriver,
    probes: &[f64],
    mut observe: impl FnMut(Checkpoint, &[SpinConfig]),
) -> Result<()> {
    if models.is_empty() {
        return Ok(());
    }
    if models.len() != states.len() {
        return Err(Error::Param(
            "one initial configuration per system is required".into(),
        ));
    }
    let b = models[0].shape().b();
    for (m, s) in models.iter().zip(states.iter_mut()) {
        if m.shape().b() != b {
            return Err(Error::Param(
                "coupled systems must share the branching factor".into(),
            ));
        }
        if s.len() != m.shape().n() {
            return Err(Error::Param(
                "initial configuration does not match its tree".into(),
            ));
        }
        m.normalize(s);
    }
    check_probes(probes, driver)?;
    let t_end = probes.last().copied().unwrap_or(0.0);
    let width = models.iter().map(|m| m.shape().n()).max().unwrap_or(0);
    let mut clocks: Vec<Option<VertexClock>> = (0..width).map(|_| None).collect();
    let mut heap = BinaryHeap::with_capacity(width);
    let stop = CouplingDriver {
        horizon: t_end,
        ..*driver
    };
    for v in 0..width {
        if models.iter().any(|m| v < m.shape().n() && m.is_active(v)) {
            let mut c = stop.clock(v as u128);
            if let Some((t, mark)) = c.next_event() {
                heap.push(Pending { t, v, mark });
            }
            clocks[v] = Some(c);
        }
    }
    let mut next_probe = 0;
    while let Some(ev) = heap.pop() {
        while next_probe < probes.len() && probes[next_probe] < ev.t {
            observe(
                Checkpoint::Probe {
                    index: next_probe,
                    t: probes[next_probe],
                },
                states,
            );
            next_probe += 1;
        }
        for (m, s) in models.iter().zip(states.iter_mut()) {
            if ev.v < s.len() && m.is_active(ev.v) {
                s[ev.v] = m.update(s, ev.v, ev.mark);
            }
        }
        observe(Checkpoint::Event { t: ev.t, v: ev.v }, states);
        if let Some((t, mark)) = clocks[ev.v].as_mut().and_then(|c| c.next_event()) {
            heap.push(Pending { t, v: ev.v, mark });
        }
    }
    while next_probe < probes.len() {
        observe(
            Checkpoint::Probe {
                index: next_probe,
                t: probes[next_probe],
            },
            states,
        );
        next_probe += 1;
    }
    Ok(())
}

/// Advance `state` to time `t` (no observer).
pub fn run_to<M: HeatBath>(
    model: &M,
    state: &mut SpinConfig,
    driver: &CouplingDriver,
    t: f64,
) -> Result<()> {
    run_coupled(
        &[model],
        std::slice::from_mut(state),
        driver,
        &[t],
        |_, _| {},
    )
}

pub fn simulate<M: HeatBath>(
    model: &M,
    init: &[i8],
    driver: &CouplingDriver,
    probes: &[f64],
) -> Result<Trajectory> {
    Ok(
        coupled_simulate(&[model], &[init.to_vec()], driver, probes)?
            .pop()
            .expect("one trajectory"),
    )
}

pub fn coupled_simulate<M: HeatBath>(
    models: &[&M],
    inits: &[SpinConfig],
    driver: &CouplingDriver,
    probes: &[f64],
) -> Result<Vec<Trajectory>> {
    let mut states = inits.to_vec();
    let mut out: Vec<Trajectory> = models
        .iter()
        .map(|_| Trajectory {
            probe_times: probes.to_vec(),
            ..Default::default()
        })
        .collect();
    run_coupled(models, &mut states, driver, probes, |cp, st| match cp {
        Checkpoint::Event { t, v } => {
            for (i, (m, s)) in models.iter().zip(st).enumerate() {
                if v < s.len() && m.is_active(v) {
                    out[i].updates.push(Update { t, v, value: s[v] });
                }
            }
        }
        Checkpoint::Probe { .. } => {
            for (traj, s) in out.iter_mut().zip(st) {
                traj.snapshots.push(s.clone());
            }
        }
    })?;
    Ok(out)
}

/// Mean of the value at `x` at time `t` over `n` independent drivers.
pub fn estimate_rho<M: HeatBath>(
    model: &M,
    init: &[i8],
    t: f64,
    x: Vertex,
    n: usize,
    seed: u64,
) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::Param("at least two replicas are required".into()));
    }
    if x >= model.shape().n() {
        return Err(Error::Domain(format!("vertex {x} outside the tree")));
    }
    let driver = CouplingDriver::new(seed, t)?;
    let values: Result<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut s = init.to_vec();
            run_to(model, &mut s, &driver.replica(i), t)?;
            Ok(s[x] as f64)
        })
        .collect();
    Ok(Estimate::from_samples(&values?))
}

pub const DEFAULT_SAFETY_CONSTANT: f64 = 4.0;

pub fn truncation_depth_for_time(t: f64, safety_constant: f64) -> usize {
    (safety_constant * t.max(1.0)).ceil() as usize
}

/// Boundary of a lazily explored Ising tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LazyBoundary {
    Plus,
    Minus,
    Free,
}

/// Exact evaluation of single spins of the dynamics on a tree too deep to
/// store, by following the backward light cone of the query. Clocks match
/// the finite engine vertex by vertex, so on trees that fit in memory the
/// two agree exactly.
pub struct LazyIsing<'a> {
    pub beta: f64,
    pub h: f64,
    pub b: usize,
    pub depth: usize,
    pub boundary: LazyBoundary,
    pub driver: CouplingDriver,
    pub init: &'a (dyn Fn(u128) -> i8 + Sync),
    /// Vertices outside T(ω) read −1.
    pub free: &'a (dyn Fn(u128) -> bool + Sync),
    level_start: Vec<u128>,
    rings: HashMap<u128, Vec<(f64, f64)>>,
    memo: HashMap<(u128, usize), i8>,
}

impl<'a> LazyIsing<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta: f64,
        h: f64,
        b: usize,
        depth: usize,
        boundary: LazyBoundary,
        driver: CouplingDriver,
        init: &'a (dyn Fn(u128) -> i8 + Sync),
        free: &'a (dyn Fn(u128) -> bool + Sync),
    ) -> Result<LazyIsing<'a>> {
        if b < 2 {
            return Err(Error::Param("branching factor must be >= 2".into()));
        }
        let mut level_start = vec![0u128];
        let mut width = 1u128;
        for _ in 0..=depth + 1 {
            let s = level_start.last().unwrap().checked_add(width);
            width = width.checked_mul(b as u128).unwrap_or(u128::MAX);
            match s {
                Some(s) if width < u128::MAX => level_start.push(s),
                _ => {
                    return Err(Error::Size(format!(
                        "depth {depth} too large for 128-bit indices"
                    )))
                }
            }
        }
        Ok(LazyIsing {
            beta,
            h,
            b,
            depth,
            boundary,
            driver,
            init,
            free,
            level_start,
            rings: HashMap::new(),
            memo: HashMap::new(),
        })
    }

    fn level(&self, v: u128) -> usize {
        self.level_start.partition_point(|&s| s <= v) - 1
    }

    fn rings(&mut self, v: u128) -> &Vec<(f64, f64)> {
        let d = self.driver;
        self.rings.entry(v).or_insert_with(|| d.events(v))
    }

    /// Number of distinct vertices whose clocks were read.
    pub fn explored(&self) -> usize {
        self.rings.len()
    }

    /// Deepest level touched so far.
    pub fn deepest(&self) -> usize {
        self.rings.keys().map(|&v| self.level(v)).max().unwrap_or(0)
    }

    fn neighbours(&self, v: u128) -> Vec<u128> {
        let mut out = Vec::with_capacity(self.b + 1);
        if v > 0 {
            out.push((v - 1) / self.b as u128);
        }
        if self.level(v) < self.depth {
            let first = self.b as u128 * v + 1;
            out.extend((0..self.b as u128).map(|k| first + k));
        }
        out
    }

    fn boundary_sum(&self, v: u128) -> f64 {
        if self.level(v) < self.depth {
            return 0.0;
        }
        let s = match self.boundary {
            LazyBoundary::Plus => 1.0,
            LazyBoundary::Minus => -1.0,
            LazyBoundary::Free => 0.0,
        };
        s * self.b as f64
    }

    /// Index of the last ring of `v` strictly before `t` (0 = initial value).
    fn rings_before(&mut self, v: u128, t: f64) -> usize {
        self.rings(v).partition_point(|&(s, _)| s < t)
    }

    /// Spin of vertex `x` at time `t` ≤ horizon.
    pub fn spin(&mut self, x: u128, t: f64) -> i8 {
        if !(self.free)(x) {
            return -1;
        }
        let k = self.rings(x).partition_point(|&(s, _)| s <= t);
        let mut stack = vec![(x, k)];
        while let Some(&(v, k)) = stack.last() {
            if k == 0 || self.memo.contains_key(&(v, k)) {
                stack.pop();
                continue;
            }
            let (tk, mark) = self.rings(v)[k - 1];
            let mut missing = false;
            let mut field = self.boundary_sum(v);
            for w in self.neighbours(v) {
                if !(self.free)(w) {
                    field -= 1.0;
                    continue;
                }
                let kw = self.rings_before(w, tk);
                if kw == 0 {
                    field += (self.init)(w) as f64;
                } else if let Some(&s) = self.memo.get(&(w, kw)) {
                    field += s as f64;
                } else {
                    stack.push((w, kw));
                    missing = true;
                }
            }
            if !missing {
                let p = logistic(2.0 * self.beta * (self.h + field));
                self.memo.insert((v, k), if mark < p { 1 } else { -1 });
                stack.pop();
            }
        }
        if k == 0 {
            (self.init)(x)
        } else {
            self.memo[&(x, k)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::ModelParams;
    use crate::tree::Boundary;

    #[test]
    fn clock_is_increasing_and_reproducible() {
        let d = CouplingDriver::new(9, 50.0).unwrap();
        let a = d.events(3);
        assert_eq!(a, d.events(3));
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(a.iter().all(|e| e.0 <= 50.0 && (0.0..1.0).contains(&e.1)));
        assert_ne!(a, d.events(4));
    }

    #[test]
    fn heat_bath_examples() {
        let shape = TreeShape::new(2, 1).unwrap();
        let sys = IsingSystem::new(
            ModelParams::new(1.0, 0.0, 2).unwrap(),
            &shape,
            None,
            Boundary::Plus,
        )
        .unwrap();
        let sigma = vec![1, 1, 1];
        let p = heat_bath_plus_probability(&sys, &sigma, 0).unwrap();
        assert!((p - 0.9820137900379085).abs() < 1e-12);
        let sigma = vec![-1, 1, -1];
        assert_eq!(heat_bath_plus_probability(&sys, &sigma, 0).unwrap(), 0.5);
        assert!(heat_bath_plus_probability(&sys, &sigma, 3).is_err());
    }

    #[test]
    fn horizon_is_enforced() {
        let shape = TreeShape::new(2, 1).unwrap();
        let sys = IsingSystem::new(
            ModelParams::new(1.0, 0.0, 2).unwrap(),
            &shape,
            None,
            Boundary::Plus,
        )
        .unwrap();
        let d = CouplingDriver::new(1, 1.0).unwrap();
        assert!(matches!(
            simulate(&sys, &[1, 1, 1], &d, &[2.0]),
            Err(Error::Horizon { .. })
        ));
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(truncation_depth_for_time(0.0, 4.0), 4);
        assert_eq!(truncation_depth_for_time(10.0, 4.0), 40);
    }
}
