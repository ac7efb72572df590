//! Rooted b-ary trees in breadth-first indexing, boundary specifications and
//! obstacle environments.
//!
//! Vertex `v` has parent `(v - 1) / b` and children `b*v + 1 ..= b*v + b`.
//! The level-(depth+1) boundary is never stored as vertices: a leaf `v` has
//! boundary children whose breadth-first indices are `b*v + 1 ..= b*v + b`,
//! and boundary slot `i` refers to index `n + i`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{site_uniform, DOMAIN_OBSTACLES, DOMAIN_SPINS};

pub type Vertex = usize;

/// Ising spins (±1) or hard-core occupations (0/1), one entry per vertex.
pub type SpinConfig = Vec<i8>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    b: usize,
    depth: usize,
    n: usize,
    level_start: Vec<usize>,
}

pub fn build_tree(b: usize, depth: usize) -> Result<TreeShape> {
    TreeShape::new(b, depth)
}

impl TreeShape {
    pub fn new(b: usize, depth: usize) -> Result<TreeShape> {
        if b < 2 {
            return Err(Error::Param(format!(
                "branching factor must be >= 2, got {b}"
            )));
        }
        let overflow = || {
            Error::Size(format!(
                "tree b={b}, depth={depth} does not fit a machine word"
            ))
        };
        let mut level_start = Vec::with_capacity(depth + 3);
        let mut start = 0usize;
        let mut width = 1usize;
        for _ in 0..=depth + 1 {
            level_start.push(start);
            start = start.checked_add(width).ok_or_else(overflow)?;
            width = width.checked_mul(b).ok_or_else(overflow)?;
        }
        // `start` now counts interior plus boundary vertices.
        level_start.push(start);
        let n = level_start[depth + 1];
        Ok(TreeShape {
            b,
            depth,
            n,
            level_start,
        })
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of interior vertices.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vertices(&self) -> Range<Vertex> {
        0..self.n
    }

    /// Number of level-(depth+1) boundary sites.
    pub fn boundary_len(&self) -> usize {
        self.level_start[self.depth + 2] - self.n
    }

    pub fn level_range(&self, k: usize) -> Range<Vertex> {
        if k > self.depth {
            return 0..0;
        }
        self.level_start[k]..self.level_start[k + 1]
    }

    pub fn leaves(&self) -> Range<Vertex> {
        self.level_range(self.depth)
    }

    pub fn level(&self, v: Vertex) -> usize {
        debug_assert!(v < self.n);
        self.level_start.partition_point(|&s| s <= v) - 1
    }

    pub fn parent(&self, v: Vertex) -> Option<Vertex> {
        (v > 0).then(|| (v - 1) / self.b)
    }

    pub fn is_leaf(&self, v: Vertex) -> bool {
        v >= self.level_start[self.depth]
    }

    /// Interior children; empty for leaves.
    pub fn children(&self, v: Vertex) -> Range<Vertex> {
        if self.is_leaf(v) {
            0..0
        } else {
            self.b * v + 1..self.b * v + 1 + self.b
        }
    }

    /// Boundary slots below a leaf; empty for non-leaves.
    pub fn boundary_slots(&self, v: Vertex) -> Range<usize> {
        if self.is_leaf(v) {
            let first = self.b * v + 1 - self.n;
            first..first + self.b
        } else {
            0..0
        }
    }

    pub fn is_descendant(&self, y: Vertex, x: Vertex) -> bool {
        let mut v = x;
        loop {
            if v == y {
                return true;
            }
            if v < y || v == 0 {
                return false;
            }
            v = (v - 1) / self.b;
        }
    }

    /// Vertices below `y` at distance exactly `k`, in index order.
    pub fn descendants_at_depth(&self, y: Vertex, k: usize) -> Vec<Vertex> {
        if y >= self.n || self.level(y) + k > self.depth {
            return Vec::new();
        }
        let mut first = y;
        let mut count = 1usize;
        for _ in 0..k {
            first = self.b * first + 1;
            count *= self.b;
        }
        (first..first + count).collect()
    }

    /// The path from `y` down to `x`, excluding `y` and ending at `x`.
    pub fn path_to_descendant(&self, y: Vertex, x: Vertex) -> Result<Vec<Vertex>> {
        if y >= self.n || x >= self.n || !self.is_descendant(y, x) {
            return Err(Error::Domain(format!("{x} is not a descendant of {y}")));
        }
        let mut path = Vec::new();
        let mut v = x;
        while v != y {
            path.push(v);
            v = (v - 1) / self.b;
        }
        path.reverse();
        Ok(path)
    }

    pub fn subtree_size(&self, y: Vertex) -> usize {
        (0..=self.depth - self.level(y))
            .map(|k| self.b.pow(k as u32))
            .sum()
    }
}

/// Boundary condition on level depth+1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    Plus,
    Minus,
    Free,
    /// One value per boundary slot: ±1 for Ising, 0/1 for hard-core.
    Fixed(Vec<i8>),
    /// Hard-core: boundary occupied iff its level is even.
    EvenBC,
    /// Hard-core: boundary occupied iff its level is odd.
    OddBC,
}

impl Boundary {
    pub fn validate_ising(&self, shape: &TreeShape) -> Result<()> {
        match self {
            Boundary::EvenBC | Boundary::OddBC => Err(Error::Param(
                "even/odd boundaries apply to the hard-core model only".into(),
            )),
            Boundary::Fixed(v) => {
                if v.len() != shape.boundary_len() {
                    return Err(Error::Param(format!(
                        "fixed boundary has {} entries, expected {}",
                        v.len(),
                        shape.boundary_len()
                    )));
                }
                if v.iter().any(|&s| s != 1 && s != -1) {
                    return Err(Error::Param("Ising boundary values must be ±1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn validate_hardcore(&self, shape: &TreeShape) -> Result<()> {
        match self {
            Boundary::Plus | Boundary::Minus => Err(Error::Param(
                "plus/minus boundaries apply to the Ising model only".into(),
            )),
            Boundary::Fixed(v) => {
                if v.len() != shape.boundary_len() {
                    return Err(Error::Param(format!(
                        "fixed boundary has {} entries, expected {}",
                        v.len(),
                        shape.boundary_len()
                    )));
                }
                if v.iter().any(|&s| s != 0 && s != 1) {
                    return Err(Error::Param(
                        "hard-core boundary values must be 0 or 1".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Ising spin of a boundary slot; `None` for a free (absent) boundary.
    pub fn spin(&self, slot: usize) -> Option<i8> {
        match self {
            Boundary::Plus => Some(1),
            Boundary::Minus => Some(-1),
            Boundary::Free => None,
            Boundary::Fixed(v) => Some(v[slot]),
            Boundary::EvenBC | Boundary::OddBC => None,
        }
    }

    /// Hard-core occupation of a boundary slot at level `level`.
    pub fn occupied(&self, slot: usize, level: usize) -> bool {
        match self {
            Boundary::EvenBC => level % 2 == 0,
            Boundary::OddBC => level % 2 == 1,
            Boundary::Fixed(v) => v[slot] == 1,
            _ => false,
        }
    }
}

/// Obstacle environment: free/obstacle flags and the root's free component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleEnv {
    shape: TreeShape,
    free: Vec<bool>,
    component: Vec<bool>,
}

impl ObstacleEnv {
    pub fn from_flags(shape: &TreeShape, free: Vec<bool>) -> Result<ObstacleEnv> {
        if free.len() != shape.n() {
            return Err(Error::Param(format!(
                "flag vector has {} entries, expected {}",
                free.len(),
                shape.n()
            )));
        }
        let mut component = vec![false; shape.n()];
        for v in shape.vertices() {
            component[v] = free[v] && shape.parent(v).map_or(true, |y| component[y]);
        }
        Ok(ObstacleEnv {
            shape: shape.clone(),
            free,
            component,
        })
    }

    pub fn all_free(shape: &TreeShape) -> ObstacleEnv {
        Self::from_flags(shape, vec![true; shape.n()]).expect("length matches")
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    pub fn is_free(&self, v: Vertex) -> bool {
        self.free[v]
    }

    /// Membership in T(ω), the free component of the root.
    pub fn in_component(&self, v: Vertex) -> bool {
        self.component[v]
    }

    pub fn component_size(&self) -> usize {
        self.component.iter().filter(|&&c| c).count()
    }

    pub fn reaches_level(&self, k: usize) -> bool {
        self.shape.level_range(k).any(|v| self.component[v])
    }
}

/// Obstacles from a quenched configuration: everything within distance
/// `cut` of the root is free, deeper vertices are free iff η is +1 there.
pub fn obstacles_from_quench(shape: &TreeShape, eta: &[i8], cut: usize) -> Result<ObstacleEnv> {
    if eta.len() != shape.n() {
        return Err(Error::Param("configuration does not match the tree".into()));
    }
    if cut > shape.depth() {
        return Err(Error::Param(format!(
            "cut {cut} exceeds depth {}",
            shape.depth()
        )));
    }
    let free = shape
        .vertices()
        .map(|v| shape.level(v) <= cut || eta[v] == 1)
        .collect();
    ObstacleEnv::from_flags(shape, free)
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Param(format!("probability {p} outside [0, 1]")))
    }
}

/// Independent spins with P(+1) = p. The spin at `v` depends only on
/// `(seed, v)`, so trees of different depths agree on common vertices.
pub fn sample_bernoulli_spins(shape: &TreeShape, p: f64, seed: u64) -> Result<SpinConfig> {
    check_probability(p)?;
    Ok(shape
        .vertices()
        .map(|v| {
            if site_uniform(seed, DOMAIN_SPINS, v as u128) < p {
                1
            } else {
                -1
            }
        })
        .collect())
}

pub fn sample_obstacles_iid(shape: &TreeShape, p: f64, seed: u64) -> Result<ObstacleEnv> {
    check_probability(p)?;
    let free = shape
        .vertices()
        .map(|v| site_uniform(seed, DOMAIN_OBSTACLES, v as u128) < p)
        .collect();
    ObstacleEnv::from_flags(shape, free)
}

/// Free flag of vertex `v` in the i.i.d. environment of `sample_obstacles_iid`,
/// for trees too deep to materialize.
pub fn lazy_free(p: f64, seed: u64, v: u128) -> bool {
    site_uniform(seed, DOMAIN_OBSTACLES, v) < p
}
