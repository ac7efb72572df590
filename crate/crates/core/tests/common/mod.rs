//! Independent exhaustive oracles, written without the library's tree code.
#![allow(dead_code)]

/// Explicit tree: parent of every vertex (None for the root), interior plus
/// boundary vertices, breadth-first.
pub struct Graph {
    pub b: usize,
    pub depth: usize,
    pub interior: usize,
    pub total: usize,
    pub edges: Vec<(usize, usize)>,
    pub level: Vec<usize>,
}

pub fn graph(b: usize, depth: usize) -> Graph {
    let mut level = vec![0usize];
    let mut frontier = vec![0usize];
    let mut edges = Vec::new();
    let mut next = 1;
    let mut interior = 1;
    for d in 1..=depth + 1 {
        let mut new = Vec::new();
        for &p in &frontier {
            for _ in 0..b {
                edges.push((p, next));
                level.push(d);
                new.push(next);
                next += 1;
            }
        }
        if d <= depth {
            interior += new.len();
        }
        frontier = new;
    }
    Graph {
        b,
        depth,
        interior,
        total: next,
        edges,
        level,
    }
}

/// Ising single-site P(+1) for interior vertices. `fixed[v]` gives the spin of
/// pinned interior vertices and of boundary vertices (None on a boundary
/// vertex means absent).
pub fn ising_marginals(g: &Graph, fixed: &[Option<i8>], beta: f64, h: f64) -> Vec<f64> {
    let free: Vec<usize> = (0..g.interior).filter(|&v| fixed[v].is_none()).collect();
    let m = free.len();
    let mut logw = Vec::with_capacity(1 << m);
    let mut spin = vec![0i8; g.total];
    for mask in 0..1usize << m {
        for v in 0..g.total {
            spin[v] = fixed[v].unwrap_or(0);
        }
        for (i, &v) in free.iter().enumerate() {
            spin[v] = if mask >> i & 1 == 1 { 1 } else { -1 };
        }
        let mut e = 0.0;
        for &(u, v) in &g.edges {
            e += (spin[u] * spin[v]) as f64;
        }
        for &v in &free {
            e += h * spin[v] as f64;
        }
        logw.push(beta * e);
    }
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    (0..g.interior)
        .map(|v| match fixed[v] {
            Some(s) => (s == 1) as u8 as f64,
            None => {
                let i = free.iter().position(|&f| f == v).unwrap();
                (0..w.len())
                    .filter(|s| s >> i & 1 == 1)
                    .map(|s| w[s])
                    .sum::<f64>()
                    / z
            }
        })
        .collect()
}

/// Hard-core occupation probabilities for interior vertices; `occupied[v]`
/// for boundary vertices.
pub fn hardcore_marginals(g: &Graph, boundary_occupied: &[bool], lambda: f64) -> Vec<f64> {
    let n = g.interior;
    let mut z = 0.0;
    let mut occ = vec![0.0; n];
    let mut state = vec![false; g.total];
    for mask in 0..1usize << n {
        for v in 0..g.total {
            state[v] = if v < n {
                mask >> v & 1 == 1
            } else {
                boundary_occupied[v - n]
            };
        }
        if g.edges.iter().any(|&(u, v)| state[u] && state[v]) {
            continue;
        }
        let w = lambda.powi(mask.count_ones() as i32);
        z += w;
        for v in 0..n {
            if state[v] {
                occ[v] += w;
            }
        }
    }
    occ.iter().map(|o| o / z).collect()
}

/// Deterministic pseudo-random sequence for test instance generation.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn coin(&mut self) -> bool {
        self.next() & 1 == 1
    }

    pub fn unit(&mut self) -> f64 {
        (self.next() as f64 + 0.5) / (1u64 << 31) as f64
    }
}

fn neighbours(g: &Graph) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); g.total];
    for &(u, v) in &g.edges {
        nb[u].push(v);
        nb[v].push(u);
    }
    nb
}

/// Law at time `t` of a finite chain started at `s0`, by uniformization.
/// `rates(i)` lists the outgoing jumps of state `i`.
pub fn chain_law(
    k: usize,
    rates: &dyn Fn(usize) -> Vec<(usize, f64)>,
    s0: usize,
    t: f64,
) -> Vec<f64> {
    let jumps: Vec<Vec<(usize, f64)>> = (0..k).map(rates).collect();
    let m = jumps
        .iter()
        .map(|j| j.iter().map(|x| x.1).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut v = vec![0.0; k];
    v[s0] = 1.0;
    let mut out = vec![0.0; k];
    let mut weight = (-m * t).exp();
    let mut n = 0usize;
    let mut acc = 0.0;
    while acc < 1.0 - 1e-15 && n < 100_000 {
        for i in 0..k {
            out[i] += weight * v[i];
        }
        acc += weight;
        let mut next = v.clone();
        for i in 0..k {
            for &(j, r) in &jumps[i] {
                next[j] += v[i] * r / m;
                next[i] -= v[i] * r / m;
            }
        }
        v = next;
        n += 1;
        weight *= m * t / n as f64;
    }
    out
}

/// Ising heat-bath chain on the free interior sites; masks set bit i when
/// `free[i]` carries +1.
pub fn ising_chain(
    g: &Graph,
    fixed: &[Option<i8>],
    beta: f64,
    h: f64,
) -> (Vec<usize>, Box<dyn Fn(usize) -> Vec<(usize, f64)>>) {
    let free: Vec<usize> = (0..g.interior).filter(|&v| fixed[v].is_none()).collect();
    let nb = neighbours(g);
    let fixed = fixed.to_vec();
    let f2 = free.clone();
    let rates = move |mask: usize| {
        let spin = |v: usize| -> f64 {
            match f2.iter().position(|&f| f == v) {
                Some(i) => {
                    if mask >> i & 1 == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                None => fixed[v].map_or(0.0, |s| s as f64),
            }
        };
        f2.iter()
            .enumerate()
            .map(|(i, &x)| {
                let s: f64 = nb[x].iter().map(|&y| spin(y)).sum();
                let w = (2.0 * beta * spin(x) * (h + s)).exp();
                (mask ^ (1 << i), 1.0 / (1.0 + w))
            })
            .collect()
    };
    (free, Box::new(rates))
}

/// Hard-core chain over legal occupation masks of the interior (bit v for
/// vertex v). Returns the list of legal masks and jumps in index space.
pub fn hardcore_chain(
    g: &Graph,
    boundary_occupied: &[bool],
    lambda: f64,
) -> (Vec<usize>, Box<dyn Fn(usize) -> Vec<(usize, f64)>>) {
    let n = g.interior;
    let nb = neighbours(g);
    let occ = move |mask: usize, v: usize, bo: &[bool]| {
        if v < n {
            mask >> v & 1 == 1
        } else {
            bo[v - n]
        }
    };
    let bo = boundary_occupied.to_vec();
    let legal: Vec<usize> = (0..1usize << n)
        .filter(|&m| {
            g.edges
                .iter()
                .all(|&(u, v)| !(occ(m, u, &bo) && occ(m, v, &bo)))
        })
        .collect();
    let index: std::collections::HashMap<usize, usize> =
        legal.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let l2 = legal.clone();
    let rates = move |i: usize| {
        let mask = l2[i];
        let mut out = Vec::new();
        for x in 0..n {
            if mask >> x & 1 == 1 {
                out.push((index[&(mask ^ 1 << x)], 1.0 / (1.0 + lambda)));
            } else if nb[x].iter().all(|&y| !occ(mask, y, &bo)) {
                out.push((index[&(mask | 1 << x)], lambda / (1.0 + lambda)));
            }
        }
        out
    };
    (legal, Box::new(rates))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
