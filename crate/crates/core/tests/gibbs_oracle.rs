mod common;

use common::{graph, ising_marginals, Lcg};
use treeq::gibbs::*;
use treeq::tree::*;

const BETAS: [f64; 5] = [0.3, 0.7, 1.2, 2.0, 5.0];
const FIELDS: [f64; 5] = [-1.0, -0.3, 0.0, 0.3, 1.0];

fn boundaries(shape: &TreeShape, rng: &mut Lcg) -> Vec<Boundary> {
    let mut out = vec![Boundary::Plus, Boundary::Minus, Boundary::Free];
    for _ in 0..20 {
        out.push(Boundary::Fixed(
            (0..shape.boundary_len())
                .map(|_| if rng.coin() { 1 } else { -1 })
                .collect(),
        ));
    }
    out
}

fn oracle_fixed(
    shape: &TreeShape,
    sys_pinned: &[Option<i8>],
    boundary: &Boundary,
) -> Vec<Option<i8>> {
    let mut fixed = sys_pinned.to_vec();
    for slot in 0..shape.boundary_len() {
        fixed.push(boundary.spin(slot));
    }
    fixed
}

#[test]
fn recursion_matches_exhaustive_oracle() {
    let mut rng = Lcg(11);
    for (b, depth) in [(2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)] {
        let shape = build_tree(b, depth).unwrap();
        let g = graph(b, depth);
        for boundary in boundaries(&shape, &mut rng) {
            for &beta in &BETAS {
                for &h in &FIELDS {
                    let p = ModelParams::new(beta, h, b).unwrap();
                    let field = r_recursion(&p, &shape, None, &boundary).unwrap();
                    let exact = brute_force_gibbs(&p, &shape, None, &boundary).unwrap();
                    let oracle = ising_marginals(
                        &g,
                        &oracle_fixed(&shape, &vec![None; shape.n()], &boundary),
                        beta,
                        h,
                    );
                    for v in shape.vertices() {
                        assert!(
                            (field.plus_probability(v) - oracle[v]).abs() < 1e-10,
                            "b={b} d={depth} v={v}"
                        );
                        assert!((exact.plus_probability(v) - oracle[v]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn recursion_matches_oracle_with_obstacles() {
    let mut rng = Lcg(5);
    for (b, depth) in [(2, 2), (3, 2), (2, 3)] {
        let shape = build_tree(b, depth).unwrap();
        let g = graph(b, depth);
        for _ in 0..30 {
            let flags: Vec<bool> = shape.vertices().map(|_| rng.unit() < 0.75).collect();
            let env = ObstacleEnv::from_flags(&shape, flags).unwrap();
            let pinned: Vec<Option<i8>> = shape
                .vertices()
                .map(|v| if env.in_component(v) { None } else { Some(-1) })
                .collect();
            let boundary = Boundary::Plus;
            let beta = 0.2 + 2.0 * rng.unit();
            let h = rng.unit() - 0.5;
            let p = ModelParams::new(beta, h, b).unwrap();
            let field = r_recursion(&p, &shape, Some(&env), &boundary).unwrap();
            let oracle = ising_marginals(&g, &oracle_fixed(&shape, &pinned, &boundary), beta, h);
            for v in shape.vertices() {
                assert!((field.plus_probability(v) - oracle[v]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn random_fixed_boundary_root_marginal() {
    let shape = build_tree(2, 2).unwrap();
    let p = ModelParams::new(1.0, 0.0, 2).unwrap();
    let mut rng = Lcg(99);
    let boundary = Boundary::Fixed((0..8).map(|_| if rng.coin() { 1 } else { -1 }).collect());
    let field = r_recursion(&p, &shape, None, &boundary).unwrap();
    let exact = brute_force_gibbs(&p, &shape, None, &boundary).unwrap();
    assert!((field.plus_probability(0) - exact.plus_probability(0)).abs() < 1e-12);
}

#[test]
fn minus_boundary_magnetization_cross_check() {
    let shape = build_tree(2, 2).unwrap();
    let p = ModelParams::new(0.7, 0.3, 2).unwrap();
    let field = r_recursion(&p, &shape, None, &Boundary::Minus).unwrap();
    let exact = brute_force_gibbs(&p, &shape, None, &Boundary::Minus).unwrap();
    assert!((field.magnetization(0) - exact.magnetization(0)).abs() < 1e-12);
}

#[test]
fn infinite_temperature_is_uniform() {
    let shape = build_tree(2, 2).unwrap();
    let p = ModelParams::new(1e-8, 0.0, 2).unwrap();
    let exact = brute_force_gibbs(&p, &shape, None, &Boundary::Plus).unwrap();
    let u = 1.0 / exact.probs.len() as f64;
    assert!(exact
        .probs
        .iter()
        .all(|q| (q - u).abs() < 1e-6 * u.max(1e-6)));
}

#[test]
fn brute_force_rejects_large_trees() {
    let shape = build_tree(2, 4).unwrap();
    let p = ModelParams::new(1.0, 0.0, 2).unwrap();
    assert!(matches!(
        brute_force_gibbs(&p, &shape, None, &Boundary::Plus),
        Err(treeq::Error::Size(_))
    ));
}

/// Marginal gap at x between the block conditioned on σ_y = +1 and σ_y = −1.
fn conditional_gap(
    p: &ModelParams,
    shape: &TreeShape,
    boundary: &Boundary,
    y: usize,
    x: usize,
) -> f64 {
    let g = graph(p.b, shape.depth());
    let mut plus = vec![None; shape.n()];
    plus[y] = Some(1);
    let mut minus = vec![None; shape.n()];
    minus[y] = Some(-1);
    let a = ising_marginals(&g, &oracle_fixed(shape, &plus, boundary), p.beta, p.h);
    let c = ising_marginals(&g, &oracle_fixed(shape, &minus, boundary), p.beta, p.h);
    a[x] - c[x]
}

#[test]
fn path_weight_is_conditional_marginal_gap() {
    let mut rng = Lcg(3);
    for (b, depth) in [(2, 2), (3, 1), (2, 3)] {
        let shape = build_tree(b, depth).unwrap();
        for boundary in boundaries(&shape, &mut rng).into_iter().take(6) {
            for &(beta, h) in &[(1.0, 0.0), (0.4, 0.3), (2.0, -0.5)] {
                let p = ModelParams::new(beta, h, b).unwrap();
                let field = r_recursion(&p, &shape, None, &boundary).unwrap();
                for y in shape.vertices() {
                    for x in shape.vertices().filter(|&x| shape.is_descendant(y, x)) {
                        let path = shape.path_to_descendant(y, x).unwrap();
                        let w = path_weight(&p, &field.up, &path);
                        let gap = if x == y {
                            1.0
                        } else {
                            conditional_gap(&p, &shape, &boundary, y, x)
                        };
                        assert!((w - gap).abs() < 1e-10, "b={b} y={y} x={x} w={w} gap={gap}");
                    }
                }
            }
        }
    }
}

#[test]
fn path_weight_edge_cases() {
    let p = ModelParams::new(1.0, 0.0, 2).unwrap();
    assert_eq!(path_weight(&p, &[], &[]), 1.0);
    assert_eq!(path_weight(&p, &[LogRatio::FORCED_PLUS], &[0]), 0.0);
    assert_eq!(path_weight(&p, &[LogRatio::FORCED_MINUS], &[0]), 0.0);
}

#[test]
fn sup_of_k_is_tanh() {
    for &beta in &[0.1, 0.5, 1.0, 2.5, 6.0] {
        let p = ModelParams::new(beta, 0.0, 2).unwrap();
        let f = |x: f64| log_k(beta, x);
        // golden-section search for the maximum of log K over log a
        let (mut lo, mut hi) = (-20.0f64, 20.0f64);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let c = lo + phi * (hi - lo);
            if f(a) > f(c) {
                hi = c;
            } else {
                lo = a;
            }
        }
        let xmax = 0.5 * (lo + hi);
        assert!(xmax.abs() < 1e-3);
        assert!((f(xmax).exp() - beta.tanh()).abs() < 1e-12);
        assert!((k_beta(&p, 1.0).unwrap() - beta.tanh()).abs() < 1e-14);
    }
}

#[test]
fn fkg_in_the_boundary() {
    let shape = build_tree(2, 2).unwrap();
    let g = graph(2, 2);
    let mut rng = Lcg(17);
    for _ in 0..40 {
        let lo: Vec<i8> = (0..8).map(|_| if rng.coin() { 1 } else { -1 }).collect();
        let hi: Vec<i8> = lo
            .iter()
            .map(|&s| if s == -1 && rng.coin() { 1 } else { s })
            .collect();
        let p = ModelParams::new(0.2 + 2.0 * rng.unit(), rng.unit() - 0.5, 2).unwrap();
        let a = brute_force_gibbs(&p, &shape, None, &Boundary::Fixed(lo)).unwrap();
        let c = brute_force_gibbs(&p, &shape, None, &Boundary::Fixed(hi)).unwrap();
        for x in 0..7 {
            assert!(a.expectation(|s| s[x] as f64) <= c.expectation(|s| s[x] as f64) + 1e-12);
            for y in 0..7 {
                let f = |s: &[i8]| ((s[x] == 1) && (s[y] == 1)) as u8 as f64;
                assert!(a.expectation(f) <= c.expectation(f) + 1e-12);
            }
        }
        let all_plus = |s: &[i8]| s[..7].iter().all(|&v| v == 1) as u8 as f64;
        assert!(a.expectation(all_plus) <= c.expectation(all_plus) + 1e-12);
        let _ = &g;
    }
}

#[test]
fn plus_phase_shrinks_with_volume() {
    for &(beta, h) in &[(0.5, 0.0), (1.0, -0.2), (2.0, 0.1)] {
        let p = ModelParams::new(beta, h, 2).unwrap();
        let mut prev = f64::INFINITY;
        for depth in 0..4 {
            let shape = build_tree(2, depth).unwrap();
            let m = brute_force_gibbs(&p, &shape, None, &Boundary::Plus)
                .unwrap()
                .magnetization(0);
            assert!(m <= prev + 1e-12);
            assert!((m - mu_plus_root(&p, Some(depth))).abs() < 1e-12);
            prev = m;
        }
    }
}

#[test]
fn plus_ratio_grows_with_depth_among_obstacles() {
    let p = ModelParams::new(1.5, 0.0, 2).unwrap();
    for seed in 0..20 {
        let deep = build_tree(2, 9).unwrap();
        let env = sample_obstacles_iid(&deep, 0.8, seed).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for depth in 0..=9 {
            let shape = build_tree(2, depth).unwrap();
            let flags = shape.vertices().map(|v| env.is_free(v)).collect();
            let e = ObstacleEnv::from_flags(&shape, flags).unwrap();
            let r = r_recursion(&p, &shape, Some(&e), &Boundary::Plus)
                .unwrap()
                .root()
                .0;
            assert!(r >= prev - 1e-12);
            prev = r;
        }
    }
}

#[test]
fn mu_plus_depth_two_matches_oracle() {
    let p = ModelParams::new(1.0, 0.0, 2).unwrap();
    let shape = build_tree(2, 2).unwrap();
    let oracle = ising_marginals(
        &graph(2, 2),
        &oracle_fixed(&shape, &vec![None; 7], &Boundary::Plus),
        1.0,
        0.0,
    );
    assert!((mu_plus_root(&p, Some(2)) - (2.0 * oracle[0] - 1.0)).abs() < 1e-12);
}

#[test]
fn critical_field_examples() {
    let b0 = critical_beta0(2);
    let near = critical_field(b0 + 1e-4, 2, 1e-6).unwrap();
    assert!(!near.unique && near.h_c < 0.05);
    let low = critical_field(0.9 * b0, 2, 1e-6).unwrap();
    assert!(low.unique && low.h_c == 0.0);
    // Large-β saddle-node of the minus fixed point:
    // h_c = (b−1) − ln(b^b/(b−1)^{b−1})/(2β) up to O(e^{−4β}).
    for &(beta, b) in &[(5.0, 2usize), (20.0, 2), (6.0, 3)] {
        let bf = b as f64;
        let asym = (bf - 1.0) - (bf.powf(bf) / (bf - 1.0).powf(bf - 1.0)).ln() / (2.0 * beta);
        let c = critical_field(beta, b, 1e-7).unwrap();
        assert!(
            (c.h_c - asym).abs() < 1e-5,
            "beta={beta} b={b}: {} vs {asym}",
            c.h_c
        );
    }
    assert!((critical_field(20.0, 2, 1e-6).unwrap().h_c - 1.0).abs() < 0.05);
    for &(beta, b) in &[(5.0, 2usize), (1.0, 3), (0.8, 2)] {
        let c = critical_field(beta, b, 1e-6).unwrap();
        let at = |h: f64| phases_coexist(&ModelParams::new(beta, h, b).unwrap());
        assert!(at(c.h_c - 2e-6));
        assert!(!at(c.h_c + 2e-6));
    }
}

#[test]
fn tail_bound_fixed_point_consistency() {
    // p = 1 − 2^{-13}: c₁ = 2^{-8}, c₂ = 16; stable root of 16x² − x + 2^{-8}.
    let p = 1.0 - 2f64.powi(-13);
    let t = r_tail_bound_recursion(1.0, p, 2, 200).unwrap();
    let closed = (1.0 - (1.0 - 64.0 * 2f64.powi(-8)).sqrt()) / 32.0;
    assert_eq!(t.k0, 3);
    assert!((t.sequence.last().unwrap().value - closed).abs() < 1e-12);
    assert!(!t.diverged && t.below_fixed_point);
    for w in t.sequence.windows(2) {
        assert!(w[1].value >= w[0].value);
    }
}

#[test]
fn tail_bound_critical_p_stays_below_double_root() {
    let t = r_tail_bound_recursion(1.0, 1.0 - 2f64.powi(-11), 2, 100).unwrap();
    assert_eq!(t.fixed_point, Some(1.0 / 32.0));
    assert!(t.below_fixed_point && !t.diverged);
}

#[test]
fn tail_monte_carlo_all_free_is_zero() {
    let p = ModelParams::new(3.0, 0.0, 2).unwrap();
    let e = r_tail_monte_carlo(&p, 1.0, 6, 50, 1).unwrap();
    assert_eq!(e.mean, 0.0);
    assert!(matches!(
        r_tail_monte_carlo(&p, 0.9, 6, 0, 1),
        Err(treeq::Error::EmptySample)
    ));
}

#[test]
fn tail_monte_carlo_below_bound() {
    let params = ModelParams::new(3.0, 0.0, 2).unwrap();
    for &p in &[0.999, 1.0 - 2f64.powi(-11)] {
        let bound = r_tail_bound_recursion(1.0, p, 2, 6).unwrap();
        let e = r_tail_monte_carlo(&params, p, 6, 20_000, 7).unwrap();
        assert!(e.mean <= bound.sequence[5].value + 3.0 * e.se);
    }
}

#[test]
fn weight_moment_trivial_cases() {
    let params = ModelParams::new(4.0, 0.0, 2).unwrap();
    let m =
        modified_weight_moment(&params, 0.9, 3, 2, 0.0, 0.1, Regime::A { a: 1.0 }, 100, 3).unwrap();
    assert_eq!((m.moment.mean, m.modified_moment.mean), (1.0, 1.0));
    let m = modified_weight_moment(&params, 1.0, 6, 2, 0.05, 0.1, Regime::A { a: 1.0 }, 200, 3)
        .unwrap();
    assert!(m.moment.mean <= 2.0 + 3.0 * m.moment.se);
}

#[test]
fn weight_moment_single_level_exact() {
    for &(beta, h, p, t) in &[
        (1.0, 0.0, 0.7, 3.0),
        (0.5, 0.2, 0.5, 5.0),
        (2.0, -0.3, 0.9, 10.0),
    ] {
        let params = ModelParams::new(beta, h, 2).unwrap();
        let eps = params.eps();
        let r_leaf = (-2.0 * beta * h).exp() * eps * eps;
        let k = 1.0 / (eps * r_leaf + 1.0) - 1.0 / (r_leaf / eps + 1.0);
        let exact = (1.0 - p + p * (t * k).exp()).powi(2);
        let m = modified_weight_moment(&params, p, 1, 0, t, 0.5, Regime::B { a1: 0.1 }, 40_000, 21)
            .unwrap();
        assert!(
            (m.moment.mean - exact).abs() <= 3.0 * m.moment.se,
            "{} vs {exact}",
            m.moment.mean
        );
    }
}
