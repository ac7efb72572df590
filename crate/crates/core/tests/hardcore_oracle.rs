mod common;

use common::{graph, hardcore_marginals, Lcg};
use proptest::prelude::*;
use treeq::hardcore::*;
use treeq::tree::{Boundary, ObstacleEnv, TreeShape};

const TREES: [(usize, usize); 6] = [(2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)];

fn boundary_flags(sys: &HCSystem, shape: &TreeShape) -> Vec<bool> {
    (0..shape.boundary_len())
        .map(|s| sys.boundary_occupied(s))
        .collect()
}

#[test]
fn recursion_matches_enumeration() {
    let mut rng = Lcg(4);
    for &(b, depth) in &TREES {
        let shape = TreeShape::new(b, depth).unwrap();
        let g = graph(b, depth);
        let mut bcs = vec![Boundary::EvenBC, Boundary::OddBC, Boundary::Free];
        for _ in 0..5 {
            bcs.push(Boundary::Fixed(
                (0..shape.boundary_len())
                    .map(|_| rng.coin() as i8)
                    .collect(),
            ));
        }
        for bc in &bcs {
            for &lambda in &[0.5, 1.0, 4.0, 6.0] {
                let params = HCParams::new(lambda, b).unwrap();
                let sys = HCSystem::new(params, &shape, None, bc.clone()).unwrap();
                let field = sys.ratios();
                let oracle = hardcore_marginals(&g, &boundary_flags(&sys, &shape), lambda);
                let exact = sys.brute_force().unwrap();
                for v in shape.vertices() {
                    assert!(
                        (field.occupation(v) - oracle[v]).abs() < 1e-10,
                        "{b} {depth} {bc:?} {lambda} v{v}"
                    );
                    assert!((exact.occupation(v) - oracle[v]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn depth_two_even_boundary_root() {
    let shape = TreeShape::new(2, 2).unwrap();
    let params = HCParams::new(3.0, 2).unwrap();
    let f = hc_r_recursion(&params, &shape, &Boundary::EvenBC).unwrap();
    let sys = HCSystem::new(params, &shape, None, Boundary::EvenBC).unwrap();
    let root = f.root() / (1.0 + f.root());
    assert!((root - sys.brute_force().unwrap().occupation(0)).abs() < 1e-12);
    assert!((hc_mu_even_root(&params, Some(2)) - root).abs() < 1e-12);
}

#[test]
fn mu_root_matches_brute_force_both_parities() {
    for depth in 0..=3 {
        let shape = TreeShape::new(2, depth).unwrap();
        for (even, bc) in [(true, Boundary::EvenBC), (false, Boundary::OddBC)] {
            let params = HCParams::new(2.5, 2).unwrap();
            let sys = HCSystem::new(params, &shape, None, bc).unwrap();
            let exact = sys.brute_force().unwrap().occupation(0);
            assert!((hc_mu_root(&params, even, Some(depth)) - exact).abs() < 1e-12);
        }
    }
}

#[test]
fn pinned_sites_match_enumeration() {
    let shape = TreeShape::new(2, 2).unwrap();
    let mut rng = Lcg(17);
    for _ in 0..40 {
        let mut flags: Vec<bool> = (0..shape.n()).map(|_| rng.unit() < 0.8).collect();
        flags[0] = true;
        let env = ObstacleEnv::from_flags(&shape, flags).unwrap();
        let sys = HCSystem::new(
            HCParams::new(1.7, 2).unwrap(),
            &shape,
            Some(&env),
            Boundary::EvenBC,
        )
        .unwrap();
        let field = sys.ratios();
        let exact = sys.brute_force().unwrap();
        for v in shape.vertices() {
            assert!((field.occupation(v) - exact.occupation(v)).abs() < 1e-12);
        }
    }
}

#[test]
fn phase_split_around_critical_activity() {
    let lc = hc_lambda_c(2);
    let below = hc_phases(&HCParams::new(0.9 * lc, 2).unwrap());
    let above = hc_phases(&HCParams::new(1.1 * lc, 2).unwrap());
    assert!(below.converged && above.converged);
    assert!(!below.split(1e-8));
    assert!(above.split(1e-8));
    let six = hc_phases(&HCParams::new(6.0, 2).unwrap());
    assert!(six.even_occupation() - six.odd_occupation() > 0.01);
    assert!(hc_mu_even_root(&HCParams::new(1e-9, 2).unwrap(), None) < 1e-8);
}

#[test]
fn nu_examples() {
    let shape = TreeShape::new(2, 5).unwrap();
    let params = HCParams::new(3.0, 2).unwrap();
    let eta = hc_sample_nu(&params, 1.0, &shape, &Boundary::EvenBC, 1).unwrap();
    assert_eq!(eta, parity_config(&shape, true));
    let sys = HCSystem::new(params, &shape, None, Boundary::EvenBC).unwrap();
    let mut odd_occ = 0.0;
    let mut odd_total = 0.0;
    for seed in 0..2000 {
        let eta = hc_sample_nu(&params, 0.0, &shape, &Boundary::Free, seed).unwrap();
        for v in shape.vertices() {
            if shape.level(v) % 2 == 0 {
                assert_eq!(eta[v], 0);
            } else {
                odd_occ += eta[v] as f64;
                odd_total += 1.0;
            }
        }
    }
    assert!((odd_occ / odd_total - 0.75).abs() < 0.01);
    for seed in 0..10_000 {
        let eta = hc_sample_nu(&params, 0.6, &shape, &Boundary::EvenBC, seed).unwrap();
        assert!(sys.is_legal(&eta));
    }
    assert_eq!(
        hc_sample_nu(&params, 0.6, &shape, &Boundary::EvenBC, 9).unwrap(),
        hc_sample_nu(&params, 0.6, &shape, &Boundary::EvenBC, 9).unwrap()
    );
}

#[test]
fn nu_dominates_even_phase() {
    // Single-site indicators oriented by parity, and their pairwise products.
    for depth in 1..=2 {
        let shape = TreeShape::new(2, depth).unwrap();
        for &lambda in &[0.5, 1.0, 3.0, 6.0] {
            let params = HCParams::new(lambda, 2).unwrap();
            let sys = HCSystem::new(params, &shape, None, Boundary::EvenBC).unwrap();
            let mu = sys.brute_force().unwrap();
            for &p in &[params.p_lambda(), (params.p_lambda() + 1.0) / 2.0, 1.0] {
                let nu = hc_nu_law(&params, p, &shape, &Boundary::EvenBC).unwrap();
                let oriented = |eta: &[i8], v: usize| {
                    if shape.level(v) % 2 == 0 {
                        eta[v] as f64
                    } else {
                        1.0 - eta[v] as f64
                    }
                };
                let n = shape.n();
                for x in 0..n {
                    for y in x..n {
                        let f = |eta: &[i8]| oriented(eta, x) * oriented(eta, y);
                        let e_nu: f64 = nu.iter().map(|(c, w)| w * f(c)).sum();
                        let e_mu = mu.expectation(f);
                        assert!(
                            e_nu >= e_mu - 1e-12,
                            "depth {depth} λ {lambda} p {p} ({x},{y}): {e_nu} < {e_mu}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn order_examples() {
    let shape = TreeShape::new(3, 2).unwrap();
    let odd = parity_config(&shape, false);
    let even = parity_config(&shape, true);
    assert!(hc_order_leq(&shape, &odd, &even).unwrap());
    assert!(hc_order_leq(&shape, &even, &even).unwrap());
    assert!(!hc_order_leq(&shape, &even, &odd).unwrap());
    assert!(hc_order_leq(&shape, &odd, &even[..3]).is_err());
    let mut rng = Lcg(2);
    for _ in 0..1000 {
        let a: Vec<i8> = shape
            .vertices()
            .map(|_| (rng.next() % 5 == 0) as i8)
            .collect();
        let mut b = a.clone();
        if rng.coin() {
            let v = (rng.next() as usize) % shape.n();
            b[v] = 1 - b[v];
        }
        if hc_order_leq(&shape, &a, &b).unwrap() && hc_order_leq(&shape, &b, &a).unwrap() {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn tail_fixed_point_consistency() {
    let params = HCParams::new(6.0, 2).unwrap();
    let t = hc_tail_recursion(0.9995, &params, 2000).unwrap();
    let fp = t.fixed_point.unwrap();
    assert!((t.sequence[2000] - fp).abs() < 1e-12);
    assert!(t.sup <= fp + 1e-15);
    assert!((fp - (1.0 - (1.0f64 - 120.0 * 0.006).sqrt()) / 60.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn detailed_balance(lambda in 0.1f64..8.0, k in 0usize..1000, x in 0usize..7) {
        let shape = TreeShape::new(2, 2).unwrap();
        let sys = HCSystem::new(HCParams::new(lambda, 2).unwrap(), &shape, None, Boundary::OddBC).unwrap();
        let exact = sys.brute_force().unwrap();
        let i = k % exact.states.len();
        let sigma = exact.config(i);
        let mut flipped = sigma.clone();
        flipped[x] = 1 - sigma[x];
        let law = |c: &[i8]| exact.states.iter().position(|&m| (0..7).all(|v| (m >> v & 1) as i8 == c[v])).map_or(0.0, |j| exact.probs[j]);
        let rate = |c: &[i8]| {
            let p = hc_heat_bath_occupy_probability(&sys, c, x).unwrap();
            if c[x] == 1 { 1.0 - sys.params.p_lambda() } else { p }
        };
        if sys.is_legal(&flipped) {
            prop_assert!((law(&sigma) * rate(&sigma) - law(&flipped) * rate(&flipped)).abs() < 1e-12);
        } else {
            prop_assert_eq!(rate(&sigma), 0.0);
        }
    }

    #[test]
    fn mark_rule_is_monotone(mask in 0usize..128, x in 0usize..7, y in 0usize..7) {
        let shape = TreeShape::new(2, 2).unwrap();
        let sys = HCSystem::new(HCParams::new(3.0, 2).unwrap(), &shape, None, Boundary::Free).unwrap();
        let lo: Vec<i8> = (0..7).map(|v| (mask >> v & 1) as i8).collect();
        let mut hi = lo.clone();
        // Raise `hi` in the ≺ order at y.
        hi[y] = if shape.level(y) % 2 == 0 { 1 } else { 0 };
        let p_lo = hc_heat_bath_occupy_probability(&sys, &lo, x).unwrap();
        let p_hi = hc_heat_bath_occupy_probability(&sys, &hi, x).unwrap();
        if y != x {
            if shape.level(x) % 2 == 0 {
                prop_assert!(p_lo <= p_hi);
            } else {
                prop_assert!(p_lo >= p_hi);
            }
        }
    }
}
