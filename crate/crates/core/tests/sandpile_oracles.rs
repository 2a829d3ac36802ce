mod common;

use std::collections::BTreeMap;

use gasket_sim::divisible::stabilize_divisible;
use gasket_sim::rng::trial_rng;
use gasket_sim::sandpile::{infinite_volume_run, laplacian_check, stabilize, Domain};
use gasket_sim::{
    DivisibleConfig, DivisibleParams, Half, HeightLaw, LatticeCoord, PrefractalGraph, Sandpile,
    TopplePolicy,
};

fn to_map<T: Copy>(g: &PrefractalGraph, values: &[T]) -> BTreeMap<common::P, T> {
    g.coords().iter().zip(values).map(|(c, &v)| ((c.a, c.b), v)).collect()
}

#[test]
fn constant_four_on_level_one_plus() {
    let g = PrefractalGraph::build(1, Half::Plus).unwrap();
    let sigma = Sandpile::constant(&g, 4);
    let r = stabilize(&Domain::whole(&g), &sigma, TopplePolicy::Fifo, 1000).unwrap();

    let adj = common::enumerate(1, "plus").neighbours();
    let (h, t) = common::brute_topple(&adj, &adj.keys().map(|&v| (v, 4)).collect());
    let heights: Vec<u64> = r.final_heights.heights().iter().map(|&x| x as u64).collect();
    assert_eq!(to_map(&g, &heights), h);
    assert_eq!(to_map(&g, &r.topples), t);

    // frozen from the sequential oracle
    assert!(heights.iter().all(|&x| x == 2));
    let frozen: BTreeMap<common::P, u64> =
        [((0, 0), 2), ((0, 1), 3), ((0, 2), 2), ((1, 0), 3), ((1, 1), 3), ((2, 0), 2)].into();
    assert_eq!(t, frozen);
    assert_eq!(r.sink_mass, 24 - 12);
}

#[test]
fn infinite_volume_constant_four() {
    let g = PrefractalGraph::build(4, Half::Both).unwrap();
    let sigma = Sandpile::constant(&g, 4);
    let domains: Vec<_> = (1..=3).map(|n| g.sub_prefractal(n, Half::Both).unwrap()).collect();
    let run = infinite_volume_run(&g, &sigma, &domains, TopplePolicy::Fifo, 1 << 30).unwrap();
    assert_eq!(run.origin_odometer, vec![24, 80, 336]);

    for (k, region) in (1..=3).zip(&domains) {
        let adj = common::enumerate(k, "both").neighbours();
        let (_, t) = common::brute_topple(&adj, &adj.keys().map(|&v| (v, 4)).collect());
        assert_eq!(4 * t[&(0, 0)], run.origin_odometer[k as usize - 1]);
        // stage k in isolation gives the same odometer
        let direct = stabilize(&Domain::new(&g, region.clone()).unwrap(), &sigma, TopplePolicy::Lifo, 1 << 30).unwrap();
        assert_eq!(direct.odometer(g.require(LatticeCoord::ORIGIN).unwrap()), run.origin_odometer[k as usize - 1]);
        if k == 3 {
            for (&p, &tp) in &t {
                let id = g.require(LatticeCoord::new(p.0, p.1)).unwrap();
                assert_eq!(run.topples[id as usize], tp, "{p:?}");
            }
        }
    }
}

#[test]
fn random_piles_match_sequential_oracle() {
    let law = HeightLaw::new(vec![(1, 0.2), (3, 0.3), (5, 0.3), (7, 0.2)]).unwrap();
    let g = PrefractalGraph::build(2, Half::Both).unwrap();
    let adj = common::enumerate(2, "both").neighbours();
    for seed in 0..20 {
        let domain = Domain::whole(&g);
        let sigma = Sandpile::sample_iid(domain.region(), &law, &mut trial_rng(seed));
        let r = stabilize(&domain, &sigma, TopplePolicy::RandomOrder(seed), 1 << 30).unwrap();
        let s: Vec<u64> = sigma.heights().iter().map(|&x| x as u64).collect();
        let (h, t) = common::brute_topple(&adj, &to_map(&g, &s));
        let fh: Vec<u64> = r.final_heights.heights().iter().map(|&x| x as u64).collect();
        assert_eq!(to_map(&g, &fh), h);
        assert_eq!(to_map(&g, &r.topples), t);
        assert!(laplacian_check(&domain, &sigma, &r));
    }
}

#[test]
fn divisible_pair_matches_jacobi() {
    let g = PrefractalGraph::build(2, Half::Plus).unwrap();
    let mut sigma = DivisibleConfig::zeros(&g);
    let o = g.require(LatticeCoord::ORIGIN).unwrap();
    let e = g.require(LatticeCoord::new(1, 0)).unwrap();
    sigma.set(o, 1.6);
    sigma.set(e, 1.6);
    let params = DivisibleParams {
        epsilon: 1e-12,
        ..DivisibleParams::default()
    };
    let r = stabilize_divisible(&Domain::whole(&g), &sigma, params).unwrap();
    assert!(r.converged);

    let adj = common::enumerate(2, "plus").neighbours();
    let (m, u) = common::jacobi_divisible(&adj, &to_map(&g, sigma.masses()), 1e-13);
    for (i, c) in g.coords().iter().enumerate() {
        assert!((r.odometer[i] - u[&(c.a, c.b)]).abs() < 1e-9, "{c}");
        assert!((r.final_mass.masses()[i] - m[&(c.a, c.b)]).abs() < 1e-9, "{c}");
    }
    // u = 0.6 + u/4 at both sources
    assert!((r.odometer[o as usize] - 0.8).abs() < 1e-9);
    assert!((r.odometer[e as usize] - 0.8).abs() < 1e-9);
    let total: f64 = r.final_mass.masses().iter().sum::<f64>() + r.sink_mass;
    assert!((total - 3.2).abs() < 1e-12);
}
