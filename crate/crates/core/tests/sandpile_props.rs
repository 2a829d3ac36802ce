use gasket_sim::divisible::stabilize_divisible;
use gasket_sim::sandpile::{laplacian_violation, stabilize, Domain};
use gasket_sim::{DivisibleConfig, DivisibleParams, Half, PrefractalGraph, Sandpile, TopplePolicy};
use proptest::prelude::*;

const LEVEL: u32 = 3;

fn graph() -> PrefractalGraph {
    PrefractalGraph::build(LEVEL, Half::Plus).unwrap()
}

fn heights(max: u32) -> impl Strategy<Value = Vec<u32>> {
    let n = graph().len();
    prop::collection::vec(0..=max, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn abelian_across_policies(h in heights(9), seed in any::<u64>()) {
        let g = graph();
        let d = Domain::whole(&g);
        let sigma = Sandpile::from_heights(h);
        let a = stabilize(&d, &sigma, TopplePolicy::Fifo, u64::MAX).unwrap();
        let b = stabilize(&d, &sigma, TopplePolicy::Lifo, u64::MAX).unwrap();
        let c = stabilize(&d, &sigma, TopplePolicy::RandomOrder(seed), u64::MAX).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        prop_assert_eq!(laplacian_violation(&d, &sigma, &a), None);
        prop_assert_eq!(sigma.mass_in(d.region()), a.final_heights.mass_in(d.region()) + a.sink_mass);
        prop_assert!(a.final_heights.heights().iter().all(|&x| x <= 3));
    }

    #[test]
    fn toppling_is_monotone(h in heights(6), extra in heights(3)) {
        let g = graph();
        let d = Domain::whole(&g);
        let s1 = Sandpile::from_heights(h.clone());
        let s2 = Sandpile::from_heights(h.iter().zip(&extra).map(|(a, b)| a + b).collect());
        let t1 = stabilize(&d, &s1, TopplePolicy::Fifo, u64::MAX).unwrap().topples;
        let t2 = stabilize(&d, &s2, TopplePolicy::Lifo, u64::MAX).unwrap().topples;
        prop_assert!(t1.iter().zip(&t2).all(|(a, b)| a <= b));
    }

    #[test]
    fn divisible_is_monotone(m in prop::collection::vec(0.0f64..2.5, graph().len()), extra in prop::collection::vec(0.0f64..1.0, graph().len())) {
        let g = graph();
        let d = Domain::whole(&g);
        let params = DivisibleParams { epsilon: 1e-10, ..DivisibleParams::default() };
        let s1 = DivisibleConfig::from_masses(m.clone()).unwrap();
        let s2 = DivisibleConfig::from_masses(m.iter().zip(&extra).map(|(a, b)| a + b).collect()).unwrap();
        let u1 = stabilize_divisible(&d, &s1, params).unwrap();
        let u2 = stabilize_divisible(&d, &s2, params).unwrap();
        prop_assert!(u1.converged && u2.converged);
        prop_assert!(u1.odometer.iter().zip(&u2.odometer).all(|(a, b)| *a <= b + 1e-6));
        let total = s1.masses().iter().sum::<f64>();
        let after = u1.final_mass.masses().iter().sum::<f64>() + u1.sink_mass;
        prop_assert!((total - after).abs() < 1e-9 * total.max(1.0));
    }

    #[test]
    fn divisible_scale_equivariance(m in prop::collection::vec(0.0f64..2.5, graph().len())) {
        let g = graph();
        let d = Domain::whole(&g);
        let base = DivisibleParams { epsilon: 1e-10, ..DivisibleParams::default() };
        let sigma = DivisibleConfig::from_masses(m).unwrap();
        let r = stabilize_divisible(&d, &sigma, base).unwrap();
        // scaling by a power of two is exact in floating point
        let p4 = DivisibleParams { threshold: 4.0, epsilon: 4.0 * base.epsilon, ..base };
        let r4 = stabilize_divisible(&d, &sigma.scaled(4.0), p4).unwrap();
        prop_assert!(r.odometer.iter().zip(&r4.odometer).all(|(a, b)| 4.0 * a == *b));
        let p3 = DivisibleParams { threshold: 3.0, epsilon: 3.0 * base.epsilon, ..base };
        let r3 = stabilize_divisible(&d, &sigma.scaled(3.0), p3).unwrap();
        prop_assert!(r.odometer.iter().zip(&r3.odometer).all(|(a, b)| (3.0 * a - b).abs() <= 1e-6 * (1.0 + b)));
    }
}
