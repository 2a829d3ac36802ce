use std::collections::BTreeMap;

use gasket_sim::harness::{reflecting_return_walk_from, return_time_study};
use gasket_sim::rng::{derive_seed, trial_rng};
use gasket_sim::rotor::{CutSetLadder, ExitOutcome};
use gasket_sim::{corners, Half, PrefractalGraph, RotorConfig, RotorField, RotorLaw, WalkState};
use rand::Rng;

#[test]
fn reflecting_cut_set_returns_from_any_start() {
    for n in 1..=3 {
        let g = PrefractalGraph::build(n, Half::Both).unwrap();
        let s: Vec<_> = g.cut_set(n).unwrap().iter().collect();
        let mut rng = trial_rng(n as u64);
        for trial in 0..300 {
            let x = g.coord(s[rng.random_range(0..s.len())]);
            let field = RotorField::new(RotorLaw::uniform(), derive_seed(11, trial, n));
            let out = reflecting_return_walk_from(&g, n, x, field, 1 << 24).unwrap();
            assert!(matches!(out, ExitOutcome::ReturnedFirst(_)), "n={n} x={x} {out:?}");
        }
    }
}

#[test]
fn exits_follow_the_cyclic_order() {
    let g = PrefractalGraph::build(6, Half::Both).unwrap();
    for seed in 0..5 {
        let init = RotorConfig::sample(&g, &RotorLaw::uniform(), &mut trial_rng(seed));
        let mut walk = WalkState::new(&g, gasket_sim::LatticeCoord::ORIGIN, init.clone(), None).unwrap();
        let mut exits: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
        for _ in 0..20_000 {
            let from = walk.position();
            let Ok(to) = walk.step(&g) else { break };
            let slot = g.slots(from).iter().position(|s| s.target == Some(to)).unwrap() as u8;
            exits.entry(from).or_default().push(slot);
        }
        for (v, slots) in exits {
            let r0 = init.get(v).unwrap();
            for (k, &s) in slots.iter().enumerate() {
                assert_eq!(s, (r0 + 1 + k as u8) % 4, "vertex {}", g.coord(v));
            }
            let mut counts = [0usize; 4];
            slots.iter().for_each(|&s| counts[s as usize] += 1);
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }
}

#[test]
fn cut_set_events_use_disjoint_corners() {
    let g = PrefractalGraph::build(6, Half::Both).unwrap();
    let ladder = CutSetLadder::new(&g, 6).unwrap();
    for m in 1..=6 {
        let bm: Vec<_> = ladder.test(m).boundary().collect();
        let mut expected = corners(m).to_array().to_vec();
        expected.sort();
        assert_eq!(bm, expected);
        for n in m + 1..=6 {
            assert!(ladder.test(n).boundary().all(|c| !bm.contains(&c)));
        }
    }
}

#[test]
fn joint_reflecting_frequency_factorizes() {
    let law = RotorLaw::new([0.1, 0.6, 0.1, 0.2]).unwrap();
    let g = PrefractalGraph::build(2, Half::Both).unwrap();
    let ladder = CutSetLadder::new(&g, 2).unwrap();
    let p1 = ladder.test(1).probability(&law);
    let p2 = ladder.test(2).probability(&law);
    assert!((p1 - 0.6f64.powi(3) * 0.2).abs() < 1e-15);
    let trials = 200_000u64;
    let mut joint = 0u64;
    for t in 0..trials {
        let f = RotorField::new(law, derive_seed(5, t, 0));
        joint += (ladder.is_reflecting(&g, 1, &f).unwrap() && ladder.is_reflecting(&g, 2, &f).unwrap()) as u64;
    }
    let p = p1 * p2;
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    let freq = joint as f64 / trials as f64;
    assert!((freq - p).abs() < 4.0 * sd, "{freq} vs {p}");
}

#[test]
fn reflecting_level_guarantees_return() {
    let r = return_time_study(RotorLaw::uniform(), 400, 1 << 26, 7, 21, 1).unwrap();
    assert_eq!(r.summary.guarantee_violations, Some(0));
    for rec in &r.records {
        if let gasket_sim::TrialOutcome::ReturnTime { status, reflecting_level: Some(_), .. } = &rec.outcome {
            assert_eq!(*status, "returned");
        }
    }
}
