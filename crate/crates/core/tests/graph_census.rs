mod common;

use std::collections::BTreeSet;

use gasket_sim::{corners, Half, LatticeCoord, PrefractalGraph};

fn coords_of(g: &PrefractalGraph) -> BTreeSet<common::P> {
    g.coords().iter().map(|c| (c.a, c.b)).collect()
}

fn edges_of(g: &PrefractalGraph) -> BTreeSet<(common::P, common::P)> {
    g.edges()
        .into_iter()
        .map(|(i, j)| {
            let (u, v) = (g.coord(i), g.coord(j));
            let (u, v) = ((u.a, u.b), (v.a, v.b));
            if u < v {
                (u, v)
            } else {
                (v, u)
            }
        })
        .collect()
}

#[test]
fn builds_match_triangle_subdivision() {
    for n in 0..=6 {
        for (half, name) in [(Half::Plus, "plus"), (Half::Minus, "minus"), (Half::Both, "both")] {
            let g = PrefractalGraph::build(n, half).unwrap();
            let e = common::enumerate(n, name);
            assert_eq!(coords_of(&g), e.vertices, "vertices n={n} {name}");
            assert_eq!(edges_of(&g), e.edges, "edges n={n} {name}");
        }
    }
}

#[test]
fn census_formulas() {
    for n in 0..=8u32 {
        let g = PrefractalGraph::build(n, Half::Plus).unwrap();
        let p = 3usize.pow(n + 1);
        assert_eq!(g.len(), (p + 3) / 2);
        assert_eq!(g.edge_count(), p);
        let b = PrefractalGraph::build(n, Half::Both).unwrap();
        assert_eq!(b.len(), p + 2);
        assert_eq!(b.edge_count(), 2 * p);
    }
}

#[test]
fn small_census_frozen() {
    // counts from the subdivision oracle
    let sizes: Vec<(usize, usize)> = (0..=4)
        .map(|n| {
            let e = common::enumerate(n, "plus");
            (e.vertices.len(), e.edges.len())
        })
        .collect();
    assert_eq!(sizes, vec![(3, 3), (6, 9), (15, 27), (42, 81), (123, 243)]);
}

#[test]
fn corner_coordinates() {
    for n in 1..=8u32 {
        let s = 1i64 << n;
        let k = corners(n);
        assert_eq!(k.x, LatticeCoord::new(s, 0));
        assert_eq!(k.y, LatticeCoord::new(0, s));
        assert_eq!(k.z, LatticeCoord::new(-s, s));
        assert_eq!(k.t, LatticeCoord::new(-s, 0));
        assert_eq!(k.x.reflect(), k.t);
        assert_eq!(k.y.reflect(), k.z);
    }
}

#[test]
fn interior_degree_four_and_frontier() {
    let g = PrefractalGraph::build(5, Half::Both).unwrap();
    let frontier: BTreeSet<_> = g.frontier().into_iter().collect();
    assert_eq!(frontier, corners(5).to_array().into_iter().collect());
    for id in 0..g.len() as u32 {
        let c = g.coord(id);
        let expected = if frontier.contains(&c) { 2 } else { 4 };
        assert_eq!(g.local_degree(id), expected, "{c}");
    }
}

#[test]
fn ambient_slots_agree_with_next_level() {
    for n in 0..=6 {
        let small = PrefractalGraph::build(n, Half::Both).unwrap();
        let big = PrefractalGraph::build(n + 1, Half::Both).unwrap();
        for &c in small.coords() {
            let ambient = small.cyclic_neighbors(c).unwrap();
            let mut there = big.prefractal_neighbors(c).unwrap();
            let mut here = ambient.to_vec();
            there.sort();
            here.sort();
            assert_eq!(here, there, "n={n} at {c}");
            assert_eq!(big.cyclic_neighbors(c).unwrap(), ambient, "cyclic order n={n} at {c}");
        }
    }
}

#[test]
fn cyclic_order_is_anticlockwise() {
    let g = PrefractalGraph::build(4, Half::Both).unwrap();
    for &c in g.coords() {
        let (x0, y0) = c.to_euclidean();
        let angles: Vec<f64> = g
            .cyclic_neighbors(c)
            .unwrap()
            .iter()
            .map(|n| {
                let (x, y) = n.to_euclidean();
                (y - y0).atan2(x - x0).rem_euclid(std::f64::consts::TAU)
            })
            .collect();
        assert!(angles.windows(2).all(|w| w[0] < w[1]), "{c}: {angles:?}");
    }
}

#[test]
fn cut_set_boundary_is_the_corners() {
    for n in 1..=5 {
        let g = PrefractalGraph::build(n + 1, Half::Both).unwrap();
        let s = g.cut_set(n).unwrap();
        let boundary: BTreeSet<_> = g.outer_boundary(&s, true).into_iter().collect();
        assert_eq!(boundary, corners(n).to_array().into_iter().collect());
    }
}

#[test]
fn capacity_error_above_max_level() {
    assert!(PrefractalGraph::build(gasket_sim::graph::MAX_LEVEL + 1, Half::Plus).is_err());
}
