//! Independent reference implementations used as test oracles. Nothing here
//! goes through the library's graph construction.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

pub type P = (i64, i64);

/// Unit triangles of the upper half at level `n`, found by repeated
/// subdivision of the big triangle with corners o, (2^n,0), (0,2^n).
fn unit_triangles(n: u32) -> Vec<[P; 3]> {
    let mut tris = vec![((0i64, 0i64), 1i64 << n)];
    while tris[0].1 > 1 {
        tris = tris
            .into_iter()
            .flat_map(|((a, b), s)| {
                let h = s / 2;
                [((a, b), h), ((a + h, b), h), ((a, b + h), h)]
            })
            .collect();
    }
    tris.into_iter()
        .map(|((a, b), _)| [(a, b), (a + 1, b), (a, b + 1)])
        .collect()
}

/// Vertex set and undirected edge set of a gasket approximation.
pub struct Enumerated {
    pub vertices: BTreeSet<P>,
    pub edges: BTreeSet<(P, P)>,
}

impl Enumerated {
    pub fn neighbours(&self) -> BTreeMap<P, Vec<P>> {
        let mut out: BTreeMap<P, Vec<P>> = self.vertices.iter().map(|&v| (v, Vec::new())).collect();
        for &(u, v) in &self.edges {
            out.get_mut(&u).unwrap().push(v);
            out.get_mut(&v).unwrap().push(u);
        }
        out
    }
}

fn edge(u: P, v: P) -> (P, P) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

pub fn reflect(p: P) -> P {
    (-p.0 - p.1, p.1)
}

/// `half`: "plus", "minus" or "both".
pub fn enumerate(n: u32, half: &str) -> Enumerated {
    let mut vertices = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for t in unit_triangles(n) {
        let images: Vec<[P; 3]> = match half {
            "plus" => vec![t],
            "minus" => vec![t.map(reflect)],
            _ => vec![t, t.map(reflect)],
        };
        for [p, q, r] in images {
            vertices.extend([p, q, r]);
            edges.extend([edge(p, q), edge(q, r), edge(p, r)]);
        }
    }
    Enumerated { vertices, edges }
}

/// Sequential toppling: always topple the smallest unstable vertex.
/// Every vertex has four neighbours in the gasket; chips sent to neighbours
/// outside `adj` are lost. Returns (final heights, topple counts).
pub fn brute_topple(adj: &BTreeMap<P, Vec<P>>, sigma: &BTreeMap<P, u64>) -> (BTreeMap<P, u64>, BTreeMap<P, u64>) {
    let mut h = sigma.clone();
    let mut t: BTreeMap<P, u64> = adj.keys().map(|&v| (v, 0)).collect();
    loop {
        let Some(x) = h.iter().find(|(_, &c)| c >= 4).map(|(&v, _)| v) else {
            break;
        };
        *h.get_mut(&x).unwrap() -= 4;
        *t.get_mut(&x).unwrap() += 1;
        for y in &adj[&x] {
            *h.get_mut(y).unwrap() += 1;
        }
    }
    (h, t)
}

/// Parallel (Jacobi) divisible toppling: every vertex above 1 emits its
/// whole excess at once, a quarter to each gasket neighbour.
pub fn jacobi_divisible(adj: &BTreeMap<P, Vec<P>>, sigma: &BTreeMap<P, f64>, tol: f64) -> (BTreeMap<P, f64>, BTreeMap<P, f64>) {
    let mut m = sigma.clone();
    let mut u: BTreeMap<P, f64> = adj.keys().map(|&v| (v, 0.0)).collect();
    loop {
        let excess: Vec<(P, f64)> = m.iter().filter(|(_, &x)| x > 1.0 + tol).map(|(&v, &x)| (v, x - 1.0)).collect();
        if excess.is_empty() {
            break;
        }
        for (v, e) in excess {
            *m.get_mut(&v).unwrap() -= e;
            *u.get_mut(&v).unwrap() += e;
            for y in &adj[&v] {
                *m.get_mut(y).unwrap() += e / 4.0;
            }
        }
    }
    (m, u)
}
