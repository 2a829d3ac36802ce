//! Level-n prefractals of the doubly infinite Sierpiński gasket.
//!
//! The right half `SG_n⁺` is grown by the triangle-doubling recursion
//! `V_{n+1} = V_n ∪ (V_n + (2^n, 0)) ∪ (V_n + (0, 2^n))` (lattice shifts), the
//! left half is its mirror image, and the full prefractal glues the two at the
//! origin. Every vertex additionally carries its four neighbours in the
//! infinite gasket (the "ambient" view), so objects built at level `n` stay
//! valid when embedded in larger levels.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Direction, LatticeCoord};

/// Every vertex of the infinite gasket has degree 4.
pub const SG_DEGREE: usize = 4;

/// Largest level `build` will materialize (`|V| = 3^14 + 2` for both halves).
pub const MAX_LEVEL: u32 = 13;

pub type VertexId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Plus,
    Minus,
    Both,
}

impl Half {
    pub fn as_str(self) -> &'static str {
        match self {
            Half::Plus => "plus",
            Half::Minus => "minus",
            Half::Both => "both",
        }
    }
}

impl std::str::FromStr for Half {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plus" | "+" => Ok(Half::Plus),
            "minus" | "-" => Ok(Half::Minus),
            "both" => Ok(Half::Both),
            other => Err(Error::InvalidArgument(format!("unknown half {other:?}"))),
        }
    }
}

/// One neighbour of a vertex in the infinite gasket.
///
/// `target` is `None` when the neighbour lies outside the materialized prefractal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub dir: Direction,
    pub coord: LatticeCoord,
    pub target: Option<VertexId>,
}

/// The four outer corners `x_n, y_n, z_n, t_n` of `SG_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corners {
    pub x: LatticeCoord,
    pub y: LatticeCoord,
    pub z: LatticeCoord,
    pub t: LatticeCoord,
}

impl Corners {
    pub fn to_array(self) -> [LatticeCoord; 4] {
        [self.x, self.y, self.z, self.t]
    }
}

pub fn corners(n: u32) -> Corners {
    let s = 1i64 << n;
    Corners {
        x: LatticeCoord::new(s, 0),
        y: LatticeCoord::new(0, s),
        z: LatticeCoord::new(-s, s),
        t: LatticeCoord::new(-s, 0),
    }
}

/// Direction bitmasks of the right half `SG_n⁺`, keyed by vertex.
fn plus_masks(n: u32) -> HashMap<LatticeCoord, u8> {
    let mut masks: HashMap<LatticeCoord, u8> = HashMap::new();
    // unit triangle: o -> (1,0) is dir 0, o -> (0,1) dir 1, (1,0) -> (0,1) dir 2
    masks.insert(LatticeCoord::new(0, 0), 0b000011);
    masks.insert(LatticeCoord::new(1, 0), 0b001100);
    masks.insert(LatticeCoord::new(0, 1), 0b110000);
    for k in 0..n {
        let s = 1i64 << k;
        let shifts = [LatticeCoord::new(s, 0), LatticeCoord::new(0, s)];
        let mut next = HashMap::with_capacity(masks.len() * 3);
        for (&v, &m) in &masks {
            *next.entry(v).or_insert(0) |= m;
            for shift in shifts {
                *next.entry(v + shift).or_insert(0) |= m;
            }
        }
        masks = next;
    }
    masks
}

fn reflect_mask(mask: u8) -> u8 {
    Direction::ALL
        .iter()
        .filter(|d| mask & (1 << d.index()) != 0)
        .fold(0, |acc, d| acc | (1 << d.reflect().index()))
}

/// Directions of the two gasket edges missing at a frontier corner whose
/// prefractal edges point along `mask`.
fn frontier_completion(coord: LatticeCoord, mask: u8) -> u8 {
    match mask {
        // left corner of an upward triangle (o in SG⁺, t_n in SG⁻)
        0b000011 => 0b001100,
        // right corner (x_n in SG⁺, o in SG⁻)
        0b001100 => 0b000011,
        // top corner: y_n continues to the right, z_n to the left
        0b110000 if coord.a >= 0 => 0b000011,
        0b110000 => 0b001100,
        _ => 0,
    }
}

/// A materialized prefractal with canonical neighbour orderings.
#[derive(Debug, Clone)]
pub struct PrefractalGraph {
    level: u32,
    half: Half,
    coords: Vec<LatticeCoord>,
    index: HashMap<LatticeCoord, VertexId>,
    ambient: Vec<[Slot; SG_DEGREE]>,
    local_degree: Vec<u8>,
    edge_count: usize,
}

impl PrefractalGraph {
    pub fn build(level: u32, half: Half) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::Capacity {
                level,
                max: MAX_LEVEL,
            });
        }
        let plus = plus_masks(level);
        let masks: HashMap<LatticeCoord, u8> = match half {
            Half::Plus => plus,
            Half::Minus => plus
                .into_iter()
                .map(|(v, m)| (v.reflect(), reflect_mask(m)))
                .collect(),
            Half::Both => {
                let mut both = HashMap::with_capacity(plus.len() * 2);
                for (&v, &m) in &plus {
                    *both.entry(v).or_insert(0) |= m;
                    *both.entry(v.reflect()).or_insert(0) |= reflect_mask(m);
                }
                both
            }
        };

        let mut coords: Vec<LatticeCoord> = masks.keys().copied().collect();
        coords.sort_unstable();
        let index: HashMap<LatticeCoord, VertexId> = coords
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as VertexId))
            .collect();

        let mut ambient = Vec::with_capacity(coords.len());
        let mut local_degree = Vec::with_capacity(coords.len());
        let mut degree_sum = 0usize;
        for &v in &coords {
            let local = masks[&v];
            let full = local | frontier_completion(v, local);
            debug_assert_eq!(full.count_ones() as usize, SG_DEGREE, "vertex {v}");
            let mut slots = [Slot {
                dir: Direction::ALL[0],
                coord: v,
                target: None,
            }; SG_DEGREE];
            let mut k = 0;
            for d in Direction::ALL {
                if full & (1 << d.index()) == 0 {
                    continue;
                }
                let w = v.step(d);
                let target = if local & (1 << d.index()) != 0 {
                    Some(index[&w])
                } else {
                    None
                };
                slots[k] = Slot {
                    dir: d,
                    coord: w,
                    target,
                };
                k += 1;
            }
            ambient.push(slots);
            let deg = local.count_ones() as u8;
            degree_sum += deg as usize;
            local_degree.push(deg);
        }

        Ok(PrefractalGraph {
            level,
            half,
            coords,
            index,
            ambient,
            local_degree,
            edge_count: degree_sum / 2,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn half(&self) -> Half {
        self.half
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Vertices in `(b, a)` lexicographic order; a vertex's id is its position here.
    pub fn coords(&self) -> &[LatticeCoord] {
        &self.coords
    }

    pub fn coord(&self, id: VertexId) -> LatticeCoord {
        self.coords[id as usize]
    }

    pub fn id(&self, v: LatticeCoord) -> Option<VertexId> {
        self.index.get(&v).copied()
    }

    pub fn require(&self, v: LatticeCoord) -> Result<VertexId> {
        self.id(v).ok_or(Error::UnknownVertex(v))
    }

    pub fn contains(&self, v: LatticeCoord) -> bool {
        self.index.contains_key(&v)
    }

    /// The four gasket neighbours of `id` in anticlockwise order, starting
    /// from the smallest direction index.
    pub fn slots(&self, id: VertexId) -> &[Slot; SG_DEGREE] {
        &self.ambient[id as usize]
    }

    /// Degree inside this prefractal (2 at frontier corners, 4 elsewhere).
    pub fn local_degree(&self, id: VertexId) -> usize {
        self.local_degree[id as usize] as usize
    }

    pub fn local_neighbors(&self, id: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.ambient[id as usize].iter().filter_map(|s| s.target)
    }

    /// Neighbours of `v` in anticlockwise order as seen inside the infinite gasket.
    pub fn cyclic_neighbors(&self, v: LatticeCoord) -> Result<[LatticeCoord; SG_DEGREE]> {
        let id = self.require(v)?;
        Ok(self.ambient[id as usize].map(|s| s.coord))
    }

    /// Neighbours of `v` inside this prefractal only, anticlockwise.
    pub fn prefractal_neighbors(&self, v: LatticeCoord) -> Result<Vec<LatticeCoord>> {
        let id = self.require(v)?;
        Ok(self.local_neighbors(id).map(|w| self.coord(w)).collect())
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for i in 0..self.len() as VertexId {
            for j in self.local_neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Vertices with at least one gasket neighbour outside this prefractal.
    pub fn frontier(&self) -> Vec<LatticeCoord> {
        (0..self.len())
            .filter(|&i| self.local_degree[i] as usize != SG_DEGREE)
            .map(|i| self.coords[i])
            .collect()
    }

    /// The vertices of `SG_n` for the given half, as a region of this graph.
    pub fn sub_prefractal(&self, n: u32, half: Half) -> Result<Region> {
        let compatible = self.half == Half::Both || self.half == half;
        if n > self.level || !compatible {
            return Err(Error::InvalidArgument(format!(
                "SG_{n} ({}) is not contained in SG_{} ({})",
                half.as_str(),
                self.level,
                self.half.as_str()
            )));
        }
        let small = PrefractalGraph::build(n, half)?;
        Region::from_coords(self, small.coords().iter().copied())
    }

    /// `S_n`: the vertices of `SG_n` minus its four outer corners.
    pub fn cut_set(&self, n: u32) -> Result<Region> {
        let mut region = self.sub_prefractal(n, Half::Both)?;
        for c in corners(n).to_array() {
            region.remove(self.require(c)?);
        }
        Ok(region)
    }

    /// `{x ∉ S : x has a neighbour in S}`, computed in the infinite gasket
    /// (`ambient = true`) or inside this prefractal only.
    pub fn outer_boundary(&self, region: &Region, ambient: bool) -> Vec<LatticeCoord> {
        let mut out = Vec::new();
        for id in region.iter() {
            for s in self.slots(id) {
                let inside = s.target.is_some_and(|t| region.contains(t));
                if inside || (!ambient && s.target.is_none()) {
                    continue;
                }
                out.push(s.coord);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn export(&self) -> GraphExport {
        GraphExport {
            level: self.level,
            half: self.half,
            vertices: self.coords.iter().map(|c| [c.a, c.b]).collect(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }
}

/// JSON form of a prefractal: vertices sorted by `(b, a)`, edges as index pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub level: u32,
    pub half: Half,
    pub vertices: Vec<[i64; 2]>,
    pub edges: Vec<[VertexId; 2]>,
}

/// A subset of the vertices of one materialized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    members: Vec<bool>,
    count: usize,
}

impl Region {
    pub fn empty(graph: &PrefractalGraph) -> Self {
        Region {
            members: vec![false; graph.len()],
            count: 0,
        }
    }

    pub fn full(graph: &PrefractalGraph) -> Self {
        Region {
            members: vec![true; graph.len()],
            count: graph.len(),
        }
    }

    pub fn from_coords(
        graph: &PrefractalGraph,
        coords: impl IntoIterator<Item = LatticeCoord>,
    ) -> Result<Self> {
        let mut region = Region::empty(graph);
        for c in coords {
            region.insert(graph.require(c)?);
        }
        Ok(region)
    }

    pub fn insert(&mut self, id: VertexId) {
        let slot = &mut self.members[id as usize];
        if !*slot {
            *slot = true;
            self.count += 1;
        }
    }

    pub fn remove(&mut self, id: VertexId) {
        let slot = &mut self.members[id as usize];
        if *slot {
            *slot = false;
            self.count -= 1;
        }
    }

    pub fn contains(&self, id: VertexId) -> bool {
        self.members.get(id as usize).copied().unwrap_or(false)
    }

    pub fn contains_slot(&self, slot: &Slot) -> bool {
        slot.target.is_some_and(|t| self.contains(t))
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Size of the graph this region indexes into.
    pub fn universe(&self) -> usize {
        self.members.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i as VertexId)
    }

    pub fn union(&self, graph: &PrefractalGraph, extra: &[LatticeCoord]) -> Result<Self> {
        let mut out = self.clone();
        for &c in extra {
            out.insert(graph.require(c)?);
        }
        Ok(out)
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.members.len() == other.members.len()
            && self.iter().all(|id| other.contains(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(a: i64, b: i64) -> LatticeCoord {
        LatticeCoord::new(a, b)
    }

    #[test]
    fn level_zero_is_the_unit_triangle() {
        let g = PrefractalGraph::build(0, Half::Plus).unwrap();
        assert_eq!(g.coords(), &[c(0, 0), c(1, 0), c(0, 1)]);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn small_censuses() {
        let g = PrefractalGraph::build(2, Half::Plus).unwrap();
        assert_eq!((g.len(), g.edge_count()), (15, 27));
        let g = PrefractalGraph::build(2, Half::Both).unwrap();
        assert_eq!((g.len(), g.edge_count()), (29, 54));
        let g = PrefractalGraph::build(2, Half::Minus).unwrap();
        assert_eq!((g.len(), g.edge_count()), (15, 27));
    }

    #[test]
    fn origin_neighbours_in_both_halves() {
        let g = PrefractalGraph::build(1, Half::Both).unwrap();
        assert_eq!(
            g.prefractal_neighbors(LatticeCoord::ORIGIN).unwrap(),
            vec![c(1, 0), c(0, 1), c(-1, 1), c(-1, 0)]
        );
    }

    #[test]
    fn corner_viewed_inside_larger_level() {
        let g = PrefractalGraph::build(3, Half::Both).unwrap();
        assert_eq!(
            g.cyclic_neighbors(c(4, 0)).unwrap(),
            [c(5, 0), c(4, 1), c(3, 1), c(3, 0)]
        );
        // same answer from the level where x_2 is still a frontier corner
        let g2 = PrefractalGraph::build(2, Half::Plus).unwrap();
        assert_eq!(
            g2.cyclic_neighbors(c(4, 0)).unwrap(),
            [c(5, 0), c(4, 1), c(3, 1), c(3, 0)]
        );
        assert_eq!(g2.prefractal_neighbors(c(4, 0)).unwrap().len(), 2);
    }

    #[test]
    fn hole_sides_are_not_edges() {
        // (1,1) and (2,1) are lattice neighbours across the central hole of SG_2⁺
        let g = PrefractalGraph::build(2, Half::Plus).unwrap();
        let id = g.require(c(1, 1)).unwrap();
        assert!(g.local_neighbors(id).all(|w| g.coord(w) != c(2, 1)));
    }

    #[test]
    fn corners_formula() {
        let k = corners(2);
        assert_eq!(k.to_array(), [c(4, 0), c(0, 4), c(-4, 4), c(-4, 0)]);
        assert_eq!(corners(1).to_array(), [c(2, 0), c(0, 2), c(-2, 2), c(-2, 0)]);
    }

    #[test]
    fn cut_set_and_boundaries() {
        let g = PrefractalGraph::build(3, Half::Both).unwrap();
        let s2 = g.cut_set(2).unwrap();
        assert_eq!(s2.len(), 25);
        let mut expected = corners(2).to_array().to_vec();
        expected.sort();
        assert_eq!(g.outer_boundary(&s2, true), expected);
        let s1 = g.cut_set(1).unwrap();
        assert!(s1.is_subset(&s2));
        assert!(s1.contains(g.require(LatticeCoord::ORIGIN).unwrap()));

        let origin = Region::from_coords(&g, [LatticeCoord::ORIGIN]).unwrap();
        assert_eq!(
            g.outer_boundary(&origin, true),
            vec![c(1, 0), c(-1, 1), c(0, 1), c(-1, 0)]
                .into_iter()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect::<Vec<_>>()
        );
        assert!(g.outer_boundary(&Region::full(&g), false).is_empty());
    }

    #[test]
    fn boundary_of_top_level_cut_set_leaves_the_graph() {
        // ∂S_n is inside SG_n, so it can be computed at level n itself
        let g = PrefractalGraph::build(2, Half::Both).unwrap();
        let s2 = g.cut_set(2).unwrap();
        assert_eq!(g.outer_boundary(&s2, true).len(), 4);
        let mut frontier = g.frontier();
        frontier.sort();
        let mut k = corners(2).to_array().to_vec();
        k.sort();
        assert_eq!(frontier, k);
    }

    #[test]
    fn capacity_limit() {
        assert!(matches!(
            PrefractalGraph::build(MAX_LEVEL + 1, Half::Plus),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn sub_prefractal_rejects_bad_requests() {
        let g = PrefractalGraph::build(2, Half::Plus).unwrap();
        assert!(g.sub_prefractal(3, Half::Plus).is_err());
        assert!(g.sub_prefractal(1, Half::Minus).is_err());
        assert_eq!(g.sub_prefractal(1, Half::Plus).unwrap().len(), 6);
    }

    #[test]
    fn unknown_vertex() {
        let g = PrefractalGraph::build(1, Half::Plus).unwrap();
        assert!(matches!(
            g.cyclic_neighbors(c(7, 7)),
            Err(Error::UnknownVertex(_))
        ));
    }
}
