//! Rotor configurations and rotor walks.
//!
//! A rotor at vertex `x` is an index into the anticlockwise neighbour cycle of
//! `x` in the infinite gasket. A walker at `x` first advances the rotor by one
//! (mod 4) and then moves to the neighbour it now points at.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{corners, Half, PrefractalGraph, Region, VertexId, MAX_LEVEL, SG_DEGREE};
use crate::lattice::LatticeCoord;
use crate::rng::vertex_uniform;

const UNSET: u8 = u8::MAX;

/// Distribution of an initial rotor over the four positions of the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RotorLaw {
    probs: [f64; 4],
    cdf: [f64; 4],
}

impl RotorLaw {
    pub fn new(probs: [f64; 4]) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidLaw(format!(
                "rotor probabilities must be positive, got {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "rotor probabilities sum to {total}, not 1"
            )));
        }
        let mut cdf = [0.0; 4];
        let mut acc = 0.0;
        for (c, p) in cdf.iter_mut().zip(probs) {
            acc += p;
            *c = acc;
        }
        cdf[3] = 1.0;
        Ok(RotorLaw { probs, cdf })
    }

    pub fn uniform() -> Self {
        RotorLaw::new([0.25; 4]).expect("uniform law is valid")
    }

    pub fn probs(&self) -> [f64; 4] {
        self.probs
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Inverse-CDF lookup of a uniform `u ∈ [0, 1)`.
    pub fn index_for(&self, u: f64) -> u8 {
        self.cdf.iter().position(|&c| u < c).unwrap_or(3) as u8
    }
}

impl Default for RotorLaw {
    fn default() -> Self {
        RotorLaw::uniform()
    }
}

impl TryFrom<[f64; 4]> for RotorLaw {
    type Error = Error;
    fn try_from(p: [f64; 4]) -> Result<Self> {
        RotorLaw::new(p)
    }
}

impl From<RotorLaw> for [f64; 4] {
    fn from(law: RotorLaw) -> Self {
        law.probs
    }
}

/// An i.i.d. rotor field on the whole gasket: the initial rotor at each vertex
/// is a function of `(seed, vertex)` only, so it can be sampled lazily.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorField {
    pub law: RotorLaw,
    pub seed: u64,
}

impl RotorField {
    pub fn new(law: RotorLaw, seed: u64) -> Self {
        RotorField { law, seed }
    }

    pub fn rotor_at(&self, v: LatticeCoord) -> u8 {
        self.law.index_for(vertex_uniform(self.seed, v))
    }
}

/// Read access to rotor positions by vertex id.
pub trait RotorLookup {
    fn rotor(&self, graph: &PrefractalGraph, id: VertexId) -> Option<u8>;
}

impl RotorLookup for RotorField {
    fn rotor(&self, graph: &PrefractalGraph, id: VertexId) -> Option<u8> {
        Some(self.rotor_at(graph.coord(id)))
    }
}

/// Rotor indices for the vertices of one materialized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RotorConfig {
    rotors: Vec<u8>,
}

impl RotorConfig {
    /// No rotor set anywhere.
    pub fn unset(graph: &PrefractalGraph) -> Self {
        RotorConfig {
            rotors: vec![UNSET; graph.len()],
        }
    }

    pub fn constant(graph: &PrefractalGraph, index: u8) -> Self {
        assert!((index as usize) < SG_DEGREE);
        RotorConfig {
            rotors: vec![index; graph.len()],
        }
    }

    /// Independent draws from `law`, in vertex-id order.
    pub fn sample<R: Rng + ?Sized>(graph: &PrefractalGraph, law: &RotorLaw, rng: &mut R) -> Self {
        RotorConfig {
            rotors: (0..graph.len())
                .map(|_| law.index_for(rng.random::<f64>()))
                .collect(),
        }
    }

    pub fn from_field(graph: &PrefractalGraph, field: &RotorField) -> Self {
        RotorConfig {
            rotors: graph.coords().iter().map(|&c| field.rotor_at(c)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rotors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotors.is_empty()
    }

    pub fn get(&self, id: VertexId) -> Option<u8> {
        self.rotors
            .get(id as usize)
            .copied()
            .filter(|&r| r != UNSET)
    }

    pub fn set(&mut self, id: VertexId, index: u8) {
        assert!((index as usize) < SG_DEGREE, "rotor index {index} out of range");
        self.rotors[id as usize] = index;
    }

    pub fn clear(&mut self, id: VertexId) {
        self.rotors[id as usize] = UNSET;
    }

    /// Remaps onto a graph containing every vertex of `from`.
    fn embed(&self, from: &PrefractalGraph, into: &PrefractalGraph) -> Self {
        let mut out = RotorConfig::unset(into);
        for (i, &r) in self.rotors.iter().enumerate() {
            if r != UNSET {
                let id = into.id(from.coord(i as VertexId)).expect("graphs are nested");
                out.rotors[id as usize] = r;
            }
        }
        out
    }

    /// `"a,b" -> index` for every set rotor.
    pub fn export(&self, graph: &PrefractalGraph) -> BTreeMap<String, u8> {
        self.rotors
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != UNSET)
            .map(|(i, &r)| (graph.coord(i as VertexId).key(), r))
            .collect()
    }

    pub fn import(graph: &PrefractalGraph, map: &BTreeMap<String, u8>) -> Result<Self> {
        let mut out = RotorConfig::unset(graph);
        for (key, &r) in map {
            let c = LatticeCoord::parse_key(key)
                .ok_or_else(|| Error::InvalidArgument(format!("bad vertex key {key:?}")))?;
            if r as usize >= SG_DEGREE {
                return Err(Error::InvalidArgument(format!("rotor index {r} at {key}")));
            }
            out.set(graph.require(c)?, r);
        }
        Ok(out)
    }
}

impl RotorLookup for RotorConfig {
    fn rotor(&self, _graph: &PrefractalGraph, id: VertexId) -> Option<u8> {
        self.get(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnOutcome {
    ReturnedAt(u64),
    CapExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitOutcome {
    ExitedAt(u64, LatticeCoord),
    ReturnedFirst(u64),
    CapExceeded,
}

/// Position, rotors, clock and visit counts of a single walker.
#[derive(Debug, Clone)]
pub struct WalkState {
    position: VertexId,
    rotors: RotorConfig,
    field: Option<RotorField>,
    time: u64,
    visits: Vec<u64>,
}

impl WalkState {
    /// Starts at `start`; rotors not present in `rotors` are drawn from `field`
    /// the first time the walker leaves that vertex.
    pub fn new(
        graph: &PrefractalGraph,
        start: LatticeCoord,
        rotors: RotorConfig,
        field: Option<RotorField>,
    ) -> Result<Self> {
        let position = graph.require(start)?;
        if rotors.len() != graph.len() {
            return Err(Error::OverlayMismatch {
                expected: graph.len(),
                got: rotors.len(),
            });
        }
        let mut visits = vec![0; graph.len()];
        visits[position as usize] = 1;
        Ok(WalkState {
            position,
            rotors,
            field,
            time: 0,
            visits,
        })
    }

    pub fn with_field(graph: &PrefractalGraph, start: LatticeCoord, field: RotorField) -> Result<Self> {
        WalkState::new(graph, start, RotorConfig::unset(graph), Some(field))
    }

    pub fn position(&self) -> VertexId {
        self.position
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn rotors(&self) -> &RotorConfig {
        &self.rotors
    }

    /// Number of times the walker has stood at `id`, counting the start.
    pub fn visits(&self, id: VertexId) -> u64 {
        self.visits[id as usize]
    }

    fn current_rotor(&self, graph: &PrefractalGraph) -> Result<u8> {
        if let Some(r) = self.rotors.get(self.position) {
            return Ok(r);
        }
        match &self.field {
            Some(field) => Ok(field.rotor_at(graph.coord(self.position))),
            None => Err(Error::MissingRotor(graph.coord(self.position))),
        }
    }

    /// The slot index the next step will use, without moving.
    pub fn peek(&self, graph: &PrefractalGraph) -> Result<u8> {
        Ok((self.current_rotor(graph)? + 1) % SG_DEGREE as u8)
    }

    /// Advance the rotor at the current vertex and follow it.
    ///
    /// Fails with `FrontierExceeded`, leaving the state untouched, if the
    /// rotor points outside the materialized graph.
    pub fn step(&mut self, graph: &PrefractalGraph) -> Result<VertexId> {
        let next = self.peek(graph)?;
        let slot = graph.slots(self.position)[next as usize];
        let target = slot.target.ok_or(Error::FrontierExceeded {
            from: graph.coord(self.position),
            to: slot.coord,
        })?;
        self.rotors.set(self.position, next);
        self.position = target;
        self.time += 1;
        self.visits[target as usize] += 1;
        Ok(target)
    }

    /// Steps until the walker is back at `origin` (its current position).
    pub fn run_until_return(
        &mut self,
        graph: &PrefractalGraph,
        origin: LatticeCoord,
        step_cap: u64,
    ) -> Result<ReturnOutcome> {
        let origin = graph.require(origin)?;
        if origin != self.position {
            return Err(Error::InvalidArgument(
                "walk must start at the origin it returns to".into(),
            ));
        }
        for t in 1..=step_cap {
            if self.step(graph)? == origin {
                return Ok(ReturnOutcome::ReturnedAt(t));
            }
        }
        Ok(ReturnOutcome::CapExceeded)
    }

    /// Steps until the walker either returns to its start or first lands
    /// outside `region`. An exit towards a vertex that is not materialized
    /// advances the rotor and the clock but leaves `position` unchanged.
    pub fn run_until_exit(
        &mut self,
        graph: &PrefractalGraph,
        region: &Region,
        step_cap: u64,
    ) -> Result<ExitOutcome> {
        let start = self.position;
        if !region.contains(start) {
            return Err(Error::InvalidArgument("walk must start inside the region".into()));
        }
        for t in 1..=step_cap {
            let next = self.peek(graph)?;
            let slot = graph.slots(self.position)[next as usize];
            if !region.contains_slot(&slot) {
                if slot.target.is_some() {
                    self.step(graph)?;
                } else {
                    self.rotors.set(self.position, next);
                    self.time += 1;
                }
                return Ok(ExitOutcome::ExitedAt(t, slot.coord));
            }
            if self.step(graph)? == start {
                return Ok(ExitOutcome::ReturnedFirst(t));
            }
        }
        Ok(ExitOutcome::CapExceeded)
    }

    /// Takes up to `steps` steps, returning `(t, vertex)` for `t = 0..`.
    pub fn trace(&mut self, graph: &PrefractalGraph, steps: u64) -> Result<Vec<(u64, LatticeCoord)>> {
        let mut out = vec![(self.time, graph.coord(self.position))];
        for _ in 0..steps {
            let v = self.step(graph)?;
            out.push((self.time, graph.coord(v)));
        }
        Ok(out)
    }

    fn embed(&self, from: &PrefractalGraph, into: &PrefractalGraph) -> Self {
        let mut visits = vec![0; into.len()];
        for (i, &n) in self.visits.iter().enumerate() {
            if n > 0 {
                visits[into.id(from.coord(i as VertexId)).expect("nested") as usize] = n;
            }
        }
        WalkState {
            position: into.id(from.coord(self.position)).expect("nested"),
            rotors: self.rotors.embed(from, into),
            field: self.field,
            time: self.time,
            visits,
        }
    }
}

/// Lazily built full prefractals `SG_0 ⊂ SG_1 ⊂ …`, shareable across threads.
#[derive(Debug)]
pub struct GraphLadder {
    levels: Vec<OnceLock<Arc<PrefractalGraph>>>,
}

impl GraphLadder {
    pub fn new(max_level: u32) -> Result<Self> {
        if max_level > MAX_LEVEL {
            return Err(Error::Capacity {
                level: max_level,
                max: MAX_LEVEL,
            });
        }
        Ok(GraphLadder {
            levels: (0..=max_level).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn max_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn get(&self, level: u32) -> Arc<PrefractalGraph> {
        self.levels[level as usize]
            .get_or_init(|| {
                Arc::new(PrefractalGraph::build(level, Half::Both).expect("level within capacity"))
            })
            .clone()
    }
}

/// A rotor walk on the infinite gasket, realized on the smallest
/// materialized level that contains it and grown on `FrontierExceeded`.
#[derive(Debug)]
pub struct EmbeddedWalk<'l> {
    ladder: &'l GraphLadder,
    graph: Arc<PrefractalGraph>,
    state: WalkState,
}

impl<'l> EmbeddedWalk<'l> {
    pub fn new(ladder: &'l GraphLadder, start: LatticeCoord, field: RotorField) -> Result<Self> {
        let level = (0..=ladder.max_level())
            .find(|&n| {
                let g = ladder.get(n);
                g.id(start).is_some_and(|id| g.local_degree(id) == SG_DEGREE)
            })
            .ok_or(Error::UnknownVertex(start))?;
        let graph = ladder.get(level);
        let state = WalkState::with_field(&graph, start, field)?;
        Ok(EmbeddedWalk {
            ladder,
            graph,
            state,
        })
    }

    pub fn level(&self) -> u32 {
        self.graph.level()
    }

    pub fn graph(&self) -> &PrefractalGraph {
        &self.graph
    }

    pub fn state(&self) -> &WalkState {
        &self.state
    }

    pub fn position(&self) -> LatticeCoord {
        self.graph.coord(self.state.position)
    }

    /// One step, growing the materialized level when needed.
    pub fn step(&mut self) -> Result<LatticeCoord> {
        loop {
            match self.state.step(&self.graph) {
                Ok(v) => return Ok(self.graph.coord(v)),
                Err(Error::FrontierExceeded { .. }) if self.level() < self.ladder.max_level() => {
                    let bigger = self.ladder.get(self.level() + 1);
                    self.state = self.state.embed(&self.graph, &bigger);
                    self.graph = bigger;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn run_until_return(&mut self, step_cap: u64) -> Result<ReturnOutcome> {
        let origin = self.position();
        for t in 1..=step_cap {
            if self.step()? == origin {
                return Ok(ReturnOutcome::ReturnedAt(t));
            }
        }
        Ok(ReturnOutcome::CapExceeded)
    }
}

/// Precomputed reflecting-boundary test for one region.
#[derive(Debug, Clone)]
pub struct ReflectingTest {
    /// Boundary vertices with, per cycle slot, whether that neighbour is in the region.
    boundary: Vec<(LatticeCoord, Option<VertexId>, [bool; SG_DEGREE])>,
}

impl ReflectingTest {
    pub fn new(graph: &PrefractalGraph, region: &Region) -> Self {
        let boundary = graph
            .outer_boundary(region, true)
            .into_iter()
            .map(|c| {
                let id = graph.id(c);
                let inside = match id {
                    Some(id) => graph.slots(id).map(|s| region.contains_slot(&s)),
                    None => [false; SG_DEGREE],
                };
                (c, id, inside)
            })
            .collect();
        ReflectingTest { boundary }
    }

    pub fn boundary(&self) -> impl Iterator<Item = LatticeCoord> + '_ {
        self.boundary.iter().map(|(c, _, _)| *c)
    }

    fn serves_inside_first(inside: &[bool; SG_DEGREE], rotor: u8) -> bool {
        let mut left_region = false;
        for k in 1..=SG_DEGREE {
            let slot = (rotor as usize + k) % SG_DEGREE;
            if inside[slot] {
                if left_region {
                    return false;
                }
            } else {
                left_region = true;
            }
        }
        true
    }

    /// Rotor positions at each boundary vertex that serve all region
    /// neighbours before any other neighbour.
    pub fn reflecting_indices(&self) -> Vec<(LatticeCoord, Vec<u8>)> {
        self.boundary
            .iter()
            .map(|(c, _, inside)| {
                let ok = (0..SG_DEGREE as u8)
                    .filter(|&r| Self::serves_inside_first(inside, r))
                    .collect();
                (*c, ok)
            })
            .collect()
    }

    /// Probability that i.i.d. rotors from `law` make the boundary reflecting.
    pub fn probability(&self, law: &RotorLaw) -> f64 {
        self.reflecting_indices()
            .iter()
            .map(|(_, ok)| ok.iter().map(|&r| law.probs()[r as usize]).sum::<f64>())
            .product()
    }

    pub fn check(&self, graph: &PrefractalGraph, rotors: &impl RotorLookup) -> Result<bool> {
        for (c, id, inside) in &self.boundary {
            let rotor = id
                .and_then(|id| rotors.rotor(graph, id))
                .ok_or(Error::MissingRotor(*c))?;
            if !Self::serves_inside_first(inside, rotor) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Whether `region` has reflecting boundary under `rotors`.
pub fn is_reflecting(
    graph: &PrefractalGraph,
    region: &Region,
    rotors: &impl RotorLookup,
) -> Result<bool> {
    ReflectingTest::new(graph, region).check(graph, rotors)
}

/// Reflecting tests for the cut sets `S_1, …, S_{n_max}`.
#[derive(Debug, Clone)]
pub struct CutSetLadder {
    tests: Vec<ReflectingTest>,
}

impl CutSetLadder {
    /// `graph` must contain `SG_{n_max}`.
    pub fn new(graph: &PrefractalGraph, n_max: u32) -> Result<Self> {
        let tests = (1..=n_max)
            .map(|n| Ok(ReflectingTest::new(graph, &graph.cut_set(n)?)))
            .collect::<Result<_>>()?;
        Ok(CutSetLadder { tests })
    }

    pub fn n_max(&self) -> u32 {
        self.tests.len() as u32
    }

    pub fn test(&self, n: u32) -> &ReflectingTest {
        &self.tests[n as usize - 1]
    }

    pub fn is_reflecting(&self, graph: &PrefractalGraph, n: u32, rotors: &impl RotorLookup) -> Result<bool> {
        self.test(n).check(graph, rotors)
    }

    pub fn smallest(&self, graph: &PrefractalGraph, rotors: &impl RotorLookup) -> Result<Option<u32>> {
        for n in 1..=self.n_max() {
            if self.is_reflecting(graph, n, rotors)? {
                return Ok(Some(n));
            }
        }
        Ok(None)
    }
}

/// Least `n ≤ n_max` whose cut set `S_n` has reflecting boundary.
pub fn smallest_reflecting_level(
    graph: &PrefractalGraph,
    rotors: &impl RotorLookup,
    n_max: u32,
) -> Result<Option<u32>> {
    CutSetLadder::new(graph, n_max)?.smallest(graph, rotors)
}

/// Sets the rotors at the four corners of `S_n` to their reflecting positions.
pub fn force_reflecting(graph: &PrefractalGraph, rotors: &mut RotorConfig, n: u32) -> Result<()> {
    let test = ReflectingTest::new(graph, &graph.cut_set(n)?);
    for (c, ok) in test.reflecting_indices() {
        rotors.set(graph.require(c)?, ok[0]);
    }
    Ok(())
}

/// The reflecting corner rotors of `S_n`, or a non-reflecting choice at every corner.
pub fn corner_rotors(n: u32, reflecting: bool) -> [(LatticeCoord, u8); 4] {
    // corner slot orders: x and y have dirs {0,1} outside, z and t have {2,3} outside
    let k = corners(n);
    if reflecting {
        [(k.x, 1), (k.y, 1), (k.z, 1), (k.t, 3)]
    } else {
        [(k.x, 2), (k.y, 2), (k.z, 2), (k.t, 0)]
    }
}
