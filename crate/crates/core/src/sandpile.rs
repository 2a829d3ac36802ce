//! Abelian sandpiles with an absorbing sink.
//!
//! A vertex is unstable when it holds at least 4 chips (its degree in the
//! infinite gasket). Toppling sends one chip along each of the four gasket
//! edges; chips crossing an edge that leaves the domain fall into the sink.

use std::collections::VecDeque;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PrefractalGraph, Region, VertexId, SG_DEGREE};
use crate::lattice::LatticeCoord;
use crate::rng::trial_rng;

const THRESHOLD: u32 = SG_DEGREE as u32;

/// A finitely supported law for an i.i.d. chip count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct HeightLaw {
    support: Vec<(u32, f64)>,
    cdf: Vec<f64>,
}

impl HeightLaw {
    pub fn new(support: Vec<(u32, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidLaw("empty support".into()));
        }
        if let Some((v, p)) = support.iter().find(|(_, p)| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidLaw(format!(
                "probability of height {v} must be positive, got {p}"
            )));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = support
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(HeightLaw { support, cdf })
    }

    pub fn constant(h: u32) -> Self {
        HeightLaw::new(vec![(h, 1.0)]).unwrap()
    }

    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(v, p)| v as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support
            .iter()
            .map(|&(v, p)| p * (v as f64 - m).powi(2))
            .sum()
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn draw(&self, u: f64) -> u32 {
        let k = self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1);
        self.support[k].0
    }
}

impl TryFrom<Vec<(u32, f64)>> for HeightLaw {
    type Error = Error;
    fn try_from(v: Vec<(u32, f64)>) -> Result<Self> {
        HeightLaw::new(v)
    }
}

impl From<HeightLaw> for Vec<(u32, f64)> {
    fn from(law: HeightLaw) -> Self {
        law.support
    }
}

/// Chip counts indexed by the vertex ids of one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sandpile {
    heights: Vec<u32>,
}

impl Sandpile {
    pub fn zeros(graph: &PrefractalGraph) -> Self {
        Sandpile {
            heights: vec![0; graph.len()],
        }
    }

    pub fn constant(graph: &PrefractalGraph, h: u32) -> Self {
        Sandpile {
            heights: vec![h; graph.len()],
        }
    }

    pub fn from_heights(heights: Vec<u32>) -> Self {
        Sandpile { heights }
    }

    /// Independent draws on the vertices of `region`, in id order; zero elsewhere.
    pub fn sample_iid<R: Rng + ?Sized>(region: &Region, law: &HeightLaw, rng: &mut R) -> Self {
        let mut heights = vec![0; region.universe()];
        for id in region.iter() {
            heights[id as usize] = law.draw(rng.random::<f64>());
        }
        Sandpile { heights }
    }

    pub fn heights(&self) -> &[u32] {
        &self.heights
    }

    pub fn get(&self, id: VertexId) -> u32 {
        self.heights[id as usize]
    }

    pub fn set(&mut self, id: VertexId, h: u32) {
        self.heights[id as usize] = h;
    }

    pub fn add(&mut self, id: VertexId, h: u32) {
        self.heights[id as usize] += h;
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn mass_in(&self, region: &Region) -> u64 {
        region.iter().map(|id| self.heights[id as usize] as u64).sum()
    }
}

/// A finite toppling domain inside a materialized graph.
#[derive(Debug, Clone)]
pub struct Domain<'g> {
    graph: &'g PrefractalGraph,
    region: Region,
}

impl<'g> Domain<'g> {
    pub fn new(graph: &'g PrefractalGraph, region: Region) -> Result<Self> {
        if region.universe() != graph.len() {
            return Err(Error::OverlayMismatch {
                expected: graph.len(),
                got: region.universe(),
            });
        }
        Ok(Domain { graph, region })
    }

    /// Every vertex of `graph`; edges leaving the prefractal lead to the sink.
    pub fn whole(graph: &'g PrefractalGraph) -> Self {
        Domain {
            graph,
            region: Region::full(graph),
        }
    }

    pub fn graph(&self) -> &'g PrefractalGraph {
        self.graph
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopplePolicy {
    Fifo,
    Lifo,
    /// Uniformly random choice among queued vertices, seeded.
    RandomOrder(u64),
}

/// Neighbour tables for the inner toppling loops: an id inside the region,
/// `EXTERIOR | id` for a materialized vertex outside it, or `UNMATERIALIZED`.
pub(crate) const EXTERIOR: u32 = 1 << 31;
pub(crate) const UNMATERIALIZED: u32 = u32::MAX;

pub(crate) fn neighbour_table(graph: &PrefractalGraph, region: &Region) -> Vec<[u32; SG_DEGREE]> {
    (0..graph.len() as VertexId)
        .map(|x| {
            graph.slots(x).map(|s| match s.target {
                Some(t) if region.contains(t) => t,
                Some(t) => EXTERIOR | t,
                None => UNMATERIALIZED,
            })
        })
        .collect()
}

enum Worklist {
    Fifo(VecDeque<VertexId>),
    Lifo(Vec<VertexId>),
    Random(Vec<VertexId>, ChaCha8Rng),
}

impl Worklist {
    fn new(policy: TopplePolicy) -> Self {
        match policy {
            TopplePolicy::Fifo => Worklist::Fifo(VecDeque::new()),
            TopplePolicy::Lifo => Worklist::Lifo(Vec::new()),
            TopplePolicy::RandomOrder(seed) => Worklist::Random(Vec::new(), trial_rng(seed)),
        }
    }

    fn push(&mut self, v: VertexId) {
        match self {
            Worklist::Fifo(q) => q.push_back(v),
            Worklist::Lifo(s) => s.push(v),
            Worklist::Random(s, _) => s.push(v),
        }
    }

    fn pop(&mut self) -> Option<VertexId> {
        match self {
            Worklist::Fifo(q) => q.pop_front(),
            Worklist::Lifo(s) => s.pop(),
            Worklist::Random(s, rng) => {
                if s.is_empty() {
                    None
                } else {
                    let k = (rng.next_u64() % s.len() as u64) as usize;
                    Some(s.swap_remove(k))
                }
            }
        }
    }
}

/// Topples every unstable vertex of `region` until none is left.
///
/// Chips sent to vertices outside `region` are counted as sink mass; when
/// `deposit` is set they are also added to those vertices if materialized.
/// `topples` accumulates toppling counts. Returns the sink mass.
fn relax(
    graph: &PrefractalGraph,
    region: &Region,
    heights: &mut [u32],
    topples: &mut [u64],
    policy: TopplePolicy,
    cap: u64,
    deposit: bool,
) -> Result<u64> {
    let table = neighbour_table(graph, region);
    let mut work = Worklist::new(policy);
    let mut queued = vec![false; graph.len()];
    for id in region.iter() {
        if heights[id as usize] >= THRESHOLD {
            queued[id as usize] = true;
            work.push(id);
        }
    }
    let mut sink = 0u64;
    let mut count = 0u64;
    while let Some(x) = work.pop() {
        let xi = x as usize;
        if count == cap {
            return Err(Error::ToppleCapExceeded(cap));
        }
        count += 1;
        heights[xi] -= THRESHOLD;
        topples[xi] += 1;
        for &t in &table[xi] {
            if t & EXTERIOR == 0 {
                let ti = t as usize;
                heights[ti] += 1;
                if heights[ti] >= THRESHOLD && !queued[ti] {
                    queued[ti] = true;
                    work.push(t);
                }
            } else {
                sink += 1;
                if deposit && t != UNMATERIALIZED {
                    heights[(t & !EXTERIOR) as usize] += 1;
                }
            }
        }
        if heights[xi] >= THRESHOLD {
            work.push(x);
        } else {
            queued[xi] = false;
        }
    }
    Ok(sink)
}

/// Outcome of stabilizing a sandpile on a domain with sink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToppleResult {
    /// Stable heights on the domain; zero outside it.
    pub final_heights: Sandpile,
    /// Number of topplings `T(x)` per vertex.
    pub topples: Vec<u64>,
    pub sink_mass: u64,
}

impl ToppleResult {
    /// Mass emitted from `id`: `u(x) = 4 T(x)`.
    pub fn odometer(&self, id: VertexId) -> u64 {
        THRESHOLD as u64 * self.topples[id as usize]
    }

    pub fn total_topples(&self) -> u64 {
        self.topples.iter().sum()
    }
}

pub fn stabilize(
    domain: &Domain<'_>,
    sigma: &Sandpile,
    policy: TopplePolicy,
    topple_cap: u64,
) -> Result<ToppleResult> {
    let graph = domain.graph;
    if sigma.len() != graph.len() {
        return Err(Error::OverlayMismatch {
            expected: graph.len(),
            got: sigma.len(),
        });
    }
    let mut heights = vec![0; graph.len()];
    for id in domain.region.iter() {
        heights[id as usize] = sigma.get(id);
    }
    let mut topples = vec![0; graph.len()];
    let sink_mass = relax(
        graph,
        &domain.region,
        &mut heights,
        &mut topples,
        policy,
        topple_cap,
        false,
    )?;
    Ok(ToppleResult {
        final_heights: Sandpile { heights },
        topples,
        sink_mass,
    })
}

/// First vertex where `final = σ - 4T + Σ_{y∼x, y∈D} T(y)` fails, if any.
pub fn laplacian_violation(
    domain: &Domain<'_>,
    sigma: &Sandpile,
    result: &ToppleResult,
) -> Option<LatticeCoord> {
    let graph = domain.graph;
    for x in domain.region.iter() {
        let inflow: i64 = graph
            .slots(x)
            .iter()
            .filter(|s| domain.region.contains_slot(s))
            .map(|s| result.topples[s.target.unwrap() as usize] as i64)
            .sum();
        let expected = sigma.get(x) as i64 - THRESHOLD as i64 * result.topples[x as usize] as i64 + inflow;
        if expected != result.final_heights.get(x) as i64 {
            return Some(graph.coord(x));
        }
    }
    None
}

pub fn laplacian_check(domain: &Domain<'_>, sigma: &Sandpile, result: &ToppleResult) -> bool {
    laplacian_violation(domain, sigma, result).is_none()
}

/// Odometer trajectory of a nested-domain (infinite volume) stabilization.
#[derive(Debug, Clone)]
pub struct InfiniteVolumeRun {
    /// `u_n(o)` after each stage.
    pub origin_odometer: Vec<u64>,
    /// Heights on the whole ambient graph after the last stage.
    pub heights: Sandpile,
    /// Cumulative topplings after the last stage.
    pub topples: Vec<u64>,
    /// Chips that left the last domain.
    pub sink_mass: u64,
}

/// Stabilizes `sigma` on `domains[0]`, then the resulting configuration on
/// `domains[1]`, and so on. Chips leaving a stage's domain land on the
/// ambient vertices outside it and are picked up by the next stage.
pub fn infinite_volume_run(
    graph: &PrefractalGraph,
    sigma: &Sandpile,
    domains: &[Region],
    policy: TopplePolicy,
    topple_cap: u64,
) -> Result<InfiniteVolumeRun> {
    let origin = graph.require(LatticeCoord::ORIGIN)?;
    if sigma.len() != graph.len() {
        return Err(Error::OverlayMismatch {
            expected: graph.len(),
            got: sigma.len(),
        });
    }
    for pair in domains.windows(2) {
        if !pair[0].is_subset(&pair[1]) {
            return Err(Error::InvalidArgument("domains must be nested".into()));
        }
    }
    if let Some(first) = domains.first() {
        if !first.contains(origin) {
            return Err(Error::InvalidArgument("the first domain must contain the origin".into()));
        }
    }
    let mut heights = sigma.heights.clone();
    let mut topples = vec![0; graph.len()];
    let mut origin_odometer = Vec::with_capacity(domains.len());
    let mut sink_mass = 0;
    for region in domains {
        sink_mass = relax(graph, region, &mut heights, &mut topples, policy, topple_cap, true)?;
        origin_odometer.push(THRESHOLD as u64 * topples[origin as usize]);
    }
    Ok(InfiniteVolumeRun {
        origin_odometer,
        heights: Sandpile { heights },
        topples,
        sink_mass,
    })
}

/// Which explosion event a law is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplosionThreshold {
    /// Mean `3 + δ` with `δ > 0`: `u_n(o) ≥ δ|V_n|/3`.
    Supercritical { delta: f64 },
    /// Mean exactly 3: `u_n(o) > σ₀ √|V_n| / 3`.
    Critical { sigma0: f64 },
}

impl ExplosionThreshold {
    pub fn for_law(law: &HeightLaw) -> Result<Self> {
        let mean = law.mean();
        if mean < 3.0 - 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "explosion experiments need mean at least 3, got {mean}"
            )));
        }
        let delta = mean - 3.0;
        if delta.abs() <= 1e-12 {
            Ok(ExplosionThreshold::Critical { sigma0: law.std_dev() })
        } else {
            Ok(ExplosionThreshold::Supercritical { delta })
        }
    }

    pub fn value(&self, vertices: usize) -> f64 {
        match *self {
            ExplosionThreshold::Supercritical { delta } => delta * vertices as f64 / 3.0,
            ExplosionThreshold::Critical { sigma0 } => sigma0 * (vertices as f64).sqrt() / 3.0,
        }
    }

    pub fn is_met(&self, odometer: f64, vertices: usize) -> bool {
        match self {
            ExplosionThreshold::Supercritical { .. } => odometer >= self.value(vertices),
            ExplosionThreshold::Critical { .. } => odometer > self.value(vertices),
        }
    }
}

/// One stabilization of an i.i.d. sandpile on `SG_n⁺` with sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplosionTrial {
    /// `N_n`: total chips before stabilization.
    pub total_mass: u64,
    pub origin_topples: u64,
    pub sink_mass: u64,
    pub stable_mass: u64,
    pub indicator: bool,
}

impl ExplosionTrial {
    pub fn origin_odometer(&self) -> u64 {
        THRESHOLD as u64 * self.origin_topples
    }
}

/// `graph` is `SG_n⁺`; the sandpile is drawn from `law` with `seed`.
pub fn explosion_trial(
    graph: &PrefractalGraph,
    law: &HeightLaw,
    threshold: ExplosionThreshold,
    seed: u64,
    topple_cap: u64,
) -> Result<ExplosionTrial> {
    let domain = Domain::whole(graph);
    let mut rng = trial_rng(seed);
    let sigma = Sandpile::sample_iid(domain.region(), law, &mut rng);
    let result = stabilize(&domain, &sigma, TopplePolicy::Fifo, topple_cap)?;
    let origin = graph.require(LatticeCoord::ORIGIN)?;
    let u = result.odometer(origin);
    Ok(ExplosionTrial {
        total_mass: sigma.mass_in(domain.region()),
        origin_topples: result.topples[origin as usize],
        sink_mass: result.sink_mass,
        stable_mass: result.final_heights.mass_in(domain.region()),
        indicator: threshold.is_met(u as f64, graph.len()),
    })
}
