//! Divisible sandpiles: real masses, a vertex above the threshold keeps the
//! threshold and splits its excess equally among its four gasket neighbours.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PrefractalGraph, Region, VertexId, SG_DEGREE};
use crate::lattice::LatticeCoord;
use crate::rng::trial_rng;
use crate::sandpile::{neighbour_table, Domain, EXTERIOR};

/// A finitely supported law for i.i.d. real masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct MassLaw {
    support: Vec<(f64, f64)>,
    cdf: Vec<f64>,
}

impl MassLaw {
    pub fn new(support: Vec<(f64, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidLaw("empty support".into()));
        }
        for &(v, p) in &support {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidLaw(format!("mass {v} must be finite and non-negative")));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidLaw(format!("probability of mass {v} must be positive")));
            }
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
        Ok(MassLaw { support, cdf })
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support.iter().map(|&(v, p)| p * (v - m).powi(2)).sum()
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn draw(&self, u: f64) -> f64 {
        let k = self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1);
        self.support[k].0
    }
}

impl TryFrom<Vec<(f64, f64)>> for MassLaw {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        MassLaw::new(v)
    }
}

impl From<MassLaw> for Vec<(f64, f64)> {
    fn from(law: MassLaw) -> Self {
        law.support
    }
}

/// Real masses indexed by vertex id.
#[derive(Debug, Clone, PartialEq)]
pub struct DivisibleConfig {
    mass: Vec<f64>,
}

impl DivisibleConfig {
    pub fn zeros(graph: &PrefractalGraph) -> Self {
        DivisibleConfig {
            mass: vec![0.0; graph.len()],
        }
    }

    pub fn constant(graph: &PrefractalGraph, m: f64) -> Self {
        DivisibleConfig {
            mass: vec![m; graph.len()],
        }
    }

    pub fn from_masses(mass: Vec<f64>) -> Result<Self> {
        if let Some(m) = mass.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::InvalidArgument(format!("mass {m} must be finite and non-negative")));
        }
        Ok(DivisibleConfig { mass })
    }

    pub fn sample_iid<R: Rng + ?Sized>(region: &Region, law: &MassLaw, rng: &mut R) -> Self {
        let mut mass = vec![0.0; region.universe()];
        for id in region.iter() {
            mass[id as usize] = law.draw(rng.random::<f64>());
        }
        DivisibleConfig { mass }
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, id: VertexId) -> f64 {
        self.mass[id as usize]
    }

    pub fn set(&mut self, id: VertexId, m: f64) {
        self.mass[id as usize] = m;
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass_in(&self, region: &Region) -> f64 {
        region.iter().map(|id| self.mass[id as usize]).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        DivisibleConfig {
            mass: self.mass.iter().map(|m| m * c).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivisibleParams {
    /// Mass a vertex keeps when it topples.
    pub threshold: f64,
    /// A vertex is unstable when its mass exceeds `threshold + epsilon`.
    pub epsilon: f64,
    pub sweep_cap: u64,
}

impl Default for DivisibleParams {
    fn default() -> Self {
        DivisibleParams {
            threshold: 1.0,
            epsilon: 1e-9,
            sweep_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivisibleResult {
    pub final_mass: DivisibleConfig,
    /// Total mass emitted per vertex.
    pub odometer: Vec<f64>,
    pub sink_mass: f64,
    pub converged: bool,
    pub sweeps: u64,
}

/// Sweep relaxation over a frontier worklist.
///
/// Each sweep visits the vertices that were unstable when it started (plus
/// those that became unstable after being visited, which go to the next
/// sweep). Hitting `sweep_cap` returns the partial state with `converged = false`.
pub fn stabilize_divisible(
    domain: &Domain<'_>,
    sigma: &DivisibleConfig,
    params: DivisibleParams,
) -> Result<DivisibleResult> {
    let graph = domain.graph();
    let region = domain.region();
    if sigma.len() != graph.len() {
        return Err(Error::OverlayMismatch {
            expected: graph.len(),
            got: sigma.len(),
        });
    }
    if !(params.epsilon > 0.0 && params.threshold > 0.0) {
        return Err(Error::InvalidArgument(
            "epsilon and threshold must be positive".into(),
        ));
    }
    let limit = params.threshold + params.epsilon;
    let mut mass = vec![0.0; graph.len()];
    for id in region.iter() {
        mass[id as usize] = sigma.get(id);
    }
    let table = neighbour_table(graph, region);
    let mut odometer = vec![0.0; graph.len()];
    let mut sink = 0.0;
    let mut queued = vec![false; graph.len()];
    let mut frontier: Vec<VertexId> = region.iter().filter(|&id| mass[id as usize] > limit).collect();
    for &id in &frontier {
        queued[id as usize] = true;
    }
    let mut next = Vec::new();
    let mut sweeps = 0u64;
    let share_factor = 1.0 / SG_DEGREE as f64;

    while !frontier.is_empty() {
        if sweeps == params.sweep_cap {
            break;
        }
        sweeps += 1;
        for &x in &frontier {
            let xi = x as usize;
            queued[xi] = false;
            let excess = mass[xi] - params.threshold;
            if mass[xi] <= limit {
                continue;
            }
            mass[xi] = params.threshold;
            odometer[xi] += excess;
            let share = excess * share_factor;
            for &t in &table[xi] {
                if t & EXTERIOR == 0 {
                    let ti = t as usize;
                    mass[ti] += share;
                    if mass[ti] > limit && !queued[ti] {
                        queued[ti] = true;
                        next.push(t);
                    }
                } else {
                    sink += share;
                }
            }
        }
        std::mem::swap(&mut frontier, &mut next);
        next.clear();
    }

    Ok(DivisibleResult {
        final_mass: DivisibleConfig { mass },
        odometer,
        sink_mass: sink,
        converged: frontier.is_empty(),
        sweeps,
    })
}

/// One divisible stabilization on `SG_n⁺`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivisibleTrial {
    pub total_mass: f64,
    pub origin_odometer: f64,
    pub sink_mass: f64,
    pub final_mass: f64,
    pub indicator: bool,
    pub converged: bool,
    pub sweeps: u64,
}

/// Mean-one law check shared by the divisible explosion experiment.
pub fn critical_threshold(law: &MassLaw) -> Result<f64> {
    let mean = law.mean();
    if (mean - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidLaw(format!("divisible explosion needs mean 1, got {mean}")));
    }
    let sd = law.std_dev();
    if sd <= 0.0 {
        return Err(Error::InvalidLaw("divisible explosion needs positive variance".into()));
    }
    Ok(sd)
}

/// `graph` is `SG_n⁺`; masses are drawn from `law` with `seed`.
pub fn divisible_trial(
    graph: &PrefractalGraph,
    law: &MassLaw,
    params: DivisibleParams,
    seed: u64,
) -> Result<DivisibleTrial> {
    let sigma0 = critical_threshold(law)?;
    let domain = Domain::whole(graph);
    let mut rng = trial_rng(seed);
    let sigma = DivisibleConfig::sample_iid(domain.region(), law, &mut rng);
    let result = stabilize_divisible(&domain, &sigma, params)?;
    let origin = graph.require(LatticeCoord::ORIGIN)?;
    let u = result.odometer[origin as usize];
    Ok(DivisibleTrial {
        total_mass: sigma.mass_in(domain.region()),
        origin_odometer: u,
        sink_mass: result.sink_mass,
        final_mass: result.final_mass.mass_in(domain.region()),
        indicator: u > sigma0 * (graph.len() as f64).sqrt() / 3.0,
        converged: result.converged,
        sweeps: result.sweeps,
    })
}
