//! Seeded Monte Carlo experiments.
//!
//! An experiment is a list of independent work units, one per `(level,
//! trial)`. Each unit draws all of its randomness from
//! `derive_seed(master_seed, trial, level)`, units are evaluated in parallel
//! chunks, and records are emitted in `(level, trial)` order, so output does
//! not depend on the number of workers.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divisible::{critical_threshold, divisible_trial, DivisibleParams, MassLaw};
use crate::error::{Error, Result};
use crate::graph::{Half, PrefractalGraph, Region, SG_DEGREE};
use crate::lattice::LatticeCoord;
use crate::rng::{derive_seed, mix64, trial_rng};
use crate::rotor::{
    corner_rotors, CutSetLadder, EmbeddedWalk, ExitOutcome, GraphLadder, ReturnOutcome,
    RotorConfig, RotorField, RotorLaw, WalkState,
};
use crate::sandpile::{explosion_trial, ExplosionThreshold, HeightLaw};
use crate::stats::{self, Frequency};

/// Records are computed this many units at a time.
const CHUNK: usize = 4096;

/// Below this many summands the CLT diagnostic is flagged as unreliable.
pub const CLT_SMALL_SAMPLE: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Indicators of `{S_n has reflecting boundary}` under i.i.d. rotors.
    ReflectingFrequency {
        #[serde(default)]
        rotor_law: RotorLaw,
    },
    /// Walks from `o` with corner rotors forced reflecting at `S_n`.
    ReflectingReturn {
        #[serde(default)]
        rotor_law: RotorLaw,
        step_cap: u64,
    },
    /// First return times to `o` on the infinite gasket, realized up to `max_level`.
    ReturnTimes {
        #[serde(default)]
        rotor_law: RotorLaw,
        step_cap: u64,
        max_level: u32,
    },
    AbelianExplosion {
        height_law: HeightLaw,
        topple_cap: u64,
    },
    DivisibleExplosion {
        mass_law: MassLaw,
        epsilon: f64,
        sweep_cap: u64,
    },
    /// Visits to `y` from `x` before leaving `SG_n`, for the simple random
    /// walk and the uniform rotor walk.
    GreenRatio {
        x: LatticeCoord,
        y: LatticeCoord,
        step_cap: u64,
    },
    /// Standardized totals `(N_n - μ|V_n|) / (σ₀ √|V_n|)` on `SG_n⁺`.
    Clt { height_law: HeightLaw },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ReflectingFrequency { .. } => "reflecting_frequency",
            ExperimentKind::ReflectingReturn { .. } => "reflecting_return",
            ExperimentKind::ReturnTimes { .. } => "return_times",
            ExperimentKind::AbelianExplosion { .. } => "abelian_explosion",
            ExperimentKind::DivisibleExplosion { .. } => "divisible_explosion",
            ExperimentKind::GreenRatio { .. } => "green_ratio",
            ExperimentKind::Clt { .. } => "clt",
        }
    }
}

fn default_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub kind: ExperimentKind,
    pub levels: Vec<u32>,
    pub trials: u64,
    pub master_seed: u64,
    /// Confidence level of the reported binomial intervals.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, levels: Vec<u32>, trials: u64, master_seed: u64) -> Self {
        ExperimentSpec {
            kind,
            levels,
            trials,
            master_seed,
            confidence: default_confidence(),
        }
    }

    /// Levels in ascending order without duplicates.
    pub fn sorted_levels(&self) -> Vec<u32> {
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        levels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.levels.is_empty() {
            return bad("at least one level is required".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence {} must lie in (0, 1)", self.confidence));
        }
        let max = *self.levels.iter().max().unwrap();
        // graphs one level above the largest requested are materialized for some kinds
        if max >= crate::graph::MAX_LEVEL {
            return Err(Error::Capacity {
                level: max,
                max: crate::graph::MAX_LEVEL - 1,
            });
        }
        let min = *self.levels.iter().min().unwrap();
        match &self.kind {
            ExperimentKind::ReflectingFrequency { .. } | ExperimentKind::ReflectingReturn { .. } if min == 0 => {
                bad("cut sets start at level 1".into())
            }
            ExperimentKind::ReflectingReturn { step_cap, .. }
            | ExperimentKind::GreenRatio { step_cap, .. }
                if *step_cap == 0 =>
            {
                bad("step_cap must be positive".into())
            }
            ExperimentKind::ReturnTimes { max_level, .. } => {
                if *max_level > crate::graph::MAX_LEVEL {
                    Err(Error::Capacity {
                        level: *max_level,
                        max: crate::graph::MAX_LEVEL,
                    })
                } else {
                    Ok(())
                }
            }
            ExperimentKind::AbelianExplosion { height_law, topple_cap } => {
                if *topple_cap == 0 {
                    return bad("topple_cap must be positive".into());
                }
                ExplosionThreshold::for_law(height_law).map(|_| ())
            }
            ExperimentKind::DivisibleExplosion {
                mass_law,
                epsilon,
                sweep_cap,
            } => {
                if !(*epsilon > 0.0) || *sweep_cap == 0 {
                    return bad("epsilon and sweep_cap must be positive".into());
                }
                critical_threshold(mass_law).map(|_| ())
            }
            ExperimentKind::Clt { height_law } => {
                if height_law.std_dev() <= 0.0 {
                    Err(Error::InvalidLaw("the CLT diagnostic needs positive variance".into()))
                } else {
                    Ok(())
                }
            }
            ExperimentKind::GreenRatio { x, .. } => {
                let g = PrefractalGraph::build(max, Half::Both)?;
                if g.id(*x).is_none() {
                    return bad(format!("start vertex {x} is not in SG_{max}"));
                }
                let start = g.require(*x)?;
                for n in &self.levels {
                    if !g.cut_set(*n)?.contains(start) {
                        return bad(format!("start vertex {x} is not in S_{n}"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-trial output; which variant appears depends on the experiment kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrialOutcome {
    Reflecting {
        reflecting: bool,
    },
    ReflectingReturn {
        returned_first: bool,
        exited: bool,
        steps: u64,
    },
    ReturnTime {
        /// `returned`, `cap` or `escaped` (left the largest materialized level).
        status: &'static str,
        time: u64,
        reflecting_level: Option<u32>,
        final_level: u32,
    },
    Abelian {
        total_mass: u64,
        origin_odometer: u64,
        origin_topples: u64,
        sink_mass: u64,
        stable_mass: u64,
        indicator: bool,
    },
    Divisible {
        total_mass: f64,
        origin_odometer: f64,
        sink_mass: f64,
        final_mass: f64,
        indicator: bool,
        converged: bool,
        sweeps: u64,
    },
    Green {
        srw_visits: u64,
        urw_visits: u64,
    },
    Clt {
        total_mass: u64,
        z: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub level: u32,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub count: u64,
    pub mean: f64,
    pub std_err: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl ScalarSummary {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(ScalarSummary {
            count: xs.len() as u64,
            mean: stats::mean(xs),
            std_err: stats::std_err(xs),
            median: stats::median(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub srw: f64,
    pub srw_std_err: f64,
    pub urw: f64,
    pub urw_std_err: f64,
    /// `G^SRW / G^URW` with a delta-method standard error.
    pub ratio: f64,
    pub ratio_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub mean: f64,
    pub variance: f64,
    pub ks_distance: f64,
    pub small_sample_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: u32,
    pub vertices: usize,
    pub trials: u64,
    pub failures: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indicator: Option<Frequency>,
    /// Exact probability of the indicator event, where known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// The main scalar of the kind: odometer at `o`, return time or steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary: Option<ScalarSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub green: Option<GreenEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltSummary>,
    /// `(2^k, count)`: return times in `[2^k, 2^{k+1})`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<(u64, u64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<BTreeMap<String, u64>>,
    /// Trials with a reflecting cut set that still failed to return.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guarantee_violations: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub m: u32,
    pub n: u32,
    pub correlation: f64,
    /// `4 / sqrt(trials)`: a 4σ band for the correlation of independent indicators.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub master_seed: u64,
    pub trials: u64,
    pub levels: Vec<LevelSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub correlations: Vec<PairCorrelation>,
}

impl Summary {
    pub fn level(&self, n: u32) -> Option<&LevelSummary> {
        self.levels.iter().find(|l| l.level == n)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Prebuilt graphs and tests shared by all units of one experiment.
enum Context {
    Reflecting {
        graph: PrefractalGraph,
        ladder: CutSetLadder,
        field_law: RotorLaw,
    },
    ReflectingReturn {
        graphs: BTreeMap<u32, PrefractalGraph>,
        law: RotorLaw,
        step_cap: u64,
    },
    ReturnTimes {
        ladder: GraphLadder,
        cuts: CutSetLadder,
        law: RotorLaw,
        step_cap: u64,
    },
    Abelian {
        graphs: BTreeMap<u32, PrefractalGraph>,
        law: HeightLaw,
        threshold: ExplosionThreshold,
        topple_cap: u64,
    },
    Divisible {
        graphs: BTreeMap<u32, PrefractalGraph>,
        law: MassLaw,
        params: DivisibleParams,
    },
    Green {
        graphs: BTreeMap<u32, PrefractalGraph>,
        x: LatticeCoord,
        y: LatticeCoord,
        step_cap: u64,
    },
    Clt {
        sizes: BTreeMap<u32, usize>,
        law: HeightLaw,
    },
}

fn graphs_for(levels: &[u32], half: Half) -> Result<BTreeMap<u32, PrefractalGraph>> {
    levels
        .iter()
        .map(|&n| Ok((n, PrefractalGraph::build(n, half)?)))
        .collect()
}

impl Context {
    fn build(spec: &ExperimentSpec) -> Result<Self> {
        let levels = spec.sorted_levels();
        let max = *levels.last().unwrap();
        Ok(match &spec.kind {
            ExperimentKind::ReflectingFrequency { rotor_law } => {
                let graph = PrefractalGraph::build(max, Half::Both)?;
                let ladder = CutSetLadder::new(&graph, max)?;
                Context::Reflecting {
                    graph,
                    ladder,
                    field_law: *rotor_law,
                }
            }
            ExperimentKind::ReflectingReturn { rotor_law, step_cap } => Context::ReflectingReturn {
                graphs: graphs_for(&levels, Half::Both)?,
                law: *rotor_law,
                step_cap: *step_cap,
            },
            ExperimentKind::ReturnTimes {
                rotor_law,
                step_cap,
                max_level,
            } => {
                let ladder = GraphLadder::new(*max_level)?;
                let top = ladder.get(*max_level);
                let cuts = CutSetLadder::new(&top, *max_level)?;
                Context::ReturnTimes {
                    ladder,
                    cuts,
                    law: *rotor_law,
                    step_cap: *step_cap,
                }
            }
            ExperimentKind::AbelianExplosion { height_law, topple_cap } => Context::Abelian {
                graphs: graphs_for(&levels, Half::Plus)?,
                law: height_law.clone(),
                threshold: ExplosionThreshold::for_law(height_law)?,
                topple_cap: *topple_cap,
            },
            ExperimentKind::DivisibleExplosion {
                mass_law,
                epsilon,
                sweep_cap,
            } => Context::Divisible {
                graphs: graphs_for(&levels, Half::Plus)?,
                law: mass_law.clone(),
                params: DivisibleParams {
                    threshold: 1.0,
                    epsilon: *epsilon,
                    sweep_cap: *sweep_cap,
                },
            },
            ExperimentKind::GreenRatio { x, y, step_cap } => Context::Green {
                graphs: graphs_for(&levels, Half::Both)?,
                x: *x,
                y: *y,
                step_cap: *step_cap,
            },
            ExperimentKind::Clt { height_law } => Context::Clt {
                sizes: levels.iter().map(|&n| (n, plus_vertex_count(n))).collect(),
                law: height_law.clone(),
            },
        })
    }

    fn vertices(&self, level: u32) -> usize {
        match self {
            Context::Reflecting { .. } | Context::ReflectingReturn { .. } | Context::Green { .. } => {
                both_vertex_count(level)
            }
            Context::ReturnTimes { ladder, .. } => ladder.get(ladder.max_level()).len(),
            _ => plus_vertex_count(level),
        }
    }

    fn unit(&self, level: u32, seed: u64) -> Result<TrialOutcome> {
        match self {
            Context::Reflecting { .. } => unreachable!("reflecting units span all levels"),
            Context::ReflectingReturn { graphs, law, step_cap } => {
                let g = &graphs[&level];
                let outcome = reflecting_return_walk(g, level, RotorField::new(*law, seed), *step_cap)?;
                Ok(match outcome {
                    ExitOutcome::ReturnedFirst(t) => TrialOutcome::ReflectingReturn {
                        returned_first: true,
                        exited: false,
                        steps: t,
                    },
                    ExitOutcome::ExitedAt(t, _) => TrialOutcome::ReflectingReturn {
                        returned_first: false,
                        exited: true,
                        steps: t,
                    },
                    ExitOutcome::CapExceeded => TrialOutcome::ReflectingReturn {
                        returned_first: false,
                        exited: false,
                        steps: *step_cap,
                    },
                })
            }
            Context::ReturnTimes {
                ladder,
                cuts,
                law,
                step_cap,
            } => {
                let field = RotorField::new(*law, seed);
                let top = ladder.get(ladder.max_level());
                let reflecting_level = cuts.smallest(&top, &field)?;
                let mut walk = EmbeddedWalk::new(ladder, LatticeCoord::ORIGIN, field)?;
                let (status, time) = match walk.run_until_return(*step_cap) {
                    Ok(ReturnOutcome::ReturnedAt(t)) => ("returned", t),
                    Ok(ReturnOutcome::CapExceeded) => ("cap", *step_cap),
                    Err(Error::FrontierExceeded { .. }) => ("escaped", walk.state().time()),
                    Err(e) => return Err(e),
                };
                Ok(TrialOutcome::ReturnTime {
                    status,
                    time,
                    reflecting_level,
                    final_level: walk.level(),
                })
            }
            Context::Abelian {
                graphs,
                law,
                threshold,
                topple_cap,
            } => {
                let r = explosion_trial(&graphs[&level], law, *threshold, seed, *topple_cap)?;
                Ok(TrialOutcome::Abelian {
                    total_mass: r.total_mass,
                    origin_odometer: r.origin_odometer(),
                    origin_topples: r.origin_topples,
                    sink_mass: r.sink_mass,
                    stable_mass: r.stable_mass,
                    indicator: r.indicator,
                })
            }
            Context::Divisible { graphs, law, params } => {
                let r = divisible_trial(&graphs[&level], law, *params, seed)?;
                Ok(TrialOutcome::Divisible {
                    total_mass: r.total_mass,
                    origin_odometer: r.origin_odometer,
                    sink_mass: r.sink_mass,
                    final_mass: r.final_mass,
                    indicator: r.indicator,
                    converged: r.converged,
                    sweeps: r.sweeps,
                })
            }
            Context::Green { graphs, x, y, step_cap } => {
                let g = &graphs[&level];
                let (srw, urw) = green_visits(g, *x, *y, seed, *step_cap)?;
                Ok(TrialOutcome::Green {
                    srw_visits: srw,
                    urw_visits: urw,
                })
            }
            Context::Clt { sizes, law } => {
                let n = sizes[&level];
                let mut rng = trial_rng(seed);
                let total: u64 = (0..n).map(|_| law.draw(rng.random::<f64>()) as u64).sum();
                let z = (total as f64 - law.mean() * n as f64) / (law.std_dev() * (n as f64).sqrt());
                Ok(TrialOutcome::Clt {
                    total_mass: total,
                    z,
                })
            }
        }
    }
}

/// `|V(SG_n⁺)| = (3^{n+1} + 3) / 2`.
pub fn plus_vertex_count(n: u32) -> usize {
    (3usize.pow(n + 1) + 3) / 2
}

/// `|V(SG_n)| = 3^{n+1} + 2`.
pub fn both_vertex_count(n: u32) -> usize {
    3usize.pow(n + 1) + 2
}

/// Walk from `o` on `SG_n` (the graph `g`) with rotors from `field`, except at
/// the corners of `S_n`, which are set to their reflecting positions; runs
/// until the walk returns or leaves `S_n ∪ ∂S_n`.
pub fn reflecting_return_walk(
    g: &PrefractalGraph,
    n: u32,
    field: RotorField,
    step_cap: u64,
) -> Result<ExitOutcome> {
    reflecting_return_walk_from(g, n, LatticeCoord::ORIGIN, field, step_cap)
}

pub fn reflecting_return_walk_from(
    g: &PrefractalGraph,
    n: u32,
    start: LatticeCoord,
    field: RotorField,
    step_cap: u64,
) -> Result<ExitOutcome> {
    let mut rotors = RotorConfig::from_field(g, &field);
    for (v, r) in corner_rotors(n, true) {
        rotors.set(g.require(v)?, r);
    }
    let region = g.sub_prefractal(n, Half::Both)?;
    let mut walk = WalkState::new(g, start, rotors, None)?;
    walk.run_until_exit(g, &region, step_cap)
}

/// Visits to `y` (counting time 0) before the walk leaves the vertex set of
/// `g`, for one simple random walk and one uniform rotor walk from `x`.
pub fn green_visits(
    g: &PrefractalGraph,
    x: LatticeCoord,
    y: LatticeCoord,
    seed: u64,
    step_cap: u64,
) -> Result<(u64, u64)> {
    let start = g.require(x)?;
    let target = g.id(y);
    let region = Region::full(g);

    let mut rng = trial_rng(seed);
    let mut pos = start;
    let mut srw = u64::from(Some(pos) == target);
    let mut steps = 0;
    loop {
        if steps == step_cap {
            return Err(Error::InvalidArgument(format!(
                "simple random walk did not exit within {step_cap} steps"
            )));
        }
        steps += 1;
        let slot = g.slots(pos)[rng.random_range(0..SG_DEGREE)];
        match slot.target {
            Some(t) if region.contains(t) => {
                pos = t;
                srw += u64::from(Some(pos) == target);
            }
            _ => break,
        }
    }

    let field = RotorField::new(RotorLaw::uniform(), mix64(seed ^ 0x5EED));
    let mut walk = WalkState::with_field(g, x, field)?;
    let mut urw = u64::from(Some(start) == target);
    let mut steps = 0;
    loop {
        if steps == step_cap {
            return Err(Error::InvalidArgument(format!(
                "rotor walk did not exit within {step_cap} steps"
            )));
        }
        steps += 1;
        match walk.step(g) {
            Ok(v) => urw += u64::from(Some(v) == target),
            Err(Error::FrontierExceeded { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok((srw, urw))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn outcome_or_failure(r: Result<TrialOutcome>) -> TrialOutcome {
    r.unwrap_or_else(|e| TrialOutcome::Failed { error: e.to_string() })
}

/// Runs `spec`, handing every record to `sink` in `(level, trial)` order.
pub fn run_streaming(
    spec: &ExperimentSpec,
    workers: usize,
    mut sink: impl FnMut(&TrialRecord) -> Result<()>,
) -> Result<Summary> {
    spec.validate()?;
    let ctx = Context::build(spec)?;
    let levels = spec.sorted_levels();
    let mut aggregates: Vec<Aggregate> = levels
        .iter()
        .map(|&n| Aggregate::new(n, ctx.vertices(n)))
        .collect();
    let mut correlations = Vec::new();

    let pool = thread_pool(workers)?;
    'body: {
        if let Context::Reflecting {
            graph,
            ladder,
            field_law,
        } = &ctx
        {
            // one rotor field per trial, shared by every level
            let trials: Vec<u64> = (0..spec.trials).collect();
            let rows: Vec<std::result::Result<Vec<bool>, String>> = pool.install(|| {
                trials
                    .par_chunks(CHUNK)
                    .flat_map_iter(|chunk| {
                        chunk.iter().map(|&t| {
                            let field = RotorField::new(*field_law, derive_seed(spec.master_seed, t, 0));
                            levels
                                .iter()
                                .map(|&n| ladder.is_reflecting(graph, n, &field))
                                .collect::<Result<Vec<bool>>>()
                                .map_err(|e| e.to_string())
                        })
                    })
                    .collect()
            });
            for (k, (&n, agg)) in levels.iter().zip(aggregates.iter_mut()).enumerate() {
                agg.expected = Some(ladder.test(n).probability(field_law));
                for (t, row) in rows.iter().enumerate() {
                    let outcome = match row {
                        Ok(v) => TrialOutcome::Reflecting { reflecting: v[k] },
                        Err(e) => TrialOutcome::Failed { error: e.clone() },
                    };
                    let rec = TrialRecord {
                        trial: t as u64,
                        level: n,
                        seed: derive_seed(spec.master_seed, t as u64, 0),
                        outcome,
                    };
                    agg.add(&rec);
                    sink(&rec)?;
                }
            }
            let ok: Vec<&Vec<bool>> = rows.iter().filter_map(|r| r.as_ref().ok()).collect();
            for i in 0..levels.len() {
                for j in i + 1..levels.len() {
                    let a: Vec<f64> = ok.iter().map(|r| r[i] as u8 as f64).collect();
                    let b: Vec<f64> = ok.iter().map(|r| r[j] as u8 as f64).collect();
                    correlations.push(PairCorrelation {
                        m: levels[i],
                        n: levels[j],
                        correlation: stats::correlation(&a, &b),
                        band: 4.0 / (ok.len() as f64).sqrt(),
                    });
                }
            }
            break 'body;
        }

        for (&n, agg) in levels.iter().zip(aggregates.iter_mut()) {
            let trials: Vec<u64> = (0..spec.trials).collect();
            for chunk in trials.chunks(CHUNK) {
                let records: Vec<TrialRecord> = pool.install(|| {
                    chunk
                        .par_iter()
                        .map(|&t| {
                            let seed = derive_seed(spec.master_seed, t, n);
                            TrialRecord {
                                trial: t,
                                level: n,
                                seed,
                                outcome: outcome_or_failure(ctx.unit(n, seed)),
                            }
                        })
                        .collect()
                });
                for rec in &records {
                    agg.add(rec);
                    sink(rec)?;
                }
            }
        }
    }

    let threshold = match &ctx {
        Context::Abelian { threshold, .. } => Some(*threshold),
        _ => None,
    };
    let divisible_sd = match &ctx {
        Context::Divisible { law, .. } => Some(law.std_dev()),
        _ => None,
    };
    Ok(Summary {
        kind: spec.kind.name().to_string(),
        master_seed: spec.master_seed,
        trials: spec.trials,
        levels: aggregates
            .into_iter()
            .map(|a| a.finish(spec.confidence, threshold, divisible_sd))
            .collect(),
        correlations,
    })
}

/// Runs `spec` and keeps every record in memory.
pub fn run(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentOutput> {
    let mut records = Vec::new();
    let summary = run_streaming(spec, workers, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(ExperimentOutput { records, summary })
}

/// Running per-level totals.
struct Aggregate {
    level: u32,
    vertices: usize,
    trials: u64,
    failures: u64,
    hits: u64,
    has_indicator: bool,
    expected: Option<f64>,
    primary: Vec<f64>,
    converged: Option<u64>,
    srw: Vec<f64>,
    urw: Vec<f64>,
    histogram: Option<BTreeMap<u64, u64>>,
    outcomes: Option<BTreeMap<String, u64>>,
    violations: Option<u64>,
}

impl Aggregate {
    fn new(level: u32, vertices: usize) -> Self {
        Aggregate {
            level,
            vertices,
            trials: 0,
            failures: 0,
            hits: 0,
            has_indicator: false,
            expected: None,
            primary: Vec::new(),
            converged: None,
            srw: Vec::new(),
            urw: Vec::new(),
            histogram: None,
            outcomes: None,
            violations: None,
        }
    }

    fn count_outcome(&mut self, name: &str) {
        *self
            .outcomes
            .get_or_insert_with(BTreeMap::new)
            .entry(name.to_string())
            .or_insert(0) += 1;
    }

    fn indicator(&mut self, hit: bool) {
        self.has_indicator = true;
        self.hits += hit as u64;
    }

    fn add(&mut self, rec: &TrialRecord) {
        self.trials += 1;
        match &rec.outcome {
            TrialOutcome::Failed { .. } => self.failures += 1,
            TrialOutcome::Reflecting { reflecting } => self.indicator(*reflecting),
            TrialOutcome::ReflectingReturn {
                returned_first,
                exited,
                steps,
            } => {
                self.indicator(*returned_first);
                self.primary.push(*steps as f64);
                let name = if *returned_first {
                    "returned_first"
                } else if *exited {
                    "exited"
                } else {
                    "cap"
                };
                self.count_outcome(name);
            }
            TrialOutcome::ReturnTime {
                status,
                time,
                reflecting_level,
                ..
            } => {
                let returned = *status == "returned";
                self.indicator(returned);
                self.count_outcome(status);
                let v = self.violations.get_or_insert(0);
                if reflecting_level.is_some() && *status == "escaped" {
                    *v += 1;
                }
                let h = self.histogram.get_or_insert_with(BTreeMap::new);
                if returned {
                    self.primary.push(*time as f64);
                    let bucket = 1u64 << (63 - time.leading_zeros());
                    *h.entry(bucket).or_insert(0) += 1;
                }
            }
            TrialOutcome::Abelian {
                origin_odometer,
                indicator,
                ..
            } => {
                self.indicator(*indicator);
                self.primary.push(*origin_odometer as f64);
            }
            TrialOutcome::Divisible {
                origin_odometer,
                indicator,
                converged,
                ..
            } => {
                self.indicator(*indicator);
                self.primary.push(*origin_odometer);
                *self.converged.get_or_insert(0) += *converged as u64;
            }
            TrialOutcome::Green { srw_visits, urw_visits } => {
                self.srw.push(*srw_visits as f64);
                self.urw.push(*urw_visits as f64);
            }
            TrialOutcome::Clt { z, .. } => self.primary.push(*z),
        }
    }

    fn finish(
        self,
        confidence: f64,
        abelian: Option<ExplosionThreshold>,
        divisible_sd: Option<f64>,
    ) -> LevelSummary {
        let ok = self.trials - self.failures;
        let indicator = (self.has_indicator && ok > 0).then(|| Frequency::new(self.hits, ok, confidence));
        let threshold = abelian
            .map(|t| t.value(self.vertices))
            .or(divisible_sd.map(|sd| sd * (self.vertices as f64).sqrt() / 3.0));
        let green = (!self.srw.is_empty()).then(|| {
            let (gs, gu) = (stats::mean(&self.srw), stats::mean(&self.urw));
            let (ss, su) = (stats::std_err(&self.srw), stats::std_err(&self.urw));
            let ratio = gs / gu;
            GreenEstimate {
                srw: gs,
                srw_std_err: ss,
                urw: gu,
                urw_std_err: su,
                ratio,
                ratio_std_err: ratio * ((ss / gs).powi(2) + (su / gu).powi(2)).sqrt(),
            }
        });
        let is_clt = !self.primary.is_empty() && self.histogram.is_none() && self.outcomes.is_none()
            && threshold.is_none();
        let clt = (is_clt && !self.has_indicator).then(|| CltSummary {
            mean: stats::mean(&self.primary),
            variance: stats::variance(&self.primary),
            ks_distance: stats::ks_distance_normal(&self.primary),
            small_sample_warning: self.vertices < CLT_SMALL_SAMPLE,
        });
        LevelSummary {
            level: self.level,
            vertices: self.vertices,
            trials: self.trials,
            failures: self.failures,
            indicator,
            expected: self.expected,
            threshold,
            primary: if clt.is_some() { None } else { ScalarSummary::of(&self.primary) },
            converged: self.converged,
            green,
            clt,
            histogram: self.histogram.map(|h| h.into_iter().collect()),
            outcomes: self.outcomes,
            guarantee_violations: self.violations,
        }
    }
}

/// Return-time distribution of rotor walks from `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTimeReport {
    pub summary: LevelSummary,
    pub non_returns: u64,
    pub records: Vec<TrialRecord>,
}

pub fn return_time_study(
    law: RotorLaw,
    trials: u64,
    step_cap: u64,
    max_level: u32,
    master_seed: u64,
    workers: usize,
) -> Result<ReturnTimeReport> {
    let spec = ExperimentSpec::new(
        ExperimentKind::ReturnTimes {
            rotor_law: law,
            step_cap,
            max_level,
        },
        vec![max_level],
        trials,
        master_seed,
    );
    let out = run(&spec, workers)?;
    let summary = out.summary.levels.into_iter().next().unwrap();
    let returned = summary.indicator.map(|f| f.successes).unwrap_or(0);
    Ok(ReturnTimeReport {
        non_returns: summary.trials - returned,
        summary,
        records: out.records,
    })
}

/// Truncated Green function estimates `G_n(x, y)` for SRW and URW.
pub fn green_ratio(
    x: LatticeCoord,
    y: LatticeCoord,
    level: u32,
    trials: u64,
    master_seed: u64,
    workers: usize,
) -> Result<GreenEstimate> {
    let spec = ExperimentSpec::new(
        ExperimentKind::GreenRatio {
            x,
            y,
            step_cap: 100_000_000,
        },
        vec![level],
        trials,
        master_seed,
    );
    let out = run_streaming(&spec, workers, |_| Ok(()))?;
    Ok(out.levels[0].green.clone().expect("green kind"))
}

/// Standardized totals of an i.i.d. sandpile on `SG_n⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub sample: Vec<f64>,
    pub summary: CltSummary,
}

pub fn clt_statistic(
    law: &HeightLaw,
    level: u32,
    samples: u64,
    master_seed: u64,
    workers: usize,
) -> Result<CltReport> {
    let spec = ExperimentSpec::new(
        ExperimentKind::Clt {
            height_law: law.clone(),
        },
        vec![level],
        samples,
        master_seed,
    );
    let out = run(&spec, workers)?;
    let sample = out
        .records
        .iter()
        .filter_map(|r| match r.outcome {
            TrialOutcome::Clt { z, .. } => Some(z),
            _ => None,
        })
        .collect();
    Ok(CltReport {
        sample,
        summary: out.summary.levels[0].clt.clone().expect("clt kind"),
    })
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Column names of the records CSV for `kind`.
pub fn csv_header(kind: &ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::ReflectingFrequency { .. } => "trial,level,seed,reflecting,error",
        ExperimentKind::ReflectingReturn { .. } => "trial,level,seed,outcome,steps,error",
        ExperimentKind::ReturnTimes { .. } => {
            "trial,level,seed,status,time,reflecting_level,final_level,error"
        }
        ExperimentKind::AbelianExplosion { .. } => {
            "trial,level,seed,N_n,u_o,T_o,sink_mass,stable_mass,indicator,error"
        }
        ExperimentKind::DivisibleExplosion { .. } => {
            "trial,level,seed,N_n,u_o,sink_mass,final_mass,indicator,converged,sweeps,error"
        }
        ExperimentKind::GreenRatio { .. } => "trial,level,seed,srw_visits,urw_visits,error",
        ExperimentKind::Clt { .. } => "trial,level,seed,N_n,z,error",
    }
}

fn columns_for(kind: &ExperimentKind) -> usize {
    csv_header(kind).split(',').count()
}

/// One CSV row (without newline).
pub fn csv_row(kind: &ExperimentKind, rec: &TrialRecord) -> String {
    let b = |x: bool| if x { "1" } else { "0" };
    let head = format!("{},{},{}", rec.trial, rec.level, rec.seed);
    let body = match &rec.outcome {
        TrialOutcome::Reflecting { reflecting } => format!("{},", b(*reflecting)),
        TrialOutcome::ReflectingReturn {
            returned_first,
            exited,
            steps,
        } => {
            let o = if *returned_first {
                "returned_first"
            } else if *exited {
                "exited"
            } else {
                "cap"
            };
            format!("{o},{steps},")
        }
        TrialOutcome::ReturnTime {
            status,
            time,
            reflecting_level,
            final_level,
        } => format!(
            "{status},{time},{},{final_level},",
            reflecting_level.map(|n| n.to_string()).unwrap_or_default()
        ),
        TrialOutcome::Abelian {
            total_mass,
            origin_odometer,
            origin_topples,
            sink_mass,
            stable_mass,
            indicator,
        } => format!(
            "{total_mass},{origin_odometer},{origin_topples},{sink_mass},{stable_mass},{},",
            b(*indicator)
        ),
        TrialOutcome::Divisible {
            total_mass,
            origin_odometer,
            sink_mass,
            final_mass,
            indicator,
            converged,
            sweeps,
        } => format!(
            "{total_mass},{origin_odometer},{sink_mass},{final_mass},{},{},{sweeps},",
            b(*indicator),
            b(*converged)
        ),
        TrialOutcome::Green { srw_visits, urw_visits } => format!("{srw_visits},{urw_visits},"),
        TrialOutcome::Clt { total_mass, z } => format!("{total_mass},{z},"),
        TrialOutcome::Failed { error } => {
            let blanks = ",".repeat(columns_for(kind) - 4);
            format!("{blanks}{}", csv_escape(error))
        }
    };
    format!("{head},{body}")
}

/// Streams records as CSV.
pub struct CsvWriter<W: Write> {
    out: W,
    kind: ExperimentKind,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, kind: &ExperimentKind) -> Result<Self> {
        writeln!(out, "{}", csv_header(kind))?;
        Ok(CsvWriter {
            out,
            kind: kind.clone(),
        })
    }

    pub fn write(&mut self, rec: &TrialRecord) -> Result<()> {
        writeln!(self.out, "{}", csv_row(&self.kind, rec))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Runs `spec` and returns the records CSV and summary JSON as bytes.
pub fn run_to_bytes(spec: &ExperimentSpec, workers: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut csv = CsvWriter::new(Vec::new(), &spec.kind)?;
    let summary = run_streaming(spec, workers, |r| csv.write(r))?;
    let csv = csv.finish()?;
    let mut json = serde_json::to_vec_pretty(&SummaryFile { spec, summary: &summary })?;
    json.push(b'\n');
    Ok((csv, json))
}

/// The summary JSON document: the resolved spec next to its results.
#[derive(Serialize)]
pub struct SummaryFile<'a> {
    pub spec: &'a ExperimentSpec,
    pub summary: &'a Summary,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_invalid_specs() {
        let mut spec = ExperimentSpec::new(
            ExperimentKind::ReflectingFrequency {
                rotor_law: RotorLaw::uniform(),
            },
            vec![2],
            0,
            1,
        );
        assert!(spec.validate().is_err());
        spec.trials = 10;
        assert!(spec.validate().is_ok());
        spec.levels = vec![0];
        assert!(spec.validate().is_err());

        let clt = ExperimentSpec::new(
            ExperimentKind::Clt {
                height_law: HeightLaw::constant(3),
            },
            vec![2],
            10,
            1,
        );
        assert!(matches!(clt.validate(), Err(Error::InvalidLaw(_))));

        let sub = ExperimentSpec::new(
            ExperimentKind::AbelianExplosion {
                height_law: HeightLaw::new(vec![(1, 0.5), (3, 0.5)]).unwrap(),
                topple_cap: 10,
            },
            vec![2],
            10,
            1,
        );
        assert!(matches!(sub.validate(), Err(Error::InvalidLaw(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ExperimentSpec::new(
            ExperimentKind::AbelianExplosion {
                height_law: HeightLaw::new(vec![(2, 0.5), (5, 0.5)]).unwrap(),
                topple_cap: 1000,
            },
            vec![3, 4],
            10,
            99,
        );
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"abelian_explosion\""));
        let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn vertex_count_formulas() {
        for n in 0..6 {
            assert_eq!(plus_vertex_count(n), PrefractalGraph::build(n, Half::Plus).unwrap().len());
            assert_eq!(both_vertex_count(n), PrefractalGraph::build(n, Half::Both).unwrap().len());
        }
    }

    #[test]
    fn failed_rows_keep_the_column_count() {
        let kind = ExperimentKind::AbelianExplosion {
            height_law: HeightLaw::constant(3),
            topple_cap: 1,
        };
        let rec = TrialRecord {
            trial: 0,
            level: 1,
            seed: 2,
            outcome: TrialOutcome::Failed {
                error: "topple cap of 1 exceeded, really".into(),
            },
        };
        let row = csv_row(&kind, &rec);
        assert!(row.ends_with("\"topple cap of 1 exceeded, really\""));
        assert_eq!(row.matches(',').count(), columns_for(&kind) - 1 + 1);
    }

    #[test]
    fn capped_trials_are_recorded_not_fatal() {
        let spec = ExperimentSpec::new(
            ExperimentKind::AbelianExplosion {
                height_law: HeightLaw::new(vec![(2, 0.5), (5, 0.5)]).unwrap(),
                topple_cap: 1,
            },
            vec![3],
            5,
            3,
        );
        let out = run(&spec, 1).unwrap();
        assert_eq!(out.summary.levels[0].failures, 5);
        assert!(out
            .records
            .iter()
            .all(|r| matches!(r.outcome, TrialOutcome::Failed { .. })));
    }

    #[test]
    fn clt_small_sample_flag() {
        let law = HeightLaw::new(vec![(2, 0.5), (5, 0.5)]).unwrap();
        let r = clt_statistic(&law, 0, 200, 5, 1).unwrap();
        assert!(r.summary.small_sample_warning);
        assert_eq!(r.sample.len(), 200);
        let r = clt_statistic(&law, 3, 200, 5, 1).unwrap();
        assert!(!r.summary.small_sample_warning);
    }

    #[test]
    fn green_outside_target_is_zero() {
        let est = green_ratio(LatticeCoord::ORIGIN, LatticeCoord::new(100, 100), 1, 200, 3, 1).unwrap();
        assert_eq!(est.srw, 0.0);
        assert_eq!(est.urw, 0.0);
    }

    #[test]
    fn return_time_cap_one() {
        let r = return_time_study(RotorLaw::uniform(), 50, 1, 4, 9, 1).unwrap();
        assert_eq!(r.non_returns, 50);
        assert_eq!(r.summary.outcomes.as_ref().unwrap()["cap"], 50);
    }
}
