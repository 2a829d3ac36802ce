//! Python module `pygasket`: gasket graphs, rotor walks, sandpiles and the
//! experiment runner.

use std::collections::BTreeMap;

use gasket_sim::harness::run_to_bytes;
use gasket_sim::sandpile::{laplacian_check, stabilize as stabilize_pile, Domain};
use gasket_sim::{
    ExperimentSpec, Half, HeightLaw, LatticeCoord, PrefractalGraph, RotorConfig, RotorField, RotorLaw,
    Sandpile, TopplePolicy, WalkState,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: gasket_sim::Error) -> PyErr {
    use gasket_sim::Error as E;
    match e {
        E::Io(_) | E::ToppleCapExceeded(_) | E::FrontierExceeded { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn half(s: &str) -> PyResult<Half> {
    s.parse().map_err(err)
}

fn coord((a, b): (i64, i64)) -> LatticeCoord {
    LatticeCoord::new(a, b)
}

/// A materialized prefractal `SG_n` (one half or both).
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: PrefractalGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (level, half = "both"))]
    fn new(level: u32, half: &str) -> PyResult<Self> {
        Ok(PyGraph {
            inner: PrefractalGraph::build(level, self::half(half)?).map_err(err)?,
        })
    }

    #[getter]
    fn level(&self) -> u32 {
        self.inner.level()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn vertices(&self) -> Vec<(i64, i64)> {
        self.inner.coords().iter().map(|c| (c.a, c.b)).collect()
    }

    fn edges(&self) -> Vec<(u32, u32)> {
        self.inner.edges()
    }

    fn __contains__(&self, v: (i64, i64)) -> bool {
        self.inner.contains(coord(v))
    }

    /// The four gasket neighbours of `v` in anticlockwise order.
    fn cyclic_neighbors(&self, v: (i64, i64)) -> PyResult<Vec<(i64, i64)>> {
        let n = self.inner.cyclic_neighbors(coord(v)).map_err(err)?;
        Ok(n.iter().map(|c| (c.a, c.b)).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = gasket_sim::export::graph_json(&self.inner).map_err(err)?;
        Ok(String::from_utf8(bytes).expect("json is utf-8"))
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(level={}, half={:?}, vertices={})",
            self.inner.level(),
            self.inner.half().as_str(),
            self.inner.len()
        )
    }
}

/// `{"x": (a, b), "y": ..., "z": ..., "t": ...}` for level `n`.
#[pyfunction]
fn corners(n: u32) -> BTreeMap<&'static str, (i64, i64)> {
    let k = gasket_sim::corners(n);
    [("x", k.x), ("y", k.y), ("z", k.z), ("t", k.t)]
        .into_iter()
        .map(|(name, c)| (name, (c.a, c.b)))
        .collect()
}

/// Rotor walk from the origin on `graph`. Rotors not given in `rotors` are
/// drawn from `law` (four probabilities) with `seed`. Returns `[(t, a, b)]`.
#[pyfunction]
#[pyo3(signature = (graph, steps, seed = 0, rotors = None, law = None))]
fn rotor_walk(
    graph: &PyGraph,
    steps: u64,
    seed: u64,
    rotors: Option<BTreeMap<String, u8>>,
    law: Option<[f64; 4]>,
) -> PyResult<Vec<(u64, i64, i64)>> {
    let g = &graph.inner;
    let law = law.map_or(Ok(RotorLaw::uniform()), RotorLaw::new).map_err(err)?;
    let initial = match rotors {
        Some(map) => RotorConfig::import(g, &map).map_err(err)?,
        None => RotorConfig::unset(g),
    };
    let mut walk = WalkState::new(g, LatticeCoord::ORIGIN, initial, Some(RotorField::new(law, seed))).map_err(err)?;
    let trace = walk.trace(g, steps).map_err(err)?;
    Ok(trace.into_iter().map(|(t, c)| (t, c.a, c.b)).collect())
}

/// Probability that i.i.d. rotors make the cut set `S_n` reflecting.
#[pyfunction]
#[pyo3(signature = (n, law = None))]
fn reflecting_probability(n: u32, law: Option<[f64; 4]>) -> PyResult<f64> {
    let law = law.map_or(Ok(RotorLaw::uniform()), RotorLaw::new).map_err(err)?;
    let g = PrefractalGraph::build(n, Half::Both).map_err(err)?;
    let region = g.cut_set(n).map_err(err)?;
    Ok(gasket_sim::rotor::ReflectingTest::new(&g, &region).probability(&law))
}

/// Stabilizes `heights` (one per vertex, in `graph.vertices()` order) with
/// the whole graph as domain. Returns final heights, topplings and sink mass.
#[pyfunction]
#[pyo3(signature = (graph, heights, policy = "fifo", seed = 0, cap = u64::MAX))]
fn stabilize(
    py: Python<'_>,
    graph: &PyGraph,
    heights: Vec<u32>,
    policy: &str,
    seed: u64,
    cap: u64,
) -> PyResult<(Vec<u32>, Vec<u64>, u64)> {
    let policy = match policy {
        "fifo" => TopplePolicy::Fifo,
        "lifo" => TopplePolicy::Lifo,
        "random" => TopplePolicy::RandomOrder(seed),
        other => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
    };
    let g = &graph.inner;
    let sigma = Sandpile::from_heights(heights);
    let r = py
        .detach(|| stabilize_pile(&Domain::whole(g), &sigma, policy, cap))
        .map_err(err)?;
    debug_assert!(laplacian_check(&Domain::whole(g), &sigma, &r));
    Ok((r.final_heights.heights().to_vec(), r.topples, r.sink_mass))
}

/// I.i.d. heights from `law = [(h, p), ...]`.
#[pyfunction]
fn sample_heights(graph: &PyGraph, law: Vec<(u32, f64)>, seed: u64) -> PyResult<Vec<u32>> {
    let law = HeightLaw::new(law).map_err(err)?;
    let region = gasket_sim::Region::full(&graph.inner);
    let pile = Sandpile::sample_iid(&region, &law, &mut gasket_sim::rng::trial_rng(seed));
    Ok(pile.heights().to_vec())
}

/// Runs an experiment given as a JSON spec; returns `(records_csv, summary_json)`.
#[pyfunction]
#[pyo3(signature = (spec_json, workers = 1))]
fn run_experiment(py: Python<'_>, spec_json: &str, workers: usize) -> PyResult<(String, String)> {
    let spec: ExperimentSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (csv, json) = py.detach(|| run_to_bytes(&spec, workers)).map_err(err)?;
    Ok((
        String::from_utf8(csv).expect("csv is utf-8"),
        String::from_utf8(json).expect("json is utf-8"),
    ))
}

/// SVG of `SG_level` with the cut-set corners in reflecting position.
#[pyfunction]
#[pyo3(signature = (level = 2))]
fn reflecting_svg(level: u32) -> PyResult<String> {
    let (g, r) = gasket_sim::render::reflecting_example(level).map_err(err)?;
    gasket_sim::render_svg(&g, gasket_sim::Overlay::Rotors(&r), &gasket_sim::RenderOptions::default()).map_err(err)
}

#[pymodule]
fn pygasket(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(corners, m)?)?;
    m.add_function(wrap_pyfunction!(rotor_walk, m)?)?;
    m.add_function(wrap_pyfunction!(reflecting_probability, m)?)?;
    m.add_function(wrap_pyfunction!(stabilize, m)?)?;
    m.add_function(wrap_pyfunction!(sample_heights, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(reflecting_svg, m)?)?;
    Ok(())
}
