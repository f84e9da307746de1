//! Python bindings for the `dlcoop` crate.

use ::dlcoop::channel::{ChannelState, NodeId, RelayLink};
use ::dlcoop::cli::{parse_config, ExperimentConfig};
use ::dlcoop::controller::theorem1_constants as constants;
use ::dlcoop::dp;
use ::dlcoop::engine::{self, Metrics, World};
use ::dlcoop::phy::{self, LinkBudget, Mode, PowerAllocation, Scheme};
use ::dlcoop::solver::{self, ModeCost, NodeCost, SolverInput, SolverOptions};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scheme(name: &str) -> PyResult<Scheme> {
    Scheme::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
        PyValueError::new_err(format!("unknown scheme `{name}`; expected one of {}", known.join(", ")))
    })
}

fn mode(name: &str) -> PyResult<Mode> {
    Mode::ALL.into_iter().find(|m| m.name() == name).ok_or_else(|| PyValueError::new_err(format!("unknown mode `{name}`")))
}

/// Relays get ids 1, 2, ... in list order.
fn state(source_destination: f64, relays: &[(f64, f64)]) -> ChannelState {
    let links = relays
        .iter()
        .enumerate()
        .map(|(j, &(sr, rd))| RelayLink { id: NodeId(j as u32 + 1), source_relay: sr, relay_destination: rd })
        .collect();
    ChannelState::new(0, source_destination, links)
}

fn config(text: Option<&str>, overrides: Option<Vec<String>>, seed: Option<u64>) -> PyResult<ExperimentConfig> {
    let mut c = parse_config(text, "<python>", &overrides.unwrap_or_default()).map_err(value_error)?;
    if let Some(seed) = seed {
        c.simulation.seed = seed;
    }
    Ok(c)
}

fn mode_cost<'py>(py: Python<'py>, c: &ModeCost) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("cost", c.cost)?;
    match &c.action {
        Some(a) => {
            d.set_item("mode", a.mode.name())?;
            d.set_item("source_power", a.alloc.source)?;
            d.set_item("relay_powers", a.alloc.relays.clone())?;
            d.set_item("decode_target", a.decode_target.iter().map(|id| id.0 - 1).collect::<Vec<u32>>())?;
        }
        None => {
            d.set_item("mode", py.None())?;
        }
    }
    Ok(d)
}

fn metrics<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("slots", m.slots)?;
    d.set_item("v", m.v)?;
    d.set_item("sum_power", m.sum_power())?;
    d.set_item("average_reliability_queue", m.average_reliability_queue())?;
    d.set_item("average_power_queue", m.average_power_queue())?;
    d.set_item("max_queue", m.max_queue())?;
    d.set_item("arrival_rate", m.sources.iter().map(|s| s.arrival_rate).collect::<Vec<_>>())?;
    d.set_item("delivered_rate", m.sources.iter().map(|s| s.delivered_rate).collect::<Vec<_>>())?;
    d.set_item("reliability_target", m.sources.iter().map(|s| s.reliability_target).collect::<Vec<_>>())?;
    d.set_item("node_power", m.nodes.iter().map(|n| n.average_power).collect::<Vec<_>>())?;
    d.set_item("reliability_identity_gaps", m.reliability_identity_gaps())?;
    d.set_item("power_identity_gaps", m.power_identity_gaps())?;
    let modes = PyDict::new(py);
    for (mode, count) in Mode::ALL.iter().zip(m.mode_counts) {
        modes.set_item(mode.name(), count)?;
    }
    d.set_item("mode_counts", modes)?;
    Ok(d)
}

/// Minimum-cost action of one slot plus the per-mode cost table.
#[pyfunction]
#[pyo3(signature = (source_destination, relays, scheme_name="regdf_ortho", reward=0.0, source_weight=1.0, relay_weight=1.0, p_max=10.0, af_grid_points=100, af_refine=true))]
#[allow(clippy::too_many_arguments)]
fn solve_slot<'py>(
    py: Python<'py>,
    source_destination: f64,
    relays: Vec<(f64, f64)>,
    scheme_name: &str,
    reward: f64,
    source_weight: f64,
    relay_weight: f64,
    p_max: f64,
    af_grid_points: usize,
    af_refine: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let s = state(source_destination, &relays);
    let input = SolverInput {
        state: &s,
        budget: LinkBudget::default(),
        scheme: scheme(scheme_name)?,
        source: NodeCost { weight: source_weight, p_max },
        relays: vec![NodeCost { weight: relay_weight, p_max }; s.relay_count()],
        reward,
        options: SolverOptions { af_grid_points, af_refine },
    };
    let (best, table) = solver::best_action(&input);
    let out = mode_cost(py, &best)?;
    let costs = PyDict::new(py);
    for m in Mode::ALL {
        costs.set_item(m.name(), mode_cost(py, table.get(m))?)?;
    }
    out.set_item("table", costs)?;
    Ok(out)
}

/// Destination mutual information in bits per slot. Relay indices in
/// `decoded` refer to positions in `relays`.
#[pyfunction]
#[pyo3(signature = (mode_name, scheme_name, source_power, relay_powers, source_destination, relays, decoded=None))]
fn mutual_information(
    mode_name: &str,
    scheme_name: &str,
    source_power: f64,
    relay_powers: Vec<f64>,
    source_destination: f64,
    relays: Vec<(f64, f64)>,
    decoded: Option<Vec<u32>>,
) -> PyResult<f64> {
    let s = state(source_destination, &relays);
    let sch = scheme(scheme_name)?;
    let alloc = PowerAllocation { source: source_power, relays: relay_powers };
    let set: Vec<NodeId> = match decoded {
        Some(d) => d.into_iter().map(|j| NodeId(j + 1)).collect(),
        None => phy::decode_set(source_power, &s, &LinkBudget::default(), sch),
    };
    phy::mutual_information(mode(mode_name)?, sch, &alloc, &set, &s, &LinkBudget::default()).map_err(value_error)
}

/// Positions in `relays` of the relays that decode at `source_power`.
#[pyfunction]
#[pyo3(signature = (source_power, relays, scheme_name="regdf_ortho"))]
fn decode_set(source_power: f64, relays: Vec<(f64, f64)>, scheme_name: &str) -> PyResult<Vec<u32>> {
    let s = state(0.0, &relays);
    Ok(phy::decode_set(source_power, &s, &LinkBudget::default(), scheme(scheme_name)?).into_iter().map(|id| id.0 - 1).collect())
}

/// Canonical TOML of the reference experiment, optionally with overrides.
#[pyfunction]
#[pyo3(signature = (config_toml=None, overrides=None, seed=None))]
fn resolve_config(config_toml: Option<&str>, overrides: Option<Vec<String>>, seed: Option<u64>) -> PyResult<(String, String)> {
    let c = config(config_toml, overrides, seed)?;
    Ok((c.canonical(), c.hash()))
}

/// Run the `[simulation]` section to completion and return its metrics.
#[pyfunction]
#[pyo3(signature = (config_toml=None, overrides=None, seed=None))]
fn simulate<'py>(
    py: Python<'py>,
    config_toml: Option<&str>,
    overrides: Option<Vec<String>>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let c = config(config_toml, overrides, seed)?;
    let m = py.detach(|| engine::run(&c.simulation)).map_err(value_error)?;
    metrics(py, &m)
}

/// Independent runs over a list of V values.
#[pyfunction]
#[pyo3(signature = (v_values, config_toml=None, overrides=None, seed=None))]
fn sweep_v<'py>(
    py: Python<'py>,
    v_values: Vec<f64>,
    config_toml: Option<&str>,
    overrides: Option<Vec<String>>,
    seed: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = config(config_toml, overrides, seed)?;
    let runs = py.detach(|| engine::sweep_v(&c.simulation, &v_values)).map_err(value_error)?;
    runs.iter().map(|m| metrics(py, m)).collect()
}

/// Bound constants of the controller for one source.
#[pyfunction]
#[pyo3(signature = (config_toml=None, overrides=None, source=0))]
fn theorem1_constants<'py>(
    py: Python<'py>,
    config_toml: Option<&str>,
    overrides: Option<Vec<String>>,
    source: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let c = config(config_toml, overrides, None)?;
    let params = c.simulation.controller_params();
    if source >= params.sources.len() {
        return Err(PyValueError::new_err(format!("source {source} out of range")));
    }
    let t = constants(&params, source);
    let d = PyDict::new(py);
    d.set_item("b", t.b)?;
    d.set_item("v", t.v)?;
    d.set_item("utility_gap", t.utility_gap)?;
    d.set_item("queue_bound_numerator", t.queue_bound_numerator)?;
    Ok(d)
}

#[pyfunction]
fn chebyshev_bound(variance: f64, n: usize, epsilon: f64) -> PyResult<f64> {
    if !(epsilon > 0.0) || n == 0 {
        return Err(PyValueError::new_err("need epsilon > 0 and n >= 1"));
    }
    Ok(dp::chebyshev_bound(variance, n, epsilon))
}

/// Exact first-stage optimum of the `[dp]` instance.
#[pyfunction]
#[pyo3(signature = (config_toml=None, overrides=None))]
fn exact_dp(py: Python<'_>, config_toml: Option<&str>, overrides: Option<Vec<String>>) -> PyResult<(f64, f64)> {
    let c = config(config_toml, overrides, None)?;
    let (d, sim) = (&c.dp, &c.simulation);
    let src = &sim.sources[0];
    let stats = dp::LinkStatistics::from_fading(&sim.fading, d.relays);
    let source = NodeCost { weight: d.power_queue + sim.v * src.beta, p_max: src.p_max };
    let relay = NodeCost { weight: d.power_queue + sim.v * sim.relays.beta, p_max: sim.relays.p_max };
    let reward = d.reliability_queue + sim.v * src.alpha;
    let problem = dp::DpProblem::new(stats, sim.link, sim.scheme, source, vec![relay; d.relays], reward, d.bins, d.options)
        .map_err(value_error)?;
    let e = py.detach(|| dp::exact_dp(&problem));
    Ok((e.source_power, e.value))
}

/// Slot-by-slot access to a running simulation.
#[pyclass(name = "Simulation")]
struct PySimulation {
    world: Option<World>,
}

impl PySimulation {
    fn world(&mut self) -> PyResult<&mut World> {
        self.world.as_mut().ok_or_else(|| PyValueError::new_err("simulation already finished"))
    }
}

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (config_toml=None, overrides=None, seed=None))]
    fn new(config_toml: Option<&str>, overrides: Option<Vec<String>>, seed: Option<u64>) -> PyResult<Self> {
        let c = config(config_toml, overrides, seed)?;
        let world = World::new(c.simulation, false).map_err(value_error)?;
        Ok(Self { world: Some(world) })
    }

    /// Advance one slot; returns one record per source.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = self.world()?.run_slot();
        rows.iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("slot", r.slot)?;
                d.set_item("source", r.source)?;
                d.set_item("arrival", r.arrival)?;
                d.set_item("mode", r.mode.name())?;
                d.set_item("delivered", r.delivered)?;
                d.set_item("source_power", r.source_power)?;
                d.set_item("relay_power", r.relay_power)?;
                d.set_item("cost", r.cost)?;
                Ok(d)
            })
            .collect()
    }

    #[getter]
    fn slot(&mut self) -> PyResult<u64> {
        Ok(self.world()?.slot())
    }

    /// `(Z per source, X per node)`.
    #[getter]
    fn queues(&mut self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let q = self.world()?.queues();
        Ok((q.reliability.clone(), q.power.clone()))
    }

    /// Close the run and return its metrics.
    fn finish<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let world = self.world.take().ok_or_else(|| PyValueError::new_err("simulation already finished"))?;
        metrics(py, &world.finish())
    }
}

#[pymodule]
fn dlcoop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMES", Scheme::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    m.add("MODES", Mode::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(solve_slot, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(decode_set, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_v, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_constants, m)?)?;
    m.add_function(wrap_pyfunction!(chebyshev_bound, m)?)?;
    m.add_function(wrap_pyfunction!(exact_dp, m)?)?;
    m.add_class::<PySimulation>()?;
    Ok(())
}
