//! Python bindings: scenario config, the three experiment drivers and the
//! small numerical building blocks.

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use coopstream::cooperation as coop;
use coopstream::mdp::{self, oracle};
use coopstream::sim::{self, SimConfig, SourcePlacement};
use coopstream::traffic::{feasible_actions_with_budget, FrameId, GopSpec, TrafficState};
use coopstream::{phy, pricing, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Csv { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializes through JSON so results arrive as plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Scenario configuration. Built from defaults or TOML text.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SimConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => SimConfig::from_toml_str(t).map_err(py_err)?,
            None => SimConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SimConfig::from_path(&path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn n_slots(&self) -> usize {
        self.inner.n_slots
    }

    #[setter]
    fn set_n_slots(&mut self, v: usize) -> PyResult<()> {
        self.update(|c| c.n_slots = v)
    }

    #[getter]
    fn n_relays(&self) -> usize {
        self.inner.n_relays
    }

    #[setter]
    fn set_n_relays(&mut self, v: usize) -> PyResult<()> {
        self.update(|c| c.n_relays = v)
    }

    #[getter]
    fn pmf_samples(&self) -> usize {
        self.inner.pmf_samples
    }

    #[setter]
    fn set_pmf_samples(&mut self, v: usize) -> PyResult<()> {
        self.update(|c| c.pmf_samples = v)
    }

    #[getter]
    fn cooperation_enabled(&self) -> bool {
        self.inner.cooperation_enabled
    }

    #[setter]
    fn set_cooperation_enabled(&mut self, v: bool) {
        self.inner.cooperation_enabled = v;
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[setter]
    fn set_alpha(&mut self, v: f64) -> PyResult<()> {
        self.update(|c| c.alpha = v)
    }

    #[getter]
    fn xi(&self) -> f64 {
        self.inner.coop.self_select_xi
    }

    #[setter]
    fn set_xi(&mut self, v: f64) -> PyResult<()> {
        self.update(|c| c.coop.self_select_xi = v)
    }

    /// `(distance, angle_deg)` per source.
    #[getter]
    fn sources(&self) -> Vec<(f64, f64)> {
        self.inner
            .sources
            .iter()
            .map(|s| (s.distance, s.angle_deg))
            .collect()
    }

    #[setter]
    fn set_sources(&mut self, v: Vec<(f64, f64)>) -> PyResult<()> {
        self.update(|c| {
            c.sources = v
                .into_iter()
                .map(|(distance, angle_deg)| SourcePlacement {
                    distance,
                    angle_deg,
                })
                .collect()
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, sources={}, n_relays={}, n_slots={}, xi={})",
            self.inner.seed,
            self.inner.sources.len(),
            self.inner.n_relays,
            self.inner.n_slots,
            self.inner.coop.self_select_xi
        )
    }
}

impl PyConfig {
    /// Applies `f` and keeps the change only if the result validates.
    fn update(&mut self, f: impl FnOnce(&mut SimConfig)) -> PyResult<()> {
        let mut next = self.inner.clone();
        f(&mut next);
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }
}

/// Runs a closed-loop episode. Returns the summary dict, plus the per-slot
/// records when `records` is true.
#[pyfunction]
#[pyo3(signature = (config, records = false))]
fn run<'py>(py: Python<'py>, config: &PyConfig, records: bool) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let out = py.detach(|| sim::run_episode(&cfg)).map_err(py_err)?;
    let summary = to_py(py, &out.stats)?;
    if records {
        let recs = to_py(py, &out.records)?;
        Ok((summary, recs).into_pyobject(py)?.into_any())
    } else {
        Ok(summary)
    }
}

/// Single-source sweep; one dict per (distance, ξ) cell.
#[pyfunction]
#[pyo3(signature = (config, distances = None, xi_values = None))]
fn sweep<'py>(
    py: Python<'py>,
    config: &PyConfig,
    distances: Option<Vec<f64>>,
    xi_values: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let d = distances.unwrap_or_else(|| cfg.sweep.distances.clone());
    let x = xi_values.unwrap_or_else(|| cfg.sweep.xi_values.clone());
    let table = py
        .detach(|| sim::sweep_distance(&cfg, &d, &x))
        .map_err(py_err)?;
    to_py(py, &table.cells)
}

#[derive(Serialize)]
struct PriceSummary {
    lambda: f64,
    converged: bool,
    residual: f64,
    demands: Vec<f64>,
    history: Vec<pricing::PriceStep>,
}

/// Price iteration over the scenario's users.
#[pyfunction]
fn price<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let (_, out) = py.detach(|| sim::solved_policies(&cfg)).map_err(py_err)?;
    to_py(
        py,
        &PriceSummary {
            lambda: out.lambda,
            converged: out.converged,
            residual: out.residual,
            demands: out.demands,
            history: out.history,
        },
    )
}

/// One recruitment round per source on a freshly drawn layout and channel.
#[pyfunction]
#[pyo3(signature = (config, seed = 0))]
fn recruit<'py>(py: Python<'py>, config: &PyConfig, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = &config.inner;
    let mut rng = sim::child_rng(cfg.seed, 100, seed);
    let topo = sim::build_topology(cfg, &mut rng).map_err(py_err)?;
    let h = phy::draw_channel_matrix(&topo, &mut rng).map_err(py_err)?;
    let mut outcomes = Vec::new();
    for source in 1..=cfg.users() {
        match coop::run_recruitment(source, &h, &cfg.phy, &cfg.coop, 0.0, &mut rng) {
            Ok(o) => outcomes.push(Some(o)),
            Err(Error::NoDirectLink) => outcomes.push(None),
            Err(e) => return Err(py_err(e)),
        }
    }
    to_py(py, &outcomes)
}

#[pyfunction]
fn snr_coefficient(gamma: f64, bep: f64) -> PyResult<f64> {
    phy::snr_coefficient(gamma, bep).map_err(py_err)
}

#[pyfunction]
fn ber_upper_bound(h: Complex64, bits_per_symbol: u32, gamma: f64) -> f64 {
    phy::ber_upper_bound(h, bits_per_symbol, gamma)
}

#[pyfunction]
fn bits_for_gain(gain: f64, big_gamma: f64, max_bits: u32) -> u32 {
    phy::bits_for_gain(gain, big_gamma, max_bits)
}

#[pyfunction]
fn coop_rate(beta1: f64, beta2: f64, rc: f64) -> PyResult<f64> {
    coop::coop_rate(beta1, beta2, rc).map_err(py_err)
}

#[pyfunction]
fn phase_split(beta1: f64, beta2: f64, rc: f64) -> PyResult<f64> {
    coop::phase_split(beta1, beta2, rc).map_err(py_err)
}

#[pyfunction]
fn cooperation_wins(beta_direct: f64, beta1: f64, beta2: f64, rc: f64) -> bool {
    coop::cooperation_wins(beta_direct, beta1, beta2, rc)
}

#[pyfunction]
fn ap_accept_condition(beta_direct: f64, beta2: f64, rc: f64, xi: f64) -> bool {
    coop::ap_accept_condition(beta_direct, beta2, rc, xi)
}

#[pyfunction]
fn subgradient_step(lambda_: f64, mu: f64, sum_x: f64, alpha: f64) -> f64 {
    pricing::subgradient_step(lambda_, mu, sum_x, alpha)
}

#[pyfunction]
fn normalize_allocations(requested: Vec<f64>) -> Vec<f64> {
    pricing::normalize_allocations(&requested)
}

/// Feasible actions for one GOP whose frames hold `buffers` packets, with
/// `dependencies` as `(parent, child)` frame-class pairs.
#[pyfunction]
fn feasible_actions(
    buffers: Vec<u32>,
    dependencies: Vec<(usize, usize)>,
    budget: u32,
) -> PyResult<Vec<Vec<u32>>> {
    let n = buffers.len();
    let gop = GopSpec {
        frames_per_gop: n,
        period: 1,
        window: 0,
        dependencies,
        packets_per_frame: buffers.clone(),
        quality_increment: vec![1.0; n],
        deadlines: vec![0; n],
    };
    gop.validate().map_err(py_err)?;
    let state = TrafficState {
        slot: 0,
        frames: (0..n).map(|class| FrameId { gop: 0, class }).collect(),
        buffers,
        doomed: Default::default(),
    };
    Ok(feasible_actions_with_budget(&state, budget, &gop)
        .into_iter()
        .map(|a| a.counts)
        .collect())
}

/// Value iteration on a hand-built model.
///
/// `table[t]` lists `(packets, utility, next_state)` actions of traffic
/// state `t`; `rates` are packets per slot. Returns `values[t][bin]` and
/// the packet count of the chosen action in `packets[t][bin]`.
#[pyfunction]
#[pyo3(signature = (table, rates, probabilities, lambda_ = 0.0, alpha = 0.9, users = 1, tol = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn solve_mdp<'py>(
    py: Python<'py>,
    table: Vec<Vec<(u32, f64, usize)>>,
    rates: Vec<f64>,
    probabilities: Vec<f64>,
    lambda_: f64,
    alpha: f64,
    users: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let traffic = mdp::TrafficModel::from_table(table).map_err(py_err)?;
    let pmf = mdp::RatePmf::new(rates, probabilities).map_err(py_err)?;
    let model = mdp::UserModel::from_parts(traffic, pmf, 1.0, 1).map_err(py_err)?;
    let params = mdp::SolveParams {
        lambda: lambda_,
        alpha,
        users,
        tol,
        ..mdp::SolveParams::default()
    };
    let sol = mdp::value_iteration(&model, &params).map_err(py_err)?;
    let nb = model.pmf.len();
    let mut values = Vec::new();
    let mut packets = Vec::new();
    for t in 0..model.traffic.len() {
        let states = (0..nb).map(|b| mdp::UserState {
            traffic: t,
            rate_bin: b,
        });
        values.push(states.clone().map(|s| sol.value(s)).collect::<Vec<_>>());
        packets.push(
            states
                .map(|s| sol.action(&model, s).packets)
                .collect::<Vec<_>>(),
        );
    }
    #[derive(Serialize)]
    struct Out {
        values: Vec<Vec<f64>>,
        packets: Vec<Vec<u32>>,
        iterations: usize,
    }
    to_py(
        py,
        &Out {
            values,
            packets,
            iterations: sol.iterations(),
        },
    )
}

/// Largest |augmented − opportunistic| value gap and largest signed excess
/// over `instances` random small MDPs.
#[pyfunction]
#[pyo3(signature = (instances = 200, seed = 0))]
fn oracle_gap(py: Python<'_>, instances: usize, seed: u64) -> PyResult<(f64, f64)> {
    py.detach(|| {
        let mut worst: f64 = 0.0;
        let mut excess = f64::NEG_INFINITY;
        for i in 0..instances {
            let inst = oracle::random_instance(&mut sim::child_rng(seed, 7, i as u64));
            let (w, e) = oracle::compare(&inst)?;
            worst = worst.max(w);
            excess = excess.max(e);
        }
        Ok((worst, excess))
    })
    .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "coopstream")]
pub fn coopstream_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(price, m)?)?;
    m.add_function(wrap_pyfunction!(recruit, m)?)?;
    m.add_function(wrap_pyfunction!(snr_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(ber_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bits_for_gain, m)?)?;
    m.add_function(wrap_pyfunction!(coop_rate, m)?)?;
    m.add_function(wrap_pyfunction!(phase_split, m)?)?;
    m.add_function(wrap_pyfunction!(cooperation_wins, m)?)?;
    m.add_function(wrap_pyfunction!(ap_accept_condition, m)?)?;
    m.add_function(wrap_pyfunction!(subgradient_step, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_allocations, m)?)?;
    m.add_function(wrap_pyfunction!(feasible_actions, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mdp, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_gap, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
