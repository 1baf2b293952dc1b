//! Python bindings: the ledger, the filter, the radio model, trilateration and
//! the admission layer. Rich results come back as plain dicts and tuples.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use homeguard_core::ledger::{self, BodyValue};
use homeguard_core::{
    access, bench, kalman, localization, Anchor, ChainConfig, Config, DeploymentSpec, DeviceIdentity, Technology,
    Transaction, TrustList, TxKind,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn chain_config(mode: &str, difficulty: u32) -> PyResult<ChainConfig> {
    match mode {
        "private" => Ok(ChainConfig::private()),
        "public" => Ok(ChainConfig::public(difficulty)),
        other => Err(value_err(format!("unknown mode `{other}` (expected private or public)"))),
    }
}

fn tx_kind(name: &str) -> PyResult<TxKind> {
    match name {
        "AdmissionRequest" => Ok(TxKind::AdmissionRequest),
        "AdmissionDecision" => Ok(TxKind::AdmissionDecision),
        "RssiReport" => Ok(TxKind::RssiReport),
        "PositionRecord" => Ok(TxKind::PositionRecord),
        other => Err(value_err(format!("unknown transaction kind `{other}`"))),
    }
}

fn verification(v: ledger::Verification) -> (bool, Option<usize>) {
    (v.valid, v.first_bad_index)
}

fn block_dict<'py>(py: Python<'py>, b: &ledger::Block) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("index", b.index)?;
    d.set_item("timestamp", b.timestamp)?;
    d.set_item("prev_hash", &b.prev_hash)?;
    d.set_item("nonce", b.nonce)?;
    d.set_item("kind", b.payload.kind.to_string())?;
    d.set_item("device_id", &b.payload.device_id)?;
    d.set_item("hash", &b.hash)?;
    Ok(d)
}

/// Hash-chained ledger in private (append) or public (proof-of-work) mode.
#[pyclass(name = "Chain")]
struct PyChain {
    inner: ledger::Chain,
}

#[pymethods]
impl PyChain {
    #[new]
    #[pyo3(signature = (mode = "private", difficulty = 0))]
    fn new(mode: &str, difficulty: u32) -> PyResult<Self> {
        let inner = ledger::Chain::new(chain_config(mode, difficulty)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Append a transaction; body values are strings or {anchor: dBm} maps.
    /// Returns the sealed block as a dict.
    fn submit<'py>(
        &mut self,
        py: Python<'py>,
        kind: &str,
        device_id: &str,
        body: &Bound<'py, PyDict>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut parsed = ledger::Body::new();
        for (k, v) in body.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<String>() {
                Ok(s) => BodyValue::Text(s),
                Err(_) => BodyValue::Readings(v.extract::<BTreeMap<String, f64>>()?),
            };
            parsed.insert(key, value);
        }
        let tx = Transaction::new(tx_kind(kind)?, device_id, parsed);
        let committed = self.inner.submit(tx).map_err(value_err)?;
        block_dict(py, &committed.block)
    }

    fn verify(&self) -> (bool, Option<usize>) {
        verification(self.inner.verify())
    }

    fn blocks<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.blocks().iter().map(|b| block_dict(py, b)).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    #[pyo3(signature = (dump, mode = "private", difficulty = 0))]
    fn from_json(dump: &str, mode: &str, difficulty: u32) -> PyResult<Self> {
        let inner = ledger::Chain::from_json(chain_config(mode, difficulty)?, dump).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Scalar Kalman filter over a sample series. `x0` defaults to the first
/// sample and `p0` to `r`.
#[pyfunction]
#[pyo3(signature = (samples, q = 0.01, r = 4.0, x0 = None, p0 = None, a = 1.0, b = 0.0, u = 0.0, h = 1.0))]
#[allow(clippy::too_many_arguments)]
fn filter_series(
    samples: Vec<f64>,
    q: f64,
    r: f64,
    x0: Option<f64>,
    p0: Option<f64>,
    a: f64,
    b: f64,
    u: f64,
    h: f64,
) -> PyResult<Vec<f64>> {
    let setup = kalman::FilterSetup {
        model: kalman::KalmanModel { a, b, u, q, h, r },
        init: x0.map_or(kalman::InitPolicy::FirstMeasurement, kalman::InitPolicy::Fixed),
        p0,
    };
    setup.model.validate().map_err(value_err)?;
    setup.run(&samples).map_err(value_err)
}

#[pyfunction]
fn rmse(predicted: Vec<f64>, observed: Vec<f64>) -> PyResult<f64> {
    bench::rmse(&predicted, &observed).map_err(value_err)
}

/// Log-distance path-loss profile for one radio technology.
#[pyclass(name = "RadioProfile")]
struct PyRadioProfile {
    inner: homeguard_core::RadioProfile,
}

#[pymethods]
impl PyRadioProfile {
    /// Built-in profile: "wifi", "ble" or "xbee".
    #[new]
    fn new(technology: &str) -> PyResult<Self> {
        let tech: Technology = technology.parse().map_err(value_err)?;
        Ok(Self { inner: homeguard_core::RadioProfile::builtin(tech) })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.to_string()
    }

    #[getter]
    fn system_loss(&self) -> f64 {
        self.inner.system_loss
    }

    fn expected_rssi(&self, d: f64) -> PyResult<f64> {
        self.inner.expected_rssi(d).map_err(value_err)
    }

    fn distance_from_rssi(&self, rssi: f64) -> f64 {
        self.inner.distance_from_rssi(rssi)
    }

    fn noise_std(&self, d: f64) -> f64 {
        self.inner.noise_std(d)
    }

    /// `n` seeded noisy samples at distance `d`.
    fn sample(&self, d: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.inner.sample_rssi(d, &mut rng).map_err(value_err)).collect()
    }
}

/// Least-squares position from `(anchor_id, x, y, distance)` tuples.
/// Returns `(x, y, rms_residual)`.
#[pyfunction]
fn trilaterate(ranges: Vec<(String, f64, f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let ranges: Vec<(Anchor, f64)> = ranges.into_iter().map(|(id, x, y, d)| (Anchor::new(id, x, y), d)).collect();
    let est = localization::trilaterate(&ranges).map_err(value_err)?;
    Ok((est.x, est.y, est.residual))
}

/// Admission layer over a ledger. Owns its own seeded RNG so a sequence of
/// requests replays identically for the same seed.
#[pyclass(name = "Deployment")]
struct PyDeployment {
    inner: access::Deployment,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyDeployment {
    #[new]
    #[pyo3(signature = (trust, technology = "wifi", mode = "private", difficulty = 0, samples_per_request = 100, seed = 42))]
    fn new(
        trust: Vec<String>,
        technology: &str,
        mode: &str,
        difficulty: u32,
        samples_per_request: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let tech: Technology = technology.parse().map_err(value_err)?;
        let spec = DeploymentSpec {
            profile: homeguard_core::RadioProfile::builtin(tech),
            trust: trust.into_iter().collect::<TrustList>(),
            chain: chain_config(mode, difficulty)?,
            samples_per_request,
            ..DeploymentSpec::default()
        };
        let inner = access::Deployment::new(spec).map_err(value_err)?;
        Ok(Self { inner, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Build from a JSON configuration document; the RNG uses its seed.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let cfg = Config::from_json(text, "<python>").map_err(value_err)?;
        let inner = access::Deployment::new(cfg.deployment_spec()).map_err(value_err)?;
        Ok(Self { inner, rng: ChaCha8Rng::seed_from_u64(cfg.experiment.seed) })
    }

    fn request<'py>(&mut self, py: Python<'py>, device_id: &str, x: f64, y: f64) -> PyResult<Bound<'py, PyDict>> {
        let decision = self
            .inner
            .request_admission(&DeviceIdentity::new(device_id, x, y), &mut self.rng)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("granted", decision.granted)?;
        d.set_item("reason", decision.reason.as_str())?;
        d.set_item("position", decision.position.map(|p| (p.x, p.y)))?;
        d.set_item("diagnostic", decision.diagnostic)?;
        Ok(d)
    }

    fn audit<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let entries = access::audit_trail(self.inner.chain()).map_err(value_err)?;
        entries
            .into_iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("device_id", e.device_id)?;
                d.set_item("granted", e.granted)?;
                d.set_item("reason", e.reason.as_str())?;
                d.set_item("decision_position", e.decision_position)?;
                d.set_item("recorded_position", e.recorded_position)?;
                Ok(d)
            })
            .collect()
    }

    fn verify(&self) -> (bool, Option<usize>) {
        verification(self.inner.chain().verify())
    }

    fn dump(&self) -> String {
        self.inner.chain().to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.chain().len()
    }
}

#[pymodule]
fn homeguard(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add_class::<PyRadioProfile>()?;
    m.add_class::<PyDeployment>()?;
    m.add_function(wrap_pyfunction!(filter_series, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(trilaterate, m)?)?;
    m.add("MAX_DIFFICULTY", ledger::MAX_DIFFICULTY)?;
    Ok(())
}
