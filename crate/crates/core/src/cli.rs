//! Subcommand bodies behind the `homeguard` binary.
//!
//! Each command returns a `Result`; the binary maps `Ok` to exit code 0 and
//! prints errors to stderr.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::access::{AdmissionDecision, Deployment, DeviceIdentity};
use crate::bench::{self, LatencyRun, RmseReport, SummaryEntry};
use crate::config::Config;
use crate::ledger::{parse_dump, verify_blocks, ChainConfig, Verification};

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Run the RSSI experiment; write per-sample CSV and/or the RMSE summary.
pub fn cmd_simulate_rssi(config: &Config, out_csv: Option<&Path>, out_json: Option<&Path>) -> Result<Vec<RmseReport>> {
    let exp = &config.experiment;
    let run = bench::run_rssi_experiment(
        &config.experiment_profiles(),
        &exp.distances,
        exp.n_samples,
        &config.kalman.setup(),
        exp.seed,
    )?;
    if let Some(path) = out_csv {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        bench::write_samples_csv(&run.samples, BufWriter::new(file))?;
    }
    if let Some(path) = out_json {
        let summary: Vec<SummaryEntry> = run.reports.iter().cloned().map(SummaryEntry::Rmse).collect();
        write_json(path, &summary)?;
    }
    Ok(run.reports)
}

/// Time private and public consultations; write both reports as JSON.
pub fn cmd_bench_chain(config: &Config, trials: usize, difficulty: u32, out_json: Option<&Path>) -> Result<LatencyRun> {
    if trials == 0 {
        bail!("trials must be at least 1");
    }
    let run = bench::run_latency_experiment(trials, difficulty, &config.trust, bench::trial_payload)?;
    if let Some(path) = out_json {
        write_json(path, &[SummaryEntry::Latency(run.private.clone()), SummaryEntry::Latency(run.public.clone())])?;
    }
    Ok(run)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestEntry {
    pub device_id: String,
    pub x: f64,
    pub y: f64,
}

/// Parse a requests file: a JSON array of `{device_id, x, y}`.
pub fn parse_requests(text: &str) -> Result<Vec<RequestEntry>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(text).context("requests must be a JSON array")?;
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let entry: RequestEntry =
                serde_json::from_value(v).map_err(|e| anyhow!("request {i}: {e}"))?;
            if entry.device_id.is_empty() {
                bail!("request {i}: device_id must not be empty");
            }
            if !(entry.x.is_finite() && entry.y.is_finite()) {
                bail!("request {i}: coordinates must be finite");
            }
            Ok(entry)
        })
        .collect()
}

/// Process requests in order and write the chain dump. One decision line
/// per request goes to `log`.
pub fn cmd_run_access<W: Write>(
    config: &Config,
    requests: &[RequestEntry],
    out_chain: Option<&Path>,
    log: &mut W,
) -> Result<(Deployment, Vec<AdmissionDecision>)> {
    let mut deployment = Deployment::new(config.deployment_spec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.experiment.seed);
    let mut decisions = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        let device = DeviceIdentity::new(req.device_id.clone(), req.x, req.y);
        let d = deployment
            .request_admission(&device, &mut rng)
            .with_context(|| format!("request {i}"))?;
        writeln!(log, "{}\tgranted={}\treason={}", req.device_id, d.granted, d.reason)?;
        decisions.push(d);
    }
    if let Some(path) = out_chain {
        let mut text = deployment.chain().to_json();
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok((deployment, decisions))
}

/// Parse and verify a chain dump.
pub fn cmd_verify_chain(dump: &str, chain: &ChainConfig) -> Result<(usize, Verification)> {
    let blocks = parse_dump(dump)?;
    Ok((blocks.len(), verify_blocks(&blocks, chain)))
}
