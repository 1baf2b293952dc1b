//! Experiment harness: RSSI error per technology and distance, and admission
//! latency of the private versus proof-of-work ledger.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kalman::{FilterSetup, KalmanError};
use crate::ledger::{Chain, ChainConfig, LedgerError, Mode, Transaction, TrustList, MAX_DIFFICULTY};
use crate::radio::{RadioError, RadioProfile, Technology};

/// Distances used by the RSSI experiment, in metres.
pub const DEFAULT_DISTANCES: [f64; 3] = [0.25, 0.5, 1.0];
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("rmse needs equal non-empty inputs (got {predicted} predicted, {observed} observed)")]
    LengthMismatch { predicted: usize, observed: usize },
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("difficulty {0} out of range (max {MAX_DIFFICULTY})")]
    Difficulty(u32),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub fn rmse(predicted: &[f64], observed: &[f64]) -> Result<f64, BenchError> {
    if predicted.is_empty() || predicted.len() != observed.len() {
        return Err(BenchError::LengthMismatch { predicted: predicted.len(), observed: observed.len() });
    }
    let sum: f64 = predicted.iter().zip(observed).map(|(p, o)| (p - o).powi(2)).sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub technology: Technology,
    pub distance: f64,
    pub rmse_raw: f64,
    pub rmse_filtered: f64,
    pub n_samples: usize,
}

/// One CSV row of the RSSI experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub sample_index: usize,
    pub technology: Technology,
    pub true_distance_m: f64,
    pub raw_rssi_dbm: f64,
    pub filtered_rssi_dbm: f64,
    pub est_distance_m: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RssiExperiment {
    pub reports: Vec<RmseReport>,
    pub samples: Vec<SampleRow>,
}

/// Seed of the noise stream for the `index`-th profile.
///
/// Every distance of one profile replays the same stream, so cells of a
/// technology differ only through the distance-dependent noise scale.
pub fn stream_seed(master: u64, index: usize) -> u64 {
    master ^ index as u64
}

pub fn run_rssi_experiment(
    profiles: &[RadioProfile],
    distances: &[f64],
    n_samples: usize,
    filter: &FilterSetup,
    seed: u64,
) -> Result<RssiExperiment, BenchError> {
    if n_samples == 0 {
        return Err(BenchError::NoSamples);
    }
    let mut out = RssiExperiment::default();
    for (pi, profile) in profiles.iter().enumerate() {
        for &d in distances {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, pi));
            let expected = profile.expected_rssi(d)?;
            let raw = (0..n_samples)
                .map(|_| profile.sample_rssi(d, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let filtered = filter.run(&raw)?;
            let predicted = vec![expected; n_samples];
            out.reports.push(RmseReport {
                technology: profile.name,
                distance: d,
                rmse_raw: rmse(&predicted, &raw)?,
                rmse_filtered: rmse(&predicted, &filtered)?,
                n_samples,
            });
            out.samples.extend(raw.iter().zip(&filtered).enumerate().map(|(i, (&r, &f))| SampleRow {
                sample_index: i,
                technology: profile.name,
                true_distance_m: d,
                raw_rssi_dbm: r,
                filtered_rssi_dbm: f,
                est_distance_m: profile.distance_from_rssi(f),
            }));
        }
    }
    Ok(out)
}

pub const CSV_HEADER: [&str; 6] = [
    "sample_index",
    "technology",
    "true_distance_m",
    "raw_rssi_dbm",
    "filtered_rssi_dbm",
    "est_distance_m",
];

pub fn write_samples_csv<W: Write>(rows: &[SampleRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_index.to_string(),
            r.technology.to_string(),
            format!("{:.6}", r.true_distance_m),
            format!("{:.6}", r.raw_rssi_dbm),
            format!("{:.6}", r.filtered_rssi_dbm),
            format!("{:.6}", r.est_distance_m),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<u32>,
    pub trials: usize,
    pub mean_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
}

impl LatencyReport {
    fn from_samples(mode: Mode, difficulty: Option<u32>, secs: &[f64]) -> Self {
        let min = secs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = secs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (secs.iter().sum::<f64>() / secs.len() as f64).clamp(min, max);
        Self { mode, difficulty, trials: secs.len(), mean_seconds: mean, min_seconds: min, max_seconds: max }
    }
}

#[derive(Debug, Clone)]
pub struct LatencyRun {
    pub private: LatencyReport,
    pub public: LatencyReport,
    /// Digests evaluated per public trial.
    pub public_attempts: Vec<u128>,
}

/// Default trial payload: an admission request whose readings vary with the
/// trial index, so every public trial mines a distinct block.
pub fn trial_payload(trial: usize) -> Transaction {
    let rssi = BTreeMap::from([
        ("a0".to_string(), -45.0 - trial as f64 * 0.01),
        ("a1".to_string(), -52.5),
        ("a2".to_string(), -50.25),
    ]);
    Transaction::admission_request(format!("device-{trial}"), rssi)
}

/// Time `trials` admission consultations against each ledger mode.
///
/// A consultation is a trust lookup followed by `append_private` (private) or
/// mining at `difficulty` (public). Trials run sequentially.
pub fn run_latency_experiment<F>(
    trials: usize,
    difficulty: u32,
    trust: &TrustList,
    mut payload: F,
) -> Result<LatencyRun, BenchError>
where
    F: FnMut(usize) -> Transaction,
{
    if trials == 0 {
        return Err(BenchError::NoTrials);
    }
    if difficulty > MAX_DIFFICULTY {
        return Err(BenchError::Difficulty(difficulty));
    }
    let mut private_chain = Chain::new(ChainConfig::private())?;
    let mut public_chain = Chain::new(ChainConfig::public(difficulty))?;
    let mut private_secs = Vec::with_capacity(trials);
    let mut public_secs = Vec::with_capacity(trials);
    let mut attempts = Vec::with_capacity(trials);

    for trial in 0..trials {
        let tx = payload(trial);

        let tx_private = tx.clone();
        let start = Instant::now();
        std::hint::black_box(trust.contains(&tx_private.device_id));
        private_chain.append_private(tx_private)?;
        private_secs.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        std::hint::black_box(trust.contains(&tx.device_id));
        let mined = public_chain.mine(tx)?;
        public_secs.push(start.elapsed().as_secs_f64());
        attempts.push(mined.attempts);
    }

    Ok(LatencyRun {
        private: LatencyReport::from_samples(Mode::Private, None, &private_secs),
        public: LatencyReport::from_samples(Mode::Public, Some(difficulty), &public_secs),
        public_attempts: attempts,
    })
}

/// Summary JSON entry: either report kind, serialized by its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SummaryEntry {
    Rmse(RmseReport),
    Latency(LatencyReport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference for the RMSE formula: accumulate squared errors in one pass,
    // divide, then take the root. Kept textually distinct from `rmse`.
    fn two_pass_rmse(p: &[f64], o: &[f64]) -> f64 {
        let diffs: Vec<f64> = p.iter().zip(o.iter()).map(|(a, b)| a - b).collect();
        let mut acc = 0.0;
        for d in &diffs {
            acc += d * d;
        }
        (acc / diffs.len() as f64).sqrt()
    }

    #[test]
    fn rmse_examples() {
        let p = [1.0, -2.0, 3.5];
        assert_eq!(rmse(&p, &p).unwrap(), 0.0);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        assert!((rmse(&p, &shifted).unwrap() - 1.0).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.535_533_905_932_737_6).abs() < 1e-9);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_matches_reference(pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..200)) {
            let (p, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let got = rmse(&p, &o).unwrap();
            let want = two_pass_rmse(&p, &o);
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn noiseless_channel_has_zero_error() {
        let profiles = [RadioProfile::wifi().noiseless(), RadioProfile::xbee().noiseless()];
        let run = run_rssi_experiment(&profiles, &DEFAULT_DISTANCES, 100, &FilterSetup::default(), 1).unwrap();
        assert_eq!(run.reports.len(), 6);
        for r in &run.reports {
            assert!(r.rmse_raw.abs() < 1e-12 && r.rmse_filtered.abs() < 1e-12, "{r:?}");
        }
        assert_eq!(run.samples.len(), 600);
    }

    #[test]
    fn raw_error_grows_with_distance() {
        for seed in 0..20 {
            let run = run_rssi_experiment(&[RadioProfile::wifi()], &DEFAULT_DISTANCES, 100, &FilterSetup::default(), seed)
                .unwrap();
            let raw: Vec<f64> = run.reports.iter().map(|r| r.rmse_raw).collect();
            assert!(raw.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {raw:?}");
        }
    }

    #[test]
    fn wifi_beats_ble_at_one_metre() {
        let profiles = [RadioProfile::wifi(), RadioProfile::ble()];
        let run = run_rssi_experiment(&profiles, &[1.0], 100, &FilterSetup::default(), 42).unwrap();
        assert!(run.reports[0].rmse_raw < run.reports[1].rmse_raw);
    }

    #[test]
    fn experiment_is_deterministic() {
        let profiles = [RadioProfile::wifi(), RadioProfile::ble(), RadioProfile::xbee()];
        let a = run_rssi_experiment(&profiles, &DEFAULT_DISTANCES, 50, &FilterSetup::default(), 9).unwrap();
        let b = run_rssi_experiment(&profiles, &DEFAULT_DISTANCES, 50, &FilterSetup::default(), 9).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.samples, b.samples);
        assert!(run_rssi_experiment(&profiles, &[1.0], 0, &FilterSetup::default(), 9).is_err());
        assert!(run_rssi_experiment(&profiles, &[0.0], 10, &FilterSetup::default(), 9).is_err());
    }

    #[test]
    fn filter_usually_helps_at_one_metre() {
        for base in [RadioProfile::wifi(), RadioProfile::ble(), RadioProfile::xbee()] {
            let sigma = base.noise_std(1.0);
            let filter = FilterSetup {
                model: crate::kalman::KalmanModel::random_walk(0.01, sigma * sigma),
                ..FilterSetup::default()
            };
            let wins = (0..100u64)
                .filter(|&seed| {
                    let run = run_rssi_experiment(&[base], &[1.0], 100, &filter, seed).unwrap();
                    run.reports[0].rmse_filtered < run.reports[0].rmse_raw
                })
                .count();
            assert!(wins >= 90, "{}: {wins}/100", base.name);
        }
    }

    #[test]
    fn csv_layout() {
        let rows = vec![SampleRow {
            sample_index: 0,
            technology: Technology::WiFi,
            true_distance_m: 0.25,
            raw_rssi_dbm: -33.0,
            filtered_rssi_dbm: -32.9876543,
            est_distance_m: 0.2,
        }];
        let mut buf = Vec::new();
        write_samples_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "sample_index,technology,true_distance_m,raw_rssi_dbm,filtered_rssi_dbm,est_distance_m\n\
             0,WiFi,0.250000,-33.000000,-32.987654,0.200000\n"
        );
    }

    #[test]
    fn latency_reports_are_consistent() {
        let run = run_latency_experiment(5, 0, &TrustList::new(), trial_payload).unwrap();
        for r in [&run.private, &run.public] {
            assert_eq!(r.trials, 5);
            assert!(r.min_seconds <= r.mean_seconds && r.mean_seconds <= r.max_seconds);
        }
        assert_eq!(run.public.difficulty, Some(0));
        assert!(run.public_attempts.iter().all(|&a| a == 1));
        assert!(run_latency_experiment(0, 0, &TrustList::new(), trial_payload).is_err());
        assert!(run_latency_experiment(1, 17, &TrustList::new(), trial_payload).is_err());
    }

    #[test]
    fn latency_json_fields() {
        let r = LatencyReport::from_samples(Mode::Private, None, &[1.0, 3.0]);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["mode"], "private");
        assert_eq!(v["mean_seconds"], 2.0);
        assert!(v.get("difficulty").is_none());
    }
}
