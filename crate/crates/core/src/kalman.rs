//! Scalar discrete Kalman filter for smoothing RSSI streams.
//!
//! Prediction, gain and the Joseph-form covariance update are kept as separate
//! steps so each can be checked in isolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KalmanError {
    #[error("innovation variance is zero (P- = {p_prior}, R = {r})")]
    DegenerateGain { p_prior: f64, r: f64 },
    #[error("cannot filter an empty series")]
    EmptySeries,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Filter parameters. `h` is the measurement sensitivity, written C in the
/// gain equation and H in the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanModel {
    pub a: f64,
    pub b: f64,
    pub u: f64,
    pub q: f64,
    pub h: f64,
    pub r: f64,
}

impl Default for KalmanModel {
    /// Quasi-static RSSI model: A=1, B=0, u=0, H=1, Q=0.01 dBm², R=4 dBm².
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            u: 0.0,
            q: 0.01,
            h: 1.0,
            r: 4.0,
        }
    }
}

impl KalmanModel {
    /// Random-walk model with unit sensitivity and no control input.
    pub fn random_walk(q: f64, r: f64) -> Self {
        Self {
            q,
            r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), KalmanError> {
        let all = [self.a, self.b, self.u, self.q, self.h, self.r];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(KalmanError::InvalidModel("parameters must be finite".into()));
        }
        if self.q < 0.0 || self.r < 0.0 {
            return Err(KalmanError::InvalidModel(format!(
                "noise variances must be non-negative (Q = {}, R = {})",
                self.q, self.r
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub x_hat: f64,
    pub p: f64,
    pub k: u64,
}

impl KalmanState {
    pub fn new(x0: f64, p0: f64) -> Self {
        Self { x_hat: x0, p: p0, k: 0 }
    }
}

/// A priori estimate for the next time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub x_hat: f64,
    pub p: f64,
}

pub fn predict(state: &KalmanState, model: &KalmanModel) -> Prediction {
    Prediction {
        x_hat: model.a * state.x_hat + model.b * model.u,
        p: model.a * state.p * model.a + model.q,
    }
}

pub fn gain(p_prior: f64, model: &KalmanModel) -> Result<f64, KalmanError> {
    let innovation = model.h * p_prior * model.h + model.r;
    if innovation == 0.0 {
        return Err(KalmanError::DegenerateGain { p_prior, r: model.r });
    }
    Ok(p_prior * model.h / innovation)
}

/// Posterior after absorbing measurement `z`, advancing `k` from `prev_k`.
pub fn update(prior: &Prediction, k_gain: f64, z: f64, model: &KalmanModel, prev_k: u64) -> KalmanState {
    let x_hat = prior.x_hat + k_gain * (z - model.h * prior.x_hat);
    let keep = 1.0 - k_gain * model.h;
    // Joseph form; stays non-negative for any gain.
    let p = keep * prior.p * keep + k_gain * model.r * k_gain;
    KalmanState { x_hat, p, k: prev_k + 1 }
}

/// One predict/gain/update cycle.
///
/// When both the prediction and the measurement claim zero variance the gain
/// is undefined; with `R == 0` the measurement is taken as exact (K = 1/H).
pub fn step(state: &KalmanState, z: f64, model: &KalmanModel) -> Result<KalmanState, KalmanError> {
    let prior = predict(state, model);
    let k_gain = match gain(prior.p, model) {
        Ok(k) => k,
        Err(KalmanError::DegenerateGain { .. }) if model.r == 0.0 && model.h != 0.0 => 1.0 / model.h,
        Err(e) => return Err(e),
    };
    Ok(update(&prior, k_gain, z, model, state.k))
}

/// Stateful wrapper for feeding samples one at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter {
    model: KalmanModel,
    state: KalmanState,
}

impl KalmanFilter {
    pub fn new(model: KalmanModel, x0: f64, p0: f64) -> Self {
        Self {
            model,
            state: KalmanState::new(x0, p0),
        }
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn model(&self) -> &KalmanModel {
        &self.model
    }

    pub fn process(&mut self, z: f64) -> Result<f64, KalmanError> {
        self.state = step(&self.state, z, &self.model)?;
        Ok(self.state.x_hat)
    }
}

/// Posterior estimates after each sample, plus the final state.
pub fn filter_series_with_state(
    samples: &[f64],
    model: &KalmanModel,
    x0: f64,
    p0: f64,
) -> Result<(Vec<f64>, KalmanState), KalmanError> {
    if samples.is_empty() {
        return Err(KalmanError::EmptySeries);
    }
    let mut filter = KalmanFilter::new(*model, x0, p0);
    let out = samples
        .iter()
        .map(|&z| filter.process(z))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((out, filter.state))
}

pub fn filter_series(samples: &[f64], model: &KalmanModel, x0: f64, p0: f64) -> Result<Vec<f64>, KalmanError> {
    filter_series_with_state(samples, model, x0, p0).map(|(out, _)| out)
}

/// How the initial state is chosen when filtering a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// x0 is the first sample.
    #[default]
    FirstMeasurement,
    Fixed(f64),
}

/// Model plus initialization, as used by the simulation layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSetup {
    pub model: KalmanModel,
    pub init: InitPolicy,
    /// Initial covariance; `None` means P0 = R.
    pub p0: Option<f64>,
}

impl Default for FilterSetup {
    fn default() -> Self {
        Self {
            model: KalmanModel::default(),
            init: InitPolicy::FirstMeasurement,
            p0: None,
        }
    }
}

impl FilterSetup {
    pub fn initial(&self, samples: &[f64]) -> Result<(f64, f64), KalmanError> {
        let x0 = match self.init {
            InitPolicy::FirstMeasurement => *samples.first().ok_or(KalmanError::EmptySeries)?,
            InitPolicy::Fixed(v) => v,
        };
        Ok((x0, self.p0.unwrap_or(self.model.r)))
    }

    pub fn run(&self, samples: &[f64]) -> Result<Vec<f64>, KalmanError> {
        let (x0, p0) = self.initial(samples)?;
        filter_series(samples, &self.model, x0, p0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn unit(q: f64, r: f64) -> KalmanModel {
        KalmanModel::random_walk(q, r)
    }

    #[test]
    fn predict_examples() {
        let m = unit(0.0, 1.0);
        assert_eq!(predict(&KalmanState::new(5.0, 2.0), &m), Prediction { x_hat: 5.0, p: 2.0 });

        let m = unit(0.01, 1.0);
        let p = predict(&KalmanState::new(-45.0, 1.0), &m);
        assert_eq!(p.x_hat, -45.0);
        assert!((p.p - 1.01).abs() < 1e-15);

        let m = KalmanModel { a: 0.5, b: 1.0, u: 2.0, q: 0.0, h: 1.0, r: 1.0 };
        assert_eq!(predict(&KalmanState::new(4.0, 4.0), &m), Prediction { x_hat: 4.0, p: 1.0 });
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gain(1.0, &unit(0.0, 1.0)).unwrap(), 0.5);
        assert_eq!(gain(1.0, &unit(0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(gain(0.0, &unit(0.0, 1.0)).unwrap(), 0.0);
        assert!(matches!(gain(0.0, &unit(0.0, 0.0)), Err(KalmanError::DegenerateGain { .. })));
    }

    #[test]
    fn update_examples() {
        let m = unit(0.0, 1.0);
        let prior = Prediction { x_hat: 0.0, p: 1.0 };
        let k = gain(prior.p, &m).unwrap();
        let post = update(&prior, k, 2.0, &m, 0);
        assert_eq!((k, post.x_hat, post.p, post.k), (0.5, 1.0, 0.5, 1));

        let locked = Prediction { x_hat: 3.0, p: 0.0 };
        let post = update(&locked, gain(0.0, &m).unwrap(), 99.0, &m, 4);
        assert_eq!((post.x_hat, post.p, post.k), (3.0, 0.0, 5));

        let exact = unit(0.0, 0.0);
        let prior = Prediction { x_hat: 3.0, p: 2.0 };
        let post = update(&prior, gain(2.0, &exact).unwrap(), -7.5, &exact, 0);
        assert_eq!((post.x_hat, post.p), (-7.5, 0.0));
    }

    #[test]
    fn filter_series_examples() {
        assert_eq!(filter_series(&[2.0], &unit(0.0, 1.0), 0.0, 1.0).unwrap(), vec![1.0]);
        assert_eq!(filter_series(&[], &unit(0.0, 1.0), 0.0, 1.0), Err(KalmanError::EmptySeries));

        let flat = vec![-52.0; 50];
        for (q, r) in [(0.0, 1.0), (0.01, 4.0), (3.0, 0.5)] {
            assert_eq!(filter_series(&flat, &unit(q, r), -52.0, 1.0).unwrap(), flat);
        }

        let series = [-40.0, -47.5, -39.0, -60.25];
        assert_eq!(filter_series(&series, &unit(0.0, 0.0), 0.0, 1.0).unwrap(), series.to_vec());
    }

    #[test]
    fn state_index_counts_updates() {
        let (out, state) = filter_series_with_state(&[1.0, 2.0, 3.0], &unit(0.1, 1.0), 0.0, 1.0).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(state.k, 3);
    }

    #[test]
    fn setup_defaults_to_first_sample_and_r() {
        let setup = FilterSetup::default();
        assert_eq!(setup.initial(&[-61.0, -60.0]).unwrap(), (-61.0, 4.0));
        let fixed = FilterSetup { init: InitPolicy::Fixed(0.0), p0: Some(1.0), ..setup };
        assert_eq!(fixed.initial(&[5.0]).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn model_validation() {
        assert!(KalmanModel::default().validate().is_ok());
        assert!(unit(-1.0, 1.0).validate().is_err());
        assert!(unit(0.0, f64::NAN).validate().is_err());
    }

    #[test]
    fn output_variance_below_input_variance() {
        let sigma = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, sigma).unwrap();
        let input: Vec<f64> = (0..10_000).map(|_| -50.0 + noise.sample(&mut rng)).collect();
        let setup = FilterSetup { model: unit(0.01, sigma * sigma), ..FilterSetup::default() };
        let output = setup.run(&input).unwrap();
        let var = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        assert!(var(&output) < var(&input));
    }

    proptest! {
        #[test]
        fn joseph_form_matches_short_form(p_prior in 1e-2f64..1e2, r in 1e-2f64..1e2, h in prop_oneof![-2.0f64..-0.5, 0.5f64..2.0]) {
            let m = KalmanModel { h, r, ..KalmanModel::default() };
            let k = gain(p_prior, &m).unwrap();
            let joseph = update(&Prediction { x_hat: 0.0, p: p_prior }, k, 0.0, &m, 0).p;
            let short = (1.0 - k * h) * p_prior;
            prop_assert!(((joseph - short) / short).abs() <= 1e-12);
        }

        #[test]
        fn covariance_stays_non_negative(q in 0.0f64..10.0, r in 0.0f64..10.0, p0 in 0.0f64..10.0,
                                         zs in proptest::collection::vec(-100.0f64..100.0, 1..50)) {
            prop_assume!(p0 + q > 0.0 || r > 0.0);
            let mut state = KalmanState::new(0.0, p0);
            for z in zs {
                state = step(&state, z, &unit(q, r)).unwrap();
                prop_assert!(state.p >= 0.0);
            }
        }

        #[test]
        fn unit_gain_is_bounded(p_prior in 0.0f64..1e4, r in 0.0f64..1e4) {
            prop_assume!(p_prior > 0.0 || r > 0.0);
            let k = gain(p_prior, &unit(0.0, r)).unwrap();
            prop_assert!((0.0..=1.0).contains(&k));
        }
    }
}
