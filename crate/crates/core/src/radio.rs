//! Log-distance path-loss model and a seeded noisy channel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("distance must be positive and finite, got {0} m")]
    NonPositiveDistance(f64),
    #[error("invalid radio profile: {0}")]
    InvalidProfile(String),
    #[error("unknown technology `{0}` (expected WiFi, BLE or XBee)")]
    UnknownTechnology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technology {
    WiFi,
    BLE,
    XBee,
}

impl Technology {
    pub const ALL: [Technology; 3] = [Technology::WiFi, Technology::XBee, Technology::BLE];

    pub fn as_str(&self) -> &'static str {
        match self {
            Technology::WiFi => "WiFi",
            Technology::BLE => "BLE",
            Technology::XBee => "XBee",
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technology {
    type Err = RadioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wifi" => Ok(Technology::WiFi),
            "ble" => Ok(Technology::BLE),
            "xbee" | "zigbee" => Ok(Technology::XBee),
            _ => Err(RadioError::UnknownTechnology(s.to_owned())),
        }
    }
}

/// Path-loss calibration for one technology.
///
/// `system_loss` is the expected RSSI at the 1 m reference distance and
/// `exponent` the path-loss factor. Noise is Gaussian in the dB domain with
/// standard deviation `sigma0 + sigma_slope * d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioProfile {
    pub name: Technology,
    #[serde(rename = "A")]
    pub system_loss: f64,
    pub n: f64,
    pub sigma0: f64,
    pub sigma_slope: f64,
}

/// Calibrated path-loss factor shared by all three radios.
pub const PATH_LOSS_EXPONENT: f64 = 2.00;

impl RadioProfile {
    // Noise levels are simulation defaults, not measured values.
    pub fn wifi() -> Self {
        Self { name: Technology::WiFi, system_loss: -45.0, n: PATH_LOSS_EXPONENT, sigma0: 2.0, sigma_slope: 0.5 }
    }

    pub fn ble() -> Self {
        Self { name: Technology::BLE, system_loss: -56.0, n: PATH_LOSS_EXPONENT, sigma0: 4.0, sigma_slope: 1.0 }
    }

    pub fn xbee() -> Self {
        Self { name: Technology::XBee, system_loss: 18.0, n: PATH_LOSS_EXPONENT, sigma0: 1.0, sigma_slope: 3.0 }
    }

    pub fn builtin(tech: Technology) -> Self {
        match tech {
            Technology::WiFi => Self::wifi(),
            Technology::BLE => Self::ble(),
            Technology::XBee => Self::xbee(),
        }
    }

    /// Same calibration with the channel noise switched off.
    pub fn noiseless(self) -> Self {
        Self { sigma0: 0.0, sigma_slope: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<(), RadioError> {
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(RadioError::InvalidProfile(format!("path-loss exponent must be > 0, got {}", self.n)));
        }
        if !self.system_loss.is_finite() {
            return Err(RadioError::InvalidProfile("system loss constant must be finite".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma_slope >= 0.0 && self.sigma0.is_finite() && self.sigma_slope.is_finite()) {
            return Err(RadioError::InvalidProfile(format!(
                "noise parameters must be non-negative (sigma0 = {}, sigma_slope = {})",
                self.sigma0, self.sigma_slope
            )));
        }
        Ok(())
    }

    pub fn expected_rssi(&self, d: f64) -> Result<f64, RadioError> {
        check_distance(d)?;
        Ok(self.system_loss - 10.0 * self.n * d.log10())
    }

    pub fn distance_from_rssi(&self, rssi: f64) -> f64 {
        10f64.powf((self.system_loss - rssi) / (10.0 * self.n))
    }

    pub fn noise_std(&self, d: f64) -> f64 {
        self.sigma0 + self.sigma_slope * d
    }

    pub fn sample_rssi<R: Rng + ?Sized>(&self, d: f64, rng: &mut R) -> Result<f64, RadioError> {
        let mean = self.expected_rssi(d)?;
        let std = self.noise_std(d);
        if std == 0.0 {
            return Ok(mean);
        }
        let noise = Normal::new(0.0, std).map_err(|e| RadioError::InvalidProfile(e.to_string()))?;
        Ok(mean + noise.sample(rng))
    }
}

fn check_distance(d: f64) -> Result<(), RadioError> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(RadioError::NonPositiveDistance(d))
    }
}
