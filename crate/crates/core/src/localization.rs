//! 2-D trilateration from anchor distances.
//!
//! [`trilaterate`] linearizes the circle equations against the first anchor
//! and solves the 2x2 normal equations. [`trilaterate_oracle`] is a brute-force
//! grid search used to cross-check it.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::RadioProfile;

/// Normal-matrix determinant below which the anchor geometry is rejected.
pub const COLLINEAR_DET: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizationError {
    #[error("trilateration needs at least 3 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("anchors are collinear (normal-matrix determinant {0:e})")]
    Collinear(f64),
    #[error("distance to anchor `{id}` must be positive, got {distance}")]
    BadDistance { id: String, distance: f64 },
    #[error("report references unknown anchor `{0}`")]
    UnknownAnchor(String),
    #[error("invalid workspace {width} x {height}")]
    InvalidWorkspace { width: f64, height: f64 },
    #[error("grid resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("duplicate anchor id `{0}`")]
    DuplicateAnchor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl Anchor {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self { id: id.into(), x, y }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Axis-aligned room with its origin at (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub width: f64,
    pub height: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { width: 4.0, height: 3.0 }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<(), LocalizationError> {
        if self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite() {
            Ok(())
        } else {
            Err(LocalizationError::InvalidWorkspace { width: self.width, height: self.height })
        }
    }

    pub fn contains(&self, x: f64, y: f64, margin: f64) -> bool {
        (-margin..=self.width + margin).contains(&x) && (-margin..=self.height + margin).contains(&y)
    }

    /// One anchor per corner, ids `a0`..`a3`.
    pub fn corner_anchors(&self) -> Vec<Anchor> {
        vec![
            Anchor::new("a0", 0.0, 0.0),
            Anchor::new("a1", self.width, 0.0),
            Anchor::new("a2", 0.0, self.height),
            Anchor::new("a3", self.width, self.height),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub x: f64,
    pub y: f64,
    /// RMS of `|p - anchor| - distance` over the anchors used.
    pub residual: f64,
}

pub fn rms_residual(ranges: &[(Anchor, f64)], x: f64, y: f64) -> f64 {
    if ranges.is_empty() {
        return 0.0;
    }
    let sum: f64 = ranges.iter().map(|(a, d)| (a.distance_to(x, y) - d).powi(2)).sum();
    (sum / ranges.len() as f64).sqrt()
}

fn check_ranges(ranges: &[(Anchor, f64)]) -> Result<(), LocalizationError> {
    if ranges.len() < 3 {
        return Err(LocalizationError::TooFewAnchors(ranges.len()));
    }
    for (a, d) in ranges {
        if !(*d > 0.0 && d.is_finite()) {
            return Err(LocalizationError::BadDistance { id: a.id.clone(), distance: *d });
        }
    }
    Ok(())
}

/// Least-squares position from three or more anchor ranges.
pub fn trilaterate(ranges: &[(Anchor, f64)]) -> Result<PositionEstimate, LocalizationError> {
    if ranges.len() < 3 {
        return Err(LocalizationError::TooFewAnchors(ranges.len()));
    }
    // A range of exactly zero is the device sitting on an anchor; it still
    // linearizes fine. Negative or non-finite ranges do not.
    for (a, d) in ranges {
        if !(*d >= 0.0 && d.is_finite()) {
            return Err(LocalizationError::BadDistance { id: a.id.clone(), distance: *d });
        }
    }
    let (origin, d0) = &ranges[0];

    // Rows: 2*dx*x + 2*dy*y = d0^2 - di^2 + dx^2 + dy^2, in coordinates
    // relative to the first anchor.
    let (mut s_xx, mut s_xy, mut s_yy, mut t_x, mut t_y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, d) in &ranges[1..] {
        let dx = a.x - origin.x;
        let dy = a.y - origin.y;
        let (r0, r1) = (2.0 * dx, 2.0 * dy);
        let rhs = d0 * d0 - d * d + dx * dx + dy * dy;
        s_xx += r0 * r0;
        s_xy += r0 * r1;
        s_yy += r1 * r1;
        t_x += r0 * rhs;
        t_y += r1 * rhs;
    }
    let det = s_xx * s_yy - s_xy * s_xy;
    if det.abs() < COLLINEAR_DET {
        return Err(LocalizationError::Collinear(det));
    }
    let x = origin.x + (s_yy * t_x - s_xy * t_y) / det;
    let y = origin.y + (s_xx * t_y - s_xy * t_x) / det;
    Ok(PositionEstimate { x, y, residual: rms_residual(ranges, x, y) })
}

/// Exhaustive grid search over `workspace`: returns the cell centre that
/// minimises the summed squared range mismatch.
pub fn trilaterate_oracle(
    ranges: &[(Anchor, f64)],
    workspace: &Workspace,
    resolution: f64,
) -> Result<PositionEstimate, LocalizationError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(LocalizationError::BadResolution(resolution));
    }
    workspace.validate()?;
    let cols = (workspace.width / resolution).ceil().max(1.0) as usize;
    let rows = (workspace.height / resolution).ceil().max(1.0) as usize;
    let centre = |i: usize, extent: f64| ((i as f64 + 0.5) * resolution).min(extent);

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..cols {
        let x = centre(i, workspace.width);
        for j in 0..rows {
            let y = centre(j, workspace.height);
            let cost: f64 = ranges.iter().map(|(a, d)| (a.distance_to(x, y) - d).powi(2)).sum();
            if cost < best.0 {
                best = (cost, x, y);
            }
        }
    }
    let (_, x, y) = best;
    Ok(PositionEstimate { x, y, residual: rms_residual(ranges, x, y) })
}

/// Convert per-anchor RSSI to ranges and trilaterate.
pub fn localize_device(
    reports: &BTreeMap<String, f64>,
    anchors: &[Anchor],
    profile: &RadioProfile,
) -> Result<PositionEstimate, LocalizationError> {
    trilaterate(&ranges_from_rssi(reports, anchors, profile)?)
}

/// Pair each reported anchor with its RSSI-derived distance.
pub fn ranges_from_rssi(
    reports: &BTreeMap<String, f64>,
    anchors: &[Anchor],
    profile: &RadioProfile,
) -> Result<Vec<(Anchor, f64)>, LocalizationError> {
    let ranges = reports
        .iter()
        .map(|(id, rssi)| {
            let anchor = anchors
                .iter()
                .find(|a| &a.id == id)
                .ok_or_else(|| LocalizationError::UnknownAnchor(id.clone()))?;
            Ok((anchor.clone(), profile.distance_from_rssi(*rssi)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_ranges(&ranges)?;
    Ok(ranges)
}

pub fn check_unique_ids(anchors: &[Anchor]) -> Result<(), LocalizationError> {
    let mut seen = HashSet::new();
    for a in anchors {
        if !seen.insert(a.id.as_str()) {
            return Err(LocalizationError::DuplicateAnchor(a.id.clone()));
        }
    }
    Ok(())
}
