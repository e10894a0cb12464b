//! Direction hints from phrases or angles, procedural constant flows, and
//! masks obtained by thresholding flow magnitude.
//!
//! Angles are measured counterclockwise on screen, so a positive angle points
//! up and maps to a negative `dy`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{BinaryMask, FlowField};

pub const QUADRANTS: usize = 12;
pub const QUADRANT_DEGREES: f64 = 30.0;
/// Default magnitude threshold for [`flow_to_mask`], in pixels per frame.
pub const DEFAULT_TAU: f32 = 0.25;

/// Canonical direction phrases; entry `i` is centered at `30 * i` degrees.
pub const PHRASES: [&str; QUADRANTS] = [
    "left to right",
    "up-right shallow",
    "up-right steep",
    "upwards",
    "up-left steep",
    "up-left shallow",
    "right to left",
    "down-left shallow",
    "down-left steep",
    "downwards",
    "down-right steep",
    "down-right shallow",
];

/// A quantized motion direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionHint {
    pub quadrant_index: usize,
    pub angle_theta: f64,
    pub phrase: &'static str,
}

impl DirectionHint {
    pub fn new(quadrant_index: usize, angle_theta: f64) -> Result<Self> {
        if quadrant_index >= QUADRANTS {
            return Err(Error::InvalidInput(format!("quadrant index {quadrant_index} is out of range")));
        }
        if quadrant_for_angle(angle_theta) != quadrant_index {
            return Err(Error::InvalidInput(format!(
                "angle {:.3} deg lies outside quadrant {quadrant_index}",
                angle_theta.to_degrees()
            )));
        }
        Ok(Self {
            quadrant_index,
            angle_theta,
            phrase: PHRASES[quadrant_index],
        })
    }
}

/// Half-open arc `[start, end)` in degrees covered by a quadrant. Quadrant 0 starts at -15.
pub fn quadrant_arc_degrees(index: usize) -> (f64, f64) {
    let center = index as f64 * QUADRANT_DEGREES;
    (center - QUADRANT_DEGREES / 2.0, center + QUADRANT_DEGREES / 2.0)
}

/// Quadrant containing `theta` (radians, any winding).
pub fn quadrant_for_angle(theta: f64) -> usize {
    let deg = snap(theta.to_degrees().rem_euclid(360.0));
    (((deg + QUADRANT_DEGREES / 2.0) / QUADRANT_DEGREES).floor() as usize) % QUADRANTS
}

// Round away float noise (e.g. 314.99999999999994) before quantizing.
fn snap(deg: f64) -> f64 {
    (deg * 1e9).round() / 1e9
}

fn normalize_phrase(phrase: &str) -> String {
    let mut p = phrase.trim().to_lowercase();
    if let Some(rest) = p.strip_prefix("in ") {
        p = rest.to_string();
    }
    if let Some(rest) = p.strip_suffix(" direction") {
        p = rest.to_string();
    }
    p.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn unknown_phrase(phrase: &str) -> Error {
    Error::InvalidInput(format!(
        "unknown direction phrase {phrase:?}; expected one of: {}",
        PHRASES.join(", ")
    ))
}

/// Quadrant for a canonical phrase, or for a comma-separated combination of
/// canonical phrases (resolved by summing their unit vectors).
pub fn quadrant_for_phrase(phrase: &str) -> Result<usize> {
    let normalized = normalize_phrase(phrase);
    if let Some(i) = PHRASES.iter().position(|p| *p == normalized) {
        return Ok(i);
    }
    let parts: Vec<&str> = normalized
        .split([',', ';'])
        .flat_map(|s| s.split(" and "))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if parts.len() < 2 {
        return Err(unknown_phrase(phrase));
    }
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for part in parts {
        let i = PHRASES
            .iter()
            .position(|p| *p == part)
            .ok_or_else(|| unknown_phrase(phrase))?;
        let a = (i as f64 * QUADRANT_DEGREES).to_radians();
        sx += a.cos();
        sy += a.sin();
    }
    if sx.hypot(sy) < 1e-9 {
        return Err(Error::InvalidInput(format!(
            "direction phrases in {phrase:?} cancel out"
        )));
    }
    Ok(quadrant_for_angle(sy.atan2(sx)))
}

/// Angle drawn uniformly from the quadrant's arc, or the arc center when `deterministic`.
pub fn sample_angle(quadrant_index: usize, seed: u64, deterministic: bool) -> Result<f64> {
    if quadrant_index >= QUADRANTS {
        return Err(Error::InvalidInput(format!("quadrant index {quadrant_index} is out of range")));
    }
    let (start, end) = quadrant_arc_degrees(quadrant_index);
    let deg = if deterministic {
        (start + end) / 2.0
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.gen_range(start..end)
    };
    Ok(deg.rem_euclid(360.0).to_radians())
}

/// Resolves a phrase to a full [`DirectionHint`].
pub fn hint_for_phrase(phrase: &str, seed: u64, deterministic: bool) -> Result<DirectionHint> {
    let q = quadrant_for_phrase(phrase)?;
    let theta = sample_angle(q, seed, deterministic)?;
    DirectionHint::new(q, theta)
}

/// Unit vectors `(cos θ, -sin θ)` inside `mask`, zero outside.
pub fn hint_from_angle(theta: f64, mask: &BinaryMask) -> FlowField {
    synth_flow_unchecked(mask, theta, 1.0)
}

/// Constant flow of magnitude `speed` along `theta` inside `mask`.
pub fn synth_flow(mask: &BinaryMask, theta: f64, speed: f64) -> Result<FlowField> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(Error::InvalidInput(format!("speed must be nonnegative, got {speed}")));
    }
    Ok(synth_flow_unchecked(mask, theta, speed))
}

fn synth_flow_unchecked(mask: &BinaryMask, theta: f64, speed: f64) -> FlowField {
    let unit = [theta.cos() as f32, (-theta.sin()) as f32];
    let v = [speed as f32 * unit[0], speed as f32 * unit[1]];
    let data = mask
        .data()
        .iter()
        .map(|&m| if m { v } else { [0.0, 0.0] })
        .collect();
    FlowField::from_raw_unchecked(mask.width(), mask.height(), data)
}

/// True where the flow magnitude exceeds `tau`.
pub fn flow_to_mask(flow: &FlowField, tau: f32) -> Result<BinaryMask> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidInput(format!("threshold must be nonnegative, got {tau}")));
    }
    let data = flow
        .data()
        .iter()
        .map(|v| (v[0] as f64).hypot(v[1] as f64) > tau as f64)
        .collect();
    BinaryMask::new(flow.width(), flow.height(), data)
}
