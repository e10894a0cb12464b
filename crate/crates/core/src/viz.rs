//! Color-wheel rendering of flow fields.
//!
//! Direction sets the hue (`atan2(dy, dx)`), magnitude relative to the
//! normalization sets the saturation, and zero motion is white.

use crate::fields::{FlowField, Image};

/// Fully saturated RGB for a hue in degrees.
pub fn hue_to_rgb(hue_deg: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let sector = h.floor() as u32 % 6;
    let f = h - h.floor();
    match sector {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    }
}

/// Renders `flow` as RGB. `max_magnitude = None` normalizes by the field's own maximum.
pub fn colorize_flow(flow: &FlowField, max_magnitude: Option<f32>) -> Image {
    let max = max_magnitude.unwrap_or_else(|| flow.max_magnitude()) as f64;
    let mut data = Vec::with_capacity(flow.data().len() * 3);
    for v in flow.data() {
        let (dx, dy) = (v[0] as f64, v[1] as f64);
        let mag = dx.hypot(dy);
        let sat = if max > 0.0 { (mag / max).min(1.0) } else { 0.0 };
        let hue = dy.atan2(dx).to_degrees();
        let rgb = hue_to_rgb(hue);
        data.extend(rgb.iter().map(|c| (1.0 - sat * (1.0 - c)) as f32));
    }
    Image::from_raw_unchecked(flow.width(), flow.height(), 3, data)
}
