//! Raster types shared by every stage of the pipeline.
//!
//! All rasters are row-major with the origin at the top-left pixel center,
//! `x` growing rightward and `y` growing downward. A flow vector `(dx, dy)`
//! is added directly to pixel coordinates.

use crate::error::{Error, Result};

/// Multi-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidInput(format!(
                "images must have 1, 3 or 4 channels, got {channels}"
            )));
        }
        check_nonzero(width, height)?;
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::InvalidInput("image dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "image data has {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidInput(format!(
                "image value {bad} is outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Uniform image filled with `value` in every channel.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image from 8-bit samples, mapping `k` to `k / 255`.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    /// Quantizes to 8 bits with round-to-nearest. Exact inverse of [`Image::from_u8`].
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub(crate) fn from_raw_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Bilinear sample with border clamping; writes one value per channel into `out`.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) {
        let c = self.channels;
        let (i00, i10, i01, i11, w) = corners(self.width, self.height, x, y);
        for (k, o) in out.iter_mut().enumerate().take(c) {
            let v = w[0] * self.data[i00 * c + k] as f64
                + w[1] * self.data[i10 * c + k] as f64
                + w[2] * self.data[i01 * c + k] as f64
                + w[3] * self.data[i11 * c + k] as f64;
            *o = v as f32;
        }
    }
}

/// Dense per-pixel displacement field in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        check_nonzero(width, height)?;
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidInput("flow dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "flow data has {} vectors, expected {expected}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::InvalidInput("flow contains non-finite components".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
        }
    }

    /// Spatially constant field.
    pub fn constant(width: usize, height: usize, v: [f32; 2]) -> Result<Self> {
        Self::new(width, height, vec![v; width * height])
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<[f32; 2]>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v[0] == 0.0 && v[1] == 0.0)
    }

    /// Largest vector magnitude in the field.
    pub fn max_magnitude(&self) -> f32 {
        self.data
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f32::max)
    }

    /// Checks the load-time sanity bound `|v| <= max(width, height)`.
    pub fn check_magnitude_bound(&self) -> Result<()> {
        let bound = self.width.max(self.height) as f32;
        let max = self.max_magnitude();
        if max > bound {
            return Err(Error::Numerical(format!(
                "flow magnitude {max} exceeds the sanity bound {bound}"
            )));
        }
        Ok(())
    }

    /// Bilinear sample with border clamping.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 2] {
        let (i00, i10, i01, i11, w) = corners(self.width, self.height, x, y);
        let d = &self.data;
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            *o = w[0] * d[i00][k] as f64
                + w[1] * d[i10][k] as f64
                + w[2] * d[i01][k] as f64
                + w[3] * d[i11][k] as f64;
        }
        out
    }

    /// Zeroes every vector outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        check_dims("flow", self.width, self.height, "mask", mask.width(), mask.height())?;
        let data = self
            .data
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m { v } else { [0.0, 0.0] })
            .collect();
        Ok(Self::from_raw_unchecked(self.width, self.height, data))
    }

    /// Negates every component.
    pub fn reversed(&self) -> Self {
        let data = self.data.iter().map(|v| [-v[0], -v[1]]).collect();
        Self::from_raw_unchecked(self.width, self.height, data)
    }
}

/// Per-pixel boolean field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_nonzero(width, height)?;
        if Some(data.len()) != width.checked_mul(height) {
            return Err(Error::InvalidInput(format!(
                "mask data has {} pixels, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Returns `flow` where `mask` is set and `(0, 0)` elsewhere.
pub fn mask_flow(flow: &FlowField, mask: &BinaryMask) -> Result<FlowField> {
    flow.masked(mask)
}

/// Negates every component of `flow`.
pub fn reverse_flow(flow: &FlowField) -> FlowField {
    flow.reversed()
}

fn check_nonzero(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("empty raster {width}x{height}")));
    }
    Ok(())
}

pub(crate) fn check_dims(
    a_name: &str,
    aw: usize,
    ah: usize,
    b_name: &str,
    bw: usize,
    bh: usize,
) -> Result<()> {
    if (aw, ah) != (bw, bh) {
        return Err(Error::DimensionMismatch(format!(
            "{a_name} is {aw}x{ah} but {b_name} is {bw}x{bh}"
        )));
    }
    Ok(())
}

/// Indices of the four enclosing samples and their weights, in the order
/// (x0,y0), (x1,y0), (x0,y1), (x1,y1). The point is clamped to the raster first.
#[inline]
fn corners(width: usize, height: usize, x: f64, y: f64) -> (usize, usize, usize, usize, [f64; 4]) {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let w = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    (
        y0 * width + x0,
        y0 * width + x1,
        y1 * width + x0,
        y1 * width + x1,
        w,
    )
}
