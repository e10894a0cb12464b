//! Pixel-space symmetric splatting.
//!
//! Frame `n` of an `N`-frame loop is rendered by scattering the input image
//! along the forward cumulative flow with weight `(N - n) / N` and along the
//! backward cumulative flow with weight `n / N`, normalizing by the total
//! splatted weight, and filling whatever remains uncovered.

use crate::error::{Error, Result};
use crate::euler::CumulativeFlowPair;
use crate::fields::{check_dims, BinaryMask, FlowField, Image};

/// Accumulated weight below which a pixel counts as a hole.
pub const HOLE_EPSILON: f64 = 1e-6;

/// Weighted color and weight sums produced by forward splatting.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatAccumulator {
    width: usize,
    height: usize,
    channels: usize,
    color_sum: Vec<f64>,
    weight_sum: Vec<f64>,
}

impl SplatAccumulator {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            color_sum: vec![0.0; width * height * channels],
            weight_sum: vec![0.0; width * height],
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

    pub fn color_sum(&self) -> &[f64] {
        &self.color_sum
    }

    pub fn weight_sum(&self) -> &[f64] {
        &self.weight_sum
    }

    pub fn total_weight(&self) -> f64 {
        self.weight_sum.iter().sum()
    }

    #[inline]
    fn add(&mut self, idx: usize, w: f64, color: &[f32]) {
        self.weight_sum[idx] += w;
        let base = idx * self.channels;
        for (acc, &c) in self.color_sum[base..base + self.channels].iter_mut().zip(color) {
            *acc += w * c as f64;
        }
    }
}

/// Complementary linear blend weights over an `N`-frame loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlendSchedule {
    total: usize,
}

impl BlendSchedule {
    pub fn new(total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::InvalidInput("loop length must be at least 1".into()));
        }
        Ok(Self { total })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn weight_forward(&self, n: usize) -> f64 {
        (self.total - n) as f64 / self.total as f64
    }

    pub fn weight_backward(&self, n: usize) -> f64 {
        n as f64 / self.total as f64
    }
}

/// Scatters every source pixel of `image` to the four integer neighbors of
/// its displaced position with bilinear weights scaled by `scalar_weight`.
/// Contributions that land outside the canvas are dropped.
pub fn forward_splat(image: &Image, flow: &FlowField, scalar_weight: f64) -> Result<SplatAccumulator> {
    check_dims("image", image.width(), image.height(), "flow", flow.width(), flow.height())?;
    if !(scalar_weight > 0.0 && scalar_weight.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "splat weight must be positive, got {scalar_weight}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    let mut acc = SplatAccumulator::new(w, h, image.channels());
    for y in 0..h {
        for x in 0..w {
            let d = flow.get(x, y);
            let tx = x as f64 + d[0] as f64;
            let ty = y as f64 + d[1] as f64;
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            let color = image.pixel(x, y);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for (px, py, kw) in taps {
                if kw <= 0.0 || px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                    continue;
                }
                acc.add(py as usize * w + px as usize, scalar_weight * kw, color);
            }
        }
    }
    Ok(acc)
}

/// Normalized composite of two accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    /// Hole pixels hold zeros until [`fill_holes`] runs.
    pub image: Image,
    /// Combined splat weight per pixel.
    pub coverage: Vec<f64>,
}

impl Composite {
    pub fn hole_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c <= HOLE_EPSILON).count()
    }
}

/// Merges the forward and backward accumulators into one weight-normalized image.
pub fn composite_symmetric(fwd: &SplatAccumulator, bwd: &SplatAccumulator) -> Result<Composite> {
    check_dims("forward accumulator", fwd.width, fwd.height, "backward accumulator", bwd.width, bwd.height)?;
    if fwd.channels != bwd.channels {
        return Err(Error::DimensionMismatch(format!(
            "accumulators have {} and {} channels",
            fwd.channels, bwd.channels
        )));
    }
    let c = fwd.channels;
    let mut data = vec![0.0f32; fwd.color_sum.len()];
    let coverage: Vec<f64> = fwd
        .weight_sum
        .iter()
        .zip(&bwd.weight_sum)
        .map(|(a, b)| a + b)
        .collect();
    for (i, &den) in coverage.iter().enumerate() {
        if den <= HOLE_EPSILON {
            continue;
        }
        for k in 0..c {
            let num = fwd.color_sum[i * c + k] + bwd.color_sum[i * c + k];
            data[i * c + k] = (num / den).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Composite {
        image: Image::from_raw_unchecked(fwd.width, fwd.height, c, data),
        coverage,
    })
}

/// Fills pixels whose coverage is at most [`HOLE_EPSILON`].
///
/// Each pass assigns every hole pixel that touches a known 3x3 neighbor the
/// mean of those neighbors, then marks all of them known at once. Holes that
/// can never reach a known pixel receive the global mean of known pixels.
pub fn fill_holes(image: &Image, coverage: &[f64]) -> Result<Image> {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    if coverage.len() != w * h {
        return Err(Error::DimensionMismatch(format!(
            "coverage has {} entries for a {w}x{h} image",
            coverage.len()
        )));
    }
    let mut known: Vec<bool> = coverage.iter().map(|&v| v > HOLE_EPSILON).collect();
    let mut pending: Vec<usize> = (0..w * h).filter(|&i| !known[i]).collect();
    if pending.is_empty() {
        return Ok(image.clone());
    }
    let mut data = image.data().to_vec();
    let mut frontier: Vec<(usize, Vec<f32>)> = Vec::new();
    while !pending.is_empty() {
        frontier.clear();
        let mut still = Vec::with_capacity(pending.len());
        for &i in &pending {
            let (x, y) = (i % w, i / w);
            let mut sum = vec![0.0f64; c];
            let mut count = 0usize;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if known[j] {
                        count += 1;
                        for k in 0..c {
                            sum[k] += data[j * c + k] as f64;
                        }
                    }
                }
            }
            if count > 0 {
                frontier.push((i, sum.iter().map(|s| (s / count as f64) as f32).collect()));
            } else {
                still.push(i);
            }
        }
        if frontier.is_empty() {
            break;
        }
        for (i, value) in frontier.drain(..) {
            data[i * c..(i + 1) * c].copy_from_slice(&value);
            known[i] = true;
        }
        pending = still;
    }
    let remaining = pending.len();
    if remaining > 0 {
        let mut mean = vec![0.0f64; c];
        let mut count = 0usize;
        for (i, _) in known.iter().enumerate().filter(|(_, k)| **k) {
            count += 1;
            for k in 0..c {
                mean[k] += data[i * c + k] as f64;
            }
        }
        let fill: Vec<f32> = if count == 0 {
            vec![0.5; c]
        } else {
            mean.iter().map(|m| (m / count as f64) as f32).collect()
        };
        for (i, k) in known.iter().enumerate() {
            if !k {
                data[i * c..(i + 1) * c].copy_from_slice(&fill);
            }
        }
    }
    Ok(Image::from_raw_unchecked(w, h, c, data))
}

/// Renders frame `pair.n` of the loop. Frames `0` and `N` return the input unchanged.
pub fn symmetric_splat_frame(image: &Image, pair: &CumulativeFlowPair) -> Result<Image> {
    render_frame(image, &pair.forward, &pair.backward, pair.n, pair.total, None)
}

/// Renders one frame. With a motion mask, pixels outside it are pinned to
/// the input before hole filling, so splats leaving the moving region never
/// tint the still background and holes next to it fill from true colors.
pub(crate) fn render_frame(
    image: &Image,
    forward: &FlowField,
    backward: &FlowField,
    n: usize,
    total: usize,
    motion_mask: Option<&BinaryMask>,
) -> Result<Image> {
    if n > total {
        return Err(Error::InvalidInput(format!("frame {n} is past the loop end {total}")));
    }
    let schedule = BlendSchedule::new(total)?;
    if n == 0 || n == total {
        return Ok(image.clone());
    }
    check_dims("image", image.width(), image.height(), "backward flow", backward.width(), backward.height())?;
    let fwd = forward_splat(image, forward, schedule.weight_forward(n))?;
    let bwd = forward_splat(image, backward, schedule.weight_backward(n))?;
    let mut composite = composite_symmetric(&fwd, &bwd)?;
    if let Some(mask) = motion_mask {
        check_dims("image", image.width(), image.height(), "mask", mask.width(), mask.height())?;
        let c = image.channels();
        for (i, _) in mask.data().iter().enumerate().filter(|(_, m)| !**m) {
            composite.image.data_mut()[i * c..(i + 1) * c].copy_from_slice(&image.data()[i * c..(i + 1) * c]);
            composite.coverage[i] = 1.0;
        }
    }
    fill_holes(&composite.image, &composite.coverage)
}
