//! End-to-end loop generation.
//!
//! Frames are rendered in fixed-size blocks. The forward cumulative flow is
//! advanced once across the whole loop; the backward flow is integrated once
//! up front with a checkpoint every block, then re-expanded from the nearest
//! checkpoint for each block. Peak memory is a few blocks of flow fields
//! instead of the full `2 (N + 1)` sequence, and every frame is bitwise the
//! same as rendering it from [`crate::euler::integrate_sequence`].

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::euler::{Direction, EulerIntegrator};
use crate::fields::{check_dims, mask_flow, BinaryMask, FlowField, Image};
use crate::io::{to_rgb8, write_image};
use crate::palette::write_gif;
use crate::splat::render_frame;

/// Frames per block. Fixed so output never depends on the thread count.
const BLOCK: usize = 16;

pub const DEFAULT_FPS: u32 = 30;

/// Loop length presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Real-domain scenes: 60 frames.
    #[default]
    Real,
    /// Artistic scenes: 120 frames.
    Artistic,
}

impl Preset {
    pub fn frames(self) -> usize {
        match self {
            Preset::Real => 60,
            Preset::Artistic => 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    PngSequence,
    Gif,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// `N`; the loop emits `N + 1` frames, the first and last being the input.
    pub frames: usize,
    pub fps: u32,
    pub format: OutputFormat,
}

impl LoopConfig {
    pub fn new(frames: usize, fps: u32, format: OutputFormat) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidInput("frame count must be at least 1".into()));
        }
        if fps == 0 {
            return Err(Error::InvalidInput("fps must be at least 1".into()));
        }
        Ok(Self { frames, fps, format })
    }

    pub fn from_preset(preset: Preset) -> Self {
        Self {
            frames: preset.frames(),
            fps: DEFAULT_FPS,
            format: OutputFormat::PngSequence,
        }
    }
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self::from_preset(Preset::default())
    }
}

/// Renders frames `0..=N` and hands each to `sink` in order.
///
/// The flow is masked before integration, and pixels outside `mask` are kept
/// equal to the input in every frame. Rendering fans out over the current
/// rayon pool.
pub fn generate_loop<F>(image: &Image, flow: &FlowField, mask: &BinaryMask, cfg: &LoopConfig, mut sink: F) -> Result<()>
where
    F: FnMut(usize, Image) -> Result<()>,
{
    check_dims("image", image.width(), image.height(), "flow", flow.width(), flow.height())?;
    check_dims("image", image.width(), image.height(), "mask", mask.width(), mask.height())?;
    if cfg.frames == 0 {
        return Err(Error::InvalidInput("frame count must be at least 1".into()));
    }
    let flow = mask_flow(flow, mask)?;
    let total = cfg.frames;

    // backward checkpoints at m = 0, BLOCK, 2 BLOCK, ...
    let mut checkpoints = Vec::with_capacity(total / BLOCK + 1);
    let mut bwd = EulerIntegrator::new(&flow, Direction::Backward);
    checkpoints.push(bwd.current());
    while bwd.steps() + BLOCK <= total {
        bwd.advance_to(bwd.steps() + BLOCK);
        checkpoints.push(bwd.current());
    }
    drop(bwd);

    let mut fwd = EulerIntegrator::new(&flow, Direction::Forward);
    for start in (0..=total).step_by(BLOCK) {
        let end = (start + BLOCK).min(total + 1);

        let mut forward = Vec::with_capacity(end - start);
        for n in start..end {
            fwd.advance_to(n);
            forward.push(fwd.current());
        }

        // frame n needs the backward field after m = total - n steps
        let lo = total + 1 - end;
        let hi = total - start;
        let base = lo / BLOCK;
        let mut it = EulerIntegrator::resume(&flow, Direction::Backward, base * BLOCK, &checkpoints[base]);
        let mut backward = Vec::with_capacity(hi - lo + 1);
        for m in lo..=hi {
            it.advance_to(m);
            backward.push(it.current());
        }

        let frames: Vec<Image> = (start..end)
            .into_par_iter()
            .map(|n| render_frame(image, &forward[n - start], &backward[total - n - lo], n, total, Some(mask)))
            .collect::<Result<_>>()?;
        for (i, frame) in frames.into_iter().enumerate() {
            sink(start + i, frame)?;
        }
    }
    Ok(())
}

/// Collects every frame in memory. Intended for small rasters.
pub fn generate_loop_frames(image: &Image, flow: &FlowField, mask: &BinaryMask, cfg: &LoopConfig) -> Result<Vec<Image>> {
    let mut frames = Vec::with_capacity(cfg.frames + 1);
    generate_loop(image, flow, mask, cfg, |_, f| {
        frames.push(f);
        Ok(())
    })?;
    Ok(frames)
}

/// Path of frame `n` inside a PNG-sequence directory.
pub fn frame_path(dir: &Path, n: usize, total: usize) -> PathBuf {
    let digits = total.to_string().len().max(4);
    dir.join(format!("frame_{n:0digits$}.png"))
}

/// Renders the loop and writes it to `out`: a directory of PNG frames or a GIF file.
pub fn write_loop(image: &Image, flow: &FlowField, mask: &BinaryMask, cfg: &LoopConfig, out: &Path) -> Result<()> {
    match cfg.format {
        OutputFormat::PngSequence => {
            fs::create_dir_all(out)?;
            generate_loop(image, flow, mask, cfg, |n, frame| write_image(&frame, frame_path(out, n, cfg.frames)))
        }
        OutputFormat::Gif => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                if !parent.is_dir() {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("output directory {} does not exist", parent.display()),
                    )));
                }
            }
            let mut frames = Vec::with_capacity(cfg.frames + 1);
            generate_loop(image, flow, mask, cfg, |_, frame| {
                frames.push(to_rgb8(&frame));
                Ok(())
            })?;
            write_gif(&frames, image.width(), image.height(), cfg.fps, out)
        }
    }
}
