//! Shared-palette GIF output.
//!
//! One median-cut palette is built from every frame so that static regions
//! map to the same index in all frames and do not shimmer.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gif::{Encoder, Frame, Repeat};

use crate::error::{Error, Result};

const MAX_COLORS: usize = 256;

/// Weighted color histogram over packed `0xRRGGBB` keys.
#[derive(Debug, Default, Clone)]
pub struct Histogram {
    counts: HashMap<u32, u64>,
}

impl Histogram {
    pub fn add_rgb(&mut self, rgb: &[u8]) {
        for p in rgb.chunks_exact(3) {
            *self.counts.entry(pack(p)).or_insert(0) += 1;
        }
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

fn pack(p: &[u8]) -> u32 {
    (p[0] as u32) << 16 | (p[1] as u32) << 8 | p[2] as u32
}

fn unpack(c: u32) -> [u8; 3] {
    [(c >> 16) as u8, (c >> 8) as u8, c as u8]
}

/// Median-cut palette of at most `max_colors` entries.
pub fn median_cut(hist: &Histogram, max_colors: usize) -> Vec<[u8; 3]> {
    let mut colors: Vec<([u8; 3], u64)> = hist.counts.iter().map(|(&c, &n)| (unpack(c), n)).collect();
    // deterministic regardless of hash order
    colors.sort_unstable();
    if colors.is_empty() {
        return vec![[0, 0, 0]];
    }
    let mut boxes: Vec<Vec<([u8; 3], u64)>> = vec![colors];
    while boxes.len() < max_colors {
        // split the box with the widest channel range, ties by population
        let mut pick: Option<(usize, usize, u8, u64)> = None;
        for (i, b) in boxes.iter().enumerate() {
            if b.len() < 2 {
                continue;
            }
            let (axis, range) = widest_axis(b);
            if range == 0 {
                continue;
            }
            let pop: u64 = b.iter().map(|c| c.1).sum();
            let better = match pick {
                None => true,
                Some((_, _, r, p)) => (range, pop) > (r, p),
            };
            if better {
                pick = Some((i, axis, range, pop));
            }
        }
        let Some((i, axis, _, pop)) = pick else { break };
        let mut b = boxes.swap_remove(i);
        b.sort_unstable_by_key(|c| (c.0[axis], c.0));
        let mut acc = 0u64;
        let mut cut = 1;
        for (j, c) in b.iter().enumerate() {
            acc += c.1;
            if acc * 2 >= pop {
                cut = (j + 1).clamp(1, b.len() - 1);
                break;
            }
        }
        let upper = b.split_off(cut);
        boxes.push(b);
        boxes.push(upper);
    }
    let mut palette: Vec<[u8; 3]> = boxes
        .iter()
        .map(|b| {
            let total: u64 = b.iter().map(|c| c.1).sum();
            let mut sum = [0u64; 3];
            for (c, n) in b {
                for k in 0..3 {
                    sum[k] += c[k] as u64 * n;
                }
            }
            std::array::from_fn(|k| ((sum[k] + total / 2) / total) as u8)
        })
        .collect();
    palette.sort_unstable();
    palette.dedup();
    palette
}

fn widest_axis(b: &[([u8; 3], u64)]) -> (usize, u8) {
    let mut lo = [255u8; 3];
    let mut hi = [0u8; 3];
    for (c, _) in b {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    (0..3)
        .map(|k| (k, hi[k] - lo[k]))
        .fold((0, 0), |a, b| if b.1 > a.1 { b } else { a })
}

/// Maps colors to their nearest palette entry, caching per distinct color.
pub struct PaletteMapper<'a> {
    palette: &'a [[u8; 3]],
    cache: HashMap<u32, u8>,
}

impl<'a> PaletteMapper<'a> {
    pub fn new(palette: &'a [[u8; 3]]) -> Self {
        assert!(!palette.is_empty() && palette.len() <= MAX_COLORS);
        Self {
            palette,
            cache: HashMap::new(),
        }
    }

    pub fn index(&mut self, p: &[u8]) -> u8 {
        let key = pack(p);
        if let Some(&i) = self.cache.get(&key) {
            return i;
        }
        let mut best = (0usize, u32::MAX);
        for (i, c) in self.palette.iter().enumerate() {
            let d: u32 = (0..3).map(|k| (c[k] as i32 - p[k] as i32).pow(2) as u32).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        self.cache.insert(key, best.0 as u8);
        best.0 as u8
    }
}

/// Writes RGB8 frames as an infinitely looping GIF with one global palette.
pub fn write_gif(frames: &[Vec<u8>], width: usize, height: usize, fps: u32, path: impl AsRef<Path>) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to encode".into()));
    }
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::InvalidInput(format!("{width}x{height} exceeds GIF limits")));
    }
    if fps == 0 {
        return Err(Error::InvalidInput("fps must be at least 1".into()));
    }
    let mut hist = Histogram::default();
    for f in frames {
        if f.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} bytes, expected {}",
                f.len(),
                width * height * 3
            )));
        }
        hist.add_rgb(f);
    }
    let palette = median_cut(&hist, MAX_COLORS);
    let flat: Vec<u8> = palette.iter().flatten().copied().collect();
    let mut mapper = PaletteMapper::new(&palette);

    let file = BufWriter::new(File::create(path)?);
    let mut enc = Encoder::new(file, width as u16, height as u16, &flat)?;
    enc.set_repeat(Repeat::Infinite)?;
    let delay = ((100.0 / fps as f64).round() as u16).max(1);
    for f in frames {
        let indices: Vec<u8> = f.chunks_exact(3).map(|p| mapper.index(p)).collect();
        let frame = Frame {
            width: width as u16,
            height: height as u16,
            delay,
            buffer: indices.into(),
            ..Frame::default()
        };
        enc.write_frame(&frame)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_colors_are_kept_exactly() {
        let mut h = Histogram::default();
        h.add_rgb(&[10, 20, 30, 200, 100, 0, 10, 20, 30, 0, 0, 255]);
        let pal = median_cut(&h, 256);
        assert_eq!(pal.len(), 3);
        for c in [[10, 20, 30], [200, 100, 0], [0, 0, 255]] {
            assert!(pal.contains(&c));
        }
    }

    #[test]
    fn palette_is_capped() {
        let mut h = Histogram::default();
        let px: Vec<u8> = (0..4096u32).flat_map(|i| [(i % 16 * 16) as u8, (i / 16 % 16 * 16) as u8, (i / 256 * 16) as u8]).collect();
        h.add_rgb(&px);
        assert_eq!(h.distinct(), 4096);
        let pal = median_cut(&h, 256);
        assert!(pal.len() <= 256 && pal.len() > 200);
        let mut m = PaletteMapper::new(&pal);
        // nearest entry within one box width
        for p in px.chunks_exact(3) {
            let c = pal[m.index(p) as usize];
            let d: i32 = (0..3).map(|k| (c[k] as i32 - p[k] as i32).abs()).max().unwrap();
            assert!(d <= 64, "{p:?} -> {c:?}");
        }
    }

    #[test]
    fn gif_decodes_with_expected_frame_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gif");
        let frames: Vec<Vec<u8>> = (0..5u8).map(|i| vec![i * 40; 4 * 3 * 3]).collect();
        write_gif(&frames, 4, 3, 30, &p).unwrap();
        let mut opts = gif::DecodeOptions::new();
        opts.set_color_output(gif::ColorOutput::RGBA);
        let mut dec = opts.read_info(File::open(&p).unwrap()).unwrap();
        let mut n = 0;
        while let Some(f) = dec.read_next_frame().unwrap() {
            assert_eq!(f.buffer[0], n * 40);
            n += 1;
        }
        assert_eq!(n, 5);
    }
}
