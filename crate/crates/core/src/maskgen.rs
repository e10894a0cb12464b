//! Motion masks from averaged self-attention maps.
//!
//! Late-step attention maps are averaged into a token affinity, the tokens
//! are grouped by spectral clustering, each cluster is rendered at image
//! resolution, and clusters that sit mostly inside a guide segmentation are
//! merged into the final mask. K-means and single-step variants are kept for
//! comparison, along with a PCA rendering of the affinity.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{check_dims, BinaryMask, Image};

/// Default number of clusters.
pub const DEFAULT_CLUSTERS: usize = 10;
/// Attention maps from denoising steps before this index are discarded.
pub const DEFAULT_FROM_STEP: u32 = 25;
/// Cluster retention threshold for most scenes.
pub const DEFAULT_OVERLAP: f64 = 0.70;
/// Stricter retention threshold for thin structures such as waterfalls.
pub const FINE_STRUCTURE_OVERLAP: f64 = 0.90;
/// Default token grid side.
pub const DEFAULT_GRID: usize = 32;

const SYMMETRY_TOLERANCE: f64 = 1e-6;
const MIN_DEGREE: f64 = 1e-12;
const EIGEN_TOLERANCE: f64 = 1e-8;
const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

/// Self-attention maps captured at several denoising steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    grid_h: usize,
    grid_w: usize,
    timestep_ids: Vec<u32>,
    maps: Vec<Vec<f32>>,
}

impl AttentionStack {
    pub fn new(grid_h: usize, grid_w: usize, timestep_ids: Vec<u32>, maps: Vec<Vec<f32>>) -> Result<Self> {
        if timestep_ids.len() != maps.len() {
            return Err(Error::InvalidInput(format!(
                "{} timestep ids for {} maps",
                timestep_ids.len(),
                maps.len()
            )));
        }
        let tokens = grid_h
            .checked_mul(grid_w)
            .ok_or_else(|| Error::InvalidInput("token grid overflows".into()))?;
        let side = tokens
            .checked_mul(tokens)
            .ok_or_else(|| Error::InvalidInput("attention map size overflows".into()))?;
        for (id, map) in timestep_ids.iter().zip(&maps) {
            if map.len() != side {
                return Err(Error::InvalidInput(format!(
                    "map for step {id} has {} entries, expected {side}",
                    map.len()
                )));
            }
            if map.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "map for step {id} has negative or non-finite entries"
                )));
            }
        }
        Ok(Self {
            grid_h,
            grid_w,
            timestep_ids,
            maps,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn timestep_ids(&self) -> &[u32] {
        &self.timestep_ids
    }

    pub fn maps(&self) -> &[Vec<f32>] {
        &self.maps
    }
}

/// Symmetric nonnegative token affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if Some(entries.len()) != size.checked_mul(size) {
            return Err(Error::InvalidInput(format!(
                "affinity has {} entries, expected {size}x{size}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("affinity entries must be finite and nonnegative".into()));
        }
        for i in 0..size {
            for j in i + 1..size {
                let (a, b) = (entries[i * size + j], entries[j * size + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::InvalidInput(format!(
                        "affinity is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { size, entries })
    }

    /// Symmetrizes a square map as `(A + A^T) / 2`.
    pub fn symmetrized(size: usize, map: &[f64]) -> Result<Self> {
        if map.len() != size * size {
            return Err(Error::InvalidInput("map is not square".into()));
        }
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                entries[i * size + j] = 0.5 * (map[i * size + j] + map[j * size + i]);
            }
        }
        Self::new(size, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    /// Cosine similarity between attention rows, clamped at zero.
    pub fn cosine_of_rows(&self) -> Self {
        let n = self.size;
        let norms: Vec<f64> = (0..n)
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let denom = norms[i] * norms[j];
                let s = if denom > 0.0 {
                    let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                    (dot / denom).max(0.0)
                } else {
                    0.0
                };
                entries[i * n + j] = s;
                entries[j * n + i] = s;
            }
        }
        Self { size: n, entries }
    }
}

/// How token affinities are derived from the averaged attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffinityKind {
    /// The symmetrized attention matrix itself.
    #[default]
    Attention,
    /// Cosine similarity of attention rows.
    CosineRows,
}

impl AffinityKind {
    pub fn apply(self, affinity: AffinityMatrix) -> AffinityMatrix {
        match self {
            AffinityKind::Attention => affinity,
            AffinityKind::CosineRows => affinity.cosine_of_rows(),
        }
    }
}

/// Per-token cluster assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidInput(format!("label {bad} is not below k = {k}")));
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Mean of the maps whose step index is at least `from_step`, symmetrized.
pub fn average_attention(stack: &AttentionStack, from_step: u32) -> Result<AffinityMatrix> {
    let n = stack.tokens();
    let mut sum = vec![0.0f64; n * n];
    let mut count = 0usize;
    for (id, map) in stack.timestep_ids.iter().zip(&stack.maps) {
        if *id < from_step {
            continue;
        }
        count += 1;
        for (s, &v) in sum.iter_mut().zip(map) {
            *s += v as f64;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(format!(
            "no attention maps at or after step {from_step}"
        )));
    }
    let inv = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    AffinityMatrix::symmetrized(n, &sum)
}

/// The map captured at `step`, symmetrized, without averaging.
pub fn single_step_affinity(stack: &AttentionStack, step: u32) -> Result<AffinityMatrix> {
    let idx = stack
        .timestep_ids
        .iter()
        .position(|&id| id == step)
        .ok_or_else(|| Error::InvalidInput(format!("step {step} is not in the attention stack")))?;
    let map: Vec<f64> = stack.maps[idx].iter().map(|&v| v as f64).collect();
    AffinityMatrix::symmetrized(stack.tokens(), &map)
}

/// Rows of the normalized spectral embedding: the `k` eigenvectors of
/// `I - D^{-1/2} A D^{-1/2}` with the smallest eigenvalues, each row scaled to unit length.
pub fn spectral_embedding(affinity: &AffinityMatrix, k: usize) -> Result<Vec<Vec<f64>>> {
    let n = affinity.size();
    check_k(k, n)?;
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = affinity.row(i).iter().sum();
            1.0 / d.max(MIN_DEGREE).sqrt()
        })
        .collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let a = affinity.get(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        if i == j {
            1.0 - a
        } else {
            -a
        }
    });
    let eig = SymmetricEigen::try_new(laplacian, EIGEN_TOLERANCE, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect())
        .collect();
    for row in &mut rows {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(rows)
}

/// Normalized spectral clustering of the token affinity into `k` groups.
pub fn spectral_cluster(affinity: &AffinityMatrix, k: usize, seed: u64) -> Result<ClusterLabels> {
    let embedding = spectral_embedding(affinity, k)?;
    let fit = kmeans(&embedding, k, seed, KMEANS_RESTARTS, KMEANS_MAX_ITER)?;
    ClusterLabels::new(fit.labels, k)
}

/// K-means directly on affinity rows, without the spectral embedding.
pub fn kmeans_cluster(affinity: &AffinityMatrix, k: usize, seed: u64) -> Result<ClusterLabels> {
    let n = affinity.size();
    check_k(k, n)?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| affinity.row(i).to_vec()).collect();
    let fit = kmeans(&rows, k, seed, KMEANS_RESTARTS, KMEANS_MAX_ITER)?;
    ClusterLabels::new(fit.labels, k)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("cluster count must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cluster count {k} exceeds token count {n}"
        )));
    }
    Ok(())
}

/// Result of a k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize, max_iter: usize) -> Result<KMeansFit> {
    check_k(k, points.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, kmeans_plus_plus(points, k, &mut rng), max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = points
                    .iter()
                    .zip(&labels)
                    .enumerate()
                    .map(|(i, (p, &l))| (i, sq_dist(p, &centroids[l])))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                centroids[j] = points[far].clone();
                labels[far] = j;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}

/// One mask per nonempty label, nearest-neighbor upsampled from the token grid.
pub fn labels_to_masks(
    labels: &ClusterLabels,
    grid_h: usize,
    grid_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<BinaryMask>> {
    if labels.labels.len() != grid_h * grid_w {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {grid_h}x{grid_w} grid",
            labels.labels.len()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput("output size must be nonzero".into()));
    }
    let mut present = vec![false; labels.k];
    for &l in &labels.labels {
        present[l] = true;
    }
    let token_at = |x: usize, y: usize| {
        let gy = y * grid_h / out_h;
        let gx = x * grid_w / out_w;
        labels.labels[gy * grid_w + gx]
    };
    Ok((0..labels.k)
        .filter(|&l| present[l])
        .map(|l| BinaryMask::from_fn(out_w, out_h, |x, y| token_at(x, y) == l))
        .collect())
}

/// Fraction of `cluster` pixels that fall inside `guide`; zero for an empty cluster.
pub fn overlap_ratio(cluster: &BinaryMask, guide: &BinaryMask) -> Result<f64> {
    check_dims("cluster", cluster.width(), cluster.height(), "guide", guide.width(), guide.height())?;
    let size = cluster.count();
    if size == 0 {
        return Ok(0.0);
    }
    let inside = cluster
        .data()
        .iter()
        .zip(guide.data())
        .filter(|(c, g)| **c && **g)
        .count();
    Ok(inside as f64 / size as f64)
}

/// Union of the clusters whose overlap with `guide` is at least `threshold`.
pub fn select_clusters(cluster_masks: &[BinaryMask], guide: &BinaryMask, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "overlap threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut out = vec![false; guide.width() * guide.height()];
    for cluster in cluster_masks {
        if cluster.count() == 0 || overlap_ratio(cluster, guide)? < threshold {
            continue;
        }
        for (o, &c) in out.iter_mut().zip(cluster.data()) {
            *o |= c;
        }
    }
    BinaryMask::new(guide.width(), guide.height(), out)
}

/// Intersection over union; zero when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims("mask", a.width(), a.height(), "mask", b.width(), b.height())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings have {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let row_sum: f64 = (0..ka)
        .map(|i| pairs(table[i * kb..(i + 1) * kb].iter().sum()))
        .sum();
    let col_sum: f64 = (0..kb)
        .map(|j| pairs((0..ka).map(|i| table[i * kb + j]).sum()))
        .sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = row_sum * col_sum / total;
    let max = 0.5 * (row_sum + col_sum);
    if max == expected {
        // both labelings are trivial (all-one or all-singleton) in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Principal components of the affinity rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub variances: Vec<f64>,
    /// Share of the total variance carried by each component.
    pub explained_ratio: Vec<f64>,
    /// Projection of every token row onto each component (`scores[c][token]`).
    pub scores: Vec<Vec<f64>>,
}

/// Top `count` principal components of the token rows, by SVD of the centered row matrix.
pub fn pca(affinity: &AffinityMatrix, count: usize) -> Result<Pca> {
    let n = affinity.size();
    if n < 2 {
        return Err(Error::InvalidInput("PCA needs at least two tokens".into()));
    }
    let mut mean = vec![0.0; n];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(affinity.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, n, |i, j| affinity.get(i, j) - mean[j]);
    let svd = centered.clone().try_svd(false, true, 1e-12, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let total_var: f64 = svd.singular_values.iter().map(|s| s * s).sum::<f64>() / (n - 1) as f64;
    let mut components = Vec::new();
    let mut variances = Vec::new();
    let mut explained_ratio = Vec::new();
    let mut scores = Vec::new();
    for &c in order.iter().take(count.min(n)) {
        let mut dir: Vec<f64> = v_t.row(c).iter().copied().collect();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = dir
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        let var = svd.singular_values[c].powi(2) / (n - 1) as f64;
        let proj: Vec<f64> = (0..n)
            .map(|i| centered.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum())
            .collect();
        explained_ratio.push(if total_var > 0.0 { var / total_var } else { 0.0 });
        variances.push(var);
        components.push(dir);
        scores.push(proj);
    }
    Ok(Pca {
        components,
        variances,
        explained_ratio,
        scores,
    })
}

/// RGB rendering of the top three principal components at grid resolution.
/// Components with no spread render at mid-gray.
pub fn pca_visualize(affinity: &AffinityMatrix, grid_h: usize, grid_w: usize) -> Result<Image> {
    let n = affinity.size();
    if n != grid_h * grid_w {
        return Err(Error::DimensionMismatch(format!(
            "{n} tokens for a {grid_h}x{grid_w} grid"
        )));
    }
    let p = pca(affinity, 3)?;
    let mut data = vec![0.5f32; n * 3];
    for (ch, (scores, var)) in p.scores.iter().zip(&p.variances).enumerate() {
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range.is_nan() || range <= 1e-12 || *var <= 1e-24 {
            continue;
        }
        for (t, s) in scores.iter().enumerate() {
            data[t * 3 + ch] = ((s - lo) / range).clamp(0.0, 1.0) as f32;
        }
    }
    Image::new(grid_w, grid_h, 3, data)
}
