//! Residual vector quantization of Gaussian colors.
//!
//! Each stage holds `B` learned entries plus an implicit all-zero entry at
//! index `B`. Picking the zero entry leaves the residual untouched, so the
//! residual norm can never grow from one stage to the next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Color = [f64; 3];

fn dist2(a: &Color, b: &Color) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn sub(a: &Color, b: &Color) -> Color {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Clone, Debug, PartialEq)]
pub struct RvqCodebooks {
    /// `M` stages of `B` entries each.
    pub stages: Vec<Vec<Color>>,
}

impl RvqCodebooks {
    pub fn new(stages: Vec<Vec<Color>>) -> Self {
        assert!(!stages.is_empty(), "need at least one stage");
        let b = stages[0].len();
        assert!(b >= 1 && stages.iter().all(|s| s.len() == b), "ragged codebooks");
        Self { stages }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Learned entries per stage, `B`. Valid indices run to `B` inclusive.
    pub fn size(&self) -> usize {
        self.stages[0].len()
    }

    /// Index of the implicit zero entry.
    pub fn zero_index(&self) -> usize {
        self.size()
    }

    pub fn entry(&self, stage: usize, index: usize) -> Color {
        if index == self.size() {
            [0.0; 3]
        } else {
            self.stages[stage][index]
        }
    }

    /// Rounds every entry to `f32`.
    pub fn round_to_f32(&mut self) {
        for e in self.stages.iter_mut().flatten() {
            *e = e.map(|v| v as f32 as f64);
        }
    }
}

/// Nearest entry (zero entry included), lowest index on ties.
fn nearest(book: &[Color], target: &Color) -> usize {
    let mut best = book.len();
    let mut best_d = dist2(target, &[0.0; 3]);
    for (k, e) in book.iter().enumerate() {
        let d = dist2(target, e);
        if d < best_d || (d == best_d && k < best) {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Greedy stage-by-stage encoding; returns `N` rows of `M` indices.
pub fn rvq_encode(colors: &[Color], books: &RvqCodebooks) -> Vec<Vec<u16>> {
    colors
        .iter()
        .map(|c| {
            let mut r = *c;
            books
                .stages
                .iter()
                .enumerate()
                .map(|(m, book)| {
                    let k = nearest(book, &r);
                    r = sub(&r, &books.entry(m, k));
                    k as u16
                })
                .collect()
        })
        .collect()
}

/// Sum of the selected entries over all stages.
pub fn rvq_decode(indices: &[Vec<u16>], books: &RvqCodebooks) -> Vec<Color> {
    indices
        .iter()
        .map(|row| {
            let mut c = [0.0; 3];
            for (m, &k) in row.iter().enumerate() {
                let e = books.entry(m, k as usize);
                for i in 0..3 {
                    c[i] += e[i];
                }
            }
            c
        })
        .collect()
}

/// Residual entering each stage: `r⁰ = c`, `rᵐ = rᵐ⁻¹ − Cᵐ[iᵐ]`. Shape `N x M`.
pub fn stage_residuals(colors: &[Color], books: &RvqCodebooks, indices: &[Vec<u16>]) -> Vec<Vec<Color>> {
    colors
        .iter()
        .zip(indices)
        .map(|(c, row)| {
            let mut r = *c;
            row.iter()
                .enumerate()
                .map(|(m, &k)| {
                    let before = r;
                    r = sub(&r, &books.entry(m, k as usize));
                    before
                })
                .collect()
        })
        .collect()
}

/// `1/(N·B) Σ_m Σ_n ‖sg[rᵐ⁻¹_n] − Cᵐ[iᵐ_n]‖²`.
pub fn commitment_loss(colors: &[Color], books: &RvqCodebooks, indices: &[Vec<u16>]) -> f64 {
    if colors.is_empty() {
        return 0.0;
    }
    let norm = (colors.len() * books.size()) as f64;
    let residuals = stage_residuals(colors, books, indices);
    let mut sum = 0.0;
    for (rows, idx) in residuals.iter().zip(indices) {
        for (m, (r, &k)) in rows.iter().zip(idx).enumerate() {
            sum += dist2(r, &books.entry(m, k as usize));
        }
    }
    sum / norm
}

/// Gradient of [`commitment_loss`] with respect to the learned codebook
/// entries. The residual operand is gradient-stopped, so colors receive
/// nothing; the fixed zero entry is not a parameter.
pub fn commitment_loss_grad(colors: &[Color], books: &RvqCodebooks, indices: &[Vec<u16>]) -> Vec<Vec<Color>> {
    let mut grad = vec![vec![[0.0; 3]; books.size()]; books.num_stages()];
    if colors.is_empty() {
        return grad;
    }
    let scale = 2.0 / (colors.len() * books.size()) as f64;
    let residuals = stage_residuals(colors, books, indices);
    for (rows, idx) in residuals.iter().zip(indices) {
        for (m, (r, &k)) in rows.iter().zip(idx).enumerate() {
            let k = k as usize;
            if k == books.size() {
                continue;
            }
            let e = books.stages[m][k];
            for i in 0..3 {
                grad[m][k][i] += scale * (e[i] - r[i]);
            }
        }
    }
    grad
}

/// Lloyd's algorithm from a seeded k-means++ start, at most `max_iters`
/// rounds. Clusters that lose all their points keep their previous centroid.
pub fn kmeans(points: &[Color], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Vec<Color> {
    assert!(!points.is_empty() && k >= 1);
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // every point already coincides with a center
            centers.len() % points.len()
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(p, &centers[i]).total_cmp(&dist2(p, &centers[j])))
                .expect("k >= 1");
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for i in 0..3 {
                sums[a][i] += p[i];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].map(|s| s / counts[j] as f64);
            }
        }
    }
    centers
}

/// Lloyd rounds used by [`kmeans_init`].
pub const KMEANS_ITERS: usize = 50;

/// Stage 1 clusters the colors; stage `m` clusters the residuals left by
/// stages `1..m`.
pub fn kmeans_init(colors: &[Color], size: usize, stages: usize, seed: u64) -> RvqCodebooks {
    assert!(stages >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual = colors.to_vec();
    let mut books = Vec::with_capacity(stages);
    for _ in 0..stages {
        let book = kmeans(&residual, size, KMEANS_ITERS, &mut rng);
        let partial = RvqCodebooks::new(vec![book.clone()]);
        let idx = rvq_encode(&residual, &partial);
        for (r, row) in residual.iter_mut().zip(&idx) {
            *r = sub(r, &partial.entry(0, row[0] as usize));
        }
        books.push(book);
    }
    RvqCodebooks::new(books)
}

/// Running accumulators for exponential-moving-average codebook updates.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub cluster_size: Vec<Vec<f64>>,
    pub sum: Vec<Vec<Color>>,
    pub decay: f64,
    pub epsilon: f64,
}

pub const EMA_DECAY: f64 = 0.99;
pub const EMA_EPSILON: f64 = 1e-5;

impl EmaState {
    /// Starts every entry with unit mass located at its current value.
    pub fn new(books: &RvqCodebooks, decay: f64, epsilon: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0);
        Self {
            cluster_size: vec![vec![1.0; books.size()]; books.num_stages()],
            sum: books.stages.clone(),
            decay,
            epsilon,
        }
    }
}

/// One EMA step. `residuals[n][m]` is the vector stage `m` encoded for
/// Gaussian `n` and `indices[n][m]` the entry it chose. Entries that received
/// no assignment keep their value and accumulators.
pub fn ema_update(
    books: &mut RvqCodebooks,
    state: &mut EmaState,
    residuals: &[Vec<Color>],
    indices: &[Vec<u16>],
) {
    let size = books.size();
    for m in 0..books.num_stages() {
        let mut counts = vec![0.0; size];
        let mut sums = vec![[0.0; 3]; size];
        for (rows, idx) in residuals.iter().zip(indices) {
            let k = idx[m] as usize;
            if k == size {
                continue;
            }
            counts[k] += 1.0;
            for i in 0..3 {
                sums[k][i] += rows[m][i];
            }
        }
        let d = state.decay;
        for k in 0..size {
            if counts[k] > 0.0 {
                state.cluster_size[m][k] = d * state.cluster_size[m][k] + (1.0 - d) * counts[k];
                for i in 0..3 {
                    state.sum[m][k][i] = d * state.sum[m][k][i] + (1.0 - d) * sums[k][i];
                }
            }
        }
        // Laplace smoothing keeps every size strictly positive.
        let total: f64 = state.cluster_size[m].iter().sum();
        let eps = state.epsilon;
        for k in 0..size {
            if counts[k] > 0.0 {
                let n = (state.cluster_size[m][k] + eps) / (total + size as f64 * eps) * total;
                books.stages[m][k] = state.sum[m][k].map(|s| s / n);
            }
        }
    }
}
