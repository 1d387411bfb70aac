//! Sort keys and the 3D-to-2D grid sort.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Marks a grid cell that holds no anchor.
pub const EMPTY: u32 = u32::MAX;

/// Swap rounds run at each search radius.
const ROUNDS_PER_RADIUS: usize = 2;

/// Relative eigenvalue below which a principal direction counts as missing.
const RANK_TOLERANCE: f64 = 1e-9;

/// Per-anchor `(x, y, z, pc1, pc2, pc3)`, each component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SortKeys(pub Vec<[f64; 6]>);

impl SortKeys {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Projections of the rows of an `n x width` row-major matrix onto its top
/// three principal directions. Each direction is signed so its components
/// sum to a nonnegative value; missing directions project to zero.
pub fn pca3(features: &[f32], width: usize) -> Vec<[f64; 3]> {
    let n = features.len().checked_div(width).unwrap_or(0);
    let mut out = vec![[0.0; 3]; n];
    if n == 0 || width == 0 {
        return out;
    }
    let mut mean = vec![0.0f64; width];
    for row in features.chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(width, width);
    let mut centred = vec![0.0f64; width];
    for row in features.chunks_exact(width) {
        for (c, (v, m)) in centred.iter_mut().zip(row.iter().zip(&mean)) {
            *c = *v as f64 - m;
        }
        for i in 0..width {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..width {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..width {
        for j in i..width {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let top = eig.eigenvalues[order[0]];

    for (k, &col) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[col];
        if top <= 0.0 || lambda <= RANK_TOLERANCE * top {
            continue;
        }
        let mut dir: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        if sign_of(&dir) < 0.0 {
            dir.iter_mut().for_each(|d| *d = -*d);
        }
        for (o, row) in out.iter_mut().zip(features.chunks_exact(width)) {
            o[k] = row
                .iter()
                .zip(&mean)
                .zip(&dir)
                .map(|((v, m), d)| (*v as f64 - m) * d)
                .sum();
        }
    }
    out
}

/// Sign that makes the component sum nonnegative; a zero sum defers to the
/// first clearly nonzero component.
fn sign_of(dir: &[f64]) -> f64 {
    let sum: f64 = dir.iter().sum();
    if sum.abs() > 1e-12 {
        return sum.signum();
    }
    dir.iter().find(|d| d.abs() > 1e-12).map_or(1.0, |d| d.signum())
}

/// Per column `(v - min) / (max - min)`; a constant column maps to 0.5.
pub fn minmax_normalize<const D: usize>(rows: &[[f64; D]]) -> Vec<[f64; D]> {
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for r in rows {
        for d in 0..D {
            lo[d] = lo[d].min(r[d]);
            hi[d] = hi[d].max(r[d]);
        }
    }
    rows.iter()
        .map(|r| {
            let mut o = [0.0; D];
            for d in 0..D {
                let range = hi[d] - lo[d];
                o[d] = if range > 0.0 { ((r[d] - lo[d]) / range).clamp(0.0, 1.0) } else { 0.5 };
            }
            o
        })
        .collect()
}

fn spread_bits(v: u32, stride: u32, bits: u32) -> u64 {
    let mut out = 0u64;
    for b in 0..bits {
        out |= (((v >> b) & 1) as u64) << (b * stride);
    }
    out
}

fn morton3(k: &[f64; 6]) -> u64 {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 1023.0).round() as u32;
    spread_bits(q(k[0]), 3, 10) | (spread_bits(q(k[1]), 3, 10) << 1) | (spread_bits(q(k[2]), 3, 10) << 2)
}

fn check_grid(n: usize, grid_h: usize, grid_w: usize) -> Result<()> {
    if grid_h.checked_mul(grid_w).is_none_or(|c| c < n) || n >= EMPTY as usize {
        return Err(Error::GridTooSmall {
            grid_h,
            grid_w,
            n_anchors: n,
        });
    }
    Ok(())
}

/// Starting placement: anchors in Morton order of their `(x, y, z)` keys are
/// laid along the 2D Morton curve through the first `n` row-major cells.
/// The remaining cells are `EMPTY`.
pub fn morton_placement(keys: &SortKeys, grid_h: usize, grid_w: usize) -> Result<Vec<u32>> {
    let n = keys.len();
    check_grid(n, grid_h, grid_w)?;
    let mut anchors: Vec<(u64, u32)> = keys.0.iter().enumerate().map(|(i, k)| (morton3(k), i as u32)).collect();
    anchors.sort_unstable();
    let mut cells: Vec<(u64, usize)> = (0..n)
        .map(|c| {
            let (y, x) = ((c / grid_w) as u32, (c % grid_w) as u32);
            (spread_bits(x, 2, 32) | (spread_bits(y, 2, 32) << 1), c)
        })
        .collect();
    cells.sort_unstable();
    let mut grid = vec![EMPTY; grid_h * grid_w];
    for ((_, anchor), (_, cell)) in anchors.iter().zip(&cells) {
        grid[*cell] = *anchor;
    }
    Ok(grid)
}

#[inline]
fn dist2(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum over horizontally and vertically adjacent non-empty cells of the
/// squared key distance.
pub fn smoothness_energy(grid: &[u32], grid_w: usize, keys: &SortKeys) -> f64 {
    if grid_w == 0 {
        return 0.0;
    }
    let mut e = 0.0;
    for (c, &a) in grid.iter().enumerate() {
        if a == EMPTY {
            continue;
        }
        let ka = &keys.0[a as usize];
        if (c + 1) % grid_w != 0 {
            if let Some(&b) = grid.get(c + 1).filter(|b| **b != EMPTY) {
                e += dist2(ka, &keys.0[b as usize]);
            }
        }
        if let Some(&b) = grid.get(c + grid_w).filter(|b| **b != EMPTY) {
            e += dist2(ka, &keys.0[b as usize]);
        }
    }
    e
}

struct Sorter<'a> {
    keys: &'a SortKeys,
    grid: Vec<u32>,
    n: usize,
    h: usize,
    w: usize,
}

impl Sorter<'_> {
    /// Energy between cell `c` holding `key` and its occupied neighbours
    /// other than `skip`.
    fn local(&self, c: usize, key: &[f64; 6], skip: usize) -> f64 {
        let (y, x) = (c / self.w, c % self.w);
        let mut e = 0.0;
        let mut add = |nb: usize| {
            if nb != skip && nb < self.n {
                e += dist2(key, &self.keys.0[self.grid[nb] as usize]);
            }
        };
        if x > 0 {
            add(c - 1);
        }
        if x + 1 < self.w {
            add(c + 1);
        }
        if y > 0 {
            add(c - self.w);
        }
        if y + 1 < self.h {
            add(c + self.w);
        }
        e
    }

    fn try_swap(&mut self, a: usize, b: usize) {
        let ka = self.keys.0[self.grid[a] as usize];
        let kb = self.keys.0[self.grid[b] as usize];
        let before = self.local(a, &ka, b) + self.local(b, &kb, a);
        let after = self.local(a, &kb, b) + self.local(b, &ka, a);
        if after - before < -1e-12 {
            self.grid.swap(a, b);
        }
    }
}

/// Places every anchor on a `grid_h x grid_w` grid so that neighbouring
/// cells hold similar keys. Occupied cells are the first `n` in row-major
/// order. Starts from [`morton_placement`] and applies swaps of two cells
/// only when they strictly lower [`smoothness_energy`], with a seeded visit
/// order and a radius that halves from half the grid down to one.
pub fn grid_sort(keys: &SortKeys, grid_h: usize, grid_w: usize, seed: u64) -> Result<Vec<u32>> {
    let grid = morton_placement(keys, grid_h, grid_w)?;
    let n = keys.len();
    if n < 2 {
        return Ok(grid);
    }
    let mut s = Sorter {
        keys,
        grid,
        n,
        h: grid_h,
        w: grid_w,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut radius = grid_h.max(grid_w) / 2;
    loop {
        let r = radius.max(1) as i64;
        for _ in 0..ROUNDS_PER_RADIUS {
            order.shuffle(&mut rng);
            for &a in &order {
                let (y, x) = ((a / grid_w) as i64, (a % grid_w) as i64);
                let by = y + rng.random_range(-r..=r);
                let bx = x + rng.random_range(-r..=r);
                if by < 0 || bx < 0 || by >= grid_h as i64 || bx >= grid_w as i64 {
                    continue;
                }
                let b = by as usize * grid_w + bx as usize;
                if b != a && b < n {
                    s.try_swap(a, b);
                }
            }
        }
        if radius <= 1 {
            break;
        }
        radius /= 2;
    }
    Ok(s.grid)
}
