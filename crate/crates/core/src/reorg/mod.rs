//! Reorganisation of a GOP into two 2D videos: the time-independent video
//! V_TI on a sorted anchor grid, and the packed time-dependent video V_GF
//! holding only the streams that survive pruning.

mod sort;

pub use sort::{grid_sort, minmax_normalize, morton_placement, pca3, smoothness_energy, SortKeys, EMPTY};

use crate::entropy::attr_layout;
use crate::error::{Error, Result};
use crate::model::{near_square, Anchor, FeatureStream, GopConfig, GopModel};
use crate::nn::Grid;

/// Quantization levels of `m_de` above zero; the step is `1 / MDE_LEVELS`.
pub const MDE_LEVELS: i32 = 15;

/// Quantized `m_de` symbol in `[0, MDE_LEVELS]`. Zero prunes the stream.
pub fn quantize_mde(m_de: f32) -> i32 {
    ((m_de as f64 * MDE_LEVELS as f64).round() as i32).clamp(0, MDE_LEVELS)
}

pub fn dequantize_mde(symbol: i32) -> f32 {
    symbol as f32 / MDE_LEVELS as f32
}

/// Where each anchor sits in V_TI and V_GF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutMaps {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Row-major cells, each an anchor index or [`EMPTY`].
    pub ti_grid: Vec<u32>,
    /// Anchors with a present stream, in row-major scan order of `ti_grid`.
    pub gf_order: Vec<u32>,
    /// `(h, w)` of V_GF frames.
    pub gf_dims: (usize, usize),
}

impl LayoutMaps {
    /// Builds the V_GF side of a layout from a placed grid and the quantized
    /// `m_de` of every anchor, as the decoder does.
    pub fn from_grid(grid_h: usize, grid_w: usize, ti_grid: Vec<u32>, mde_symbols: &[i32]) -> Self {
        let gf_order = gf_order(&ti_grid, mde_symbols);
        let gf_dims = near_square(gf_order.len());
        Self {
            grid_h,
            grid_w,
            ti_grid,
            gf_order,
            gf_dims,
        }
    }

    /// Cell of every anchor, indexed by anchor.
    pub fn cell_of(&self, n_anchors: usize) -> Result<Vec<usize>> {
        let mut cell = vec![usize::MAX; n_anchors];
        for (c, &a) in self.ti_grid.iter().enumerate() {
            if a == EMPTY {
                continue;
            }
            let slot = cell
                .get_mut(a as usize)
                .ok_or_else(|| Error::LayoutMismatch(format!("cell {c} names anchor {a} of {n_anchors}")))?;
            if *slot != usize::MAX {
                return Err(Error::LayoutMismatch(format!("anchor {a} placed twice")));
            }
            *slot = c;
        }
        if let Some(a) = cell.iter().position(|c| *c == usize::MAX) {
            return Err(Error::LayoutMismatch(format!("anchor {a} has no cell")));
        }
        Ok(cell)
    }

    fn check(&self, cfg: &GopConfig) -> Result<()> {
        if self.grid_h != cfg.grid_h || self.grid_w != cfg.grid_w || self.ti_grid.len() != cfg.grid_h * cfg.grid_w {
            return Err(Error::LayoutMismatch(format!(
                "layout grid {}x{} ({} cells) for a {}x{} config",
                self.grid_h,
                self.grid_w,
                self.ti_grid.len(),
                cfg.grid_h,
                cfg.grid_w
            )));
        }
        self.cell_of(cfg.n_anchors)?;
        let (h, w) = self.gf_dims;
        if h * w < self.gf_order.len() {
            return Err(Error::LayoutMismatch("V_GF frame smaller than its anchor list".into()));
        }
        if self.gf_order.iter().any(|a| *a as usize >= cfg.n_anchors) {
            return Err(Error::LayoutMismatch("V_GF lists an unknown anchor".into()));
        }
        Ok(())
    }
}

/// Anchors whose `m_de` symbol is nonzero, in row-major scan order of the grid.
pub fn gf_order(ti_grid: &[u32], mde_symbols: &[i32]) -> Vec<u32> {
    ti_grid
        .iter()
        .copied()
        .filter(|a| *a != EMPTY && mde_symbols.get(*a as usize).is_some_and(|s| *s > 0))
        .collect()
}

/// Normalised sort keys: positions and the top three principal components
/// of the time-independent features.
pub fn sort_keys(model: &GopModel) -> SortKeys {
    let c = model.config.feature_channels;
    let features: Vec<f32> = model.anchors.iter().flat_map(|a| a.feature.iter().copied()).collect();
    let pcs = pca3(&features, c);
    let raw: Vec<[f64; 6]> = model
        .anchors
        .iter()
        .zip(&pcs)
        .map(|(a, pc)| {
            let x = a.position.map(|v| v as f64);
            [x[0], x[1], x[2], pc[0], pc[1], pc[2]]
        })
        .collect();
    SortKeys(minmax_normalize(&raw))
}

/// Sorts the anchors of `model` onto its configured grid and derives the
/// V_GF packing.
pub fn build_layout(model: &GopModel, seed: u64) -> Result<LayoutMaps> {
    let cfg = &model.config;
    if model.anchors.len() != cfg.n_anchors {
        return Err(Error::LayoutMismatch(format!(
            "{} anchors for n_anchors = {}",
            model.anchors.len(),
            cfg.n_anchors
        )));
    }
    let keys = sort_keys(model);
    let ti_grid = grid_sort(&keys, cfg.grid_h, cfg.grid_w, seed)?;
    let mde: Vec<i32> = model.anchors.iter().map(|a| quantize_mde(a.m_de)).collect();
    Ok(LayoutMaps::from_grid(cfg.grid_h, cfg.grid_w, ti_grid, &mde))
}

/// Attribute values of one anchor in V_TI channel order.
fn anchor_channels(a: &Anchor, out: &mut Vec<f32>) {
    out.clear();
    out.extend_from_slice(&a.position);
    out.extend_from_slice(&a.attr_scale);
    out.extend_from_slice(&a.offset_scale);
    for o in &a.offsets {
        out.extend_from_slice(o);
    }
    out.extend_from_slice(&[a.m_de, a.m_knn, a.m_dy]);
    out.extend_from_slice(&a.feature);
}

/// V_TI as one grid of `12 + 3K + C` channel planes; empty cells hold zero.
pub fn assemble_vti(model: &GopModel, layout: &LayoutMaps) -> Result<Grid> {
    let cfg = &model.config;
    layout.check(cfg)?;
    let channels = cfg.vti_channels();
    let plane = layout.ti_grid.len();
    let mut grid = Grid::zeros(channels, cfg.grid_h, cfg.grid_w);
    let mut values = Vec::with_capacity(channels);
    for (cell, &a) in layout.ti_grid.iter().enumerate() {
        if a == EMPTY {
            continue;
        }
        let anchor = &model.anchors[a as usize];
        anchor_channels(anchor, &mut values);
        if values.len() != channels {
            return Err(Error::LayoutMismatch(format!("anchor {a} does not match the config")));
        }
        for (ch, v) in values.iter().enumerate() {
            grid.data[ch * plane + cell] = *v;
        }
    }
    Ok(grid)
}

/// Inverse of [`assemble_vti`]: anchors in index order.
pub fn disassemble_vti(vti: &Grid, layout: &LayoutMaps, cfg: &GopConfig) -> Result<Vec<Anchor>> {
    layout.check(cfg)?;
    if vti.channels != cfg.vti_channels() || vti.height != cfg.grid_h || vti.width != cfg.grid_w {
        return Err(Error::LayoutMismatch(format!(
            "V_TI holds {}x{}x{}, config needs {}x{}x{}",
            vti.channels,
            vti.height,
            vti.width,
            cfg.vti_channels(),
            cfg.grid_h,
            cfg.grid_w
        )));
    }
    let k = cfg.gaussians_per_anchor;
    let l = attr_layout(k);
    let plane = vti.plane_len();
    let cell_of = layout.cell_of(cfg.n_anchors)?;
    Ok(cell_of
        .iter()
        .map(|&cell| {
            let v = |ch: usize| vti.data[ch * plane + cell];
            let tri = |base: usize| [v(base), v(base + 1), v(base + 2)];
            Anchor {
                position: tri(l.position),
                attr_scale: tri(l.attr_scale),
                offset_scale: tri(l.offset_scale),
                offsets: (0..k).map(|j| tri(l.offsets + 3 * j)).collect(),
                m_de: v(l.masks),
                m_knn: v(l.masks + 1),
                m_dy: v(l.masks + 2),
                feature: (l.total..l.total + cfg.feature_channels).map(v).collect(),
            }
        })
        .collect())
}

/// V_GF: one `P x h x w` grid per frame holding the present streams in
/// `gf_order`, row-major, zero-padded after the last one.
pub fn pack_vgf(model: &GopModel, layout: &LayoutMaps) -> Result<Vec<Grid>> {
    let cfg = &model.config;
    layout.check(cfg)?;
    let (h, w) = layout.gf_dims;
    let p = cfg.stream_channels;
    let plane = h * w;
    let mut frames = vec![Grid::zeros(p, h, w); cfg.frames];
    for (slot, &a) in layout.gf_order.iter().enumerate() {
        let s = model
            .streams
            .get(a as usize)
            .ok_or_else(|| Error::LayoutMismatch(format!("no stream for anchor {a}")))?;
        if s.channels != p || s.values.len() != cfg.frames * p {
            return Err(Error::LayoutMismatch(format!("stream {a} does not match the config")));
        }
        for (t, frame) in frames.iter_mut().enumerate() {
            for (ch, v) in s.frame(t).iter().enumerate() {
                frame.data[ch * plane + slot] = *v;
            }
        }
    }
    Ok(frames)
}

/// Inverse of [`pack_vgf`]; anchors outside `gf_order` get zero streams
/// marked as pruned.
pub fn unpack_vgf(frames: &[Grid], layout: &LayoutMaps, cfg: &GopConfig) -> Result<Vec<FeatureStream>> {
    layout.check(cfg)?;
    let (h, w) = layout.gf_dims;
    let p = cfg.stream_channels;
    if frames.len() != cfg.frames || frames.iter().any(|f| f.channels != p || f.height != h || f.width != w) {
        return Err(Error::LayoutMismatch("V_GF frames do not match the layout".into()));
    }
    let plane = h * w;
    let mut streams = vec![FeatureStream::zeros(cfg.frames, p); cfg.n_anchors];
    for (slot, &a) in layout.gf_order.iter().enumerate() {
        let s = &mut streams[a as usize];
        s.present = true;
        for (t, frame) in frames.iter().enumerate() {
            for (ch, v) in s.frame_mut(t).iter_mut().enumerate() {
                *v = frame.data[ch * plane + slot];
            }
        }
    }
    Ok(streams)
}
