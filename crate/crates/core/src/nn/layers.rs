use rayon::prelude::*;

use super::{sigmoid, softplus, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
            Activation::Softplus => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::None,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            4 => Activation::Softplus,
            _ => return None,
        })
    }
}

/// Fully connected layer. `weight` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub(crate) fn check_storage(&self) -> Result<(), NnError> {
        if self.weight.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(NnError::DimMismatch(format!(
                "dense {}x{} stores {} weights and {} biases",
                self.out_dim,
                self.in_dim,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, NnError> {
        dense_forward(self, input)
    }
}

/// `activation(weight * input + bias)`, accumulated in double precision.
pub fn dense_forward(layer: &DenseLayer, input: &[f32]) -> Result<Vec<f32>, NnError> {
    if input.len() != layer.in_dim {
        return Err(NnError::DimMismatch(format!(
            "dense layer expects {} inputs, got {}",
            layer.in_dim,
            input.len()
        )));
    }
    layer.check_storage()?;
    let n = layer.in_dim;
    Ok((0..layer.out_dim)
        .map(|o| {
            let acc = layer.weight[o * n..(o + 1) * n]
                .iter()
                .zip(input)
                .fold(0.0f64, |acc, (w, x)| acc + *w as f64 * *x as f64);
            layer.activation.apply(acc + layer.bias[o] as f64) as f32
        })
        .collect())
}

/// Sequential composition of dense layers. An empty stack is the identity.
pub fn mlp_forward(layers: &[DenseLayer], input: &[f32]) -> Result<Vec<f32>, NnError> {
    let mut x = input.to_vec();
    for layer in layers {
        x = dense_forward(layer, &x)?;
    }
    Ok(x)
}

/// A stack of 2D planes, channel-major (`channels x height x width`).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Stacks grids of identical spatial size along the channel axis.
    pub fn concat(parts: &[&Grid]) -> Result<Grid, NnError> {
        let Some(first) = parts.first() else {
            return Ok(Grid::zeros(0, 0, 0));
        };
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|g| g.height != h || g.width != w) {
            return Err(NnError::DimMismatch("concatenated grids differ in size".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|g| g.data.len()).sum());
        for g in parts {
            data.extend_from_slice(&g.data);
        }
        Ok(Grid {
            channels: parts.iter().map(|g| g.channels).sum(),
            height: h,
            width: w,
            data,
        })
    }
}

/// 3x3 convolution with zero padding 1, so the output keeps the input size.
/// `kernel` is `out_ch x in_ch x 3 x 3`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, activation: Activation) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.kernel[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }

    pub(crate) fn check_storage(&self) -> Result<(), NnError> {
        if self.kernel.len() != self.out_ch * self.in_ch * 9 || self.bias.len() != self.out_ch {
            return Err(NnError::DimMismatch(format!(
                "conv {}->{} stores {} kernel values and {} biases",
                self.in_ch,
                self.out_ch,
                self.kernel.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Grid) -> Result<Grid, NnError> {
        conv_forward(self, input)
    }
}

/// Zero-padded 3x3 cross-correlation plus bias plus activation.
///
/// Each output value accumulates in double precision in a fixed order
/// (input channel, kernel row, kernel column), so results do not depend on
/// how output channels are scheduled across threads.
pub fn conv_forward(layer: &ConvLayer, input: &Grid) -> Result<Grid, NnError> {
    if input.channels != layer.in_ch {
        return Err(NnError::DimMismatch(format!(
            "conv layer expects {} channels, got {}",
            layer.in_ch, input.channels
        )));
    }
    layer.check_storage()?;
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    let wide: Vec<f64> = input.data.iter().map(|v| *v as f64).collect();

    let mut out = Grid::zeros(layer.out_ch, h, w);
    if plane == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(o, dst)| {
            let mut acc = vec![layer.bias[o] as f64; plane];
            for i in 0..layer.in_ch {
                let src = &wide[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = layer.weight(o, i, ky, kx) as f64;
                        accumulate_shifted(&mut acc, src, h, w, ky as isize - 1, kx as isize - 1, k);
                    }
                }
            }
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = layer.activation.apply(*a) as f32;
            }
        });
    Ok(out)
}

/// `acc[y][x] += k * src[y + dy][x + dx]` wherever the source index is in range.
#[inline]
fn accumulate_shifted(acc: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, k: f64) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let dst = &mut acc[y * w + x0..y * w + x1];
        let s = (sy * w) as isize + x0 as isize + dx;
        let src_row = &src[s as usize..s as usize + (x1 - x0)];
        for (a, v) in dst.iter_mut().zip(src_row) {
            *a += k * *v;
        }
    }
}
