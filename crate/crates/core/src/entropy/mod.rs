//! Conditional Gaussian entropy models and the closed-form rate estimate.
//!
//! Every coded value `v` with quantization step `q` is modelled as the mass
//! of `N(mu, sigma^2)` over `((v - 0.5) q, (v + 0.5) q)`. Stream frames and
//! feature fragments get `(mu, sigma)` from convolutional networks applied to
//! the previous `CONTEXT_FRAMES` decoded planes; attribute channels get
//! `(mu, sigma, Q)` from an MLP applied to the decoded feature of the anchor.

mod predict;

pub use predict::{
    attr_layout, predict_attr_params, predict_fragment, predict_stream_frame, AttrLayout, AttrParams,
    PlaneDistribution,
};

/// Previous frames or fragments fed to the auto-regressive models.
pub const CONTEXT_FRAMES: usize = 2;
/// Feature channels per time-independent fragment.
pub const FRAGMENT_WIDTH: usize = 8;
/// Added to `softplus(raw)` to keep every predicted `sigma` positive.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Added to `softplus(raw)` to keep every adaptive quantization step positive.
pub const STEP_FLOOR: f64 = 1e-3;
/// Smallest probability charged by [`entropy_bits`] (caps a symbol at 32 bits).
pub const MASS_FLOOR: f64 = 1.0 / 4_294_967_296.0;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One side of the standard normal distribution at `z`.
///
/// Negative `z` stores the lower tail `Phi(z)`, non-negative `z` the upper
/// tail `1 - Phi(z)`; both come straight from `erfc`, so neither loses
/// precision to cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Tail {
    Lower(f64),
    Upper(f64),
}

impl Tail {
    #[inline]
    pub(crate) fn at(z: f64) -> Tail {
        if z < 0.0 {
            Tail::Lower(0.5 * libm::erfc(-z * FRAC_1_SQRT_2))
        } else {
            Tail::Upper(0.5 * libm::erfc(z * FRAC_1_SQRT_2))
        }
    }

    /// Mass between two tails with `lo <= hi`.
    #[inline]
    pub(crate) fn between(lo: Tail, hi: Tail) -> f64 {
        let m = match (lo, hi) {
            (Tail::Lower(a), Tail::Lower(b)) => b - a,
            (Tail::Upper(a), Tail::Upper(b)) => a - b,
            (Tail::Lower(a), Tail::Upper(b)) => 1.0 - a - b,
            (Tail::Upper(a), Tail::Lower(b)) => b - (1.0 - a),
        };
        m.max(0.0)
    }

    /// `Phi(z)`.
    #[inline]
    pub(crate) fn below(self) -> f64 {
        match self {
            Tail::Lower(a) => a,
            Tail::Upper(a) => 1.0 - a,
        }
    }

    /// `1 - Phi(z)`.
    #[inline]
    pub(crate) fn above(self) -> f64 {
        match self {
            Tail::Lower(a) => 1.0 - a,
            Tail::Upper(a) => a,
        }
    }
}

/// Standard normal CDF, `0.5 * erfc(-z / sqrt(2))`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Probability that `N(mu, sigma^2)` falls in `(lo, hi)`.
///
/// Uses the tail form on each side of the mean; `erfc` here is the
/// correctly-rounded-to-1-ulp port in `libm`, far inside a 1e-7 error budget.
pub fn interval_mass(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return 0.0;
    }
    let a = Tail::at((lo - mu) / sigma);
    let b = Tail::at((hi - mu) / sigma);
    Tail::between(a, b)
}

/// Lower edge of the quantization bin of symbol `v`: `(v - 0.5) * step`.
#[inline]
pub(crate) fn bin_edge(v: i64, step: f64) -> f64 {
    (v as f64 - 0.5) * step
}

/// Mass of symbol `v` under `N(mu, sigma^2)` with bin width `step`.
pub fn symbol_mass(mu: f64, sigma: f64, step: f64, v: i64) -> f64 {
    interval_mass(mu, sigma, bin_edge(v, step), bin_edge(v + 1, step))
}

/// Cost in bits of one symbol, with the mass floored at `2^-32`.
pub fn symbol_bits(mu: f64, sigma: f64, step: f64, v: i64) -> f64 {
    -symbol_mass(mu, sigma, step, v).max(MASS_FLOOR).log2()
}

/// Quantization step of a plane: one value, or one per symbol.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Uniform(f32),
    PerSymbol(Vec<f32>),
}

impl Step {
    #[inline]
    pub fn at(&self, i: usize) -> f32 {
        match self {
            Step::Uniform(q) => *q,
            Step::PerSymbol(qs) => qs[i],
        }
    }
}

/// Quantized symbols together with the distribution of each one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPlane {
    pub symbols: Vec<i32>,
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
    pub step: Step,
}

impl SymbolPlane {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// True when all arrays agree in length and every sigma and step is positive.
    pub fn is_consistent(&self) -> bool {
        let n = self.symbols.len();
        let steps_ok = match &self.step {
            Step::Uniform(q) => *q > 0.0,
            Step::PerSymbol(qs) => qs.len() == n && qs.iter().all(|q| *q > 0.0),
        };
        self.mu.len() == n && self.sigma.len() == n && steps_ok && self.sigma.iter().all(|s| *s > 0.0)
    }
}

/// Estimated code length of a plane: `-sum log2 P(v)`.
pub fn entropy_bits(plane: &SymbolPlane) -> f64 {
    plane
        .symbols
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            symbol_bits(
                plane.mu[i] as f64,
                plane.sigma[i] as f64,
                plane.step.at(i) as f64,
                v as i64,
            )
        })
        .sum()
}
