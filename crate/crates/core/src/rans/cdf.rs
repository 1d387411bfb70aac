//! Integer CDF tables for discretised Gaussians.
//!
//! Entry `i < len` holds symbol `alphabet.min + i`; entry `len` is the escape.
//! Raw frequencies are `max(1, round(2^16 * p))` where `p` is the bin mass of
//! a regular symbol, or the mass of both tails beyond the alphabet for the
//! escape. The deficit `d = 2^16 - sum` is then spread deterministically:
//!
//! * `d > 0`: entries with frequency at least 2, plus the escape, sorted by
//!   `2^16 p - f` descending (ties to the lower index), receive +1 each in
//!   cyclic passes until `d` is used up;
//! * `d < 0`: entries with frequency at least 2, sorted by `f - 2^16 p`
//!   descending (ties to the lower index), give up 1 each in cyclic passes,
//!   never dropping below 1.
//!
//! Symbols farther than 6 sigma from the mean have `2^16 p < 1e-4`, so they
//! always sit at frequency 1 and never join the redistribution. That lets
//! [`GaussianCdf`] evaluate only the window around the mean and still produce
//! exactly the table [`build_cdf`] computes over the full alphabet.

use std::cmp::Ordering;

use super::{Alphabet, TOTAL_FREQ};
use crate::entropy::{bin_edge, Tail};

/// Half-width of the evaluated window, in sigmas.
const WINDOW_SIGMAS: f64 = 6.0;

/// Cumulative start and frequency of one table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: u32,
    pub freq: u32,
}

/// A frequency table the coder can query in both directions.
pub trait SymbolModel {
    fn alphabet(&self) -> Alphabet;

    /// Span of entry `index` (`alphabet().escape()` for the escape).
    fn span(&self, index: u32) -> Span;

    /// Entry whose span contains `slot`, for `slot < TOTAL_FREQ`.
    fn lookup(&self, slot: u32) -> (u32, Span);

    /// Span used to code `value`, and whether it goes through the escape.
    fn span_of(&self, value: i32) -> (Span, bool) {
        let a = self.alphabet();
        if a.contains(value) {
            (self.span((value as i64 - a.min as i64) as u32), false)
        } else {
            (self.span(a.escape()), true)
        }
    }
}

/// Falls back to a unit Gaussian and unit step for non-finite or
/// non-positive parameters, so every input yields a valid table.
fn sanitize(mu: f64, sigma: f64, step: f64) -> (f64, f64, f64) {
    let (mu, sigma) = if mu.is_finite() && sigma.is_finite() && sigma > 0.0 {
        (mu, sigma)
    } else {
        (0.0, 1.0)
    };
    let step = if step.is_finite() && step > 0.0 { step } else { 1.0 };
    (mu, sigma, step)
}

#[inline]
fn raw_freq(p: f64) -> u32 {
    ((TOTAL_FREQ as f64 * p).round() as u32).max(1)
}

#[inline]
fn tail_at(mu: f64, sigma: f64, step: f64, v: i64) -> Tail {
    Tail::at((bin_edge(v, step) - mu) / sigma)
}

fn escape_mass(mu: f64, sigma: f64, step: f64, a: Alphabet) -> f64 {
    let lo = tail_at(mu, sigma, step, a.min as i64).below();
    let hi = tail_at(mu, sigma, step, a.max as i64 + 1).above();
    lo + hi
}

/// Scratch buffers for one table construction.
#[derive(Debug, Clone, Default)]
struct Scratch {
    probs: Vec<f64>,
    order: Vec<u32>,
}

/// Fills `freqs` (window entries followed by the escape) and redistributes
/// the deficit. `implicit` counts the entries outside the window, each at 1.
/// Indices used for tie-breaking are window positions; the escape is last,
/// so the order matches alphabet-index order.
fn normalize(freqs: &mut [u32], scratch: &mut Scratch, implicit: u32) {
    let total: i64 = freqs.iter().map(|f| *f as i64).sum::<i64>() + implicit as i64;
    let mut diff = TOTAL_FREQ as i64 - total;
    if diff == 0 {
        return;
    }
    let esc = freqs.len() - 1;
    let probs = &scratch.probs;
    let order = &mut scratch.order;
    order.clear();
    let target = |i: usize| TOTAL_FREQ as f64 * probs[i];
    if diff > 0 {
        order.extend((0..freqs.len() as u32).filter(|&i| freqs[i as usize] >= 2 || i as usize == esc));
        let key = |i: u32| target(i as usize) - freqs[i as usize] as f64;
        sort_by_key_desc(order, key, diff as usize);
        while diff > 0 {
            for &i in order.iter() {
                if diff == 0 {
                    break;
                }
                freqs[i as usize] += 1;
                diff -= 1;
            }
        }
    } else {
        order.extend((0..freqs.len() as u32).filter(|&i| freqs[i as usize] >= 2));
        let key = |i: u32| freqs[i as usize] as f64 - target(i as usize);
        sort_by_key_desc(order, key, (-diff) as usize);
        while diff < 0 {
            let mut progressed = false;
            for &i in order.iter() {
                if diff == 0 {
                    break;
                }
                if freqs[i as usize] > 1 {
                    freqs[i as usize] -= 1;
                    diff += 1;
                    progressed = true;
                }
            }
            assert!(progressed, "CDF renormalisation cannot shed {} units", -diff);
        }
    }
}

/// Orders `order` by `key` descending with ties to the lower index. Only the
/// first `need` positions matter when a single pass suffices, in which case
/// a selection replaces the full sort.
fn sort_by_key_desc(order: &mut [u32], key: impl Fn(u32) -> f64, need: usize) {
    let cmp = |a: &u32, b: &u32| -> Ordering { key(*b).total_cmp(&key(*a)).then(a.cmp(b)) };
    if need < order.len() {
        order.select_nth_unstable_by(need, cmp);
        order[..need].sort_unstable_by(cmp);
    } else {
        order.sort_unstable_by(cmp);
    }
}

/// A fully materialised table over the whole alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    alphabet: Alphabet,
    /// `len + 2` entries: starts of every symbol, the escape, then `TOTAL_FREQ`.
    cum: Vec<u32>,
}

impl CdfTable {
    /// Builds a table from explicit frequencies (`len + 1` entries, escape last).
    pub fn from_freqs(alphabet: Alphabet, freqs: &[u32]) -> Option<Self> {
        if freqs.len() != alphabet.len() as usize + 1 || freqs.contains(&0) {
            return None;
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for f in freqs {
            acc += *f as u64;
            cum.push(acc as u32);
        }
        (acc == TOTAL_FREQ as u64).then_some(Self { alphabet, cum })
    }

    pub fn freqs(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }
}

impl SymbolModel for CdfTable {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn span(&self, index: u32) -> Span {
        let i = index as usize;
        Span {
            start: self.cum[i],
            freq: self.cum[i + 1] - self.cum[i],
        }
    }

    fn lookup(&self, slot: u32) -> (u32, Span) {
        let i = self.cum.partition_point(|c| *c <= slot) - 1;
        (i as u32, self.span(i as u32))
    }
}

/// Reference construction: evaluates every symbol of the alphabet.
pub fn build_cdf(mu: f64, sigma: f64, step: f64, alphabet: Alphabet) -> CdfTable {
    let (mu, sigma, step) = sanitize(mu, sigma, step);
    let n = alphabet.len() as usize;
    let mut scratch = Scratch::default();
    scratch.probs.reserve(n + 1);
    let mut lo = tail_at(mu, sigma, step, alphabet.min as i64);
    for v in alphabet.min as i64..=alphabet.max as i64 {
        let hi = tail_at(mu, sigma, step, v + 1);
        scratch.probs.push(Tail::between(lo, hi));
        lo = hi;
    }
    scratch.probs.push(escape_mass(mu, sigma, step, alphabet));
    let mut freqs: Vec<u32> = scratch.probs.iter().map(|p| raw_freq(*p)).collect();
    normalize(&mut freqs, &mut scratch, 0);
    CdfTable::from_freqs(alphabet, &freqs).expect("normalised table")
}

/// The same table as [`build_cdf`], evaluated only within a window of
/// `mu +- 6 sigma`. Reusable: [`GaussianCdf::rebuild`] keeps the buffers.
#[derive(Debug, Clone)]
pub struct GaussianCdf {
    alphabet: Alphabet,
    /// First window index.
    lo: u32,
    /// Window frequencies followed by the escape frequency.
    freqs: Vec<u32>,
    /// Starts of the window entries relative to `lo`, plus the window total.
    cum: Vec<u32>,
    scratch: Scratch,
}

impl GaussianCdf {
    pub fn new(mu: f64, sigma: f64, step: f64, alphabet: Alphabet) -> Self {
        let mut t = Self {
            alphabet,
            lo: 0,
            freqs: Vec::new(),
            cum: Vec::new(),
            scratch: Scratch::default(),
        };
        t.rebuild(mu, sigma, step, alphabet);
        t
    }

    pub fn rebuild(&mut self, mu: f64, sigma: f64, step: f64, alphabet: Alphabet) {
        let (mu, sigma, step) = sanitize(mu, sigma, step);
        self.alphabet = alphabet;
        let (amin, amax) = (alphabet.min as f64, alphabet.max as f64);
        let wlo = ((mu - WINDOW_SIGMAS * sigma) / step - 0.5).ceil().clamp(amin, amax + 1.0) as i64;
        let whi = ((mu + WINDOW_SIGMAS * sigma) / step + 0.5).floor().clamp(amin - 1.0, amax) as i64;

        let probs = &mut self.scratch.probs;
        probs.clear();
        if wlo <= whi {
            let mut lo = tail_at(mu, sigma, step, wlo);
            for v in wlo..=whi {
                let hi = tail_at(mu, sigma, step, v + 1);
                probs.push(Tail::between(lo, hi));
                lo = hi;
            }
            self.lo = (wlo - alphabet.min as i64) as u32;
        } else {
            self.lo = 0;
        }
        let window = probs.len();
        probs.push(escape_mass(mu, sigma, step, alphabet));

        self.freqs.clear();
        self.freqs.extend(probs.iter().map(|p| raw_freq(*p)));
        let implicit = alphabet.len() - window as u32;
        normalize(&mut self.freqs, &mut self.scratch, implicit);

        self.cum.clear();
        let mut acc = 0;
        for f in &self.freqs[..window] {
            self.cum.push(acc);
            acc += f;
        }
        self.cum.push(acc);
    }

    fn window(&self) -> u32 {
        self.freqs.len() as u32 - 1
    }

    fn window_total(&self) -> u32 {
        *self.cum.last().expect("cum holds the window total")
    }

    /// Frequencies of every entry, escape last.
    pub fn freqs(&self) -> Vec<u32> {
        (0..=self.alphabet.len()).map(|i| self.span(i).freq).collect()
    }

    pub fn to_table(&self) -> CdfTable {
        CdfTable::from_freqs(self.alphabet, &self.freqs()).expect("normalised table")
    }
}

impl SymbolModel for GaussianCdf {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    #[inline]
    fn span(&self, index: u32) -> Span {
        let w = self.window();
        if index < self.lo {
            return Span { start: index, freq: 1 };
        }
        let rel = index - self.lo;
        if rel < w {
            return Span {
                start: self.lo + self.cum[rel as usize],
                freq: self.freqs[rel as usize],
            };
        }
        let start = self.lo + self.window_total() + (rel - w);
        if index == self.alphabet.escape() {
            Span {
                start,
                freq: self.freqs[w as usize],
            }
        } else {
            Span { start, freq: 1 }
        }
    }

    #[inline]
    fn lookup(&self, slot: u32) -> (u32, Span) {
        if slot < self.lo {
            return (slot, Span { start: slot, freq: 1 });
        }
        let rel = slot - self.lo;
        let total = self.window_total();
        if rel < total {
            let i = self.cum.partition_point(|c| *c <= rel) - 1;
            let index = self.lo + i as u32;
            return (
                index,
                Span {
                    start: self.lo + self.cum[i],
                    freq: self.freqs[i],
                },
            );
        }
        let after = rel - total;
        let tail = self.alphabet.len() - self.lo - self.window();
        let index = if after < tail {
            self.lo + self.window() + after
        } else {
            self.alphabet.escape()
        };
        (index, self.span(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::symbol_mass;
    use proptest::prelude::*;

    fn check_table<M: SymbolModel>(m: &M) {
        let a = m.alphabet();
        let mut next = 0;
        for i in 0..=a.escape() {
            let s = m.span(i);
            assert_eq!(s.start, next, "entry {i}");
            assert!(s.freq >= 1);
            next += s.freq;
            assert_eq!(m.lookup(s.start), (i, s));
            assert_eq!(m.lookup(s.start + s.freq - 1), (i, s));
        }
        assert_eq!(next, TOTAL_FREQ);
    }

    #[test]
    fn unit_gaussian_centre() {
        let a = Alphabet::new(-255, 255).unwrap();
        // 65536 * 0.3829249225 = 25095.37.
        let p = symbol_mass(0.0, 1.0, 1.0, 0);
        assert_eq!(raw_freq(p), 25095);
        let t = build_cdf(0.0, 1.0, 1.0, a);
        check_table(&t);
        // The 500 far entries held at 1 are paid for by the central ones.
        let f = t.freqs();
        assert_eq!(f.iter().copied().max(), Some(f[255]));
        assert!(f[255] < 25095 && f[255] > 25095 - 100);
        let narrow = build_cdf(0.0, 1.0, 1.0, Alphabet::new(-3, 3).unwrap());
        assert!((narrow.span(3).freq as i64 - 25095).abs() <= 2);
    }

    #[test]
    fn wide_sigma_is_near_uniform() {
        let a = Alphabet::new(-8, 8).unwrap();
        let t = build_cdf(0.0, 1e4, 1.0, a);
        check_table(&t);
        let f = t.freqs();
        let body = &f[..17];
        let max = *body.iter().max().unwrap() as f64;
        let min = *body.iter().min().unwrap() as f64;
        assert!(max / min < 2.0);
        // Each of 17 bins holds about 1/(sqrt(2 pi) 1e4) of the mass.
        let expect = TOTAL_FREQ as f64 / (2.0 * std::f64::consts::PI).sqrt() / 1e4;
        assert!(body.iter().all(|v| (*v as f64 - expect.max(1.0)).abs() <= 1.0));
    }

    #[test]
    fn degenerate_inputs_still_give_tables() {
        let a = Alphabet::new(0, 0).unwrap();
        for (mu, s, q) in [
            (0.0, 1.0, 1.0),
            (f64::NAN, 1.0, 1.0),
            (0.0, 0.0, 1.0),
            (1e9, 1e-9, 1.0),
            (0.0, 1.0, -3.0),
            (-1e30, 1.0, 1e-30),
        ] {
            let t = build_cdf(mu, s, q, a);
            check_table(&t);
            let g = GaussianCdf::new(mu, s, q, a);
            check_table(&g);
            assert_eq!(g.to_table(), t);
        }
    }

    #[test]
    fn tiny_sigma_concentrates() {
        let a = Alphabet::new(-255, 255).unwrap();
        let t = GaussianCdf::new(3.0, 1e-4, 1.0, a);
        check_table(&t);
        assert_eq!(t.span(258).freq, TOTAL_FREQ - 511);
        assert_eq!(t.to_table(), build_cdf(3.0, 1e-4, 1.0, a));
    }

    #[test]
    fn far_mean_moves_mass_to_escape() {
        let a = Alphabet::new(-5, 5).unwrap();
        let t = GaussianCdf::new(100.0, 1.0, 1.0, a);
        check_table(&t);
        assert_eq!(t.span(a.escape()).freq, TOTAL_FREQ - 11);
        assert_eq!(t.to_table(), build_cdf(100.0, 1.0, 1.0, a));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn window_matches_full_table(
            mu in -300.0f64..300.0,
            log_sigma in -9.0f64..7.0,
            log_step in -7.0f64..2.0,
            min in -255i32..=255,
            span in 0i32..511,
        ) {
            let a = Alphabet::new(min, (min + span).min(255)).unwrap();
            let (sigma, step) = (log_sigma.exp(), log_step.exp());
            let g = GaussianCdf::new(mu, sigma, step, a);
            let t = build_cdf(mu, sigma, step, a);
            prop_assert_eq!(g.to_table(), t.clone());
            check_table(&g);
            check_table(&t);
        }
    }
}
