//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::time::Instant;

use gifstream_core::container::SectionId;
use gifstream_core::deform::build_knn;
use gifstream_core::entropy::interval_mass;
use gifstream_core::nn::{conv_forward, Activation, ConvLayer, Grid};
use gifstream_core::reorg::{grid_sort, morton_placement, pca3, smoothness_energy, SortKeys};
use gifstream_core::{
    decode_gop, decode_gop_with, encode_gop_with_report, generate_synthetic, quantize_gop, ContextFault,
    DecodeOptions, Error, FaultPlane, FeatureStream, FrameDecoder, GopConfig, GopModel,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome, secs: f64) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {tag}: {name} ({}; {secs:.1} s)", o.detail);
}

fn synth(seed: u64, n: usize, k: usize, c: usize, p: usize, frames: usize, sparsity: f64) -> GopModel {
    generate_synthetic(seed, &GopConfig::new(n, k, c, p, frames), sparsity).expect("synthetic model")
}

/// The roundtrip matrix: every value of every axis appears, with the large
/// anchor counts on fewer combinations.
fn roundtrip_configs() -> Vec<(usize, usize, usize, usize, usize, f64)> {
    let mut out = Vec::new();
    for n in [1, 10] {
        for frames in [1, 8, 65] {
            for k in [1, 5] {
                for p in [4, 8] {
                    for c in [24, 48] {
                        for s in [0.0, 0.3, 1.0] {
                            out.push((n, k, c, p, frames, s));
                        }
                    }
                }
            }
        }
    }
    for (i, frames) in [1, 8, 65].into_iter().enumerate() {
        for k in [1, 5] {
            for s in [0.0, 0.3, 1.0] {
                let (p, c) = if (i + k) % 2 == 0 { (4, 24) } else { (8, 48) };
                out.push((1000, k, c, p, frames, s));
            }
        }
    }
    out.push((10000, 1, 24, 4, 1, 1.0));
    out.push((10000, 5, 48, 8, 8, 0.0));
    out.push((10000, 5, 24, 4, 8, 0.3));
    out.push((10000, 5, 24, 8, 65, 0.3));
    out
}

/// Criteria 1 and 2 share the same encodes.
fn roundtrip_and_rate() -> (Outcome, Outcome) {
    let configs = roundtrip_configs();
    let mut mismatches = Vec::new();
    let mut rate_failures = Vec::new();
    let mut worst = 0.0f64;
    let mut sections = 0;
    for (i, &(n, k, c, p, frames, s)) in configs.iter().enumerate() {
        let m = synth(1000 + i as u64, n, k, c, p, frames, s);
        let seed = i as u64;
        let (bytes, rep) = match encode_gop_with_report(&m, seed) {
            Ok(r) => r,
            Err(e) => {
                mismatches.push(format!("#{i} encode: {e}"));
                continue;
            }
        };
        let want = quantize_gop(&m, seed).expect("quantize");
        match decode_gop(&bytes) {
            Ok(d) if d == want => {}
            Ok(_) => mismatches.push(format!("#{i} differs")),
            Err(e) => mismatches.push(format!("#{i} decode: {e}")),
        }
        for r in rep.sections.iter().filter(|r| r.id.is_coded()) {
            let est = r.estimated_bits.expect("coded section estimate") / 8.0;
            let gap = (r.bytes as f64 - est).abs();
            let bound = 0.02 * est + 128.0;
            sections += 1;
            if est > 1024.0 {
                worst = worst.max(gap / est);
            }
            if gap > bound {
                rate_failures.push(format!("#{i} {} {} B vs {est:.0} B", r.id.name(), r.bytes));
            }
        }
    }
    let c1 = Outcome {
        pass: mismatches.is_empty() && configs.len() >= 100,
        detail: if mismatches.is_empty() {
            format!("{} models bit-identical", configs.len())
        } else {
            format!("{} of {} failed: {}", mismatches.len(), configs.len(), mismatches.join(", "))
        },
    };
    let c2 = Outcome {
        pass: rate_failures.is_empty(),
        detail: if rate_failures.is_empty() {
            format!(
                "{sections} coded sections within 2% + 128 B; worst relative gap {:.3}% on sections over 1 KiB",
                worst * 100.0
            )
        } else {
            format!("{} of {sections} sections off: {}", rate_failures.len(), rate_failures.join(", "))
        },
    };
    (c1, c2)
}

fn pruning() -> Outcome {
    let n = 1000;
    let m = synth(77, n, 5, 24, 8, 16, 1.0);
    let mut pruned = m.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let dropped = n * 835 / 1000;
    for &i in &order[..dropped] {
        pruned.anchors[i].m_de = 0.0;
        pruned.streams[i] = FeatureStream::zeros(16, 8);
    }
    let (_, full) = encode_gop_with_report(&m, 0).expect("encode");
    let (_, part) = encode_gop_with_report(&pruned, 0).expect("encode");
    let exact = part.vgf_pixels * 1000 == full.vgf_pixels * 165;
    let (a, b) = (full.section(SectionId::Vgf).bytes, part.section(SectionId::Vgf).bytes);
    let shrink = 1.0 - b as f64 / a as f64;
    Outcome {
        pass: exact && shrink >= 0.60,
        detail: format!(
            "pixels {} -> {} ({:.1}% fewer), VGF {a} B -> {b} B ({:.1}% smaller)",
            full.vgf_pixels,
            part.vgf_pixels,
            100.0 * (1.0 - part.vgf_pixels as f64 / full.vgf_pixels as f64),
            shrink * 100.0
        ),
    }
}

fn static_anchors() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let frames = rng.random_range(2..10);
        let mut m = synth(trial, rng.random_range(2..60), rng.random_range(1..6), 16, 4, frames, 0.6);
        let statics: Vec<usize> = (0..m.anchors.len()).filter(|_| rng.random_bool(0.5)).collect();
        for &i in &statics {
            m.anchors[i].m_dy = 0.0;
        }
        let dec = FrameDecoder::new(&m).expect("decoder");
        let k = m.config.gaussians_per_anchor;
        let first = dec.decode(0).expect("frame");
        for t in 1..frames {
            let f = dec.decode(t).expect("frame");
            for &i in &statics {
                for j in i * k..(i + 1) * k {
                    checked += 1;
                    let (a, b) = (first.primitives[j].position, f.primitives[j].position);
                    if a.map(f32::to_bits) != b.map(f32::to_bits) {
                        bad.push(format!("model {trial} anchor {i} t={t}"));
                    }
                }
            }
        }
    }
    Outcome {
        pass: bad.is_empty() && checked > 0,
        detail: if bad.is_empty() {
            format!("{checked} primitive positions identical to t=0 across 20 models")
        } else {
            format!("{} moved: {}", bad.len(), bad.iter().take(5).cloned().collect::<Vec<_>>().join(", "))
        },
    }
}

fn simpson_mass(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let lo = lo.max(mu - 40.0 * sigma);
    let hi = hi.min(mu + 40.0 * sigma);
    if hi <= lo {
        return 0.0;
    }
    let steps = 2000;
    let h = (hi - lo) / steps as f64;
    let pdf = |x: f64| (-0.5 * ((x - mu) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = pdf(lo) + pdf(hi);
    for i in 1..steps {
        acc += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn conv_oracle(layer: &ConvLayer, x: &Grid) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let mut out = vec![0.0; layer.out_ch * h * w];
    for o in 0..layer.out_ch {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = layer.bias[o] as f64;
                for i in 0..layer.in_ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1);
                            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                continue;
                            }
                            let wgt = layer.kernel[((o * layer.in_ch + i) * 3 + ky) * 3 + kx] as f64;
                            acc += wgt * x.data[(i * h + sy as usize) * w + sx as usize] as f64;
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc.max(0.0);
            }
        }
    }
    out
}

/// Cyclic Jacobi eigensolver; eigenvectors are the columns of the result.
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                for row in v.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn oracles() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut worst = 0.0f64;
    let mut cases = 0;
    for mi in 0..10 {
        for si in 0..10 {
            for bi in 0..10 {
                let mu = -3.0 + 0.6 * mi as f64;
                let sigma = 0.05 * 1.8f64.powi(si);
                let lo = -4.0 + 0.7 * bi as f64;
                let hi = lo + 0.25 + 0.1 * mi as f64;
                worst = worst.max((interval_mass(mu, sigma, lo, hi) - simpson_mass(mu, sigma, lo, hi)).abs());
                cases += 1;
            }
        }
    }
    pass &= worst < 1e-6;
    notes.push(format!("(a) {cases} masses, max err {worst:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (ic, oc, h, w) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..7));
        let mut layer = ConvLayer::zeros(ic, oc, Activation::Relu);
        layer.kernel.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        layer.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut x = Grid::zeros(ic, h, w);
        x.data.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        let got = conv_forward(&layer, &x).expect("conv");
        for (g, o) in got.data.iter().zip(conv_oracle(&layer, &x)) {
            worst = worst.max((*g as f64 - o).abs());
        }
    }
    pass &= worst < 1e-6;
    notes.push(format!("(b) conv max err {worst:.1e}"));

    let mut knn_ok = true;
    for (trial, n) in [2usize, 5, 17, 64, 120, 200].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(trial as u64);
        let pts: Vec<[f32; 3]> = (0..n)
            .map(|i| {
                if i % 7 == 3 {
                    [1.0, 1.0, 1.0]
                } else {
                    [(); 3].map(|_| rng.random_range(-5.0f32..5.0))
                }
            })
            .collect();
        let k = 4.min(n - 1);
        let idx = build_knn(&pts, k).expect("knn");
        for i in 0..n {
            let mut all: Vec<(f64, u32)> = (0..n)
                .filter(|j| *j != i)
                .map(|j| {
                    let d: f64 = (0..3).map(|a| (pts[i][a] as f64 - pts[j][a] as f64).powi(2)).sum();
                    (d, j as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<u32> = all.iter().take(k).map(|p| p.1).collect();
            knn_ok &= idx.of(i) == want.as_slice();
        }
    }
    pass &= knn_ok;
    notes.push(format!("(c) knn {}", if knn_ok { "exact" } else { "MISMATCH" }));

    let (n, c) = (50, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let data: Vec<f32> = (0..n * c).map(|i| rng.random_range(-1.0f32..1.0) * (1 + i % c) as f32).collect();
    let got = pca3(&data, c);
    let mean: Vec<f64> = (0..c).map(|j| (0..n).map(|i| data[i * c + j] as f64).sum::<f64>() / n as f64).collect();
    let cov: Vec<Vec<f64>> = (0..c)
        .map(|a| {
            (0..c)
                .map(|b| {
                    (0..n)
                        .map(|i| (data[i * c + a] as f64 - mean[a]) * (data[i * c + b] as f64 - mean[b]))
                        .sum::<f64>()
                        / n as f64
                })
                .collect()
        })
        .collect();
    let (vals, vecs) = jacobi(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|a, b| vals[*b].total_cmp(&vals[*a]));
    let mut worst = 0.0f64;
    for (k, &col) in order.iter().take(3).enumerate() {
        let proj: Vec<f64> = (0..n)
            .map(|i| (0..c).map(|j| (data[i * c + j] as f64 - mean[j]) * vecs[j][col]).sum())
            .collect();
        let same: f64 = (0..n).map(|i| (got[i][k] - proj[i]).abs()).fold(0.0, f64::max);
        let flipped: f64 = (0..n).map(|i| (got[i][k] + proj[i]).abs()).fold(0.0, f64::max);
        worst = worst.max(same.min(flipped));
    }
    pass &= worst < 1e-5;
    notes.push(format!("(d) pca max err {worst:.1e}"));
    Outcome {
        pass,
        detail: notes.join(", "),
    }
}

fn sort_quality() -> Outcome {
    let (h, w) = (64, 64);
    let mut wins = 0;
    let mut worse_than_init = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let keys = SortKeys((0..h * w).map(|_| [(); 6].map(|_| rng.random_range(0.0..1.0))).collect());
        let sorted = grid_sort(&keys, h, w, trial).expect("sort");
        let e = smoothness_energy(&sorted, w, &keys);
        let init = smoothness_energy(&morton_placement(&keys, h, w).expect("init"), w, &keys);
        if e > init {
            worse_than_init += 1;
        }
        let mut perm: Vec<u32> = (0..(h * w) as u32).collect();
        let mut mean = 0.0;
        for _ in 0..20 {
            perm.shuffle(&mut rng);
            mean += smoothness_energy(&perm, w, &keys) / 20.0;
        }
        if e < mean {
            wins += 1;
        }
    }
    Outcome {
        pass: wins >= 95 && worse_than_init == 0,
        detail: format!("below random mean in {wins}/100, above Morton init in {worse_than_init}/100"),
    }
}

fn throughput() -> Outcome {
    let m = synth(7, 10000, 5, 24, 8, 65, 1.0);
    let (bytes, _) = encode_gop_with_report(&m, 0).expect("encode");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let start = Instant::now();
    let res = pool.install(|| decode_gop_with(&bytes, &DecodeOptions::default()));
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok((_, stats)) => Outcome {
            pass: secs < 10.0,
            detail: format!(
                "10000 anchors, all streams present, N=65, P=8, {} B: {secs:.2} s on 1 thread (prediction {:.2} s, entropy {:.2} s)",
                bytes.len(),
                stats.prediction.as_secs_f64(),
                stats.entropy.as_secs_f64()
            ),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("decode failed: {e}"),
        },
    }
}

fn context_integrity() -> Outcome {
    let mut by_footer = 0;
    let mut by_checksum = 0;
    let mut silent = Vec::new();
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let frames = rng.random_range(3..9);
        let c = [16, 24, 48][rng.random_range(0..3)];
        let m = synth(trial, rng.random_range(20..200), rng.random_range(1..6), c, 4, frames, 0.5);
        let (bytes, _) = encode_gop_with_report(&m, trial).expect("encode");
        let fragments = c.div_ceil(8);
        let plane = if rng.random_bool(0.5) {
            FaultPlane::Fragment(rng.random_range(0..fragments - 1))
        } else {
            FaultPlane::StreamFrame(rng.random_range(0..frames - 1))
        };
        let delta = rng.random_range(1..4) * if rng.random_bool(0.5) { 1 } else { -1 };
        let fault = ContextFault {
            plane,
            position: rng.random_range(0..100_000),
            delta,
        };
        match decode_gop_with(&bytes, &DecodeOptions { fault: Some(fault) }) {
            Err(Error::Desync { .. }) => by_footer += 1,
            Err(Error::SymbolChecksum { .. }) => by_checksum += 1,
            Err(e) => silent.push(format!("trial {trial}: unexpected error {e}")),
            Ok(_) => silent.push(format!("trial {trial}: {fault:?} decoded without error")),
        }
    }
    Outcome {
        pass: silent.is_empty(),
        detail: format!(
            "50 trials: {by_footer} caught by the rANS count/footer checks, {by_checksum} by the symbol checksum{}",
            if silent.is_empty() { String::new() } else { format!("; {}", silent.join(", ")) }
        ),
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let t = Instant::now();
    let (c1, c2) = roundtrip_and_rate();
    let secs = t.elapsed().as_secs_f64();
    report(1, "lossless codec roundtrip", &c1, secs);
    report(2, "rate estimate fidelity", &c2, secs);
    let mut failed = (!c1.pass) as usize + (!c2.pass) as usize;
    let rest: [Criterion; 6] = [
        (3, "pruning economics", pruning),
        (4, "static-anchor invariance", static_anchors),
        (5, "oracle equivalences", oracles),
        (6, "sort quality", sort_quality),
        (7, "decode throughput", throughput),
        (8, "context integrity", context_integrity),
    ];
    for (n, name, f) in rest {
        let t = Instant::now();
        let o = f();
        report(n, name, &o, t.elapsed().as_secs_f64());
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
