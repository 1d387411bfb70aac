//! The full forward path re-derived in plain f64 arithmetic and compared
//! against `decode_frame`.

use gifstream_core::nn::{Activation, DenseLayer};
use gifstream_core::{decode_frame, generate_synthetic, GopConfig, GopModel};

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::None => x,
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Tanh => x.tanh(),
        Activation::Softplus => (1.0 + x.exp()).ln(),
    }
}

fn mlp(layers: &[DenseLayer], x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    for l in layers {
        x = (0..l.out_dim)
            .map(|o| {
                let s: f64 = (0..l.in_dim).map(|i| l.weight[o * l.in_dim + i] as f64 * x[i]).sum();
                act(l.activation, s + l.bias[o] as f64)
            })
            .collect();
    }
    x
}

fn neighbours(m: &GopModel, i: usize) -> Vec<usize> {
    let n = m.anchors.len();
    let k = m.config.knn_k.min(n.saturating_sub(1));
    let mut d: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| {
            let (a, b) = (m.anchors[i].position, m.anchors[j].position);
            ((0..3).map(|x| (a[x] as f64 - b[x] as f64).powi(2)).sum(), j)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|p| p.1).collect()
}

fn blend(own: &[f64], others: &[Vec<f64>], m: f64) -> Vec<f64> {
    if others.is_empty() {
        return own.to_vec();
    }
    (0..own.len())
        .map(|c| {
            let mean = others.iter().map(|o| o[c]).sum::<f64>() / others.len() as f64;
            (1.0 - m) * mean + m * own[c]
        })
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Every primitive of frame `t`: position, opacity, scaling, rotation, color.
fn reference(m: &GopModel, t: usize) -> Vec<[f64; 14]> {
    let cfg = &m.config;
    let time = if cfg.frames <= 1 { 0.0 } else { t as f64 / (cfg.frames - 1) as f64 };
    let f: Vec<Vec<f64>> = m.anchors.iter().map(|a| a.feature.iter().map(|v| *v as f64).collect()).collect();
    let fh: Vec<Vec<f64>> = m
        .anchors
        .iter()
        .zip(&m.streams)
        .map(|(a, s)| {
            let p = cfg.stream_channels;
            (0..p)
                .map(|c| if s.present { s.values[t * p + c] as f64 * a.m_de as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut enc = Vec::new();
    for octave in 0..3 {
        let a = std::f64::consts::PI * (1 << octave) as f64 * time;
        enc.extend([a.sin(), a.cos()]);
    }
    let mut out = Vec::new();
    for (i, a) in m.anchors.iter().enumerate() {
        let nb = neighbours(m, i);
        let ft = blend(&f[i], &nb.iter().map(|j| f[*j].clone()).collect::<Vec<_>>(), a.m_knn as f64);
        let fht = blend(&fh[i], &nb.iter().map(|j| fh[*j].clone()).collect::<Vec<_>>(), a.m_knn as f64);

        let attrs = mlp(&m.weights.att_head, &[f[i].clone(), fh[i].clone()].concat());
        let mot = mlp(&m.weights.mot_head, &[ft, fht, enc.clone()].concat());
        let md = a.m_dy as f64;
        let mut q = [1.0 + md * mot[0], md * mot[1], md * mot[2], md * mot[3]];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= qn);
        let [w, x, y, z] = q;
        let r = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        for (k, o) in a.offsets.iter().enumerate() {
            let raw = &attrs[k * 11..(k + 1) * 11];
            let v: Vec<f64> = (0..3).map(|d| a.offset_scale[d] as f64 * o[d] as f64).collect();
            let mut prim = [0.0; 14];
            for row in 0..3 {
                let rv: f64 = (0..3).map(|c| r[row][c] * v[c]).sum();
                prim[row] = rv + a.position[row] as f64 + md * mot[4 + row];
            }
            prim[3] = sig(raw[0]);
            for d in 0..3 {
                prim[4 + d] = sig(raw[1 + d]) * a.attr_scale[d] as f64;
            }
            let n = raw[4..8].iter().map(|v| v * v).sum::<f64>().sqrt();
            for d in 0..4 {
                prim[7 + d] = raw[4 + d] / n;
            }
            for d in 0..3 {
                prim[11 + d] = sig(raw[8 + d]);
            }
            out.push(prim);
        }
    }
    out
}

fn compare(m: &GopModel, t: usize) -> f64 {
    let frame = decode_frame(m, t).unwrap();
    let want = reference(m, t);
    assert_eq!(frame.primitives.len(), want.len());
    let mut worst = 0.0f64;
    for (p, w) in frame.primitives.iter().zip(&want) {
        let got: Vec<f64> = p
            .position
            .iter()
            .chain([&p.opacity])
            .chain(&p.scaling)
            .chain(&p.rotation)
            .chain(&p.color)
            .map(|v| *v as f64)
            .collect();
        for (g, w) in got.iter().zip(w) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

#[test]
fn seed_one_model_at_t0_matches_reference() {
    let m = generate_synthetic(1, &GopConfig::new(64, 5, 24, 4, 8), 0.3).unwrap();
    let err = compare(&m, 0);
    assert!(err < 1e-5, "max deviation {err}");
}

#[test]
fn other_frames_and_shapes_match_reference() {
    for (seed, n, k, c, p, frames, s) in [(2, 30, 1, 8, 8, 5, 1.0), (3, 1, 3, 16, 4, 3, 1.0), (4, 50, 5, 48, 8, 65, 0.3)] {
        let m = generate_synthetic(seed, &GopConfig::new(n, k, c, p, frames), s).unwrap();
        for t in [0, frames / 2, frames - 1] {
            let err = compare(&m, t);
            assert!(err < 1e-5, "seed {seed} t={t}: max deviation {err}");
        }
    }
}
