//! Deterministic synthetic GOPs for tests, benches and the CLI.
//!
//! The entropy-model weights are not arbitrary noise: the stream model is
//! wired to predict the previous frame, and the attribute model predicts
//! means, spreads and steps that match the ranges the generator draws from.
//! Coded sizes of synthetic GOPs therefore behave like those of a trained
//! model rather than being dominated by mismatched distributions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Anchor, FeatureStream, GopConfig, GopModel};
use crate::entropy::{attr_layout, CONTEXT_FRAMES, FRAGMENT_WIDTH, SIGMA_FLOOR, STEP_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{softplus_inverse, WeightsBundle};

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f32 {
    let z: f64 = rng.sample(StandardNormal);
    (z * std) as f32
}

fn fill_normal(rng: &mut ChaCha8Rng, values: &mut [f32], std: f64) {
    for v in values {
        *v = normal(rng, std);
    }
}

/// Builds a GOP whose anchors sit on a jittered lattice and where exactly
/// `round(sparsity * n_anchors)` anchors carry a feature stream.
pub fn generate_synthetic(seed: u64, config: &GopConfig, sparsity: f64) -> Result<GopModel> {
    config.check()?;
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidConfig(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_anchors;
    let (k, c, p, frames) = (
        config.gaussians_per_anchor,
        config.feature_channels,
        config.stream_channels,
        config.frames,
    );

    let n_present = (sparsity * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut present = vec![false; n];
    for &i in &order[..n_present] {
        present[i] = true;
    }

    let side = (1..).find(|s: &usize| s * s * s >= n).unwrap_or(1);
    let mut anchors = Vec::with_capacity(n);
    let mut streams = Vec::with_capacity(n);
    for (i, &has_stream) in present.iter().enumerate() {
        let lattice = [i % side, (i / side) % side, i / (side * side)];
        let position = lattice.map(|l| l as f32 + rng.random_range(-0.3f32..0.3));
        let attr_scale = [(); 3].map(|_| rng.random_range(0.3f32..0.7));
        let offset_scale = [(); 3].map(|_| rng.random_range(0.6f32..1.4));
        let offsets = (0..k).map(|_| [(); 3].map(|_| normal(&mut rng, 0.5))).collect();
        let m_knn = rng.random_range(0.0f32..=1.0);
        let (m_de, m_dy) = if has_stream {
            (rng.random_range(0.25f32..=1.0), rng.random_range(0.2f32..=1.0))
        } else {
            (0.0, 0.0)
        };
        let mut feature = vec![0.0; c];
        fill_normal(&mut rng, &mut feature, 1.0);
        anchors.push(Anchor {
            position,
            attr_scale,
            offset_scale,
            offsets,
            m_de,
            m_knn,
            m_dy,
            feature,
        });

        let mut stream = FeatureStream::zeros(frames, p);
        if has_stream {
            stream.present = true;
            fill_normal(&mut rng, stream.frame_mut(0), 1.0);
            for t in 1..frames {
                for ch in 0..p {
                    let prev = stream.values[(t - 1) * p + ch];
                    stream.values[t * p + ch] = prev + normal(&mut rng, 0.35);
                }
            }
        }
        streams.push(stream);
    }

    let weights = synthetic_weights(config, &mut rng);
    Ok(GopModel {
        config: *config,
        anchors,
        streams,
        weights,
        quantized: false,
    })
}

fn synthetic_weights(cfg: &GopConfig, rng: &mut ChaCha8Rng) -> WeightsBundle {
    let mut w = WeightsBundle::zeros(cfg);

    for layers in [&mut w.att_head, &mut w.mot_head] {
        let first_in = layers[0].in_dim as f64;
        fill_normal(rng, &mut layers[0].weight, 1.0 / first_in.sqrt());
        fill_normal(rng, &mut layers[0].bias, 0.1);
        let hidden = layers[1].in_dim as f64;
        fill_normal(rng, &mut layers[1].weight, 0.5 / hidden.sqrt());
        fill_normal(rng, &mut layers[1].bias, 0.1);
    }
    // Keep anchor motion modest: rotations of a few degrees, sub-unit translations.
    let last = &mut w.mot_head[1];
    for v in last.weight.iter_mut().chain(last.bias.iter_mut()) {
        *v *= 0.3;
    }

    // Stream model: hidden channels 2c / 2c+1 carry relu(+x) / relu(-x) of
    // channel c of the most recent frame, and the output recombines them,
    // so mu tracks the previous frame.
    let p = cfg.stream_channels;
    let sigma_raw = softplus_inverse(0.55 - SIGMA_FLOOR) as f32;
    {
        let [conv1, conv2] = &mut w.ent_stream[..] else {
            unreachable!("two-layer stream model")
        };
        fill_normal(rng, &mut conv1.kernel, 0.02);
        fill_normal(rng, &mut conv1.bias, 0.05);
        let passthrough = p.min(conv1.out_ch / 2);
        let latest = (CONTEXT_FRAMES - 1) * p;
        for ch in 0..passthrough {
            for (hidden, sign) in [(2 * ch, 1.0), (2 * ch + 1, -1.0)] {
                conv1.bias[hidden] = 0.0;
                let at = ((hidden * conv1.in_ch + latest + ch) * 3 + 1) * 3 + 1;
                conv1.kernel[at] = sign;
            }
        }
        fill_normal(rng, &mut conv2.kernel, 0.01);
        for ch in 0..passthrough {
            for (hidden, sign) in [(2 * ch, 1.0), (2 * ch + 1, -1.0)] {
                let at = ((ch * conv2.in_ch + hidden) * 3 + 1) * 3 + 1;
                conv2.kernel[at] = sign;
            }
        }
        for ch in 0..p {
            conv2.bias[p + ch] = sigma_raw;
        }
    }

    {
        let g = FRAGMENT_WIDTH;
        let [conv1, conv2] = &mut w.ent_fragment[..] else {
            unreachable!("two-layer fragment model")
        };
        fill_normal(rng, &mut conv1.kernel, 0.1);
        fill_normal(rng, &mut conv1.bias, 0.05);
        fill_normal(rng, &mut conv2.kernel, 0.01);
        let sigma_raw = softplus_inverse(1.0 - SIGMA_FLOOR) as f32;
        for ch in 0..g {
            conv2.bias[g + ch] = sigma_raw;
        }
    }

    {
        let [l1, l2] = &mut w.ent_attr[..] else {
            unreachable!("two-layer attribute model")
        };
        let c = l1.in_dim as f64;
        fill_normal(rng, &mut l1.weight, 0.2 / c.sqrt());
        fill_normal(rng, &mut l1.bias, 0.05);
        fill_normal(rng, &mut l2.weight, 0.01);
        let layout = attr_layout(cfg.gaussians_per_anchor);
        let a = cfg.attribute_channels();
        for ch in 0..a {
            let (mu, sigma, step) = if ch < layout.attr_scale {
                (0.0, 1.0, 1.0)
            } else if ch < layout.offset_scale {
                (0.5, 0.12, 0.02)
            } else if ch < layout.offsets {
                (1.0, 0.25, 0.04)
            } else if ch < layout.masks {
                (0.0, 0.5, 0.04)
            } else if ch == layout.masks {
                (0.2, 0.35, 0.05)
            } else if ch == layout.masks + 1 {
                (0.5, 0.3, 0.04)
            } else {
                (0.2, 0.35, 0.04)
            };
            l2.bias[ch] = mu as f32;
            l2.bias[a + ch] = softplus_inverse(sigma - SIGMA_FLOOR) as f32;
            l2.bias[2 * a + ch] = softplus_inverse(step - STEP_FLOOR) as f32;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    #[test]
    fn present_count_follows_rounding() {
        let cfg = GopConfig::new(100, 5, 24, 4, 8);
        let m = generate_synthetic(1, &cfg, 0.3).unwrap();
        assert_eq!(m.present_streams(), 30);
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = GopConfig::new(40, 3, 16, 4, 5);
        let a = generate_synthetic(9, &cfg, 0.5).unwrap();
        let b = generate_synthetic(9, &cfg, 0.5).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(10, &cfg, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sparsity_prunes_everything() {
        let cfg = GopConfig::new(50, 2, 8, 4, 6);
        let m = generate_synthetic(1, &cfg, 0.0).unwrap();
        assert!(m.anchors.iter().all(|a| a.m_de == 0.0));
        assert!(m.streams.iter().all(|s| !s.present && s.is_zero()));
    }

    #[test]
    fn rejects_bad_sparsity() {
        let cfg = GopConfig::new(5, 1, 4, 4, 2);
        assert!(generate_synthetic(1, &cfg, 1.5).is_err());
    }

    #[test]
    fn weights_match_config() {
        for (k, c, p) in [(1, 24, 4), (5, 48, 8), (2, 3, 20)] {
            let cfg = GopConfig::new(12, k, c, p, 3);
            let m = generate_synthetic(2, &cfg, 1.0).unwrap();
            m.weights.check(&cfg).unwrap();
        }
    }
}
