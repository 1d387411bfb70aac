//! Uncompressed `GIFU` model file.
//!
//! `"GIFU" | u16 version` followed by chunks `tag[4] | u32 length | payload`
//! in the order `CONF`, `ANCH`, `STRM`, `WGHT`. All values little-endian.

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{Anchor, FeatureStream, GopConfig, GopModel};
use crate::nn::{load_weights, save_weights};

pub const GIFU_MAGIC: &[u8; 4] = b"GIFU";
pub const GIFU_VERSION: u16 = 1;

const CHUNKS: [&[u8; 4]; 4] = [b"CONF", b"ANCH", b"STRM", b"WGHT"];

fn chunk(out: &mut Writer, tag: &[u8; 4], body: &[u8]) -> Result<()> {
    out.bytes(tag);
    out.u32(u32::try_from(body.len()).map_err(|_| Error::Format("GIFU chunk over 4 GiB".into()))?);
    out.bytes(body);
    Ok(())
}

fn config_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format("config value does not fit in 32 bits".into()))
}

/// Serialises `model` without loss.
pub fn write_model(model: &GopModel) -> Result<Vec<u8>> {
    let cfg = &model.config;
    if model.anchors.len() != cfg.n_anchors || model.streams.len() != cfg.n_anchors {
        return Err(Error::Format("anchor or stream count differs from the config".into()));
    }
    let mut out = Writer::default();
    out.bytes(GIFU_MAGIC);
    out.u16(GIFU_VERSION);

    let mut conf = Writer::default();
    for v in [
        cfg.n_anchors,
        cfg.gaussians_per_anchor,
        cfg.feature_channels,
        cfg.stream_channels,
        cfg.frames,
        cfg.knn_k,
        cfg.grid_h,
        cfg.grid_w,
    ] {
        conf.u32(config_u32(v)?);
    }
    conf.u8(model.quantized as u8);
    chunk(&mut out, CHUNKS[0], &conf.into_inner())?;

    let mut anch = Writer::default();
    for (i, a) in model.anchors.iter().enumerate() {
        if a.offsets.len() != cfg.gaussians_per_anchor || a.feature.len() != cfg.feature_channels {
            return Err(Error::Format(format!("anchor {i} does not match the config")));
        }
        anch.f32s(&a.position);
        anch.f32s(&a.attr_scale);
        anch.f32s(&a.offset_scale);
        for o in &a.offsets {
            anch.f32s(o);
        }
        anch.f32s(&[a.m_de, a.m_knn, a.m_dy]);
        anch.f32s(&a.feature);
    }
    chunk(&mut out, CHUNKS[1], &anch.into_inner())?;

    let mut strm = Writer::default();
    for (i, s) in model.streams.iter().enumerate() {
        if s.channels != cfg.stream_channels || s.values.len() != cfg.frames * cfg.stream_channels {
            return Err(Error::Format(format!("stream {i} does not match the config")));
        }
        let stored = !s.is_zero() || s.values.iter().any(|v| v.is_sign_negative());
        strm.u8(s.present as u8);
        strm.u8(stored as u8);
        if stored {
            strm.f32s(&s.values);
        }
    }
    chunk(&mut out, CHUNKS[2], &strm.into_inner())?;
    chunk(&mut out, CHUNKS[3], &save_weights(&model.weights))?;
    Ok(out.into_inner())
}

fn flag(r: &mut Reader<'_>, what: &str) -> Result<bool> {
    match r.u8() {
        Some(0) => Ok(false),
        Some(1) => Ok(true),
        Some(v) => Err(Error::Format(format!("{what} flag {v} is neither 0 nor 1"))),
        None => Err(Error::Format(format!("truncated {what} flag"))),
    }
}

/// Parses a `GIFU` file.
pub fn read_model(bytes: &[u8]) -> Result<GopModel> {
    let trunc = |what: &str| Error::Format(format!("truncated GIFU {what}"));
    let mut r = Reader::new(bytes);
    if r.take(4).ok_or_else(|| trunc("header"))? != GIFU_MAGIC {
        return Err(Error::Format("not a GIFU model file (bad magic)".into()));
    }
    let version = r.u16().ok_or_else(|| trunc("header"))?;
    if version != GIFU_VERSION {
        return Err(Error::Format(format!(
            "unsupported GIFU version {version}, expected {GIFU_VERSION}"
        )));
    }
    let mut bodies: Vec<&[u8]> = Vec::with_capacity(4);
    for tag in CHUNKS {
        let found = r.take(4).ok_or_else(|| trunc("chunk tag"))?;
        if found != tag {
            return Err(Error::Format(format!(
                "expected chunk {}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = r.u32().ok_or_else(|| trunc("chunk length"))? as usize;
        bodies.push(r.take(len).ok_or_else(|| trunc("chunk"))?);
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last chunk", r.remaining())));
    }

    let mut c = Reader::new(bodies[0]);
    let mut u = [0usize; 8];
    for v in &mut u {
        *v = c.u32().ok_or_else(|| trunc("CONF"))? as usize;
    }
    let quantized = flag(&mut c, "quantized")?;
    let config = GopConfig {
        n_anchors: u[0],
        gaussians_per_anchor: u[1],
        feature_channels: u[2],
        stream_channels: u[3],
        frames: u[4],
        knn_k: u[5],
        grid_h: u[6],
        grid_w: u[7],
    };
    config.check()?;
    let (n, k) = (config.n_anchors, config.gaussians_per_anchor);

    let per_anchor = 12 + 3 * k + config.feature_channels;
    if bodies[1].len() != n * per_anchor * 4 {
        return Err(Error::Format(format!(
            "ANCH holds {} bytes, expected {}",
            bodies[1].len(),
            n * per_anchor * 4
        )));
    }
    let mut a = Reader::new(bodies[1]);
    let mut anchors = Vec::with_capacity(n);
    for _ in 0..n {
        let v = a.f32s(per_anchor).ok_or_else(|| trunc("ANCH"))?;
        let tri = |b: usize| [v[b], v[b + 1], v[b + 2]];
        let m = 9 + 3 * k;
        anchors.push(Anchor {
            position: tri(0),
            attr_scale: tri(3),
            offset_scale: tri(6),
            offsets: (0..k).map(|j| tri(9 + 3 * j)).collect(),
            m_de: v[m],
            m_knn: v[m + 1],
            m_dy: v[m + 2],
            feature: v[m + 3..].to_vec(),
        });
    }

    let mut s = Reader::new(bodies[2]);
    let values = config.frames * config.stream_channels;
    let mut streams = Vec::with_capacity(n);
    for _ in 0..n {
        let present = flag(&mut s, "present")?;
        let stored = flag(&mut s, "stored")?;
        let mut stream = FeatureStream::zeros(config.frames, config.stream_channels);
        stream.present = present;
        if stored {
            stream.values = s.f32s(values).ok_or_else(|| trunc("STRM"))?;
        }
        streams.push(stream);
    }
    if !s.is_empty() {
        return Err(Error::Format("trailing bytes in STRM".into()));
    }

    let weights = load_weights(bodies[3])?;
    Ok(GopModel {
        config,
        anchors,
        streams,
        weights,
        quantized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_synthetic;

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = generate_synthetic(3, &GopConfig::new(25, 3, 12, 4, 5), 0.4).unwrap();
        let bytes = write_model(&m).unwrap();
        assert_eq!(read_model(&bytes).unwrap(), m);
    }

    #[test]
    fn version_and_magic_are_checked() {
        let m = generate_synthetic(3, &GopConfig::new(4, 1, 4, 4, 2), 1.0).unwrap();
        let mut bytes = write_model(&m).unwrap();
        bytes[4] = 9;
        let e = read_model(&bytes).unwrap_err().to_string();
        assert!(e.contains("version 9"), "{e}");
        bytes[0] = b'X';
        assert!(read_model(&bytes).is_err());
    }

    #[test]
    fn truncation_is_an_error() {
        let m = generate_synthetic(3, &GopConfig::new(4, 1, 4, 4, 2), 1.0).unwrap();
        let bytes = write_model(&m).unwrap();
        for cut in [5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_model(&bytes[..cut]).is_err());
        }
    }
}
