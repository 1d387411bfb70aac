//! `GIFS` header and section table.

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::GopConfig;
use crate::rans::{Alphabet, CodedPlane};

pub const GIFS_MAGIC: &[u8; 4] = b"GIFS";
pub const GIFS_VERSION: u16 = 1;

/// Section identifiers, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SectionId {
    Weights = 1,
    Positions = 2,
    MasksMde = 3,
    VtiAttr = 4,
    VtiFeat = 5,
    Vgf = 6,
}

impl SectionId {
    pub const ALL: [SectionId; 6] = [
        SectionId::Weights,
        SectionId::Positions,
        SectionId::MasksMde,
        SectionId::VtiAttr,
        SectionId::VtiFeat,
        SectionId::Vgf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SectionId::Weights => "WEIGHTS",
            SectionId::Positions => "POSITIONS",
            SectionId::MasksMde => "MASKS_MDE",
            SectionId::VtiAttr => "VTI_ATTR",
            SectionId::VtiFeat => "VTI_FEAT",
            SectionId::Vgf => "VGF",
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| *s as u8 == code)
    }

    /// Whether the section holds rANS-coded symbols.
    pub fn is_coded(self) -> bool {
        !matches!(self, SectionId::Weights | SectionId::Positions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SectionEntry {
    pub id: SectionId,
    pub offset: u32,
    pub length: u32,
    pub crc: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Header {
    pub config: GopConfig,
    pub gf_dims: (usize, usize),
    pub empty_cells: usize,
    pub context_frames: u8,
    pub fragment_width: u8,
    pub seed: u64,
    pub pos_min: [f32; 3],
    pub pos_max: [f32; 3],
    pub feat_alphabet: Alphabet,
    pub stream_alphabet: Alphabet,
    pub attr_alphabets: Vec<Alphabet>,
    pub sections: Vec<SectionEntry>,
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} does not fit in 32 bits")))
}

impl Header {
    /// Serialised size for the given number of attribute alphabets.
    pub fn wire_len(attr_alphabets: usize) -> usize {
        4 + 2 + 8 * 4 + 2 * 4 + 4 + 1 + 1 + 8 + 6 * 4 + 2 * 8 + 2 + 8 * attr_alphabets + 1 + 13 * SectionId::ALL.len() + 4
    }

    pub fn write(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_capacity(Self::wire_len(self.attr_alphabets.len()));
        w.bytes(GIFS_MAGIC);
        w.u16(GIFS_VERSION);
        let c = &self.config;
        for (v, what) in [
            (c.n_anchors, "n_anchors"),
            (c.gaussians_per_anchor, "K"),
            (c.feature_channels, "C"),
            (c.stream_channels, "P"),
            (c.frames, "N"),
            (c.knn_k, "knn_k"),
            (c.grid_h, "grid_h"),
            (c.grid_w, "grid_w"),
            (self.gf_dims.0, "V_GF height"),
            (self.gf_dims.1, "V_GF width"),
            (self.empty_cells, "empty cell count"),
        ] {
            w.u32(u32_of(v, what)?);
        }
        w.u8(self.context_frames);
        w.u8(self.fragment_width);
        w.u64(self.seed);
        for v in self.pos_min.iter().chain(&self.pos_max) {
            w.f32(*v);
        }
        for a in [self.feat_alphabet, self.stream_alphabet] {
            w.i32(a.min);
            w.i32(a.max);
        }
        let count = u16::try_from(self.attr_alphabets.len())
            .map_err(|_| Error::Format("too many attribute channels".into()))?;
        w.u16(count);
        for a in &self.attr_alphabets {
            w.i32(a.min);
            w.i32(a.max);
        }
        w.u8(self.sections.len() as u8);
        for s in &self.sections {
            w.u8(s.id as u8);
            w.u32(s.offset);
            w.u32(s.length);
            w.u32(s.crc);
        }
        let mut bytes = w.into_inner();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        Ok(bytes)
    }

    /// Parses and checks the header at the front of `bytes`; returns it and
    /// its length.
    pub fn read(bytes: &[u8]) -> Result<(Self, usize)> {
        let trunc = || Error::Format("truncated header".into());
        let mut r = Reader::new(bytes);
        if r.take(4).ok_or_else(trunc)? != GIFS_MAGIC {
            return Err(Error::Format("not a GIFS bitstream (bad magic)".into()));
        }
        let version = r.u16().ok_or_else(trunc)?;
        if version != GIFS_VERSION {
            return Err(Error::Format(format!(
                "unsupported GIFS version {version}, expected {GIFS_VERSION}"
            )));
        }
        let mut u = [0usize; 11];
        for v in &mut u {
            *v = r.u32().ok_or_else(trunc)? as usize;
        }
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
        let context_frames = r.u8().ok_or_else(trunc)?;
        let fragment_width = r.u8().ok_or_else(trunc)?;
        let seed = r.u64().ok_or_else(trunc)?;
        let mut pos = [0.0f32; 6];
        for v in &mut pos {
            *v = r.f32().ok_or_else(trunc)?;
        }
        let alphabet = |r: &mut Reader<'_>| -> Result<Alphabet> {
            let min = r.i32().ok_or_else(trunc)?;
            let max = r.i32().ok_or_else(trunc)?;
            Ok(Alphabet::new(min, max)?)
        };
        let feat_alphabet = alphabet(&mut r)?;
        let stream_alphabet = alphabet(&mut r)?;
        let count = r.u16().ok_or_else(trunc)? as usize;
        let attr_alphabets = (0..count).map(|_| alphabet(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_sections = r.u8().ok_or_else(trunc)? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let code = r.u8().ok_or_else(trunc)?;
            let id = SectionId::from_code(code).ok_or_else(|| Error::Format(format!("unknown section id {code}")))?;
            sections.push(SectionEntry {
                id,
                offset: r.u32().ok_or_else(trunc)?,
                length: r.u32().ok_or_else(trunc)?,
                crc: r.u32().ok_or_else(trunc)?,
            });
        }
        let body = r.position();
        let crc = r.u32().ok_or_else(trunc)?;
        if crc != crc32fast::hash(&bytes[..body]) {
            return Err(Error::Checksum { section: "header" });
        }
        let header_len = r.position();
        let h = Self {
            config,
            gf_dims: (u[8], u[9]),
            empty_cells: u[10],
            context_frames,
            fragment_width,
            seed,
            pos_min: [pos[0], pos[1], pos[2]],
            pos_max: [pos[3], pos[4], pos[5]],
            feat_alphabet,
            stream_alphabet,
            attr_alphabets,
            sections,
        };
        h.check(header_len, bytes.len())?;
        Ok((h, header_len))
    }

    fn check(&self, header_len: usize, file_len: usize) -> Result<()> {
        self.config.check()?;
        let cfg = &self.config;
        if self.empty_cells != cfg.grid_h * cfg.grid_w - cfg.n_anchors {
            return Err(Error::Format("empty cell count does not match the grid".into()));
        }
        if self.attr_alphabets.len() != 8 + 3 * cfg.gaussians_per_anchor {
            return Err(Error::Format("attribute alphabet count does not match K".into()));
        }
        let (h, w) = self.gf_dims;
        if h.checked_mul(w).is_none_or(|c| c > cfg.n_anchors.max(1) * 2 + w) {
            return Err(Error::Format("implausible V_GF dimensions".into()));
        }
        if self.sections.len() != SectionId::ALL.len() {
            return Err(Error::Format(format!("expected {} sections", SectionId::ALL.len())));
        }
        let mut at = header_len;
        for (s, id) in self.sections.iter().zip(SectionId::ALL) {
            if s.id != id {
                return Err(Error::Format(format!("section {} out of order", s.id.name())));
            }
            if s.offset as usize != at {
                return Err(Error::Format(format!("section {} does not follow its predecessor", id.name())));
            }
            at += s.length as usize;
        }
        if at != file_len {
            return Err(Error::Format(format!("sections end at byte {at}, file has {file_len}")));
        }
        Ok(())
    }

    pub fn entry(&self, id: SectionId) -> &SectionEntry {
        self.sections.iter().find(|s| s.id == id).expect("checked section table")
    }

    /// Body of a section after its checksum is verified.
    pub fn section<'a>(&self, bytes: &'a [u8], id: SectionId) -> Result<&'a [u8]> {
        let e = self.entry(id);
        let body = &bytes[e.offset as usize..(e.offset + e.length) as usize];
        if crc32fast::hash(body) != e.crc {
            return Err(Error::Checksum { section: id.name() });
        }
        Ok(body)
    }
}

/// Coded section body: one coded plane followed by the CRC-32 of the
/// symbols it carries.
pub(crate) fn write_coded(plane: &CodedPlane, symbol_crc: u32) -> Result<Vec<u8>> {
    let mut out = plane.to_bytes()?;
    out.extend_from_slice(&symbol_crc.to_le_bytes());
    Ok(out)
}

pub(crate) fn read_coded(body: &[u8], id: SectionId) -> Result<(CodedPlane, u32)> {
    let (plane, used) = CodedPlane::parse(body).map_err(|source| Error::Desync {
        section: id.name(),
        source,
    })?;
    let tail: [u8; 4] = body[used..]
        .try_into()
        .map_err(|_| Error::Format(format!("section {} has a malformed trailer", id.name())))?;
    Ok((plane, u32::from_le_bytes(tail)))
}

/// CRC-32 over symbols written as little-endian `i32`.
#[derive(Default)]
pub(crate) struct SymbolCrc(crc32fast::Hasher);

impl SymbolCrc {
    pub fn push(&mut self, v: i32) {
        self.0.update(&v.to_le_bytes());
    }

    pub fn extend(&mut self, vs: &[i32]) {
        for v in vs {
            self.push(*v);
        }
    }

    pub fn finish(self) -> u32 {
        self.0.finalize()
    }
}
