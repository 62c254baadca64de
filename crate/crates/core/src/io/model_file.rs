//! Binary model file.
//!
//! Little-endian throughout:
//!
//! ```text
//! header    magic "CGS1", version u32 = 1, N u32, sh_degree u32,
//!           |SH| u32, |SR| u32, iteration u64, seed u64
//! gaussians N × [f32; 3] positions, N × f32 opacity logits,
//!           N × u32 g2sh, N × u32 g2sr
//! sh        |SH| × dim_SH × f32 rows, |SH| × u32 parents
//! sr        |SR| × 7 × f32 rows, |SR| × u32 parents
//! ```
//!
//! Only live rows are written, in ascending original index, so the file is a
//! canonical encoding of the logical state. Parent `u32::MAX` means none.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{sh_dim, CodebookKind, CodebookRows, ModelState, SR_DIM};

pub const MAGIC: &[u8; 4] = b"CGS1";
pub const VERSION: u32 = 1;
const NO_PARENT: u32 = u32::MAX;

/// Canonical byte encoding of `state`; freed rows are compacted out.
pub fn encode_model(state: &ModelState) -> Vec<u8> {
    let n = state.len();
    let mut remap = [Vec::new(), Vec::new()];
    let mut live = [Vec::new(), Vec::new()];
    for (k, which) in CodebookKind::ALL.into_iter().enumerate() {
        let book = state.codebook(which);
        remap[k] = vec![NO_PARENT; book.capacity()];
        for (new, old) in book.live_rows().enumerate() {
            remap[k][old as usize] = new as u32;
            live[k].push(old);
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, n as u32, state.sh_degree() as u32, live[0].len() as u32, live[1].len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&state.iteration.to_le_bytes());
    out.extend_from_slice(&state.rng_seed.to_le_bytes());
    let g = state.gaussians();
    for p in g.positions() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in g.opacity_logits() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (k, which) in CodebookKind::ALL.into_iter().enumerate() {
        for &r in g.index(which) {
            out.extend_from_slice(&remap[k][r as usize].to_le_bytes());
        }
    }
    for (k, which) in CodebookKind::ALL.into_iter().enumerate() {
        let book = state.codebook(which);
        for &r in &live[k] {
            for v in book.row(r) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &r in &live[k] {
            let p = book.parent(r).map_or(NO_PARENT, |p| remap[k][p as usize]);
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                section,
                offset: self.bytes.len() as u64,
                message: format!("truncated: need {len} bytes at offset {}", self.pos),
            }),
        }
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, section: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(count.checked_mul(4).unwrap_or(usize::MAX), section)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u32s(&mut self, count: usize, section: &'static str) -> Result<Vec<u32>> {
        let raw = self.take(count.checked_mul(4).unwrap_or(usize::MAX), section)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn error(&self, section: &'static str, message: impl Into<String>) -> Error {
        Error::Format {
            section,
            offset: self.pos as u64,
            message: message.into(),
        }
    }
}

/// Inverse of [`encode_model`].
pub fn decode_model(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            section: "magic",
            offset: 0,
            message: "expected \"CGS1\"".into(),
        });
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(Error::Format {
            section: "header",
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = r.u32("header")? as usize;
    let degree = r.u32("header")? as usize;
    let n_sh = r.u32("header")? as usize;
    let n_sr = r.u32("header")? as usize;
    let iteration = r.u64("header")?;
    let seed = r.u64("header")?;
    if degree > crate::model::MAX_SH_DEGREE {
        return Err(Error::Format {
            section: "header",
            offset: 12,
            message: format!("SH degree {degree} out of range"),
        });
    }
    let flat = r.f32s(n.saturating_mul(3), "positions")?;
    let positions = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let logits = r.f32s(n, "opacity")?;
    let g2sh = r.u32s(n, "g2sh")?;
    let g2sr = r.u32s(n, "g2sr")?;
    let mut read_rows = |count: usize, dim: usize, section: &'static str| -> Result<CodebookRows> {
        let values = r.f32s(count.saturating_mul(dim), section)?;
        let parents = r
            .u32s(count, section)?
            .into_iter()
            .map(|p| (p != NO_PARENT).then_some(p))
            .collect();
        Ok(CodebookRows { values, parents })
    };
    let sh = read_rows(n_sh, sh_dim(degree), "sh codebook")?;
    let sr = read_rows(n_sr, SR_DIM, "sr codebook")?;
    if r.pos != bytes.len() {
        return Err(r.error("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    let mut state = ModelState::from_parts(degree, positions, logits, g2sh, g2sr, sh, sr).map_err(|e| Error::Format {
        section: "consistency",
        offset: bytes.len() as u64,
        message: e.to_string(),
    })?;
    state.iteration = iteration;
    state.rng_seed = seed;
    Ok(state)
}

pub fn save_model(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(state))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    decode_model(&std::fs::read(path)?)
}
