//! `MSIB` bag container.
//!
//! ```text
//! magic "MSIB" | version u32 | slide_id (u32 len + utf-8)
//! W u64 | H u64 | n_tiles u32 | feature_dim u32 | probe_dim u32 (0 or 9)
//! per tile: x u64 | y u64 | feature_dim x f32 | probe_dim x f32
//! ```
//! All little-endian. Features are stored as f32 and widened to f64 on read.

use std::path::Path;

use super::binary::{Reader, Writer};
use crate::bag::{ProbeProbs, SlideBag, SlideGeometry, TileCoord, PROBE_CLASSES};
use crate::error::{Error, Result};

pub const BAG_MAGIC: &[u8; 4] = b"MSIB";
pub const BAG_VERSION: u32 = 1;

pub fn encode_bag(bag: &SlideBag) -> Result<Vec<u8>> {
    bag.validate()?;
    let probe_dim = if bag.probes.is_some() { PROBE_CLASSES } else { 0 };
    let mut w = Writer::new();
    w.bytes(BAG_MAGIC);
    w.u32(BAG_VERSION);
    w.string(&bag.slide_id);
    w.u64(bag.geometry.width_px);
    w.u64(bag.geometry.height_px);
    w.u32(bag.n_tiles() as u32);
    w.u32(bag.feature_dim as u32);
    w.u32(probe_dim as u32);
    for i in 0..bag.n_tiles() {
        w.u64(bag.coords[i].x_px);
        w.u64(bag.coords[i].y_px);
        for &v in bag.feature_row(i) {
            w.f32(v as f32);
        }
        if let Some(p) = &bag.probes {
            for &v in &p[i].0 {
                w.f32(v as f32);
            }
        }
    }
    Ok(w.finish())
}

pub fn decode_bag(bytes: &[u8], path: &Path) -> Result<SlideBag> {
    let mut r = Reader::new(bytes, path);
    r.magic(BAG_MAGIC)?;
    let version = r.u32()?;
    if version != BAG_VERSION {
        return Err(r.err(format!("unsupported bag version {version}")));
    }
    let slide_id = r.string()?;
    let width = r.u64()?;
    let height = r.u64()?;
    let geometry = SlideGeometry::new(width, height).map_err(|e| r.err(e.to_string()))?;
    let n = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let probe_dim = r.u32()? as usize;
    if probe_dim != 0 && probe_dim != PROBE_CLASSES {
        return Err(r.err(format!("probe_dim must be 0 or {PROBE_CLASSES}, got {probe_dim}")));
    }
    let per_tile = 16 + 4 * (feature_dim + probe_dim);
    let expected = per_tile as u128 * n as u128;
    if expected != r.remaining() as u128 {
        return Err(r.err(format!(
            "header declares {n} tiles ({expected} payload bytes) but {} bytes follow",
            r.remaining()
        )));
    }
    let mut coords = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * feature_dim);
    let mut probes = (probe_dim > 0).then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let c = TileCoord::new(r.u64()?, r.u64()?);
        if !geometry.contains(c) {
            return Err(r.err(format!(
                "tile ({}, {}) outside slide {}x{}",
                c.x_px, c.y_px, width, height
            )));
        }
        coords.push(c);
        for _ in 0..feature_dim {
            features.push(r.f32()? as f64);
        }
        if let Some(p) = probes.as_mut() {
            let mut v = [0.0; PROBE_CLASSES];
            for slot in v.iter_mut() {
                *slot = r.f32()? as f64;
            }
            p.push(ProbeProbs(v));
        }
    }
    r.finish()?;
    SlideBag::new(slide_id, geometry, coords, feature_dim, features, probes)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_bag(path: &Path, bag: &SlideBag) -> Result<()> {
    std::fs::write(path, encode_bag(bag)?).map_err(|e| Error::io(path, e))
}

pub fn read_bag(path: &Path) -> Result<SlideBag> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bag(&bytes, path)
}
