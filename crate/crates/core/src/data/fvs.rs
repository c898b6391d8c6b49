use std::fs;
use std::path::Path;

use super::VideoSample;
use crate::error::{Error, Result};
use crate::spatial::ActivationGrid;

pub const FVS_MAGIC: &[u8; 4] = b"FVS1";
pub const FVS_VERSION: u32 = 1;

/// Writes `sample` as FVS: header, `T` static then `T` motion grids as
/// row-major f32 LE, then the planted frame and cell index lists. The id is
/// not stored; the manifest carries it.
pub fn write_fvs(path: &Path, sample: &VideoSample) -> Result<()> {
    sample.validate()?;
    fs::write(path, encode(sample))?;
    Ok(())
}

pub(crate) fn encode(sample: &VideoSample) -> Vec<u8> {
    let (h, w, k) = sample.grid_dims();
    let t = sample.len();
    let mut out = Vec::with_capacity(32 + 8 * t * h * w * k);
    out.extend_from_slice(FVS_MAGIC);
    for v in [FVS_VERSION, sample.label as u32, t as u32, h as u32, w as u32, k as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for grid in sample.static_frames.iter().chain(&sample.motion_frames) {
        for &x in grid.values() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    for list in [&sample.planted_frames, &sample.planted_cells] {
        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for &i in list {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    out
}

/// Reads an FVS file. The returned sample's id is the file stem.
pub fn read_fvs(path: &Path) -> Result<VideoSample> {
    let bytes = fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(&bytes, id)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

pub(crate) fn decode(bytes: &[u8], id: String) -> Result<VideoSample> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FVS_MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FVS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let label = r.count()?;
    let (t, h, w, k) = (r.count()?, r.count()?, r.count()?, r.count()?);
    if t == 0 || h == 0 || w == 0 || k == 0 {
        return Err(Error::CorruptFile("zero dimension in header".into()));
    }
    let per_grid = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(k))
        .ok_or_else(|| Error::CorruptFile("header dimensions overflow".into()))?;
    let mut grids = Vec::with_capacity(2 * t);
    for _ in 0..2 * t {
        let raw = r.take(
            per_grid
                .checked_mul(4)
                .ok_or_else(|| Error::CorruptFile("grid too large".into()))?,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        grids.push(ActivationGrid::new(h, w, k, values)?);
    }
    let motion_frames = grids.split_off(t);
    let list = |r: &mut Reader| -> Result<Vec<usize>> {
        let n = r.count()?;
        (0..n).map(|_| r.count()).collect()
    };
    let planted_frames = list(&mut r)?;
    let planted_cells = list(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let sample = VideoSample {
        id,
        label,
        static_frames: grids,
        motion_frames,
        planted_frames,
        planted_cells,
    };
    sample.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
    Ok(sample)
}
