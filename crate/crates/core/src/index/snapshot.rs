//! Binary index snapshot, little-endian:
//!
//! ```text
//! "BIVF" u32:version
//! u32:dim u32:num_clusters u32:block_capacity u32:rearrange_threshold
//! u32:nprobe_default u32:interleave_group u64:next_id
//! f32[num_clusters * dim] centroids
//! per cluster: u64:len u64[len] ids f32[len * dim] row-major vectors
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{IndexConfig, IndexError, IvfModel};
use crate::store::InterleavedSegment;

const MAGIC: &[u8; 4] = b"BIVF";
const VERSION: u32 = 1;

/// Writes `model` with the structural parts of `config`.
pub fn write<W: Write>(mut w: W, model: &IvfModel, config: &IndexConfig) -> Result<(), IndexError> {
    let u32_of = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| IndexError::Format(format!("{what} {v} does not fit in u32")))
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (v, what) in [
        (model.dim, "dim"),
        (model.num_clusters(), "num_clusters"),
        (config.block_capacity, "block_capacity"),
        (config.rearrange_threshold, "rearrange_threshold"),
        (config.nprobe_default, "nprobe_default"),
        (config.interleave_group, "interleave_group"),
    ] {
        w.write_all(&u32_of(v, what)?.to_le_bytes())?;
    }
    w.write_all(&model.next_id.to_le_bytes())?;
    for c in &model.centroids {
        w.write_all(&c.to_le_bytes())?;
    }
    for seg in &model.offline {
        w.write_all(&(seg.len() as u64).to_le_bytes())?;
        for id in &seg.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for x in seg.to_rows() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot; the returned config carries defaults for fields not stored.
pub fn read<R: Read>(mut r: R) -> Result<(IvfModel, IndexConfig), IndexError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IndexError::Format("not an index snapshot".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(IndexError::Format(format!("unsupported version {version}")));
    }
    let mut h = [0usize; 6];
    for v in &mut h {
        *v = read_u32(&mut r)? as usize;
    }
    let [dim, num_clusters, block_capacity, rearrange_threshold, nprobe_default, interleave_group] = h;
    if dim == 0 || num_clusters == 0 {
        return Err(IndexError::Format("zero dim or cluster count".into()));
    }
    let next_id = read_u64(&mut r)?;
    let centroids = read_f32s(&mut r, num_clusters * dim)?;
    let mut offline = Vec::with_capacity(num_clusters);
    for _ in 0..num_clusters {
        let len = usize::try_from(read_u64(&mut r)?).map_err(|_| IndexError::Format("list too long".into()))?;
        let ids = (0..len).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let rows = read_f32s(&mut r, len * dim)?;
        offline.push(InterleavedSegment::from_rows(dim, interleave_group, ids, &rows));
    }
    let config = IndexConfig {
        num_clusters,
        nprobe_default,
        rearrange_threshold,
        block_capacity,
        interleave_group,
        ..IndexConfig::default()
    };
    config.validate().map_err(|e| IndexError::Format(e.to_string()))?;
    Ok((IvfModel { dim, centroids, offline, next_id }, config))
}

pub fn save(path: &Path, model: &IvfModel, config: &IndexConfig) -> Result<(), IndexError> {
    write(BufWriter::new(File::create(path)?), model, config)
}

pub fn load(path: &Path) -> Result<(IvfModel, IndexConfig), IndexError> {
    read(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, IndexError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, IndexError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, IndexError> {
    let mut bytes = vec![0u8; n.checked_mul(4).ok_or_else(|| IndexError::Format("size overflow".into()))?];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
}
