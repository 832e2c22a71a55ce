//! `.fvecs` / `.ivecs` files: each record is a little-endian `u32` dimension
//! followed by that many 4-byte little-endian values.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum VecsError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("truncated record at byte {offset}")]
    Truncated { offset: u64 },
    #[error("record at byte {offset} has dimension {got}, expected {expected}")]
    InconsistentDim { offset: u64, expected: usize, got: usize },
    #[error("record at byte {offset} has dimension 0")]
    ZeroDim { offset: u64 },
    #[error("cannot write {len} values as rows of dimension {dim}")]
    Shape { len: usize, dim: usize },
}

/// Row-major vectors of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub vectors: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize, vectors: Vec<f32>) -> Self {
        debug_assert!(dim == 0 || vectors.len().is_multiple_of(dim));
        Self { dim, vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset::new(self.dim, self.vectors[range.start * self.dim..range.end * self.dim].to_vec())
    }
}

/// Reads all records as raw 4-byte words.
fn read_words<R: Read>(r: R) -> Result<(usize, Vec<[u8; 4]>), VecsError> {
    let mut r = BufReader::new(r);
    let mut dim = None;
    let mut words = Vec::new();
    let mut offset = 0u64;
    loop {
        let mut head = [0u8; 4];
        let got = read_full(&mut r, &mut head)?;
        if got == 0 {
            break;
        }
        if got < 4 {
            return Err(VecsError::Truncated { offset });
        }
        let d = u32::from_le_bytes(head) as usize;
        if d == 0 {
            return Err(VecsError::ZeroDim { offset });
        }
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => return Err(VecsError::InconsistentDim { offset, expected, got: d }),
            Some(_) => {}
        }
        let mut body = vec![0u8; d * 4];
        if read_full(&mut r, &mut body)? < body.len() {
            return Err(VecsError::Truncated { offset });
        }
        words.extend(body.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]));
        offset += 4 + 4 * d as u64;
    }
    Ok((dim.unwrap_or(0), words))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

fn write_words<W: Write>(w: W, dim: usize, words: impl ExactSizeIterator<Item = [u8; 4]>) -> Result<(), VecsError> {
    let len = words.len();
    if dim == 0 || !len.is_multiple_of(dim) {
        if len == 0 {
            return Ok(());
        }
        return Err(VecsError::Shape { len, dim });
    }
    let mut w = BufWriter::new(w);
    let head = (dim as u32).to_le_bytes();
    for (i, word) in words.enumerate() {
        if i % dim == 0 {
            w.write_all(&head)?;
        }
        w.write_all(&word)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fvecs<R: Read>(r: R) -> Result<Dataset, VecsError> {
    let (dim, words) = read_words(r)?;
    Ok(Dataset::new(dim, words.into_iter().map(f32::from_le_bytes).collect()))
}

pub fn write_fvecs<W: Write>(w: W, data: &Dataset) -> Result<(), VecsError> {
    write_words(w, data.dim, data.vectors.iter().map(|x| x.to_le_bytes()))
}

/// Integer rows, all of one width.
pub fn read_ivecs<R: Read>(r: R) -> Result<Vec<Vec<i32>>, VecsError> {
    let (dim, words) = read_words(r)?;
    Ok(words.chunks(dim.max(1)).map(|row| row.iter().map(|w| i32::from_le_bytes(*w)).collect()).collect())
}

pub fn write_ivecs<W: Write>(w: W, rows: &[Vec<i32>]) -> Result<(), VecsError> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(VecsError::Shape { len: bad.len(), dim });
    }
    write_words(w, dim, rows.iter().flatten().map(|x| x.to_le_bytes()).collect::<Vec<_>>().into_iter())
}

pub fn load_fvecs(path: &Path) -> Result<Dataset, VecsError> {
    read_fvecs(File::open(path)?)
}

pub fn save_fvecs(path: &Path, data: &Dataset) -> Result<(), VecsError> {
    write_fvecs(File::create(path)?, data)
}

pub fn load_ivecs(path: &Path) -> Result<Vec<Vec<i32>>, VecsError> {
    read_ivecs(File::open(path)?)
}

pub fn save_ivecs(path: &Path, rows: &[Vec<i32>]) -> Result<(), VecsError> {
    write_ivecs(File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dim: u32, vals: &[f32]) -> Vec<u8> {
        let mut b = dim.to_le_bytes().to_vec();
        for v in vals {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn single_record() {
        let d = read_fvecs(&record(2, &[1.0, 2.0])[..]).unwrap();
        assert_eq!((d.len(), d.dim), (1, 2));
        assert_eq!(d.vectors, vec![1.0, 2.0]);
    }

    #[test]
    fn empty_input() {
        let d = read_fvecs(&[][..]).unwrap();
        assert!(d.is_empty());
        assert!(read_ivecs(&[][..]).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_offsets() {
        let mut b = record(2, &[1.0, 2.0]);
        b.extend(record(3, &[1.0, 2.0, 3.0]));
        match read_fvecs(&b[..]) {
            Err(VecsError::InconsistentDim { offset, expected, got }) => assert_eq!((offset, expected, got), (12, 2, 3)),
            other => panic!("{other:?}"),
        }
        let mut b = record(2, &[1.0, 2.0]);
        b.extend(&record(2, &[5.0, 6.0])[..10]);
        assert!(matches!(read_fvecs(&b[..]), Err(VecsError::Truncated { offset: 12 })));
        assert!(matches!(read_fvecs(&[1u8, 0][..]), Err(VecsError::Truncated { offset: 0 })));
    }

    #[test]
    fn ivecs_round_trip() {
        let rows = vec![vec![1, -2, 3], vec![4, 5, 6]];
        let mut buf = Vec::new();
        write_ivecs(&mut buf, &rows).unwrap();
        assert_eq!(buf.len(), 2 * 16);
        assert_eq!(read_ivecs(&buf[..]).unwrap(), rows);
        assert!(write_ivecs(Vec::new(), &[vec![1], vec![1, 2]]).is_err());
    }
}
