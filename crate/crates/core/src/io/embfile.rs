//! Binary embedding file.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `RKDE` |
//! | 4 | 4 | format version (`u32`, currently 1) |
//! | 8 | 8 | row count (`u64`) |
//! | 16 | 4 | dimension (`u32`) |
//! | 20 | 1 | labels present (`u8`, 0 or 1) |
//! | 21 | `4 * count * dim` | rows, `f32`, row-major |
//! | ... | `4 * count` | labels, `u32`, only when present |

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RKDE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub count: u64,
    pub dim: u32,
    /// Row-major `count * dim` values.
    pub values: Vec<f32>,
    pub labels: Option<Vec<u32>>,
}

impl EmbeddingFile {
    pub fn from_array(values: &Array2<f64>, labels: Option<&[u32]>) -> Result<Self> {
        if let Some(l) = labels {
            if l.len() != values.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    values.nrows()
                )));
            }
        }
        Ok(Self {
            count: values.nrows() as u64,
            dim: u32::try_from(values.ncols())
                .map_err(|_| Error::Format("dimension exceeds u32".into()))?,
            values: values.iter().map(|&v| v as f32).collect(),
            labels: labels.map(<[u32]>::to_vec),
        })
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec(
            (self.count as usize, self.dim as usize),
            self.values.iter().map(|&v| v as f64).collect(),
        )
        .expect("length checked on construction")
    }

    /// Exact byte length implied by a header.
    pub fn expected_len(count: u64, dim: u32, labels: bool) -> u64 {
        let cells = count.saturating_mul(dim as u64);
        let mut len = (HEADER_LEN as u64).saturating_add(cells.saturating_mul(4));
        if labels {
            len = len.saturating_add(count.saturating_mul(4));
        }
        len
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let has_labels = self.labels.is_some();
        let mut out =
            Vec::with_capacity(Self::expected_len(self.count, self.dim, has_labels) as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.push(u8::from(has_labels));
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let dim = u32_at(16);
        let has_labels = match bytes[20] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("label flag must be 0 or 1, got {b}"))),
        };
        let expected = Self::expected_len(count, dim, has_labels);
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                actual - expected
            )));
        }
        let cells = (count * dim as u64) as usize;
        let body = &bytes[HEADER_LEN..];
        let values = body[..cells * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let labels = has_labels.then(|| {
            body[cells * 4..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        });
        Ok(Self {
            count,
            dim,
            values,
            labels,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = EmbeddingFile {
            count: 2,
            dim: 3,
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            labels: Some(vec![7, 8]),
        };
        let b = f.to_bytes();
        assert_eq!(&b[..4], b"RKDE");
        assert_eq!(b.len() as u64, EmbeddingFile::expected_len(2, 3, true));
        assert_eq!(b.len(), 21 + 24 + 8);
        assert_eq!(b[20], 1);
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(&b[b.len() - 4..], &8u32.to_le_bytes());
    }

    #[test]
    fn truncation_and_corruption() {
        let f = EmbeddingFile {
            count: 3,
            dim: 2,
            values: vec![0.5; 6],
            labels: None,
        };
        let b = f.to_bytes();
        match EmbeddingFile::from_bytes(&b[..b.len() - 1]) {
            Err(Error::Truncated { expected, actual }) => assert_eq!((expected, actual), (45, 44)),
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(matches!(
            EmbeddingFile::from_bytes(&b[..10]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingFile::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(
            EmbeddingFile::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut long = b;
        long.push(0);
        assert!(matches!(
            EmbeddingFile::from_bytes(&long),
            Err(Error::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn byte_round_trip(count in 0usize..6, dim in 1u32..5, with_labels: bool,
                           seed in proptest::collection::vec(any::<u32>(), 30)) {
            let n = count * dim as usize;
            let values: Vec<f32> = (0..n).map(|i| f32::from_bits(seed[i % 30].wrapping_mul(i as u32 + 1))).collect();
            let f = EmbeddingFile {
                count: count as u64,
                dim,
                values,
                labels: with_labels.then(|| (0..count as u32).collect()),
            };
            let bytes = f.to_bytes();
            let back = EmbeddingFile::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
