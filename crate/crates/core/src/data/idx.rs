//! Loader for the big-endian IDX binary image/label format.
//!
//! Image files carry magic `0x00000803` (unsigned bytes, rank 3: count,
//! rows, cols); label files carry `0x00000801` (rank 1). Pixels are scaled
//! by 1/255 into `[0, 1]`. Malformed input is reported with the byte offset
//! of the first bad value.

use crate::data::{Dataset, DomainRole, FeatureShape};
use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt};
use std::io::Read;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counting<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let at = self.offset;
        let v = self.inner.read_u32::<BigEndian>().map_err(|e| Error::Format {
            offset: at,
            message: format!("truncated while reading {what}: {e}"),
        })?;
        self.offset += 4;
        Ok(v)
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: at,
            message: format!("truncated while reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

fn open(path: &Path) -> Result<Counting<std::io::BufReader<std::fs::File>>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    Ok(Counting::new(std::io::BufReader::new(std::fs::File::open(path)?)))
}

/// Loads a rank-3 IDX image file: per-image flat pixel vectors in `[0, 1]`
/// plus the grid height and width.
pub fn load_idx_images(path: &Path) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let mut r = open(path)?;
    let magic = r.read_u32("magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = r.read_u32("image count")? as usize;
    let rows = r.read_u32("row count")? as usize;
    let cols = r.read_u32("column count")? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 4,
            message: format!("empty dimensions {count}x{rows}x{cols}"),
        });
    }
    let mut images = Vec::with_capacity(count);
    let mut buf = vec![0u8; rows * cols];
    for i in 0..count {
        r.read_exact(&mut buf, &format!("image {i}"))?;
        images.push(buf.iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok((images, rows, cols))
}

/// Loads a rank-1 IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = open(path)?;
    let magic = r.read_u32("magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = r.read_u32("label count")? as usize;
    let mut buf = vec![0u8; count];
    r.read_exact(&mut buf, "labels")?;
    Ok(buf.into_iter().map(|b| b as usize).collect())
}

/// Loads a paired IDX image/label file into a [`Dataset`] with ids
/// `id_base..`. `class_count` defaults to `max label + 1`.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    role: DomainRole,
    id_base: u64,
    class_count: Option<usize>,
) -> Result<Dataset> {
    let (images, h, w) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let inferred = labels.iter().copied().max().unwrap_or(0) + 1;
    let class_count = class_count.unwrap_or(inferred).max(inferred).max(2);
    let n = images.len();
    let ds = Dataset {
        ids: (id_base..id_base + n as u64).collect(),
        features: images,
        labels: Some(labels),
        shape: FeatureShape::Grid { h, w, ch: 1 },
        class_count,
        role,
    };
    ds.validate()?;
    Ok(ds)
}
