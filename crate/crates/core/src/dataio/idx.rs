use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images (rows, normalised to [0, 1]) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Split {
        let images = self.images.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Split { images, labels }
    }

    pub fn head(&self, n: usize) -> Split {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    /// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
    pub fn load_dir(name: &str, dir: &Path) -> Result<Self> {
        let find = |stem: &str| -> Result<PathBuf> {
            let plain = dir.join(stem);
            let gz = dir.join(format!("{stem}.gz"));
            if gz.exists() {
                Ok(gz)
            } else if plain.exists() {
                Ok(plain)
            } else {
                Err(Error::Config(format!(
                    "dataset file {stem}[.gz] not found in {}",
                    dir.display()
                )))
            }
        };
        let train = load_idx(
            &find("train-images-idx3-ubyte")?,
            &find("train-labels-idx1-ubyte")?,
        )?;
        let test = load_idx(
            &find("t10k-images-idx3-ubyte")?,
            &find("t10k-labels-idx1-ubyte")?,
        )?;
        Ok(Self {
            name: name.to_string(),
            train,
            test,
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Parse {
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

/// Parse an uncompressed IDX image file into (count, rows·cols, pixels).
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * dim {
        return Err(Error::Parse {
            offset: (16 + body.len()) as u64,
            message: format!("truncated image data: expected {} bytes", n * dim),
        });
    }
    Ok((n, dim, &body[..n * dim]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Parse {
            offset: (8 + body.len()) as u64,
            message: format!("truncated label data: expected {n} bytes"),
        });
    }
    Ok(&body[..n])
}

/// Load an image/label IDX pair (gzip detected from the magic bytes);
/// pixels are divided by 255.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Split> {
    let img_bytes = read_file(images)?;
    let lab_bytes = read_file(labels)?;
    split_from_bytes(&img_bytes, &lab_bytes)
}

pub fn split_from_bytes(img_bytes: &[u8], lab_bytes: &[u8]) -> Result<Split> {
    let (n, dim, pixels) = parse_images(img_bytes)?;
    let labels = parse_labels(lab_bytes)?;
    if labels.len() != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{n} images but {} labels", labels.len()),
        });
    }
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            offset: (8 + pos) as u64,
            message: format!("label {} out of range", labels[pos]),
        });
    }
    let images = Array2::from_shape_fn((n, dim), |(i, j)| pixels[i * dim + j] as f64 / 255.0);
    Ok(Split {
        images,
        labels: labels.to_vec(),
    })
}

/// Serialise raw pixel bytes and labels as an IDX pair.
pub fn encode_idx(pixels: &[u8], n: usize, rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}
