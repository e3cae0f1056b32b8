//! Labeled image sets: the CIFAR-10 binary layout and a small self-describing
//! container (`AXDS`) for arbitrary image sizes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_PLANE;
const AXDS_MAGIC: &[u8; 4] = b"AXDS";
const AXDS_VERSION: u32 = 1;
const AXDS_HEADER: usize = 4 + 5 * 4;

/// Images stored NHWC, one byte per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, channels: usize, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 {
            return Err(Error::Dataset("image dimensions must be positive".into()));
        }
        if images.len() != per * labels.len() {
            return Err(Error::Dataset(format!(
                "{} labels need {} pixel bytes, got {}",
                labels.len(),
                per * labels.len(),
                images.len()
            )));
        }
        Ok(Self { height, width, channels, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[index * n..(index + 1) * n]
    }

    /// The first `n` records (all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }

    /// SHA-256 over dimensions, labels and pixels.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in [self.height, self.width, self.channels, self.len()] {
            h.update((d as u64).to_le_bytes());
        }
        h.update(&self.labels);
        h.update(&self.images);
        hex::encode(h.finalize())
    }
}

/// Decodes CIFAR-10 binary records: a label byte, then 32x32 planes of R, G and B.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Dataset(format!(
            "CIFAR-10 file length {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(count * 3 * CIFAR_PLANE);
    let mut labels = Vec::with_capacity(count);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(Error::Dataset(format!(
                "record {i} (byte offset {}): label {label} is not in 0..=9",
                i * CIFAR_RECORD
            )));
        }
        labels.push(label);
        let planes = &record[1..];
        for pixel in 0..CIFAR_PLANE {
            for channel in 0..3 {
                images.push(planes[channel * CIFAR_PLANE + pixel]);
            }
        }
    }
    Dataset::new(CIFAR_SIDE, CIFAR_SIDE, 3, images, labels)
}

pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes).map_err(|e| match e {
        Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_cifar10(dataset: &Dataset, path: &Path) -> Result<()> {
    if (dataset.height, dataset.width, dataset.channels) != (CIFAR_SIDE, CIFAR_SIDE, 3) {
        return Err(Error::Dataset(format!(
            "CIFAR-10 layout needs 32x32x3 images, dataset has {}x{}x{}",
            dataset.height, dataset.width, dataset.channels
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for i in 0..dataset.len() {
        if dataset.labels[i] > 9 {
            return Err(Error::Dataset(format!("label {} does not fit CIFAR-10", dataset.labels[i])));
        }
        out.push(dataset.labels[i]);
        let image = dataset.image(i);
        for channel in 0..3 {
            out.extend(image.iter().skip(channel).step_by(3));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn encode_axds(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(AXDS_HEADER + dataset.len() * (1 + dataset.image_len()));
    out.extend_from_slice(AXDS_MAGIC);
    for v in [AXDS_VERSION, dataset.height as u32, dataset.width as u32, dataset.channels as u32, dataset.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..dataset.len() {
        out.push(dataset.labels[i]);
        out.extend_from_slice(dataset.image(i));
    }
    out
}

fn parse_axds(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < AXDS_HEADER {
        return Err(Error::Dataset(format!("truncated header ({} bytes)", bytes.len())));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if field(0) != AXDS_VERSION as usize {
        return Err(Error::Dataset(format!("unsupported version {}", field(0))));
    }
    let (h, w, c, count) = (field(1), field(2), field(3), field(4));
    let per = h * w * c;
    let expected = AXDS_HEADER + count * (per + 1);
    if per == 0 || bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{count} records of {h}x{w}x{c} need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(count * per);
    let mut labels = Vec::with_capacity(count);
    for record in bytes[AXDS_HEADER..].chunks_exact(per + 1) {
        labels.push(record[0]);
        images.extend_from_slice(&record[1..]);
    }
    Dataset::new(h, w, c, images, labels)
}

/// Saves in the `AXDS` container.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_axds(dataset)).map_err(|e| Error::io(path, e))
}

/// Loads either format: `AXDS` by its magic, anything else as CIFAR-10 binary.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if bytes.starts_with(AXDS_MAGIC) {
        parse_axds(&bytes)
    } else {
        parse_cifar10(&bytes)
    };
    parsed.map_err(|e| match e {
        Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, seed: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..3 * CIFAR_PLANE).map(|i| (i as u8).wrapping_mul(7).wrapping_add(seed)));
        r
    }

    #[test]
    fn cifar_plane_major_to_hwc() {
        let mut bytes = record(3, 0);
        bytes.extend(record(9, 5));
        let ds = parse_cifar10(&bytes).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        // byte 1 + 1024 of a record is the green value of pixel (0, 0)
        assert_eq!(ds.image(0)[1], bytes[1 + 1024]);
        assert_eq!(ds.image(0)[0], bytes[1]);
        // pixel (row 1, col 2), blue
        let pixel = 32 + 2;
        assert_eq!(ds.image(1)[pixel * 3 + 2], bytes[CIFAR_RECORD + 1 + 2048 + pixel]);
        assert!(parse_cifar10(&[]).unwrap().is_empty());
    }

    #[test]
    fn cifar_errors() {
        assert!(parse_cifar10(&[0; 3072]).is_err());
        let err = parse_cifar10(&record(10, 0)).unwrap_err().to_string();
        assert!(err.contains("label 10"), "{err}");
    }

    #[test]
    fn both_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = record(1, 2);
        bytes.extend(record(0, 9));
        let ds = parse_cifar10(&bytes).unwrap();
        let cifar = dir.path().join("c.bin");
        save_cifar10(&ds, &cifar).unwrap();
        assert_eq!(fs::read(&cifar).unwrap(), bytes);
        assert_eq!(load_dataset(&cifar).unwrap(), ds);

        let small = Dataset::new(2, 3, 1, (0..12).collect(), vec![4, 7]).unwrap();
        let axds = dir.path().join("d.axds");
        save_dataset(&small, &axds).unwrap();
        assert_eq!(load_dataset(&axds).unwrap(), small);
        let mut raw = fs::read(&axds).unwrap();
        raw.pop();
        fs::write(&axds, raw).unwrap();
        assert!(load_dataset(&axds).is_err());
    }
}
