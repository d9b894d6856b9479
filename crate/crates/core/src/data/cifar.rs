//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{normalize_byte, Dataset, CIFAR_MEAN, CIFAR_STD};
use crate::error::{Error, Result};

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const CLASSES: usize = 10;

/// Environment variable naming the dataset root.
pub const DATA_ENV: &str = "MODCNN_DATA";

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILES: [&str; 1] = ["test_batch.bin"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn files(self) -> &'static [&'static str] {
        match self {
            Split::Train => &TRAIN_FILES,
            Split::Test => &TEST_FILES,
        }
    }
}

/// `explicit`, else `$MODCNN_DATA`; a `cifar-10-batches-bin` child is
/// preferred when present.
pub fn resolve_root(explicit: Option<&Path>) -> Option<PathBuf> {
    let root = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))?;
    let nested = root.join("cifar-10-batches-bin");
    Some(if nested.is_dir() { nested } else { root })
}

/// Decoded records of one batch file: labels and raw pixel bytes.
pub fn decode(bytes: &[u8], file: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let whole = bytes.len() / RECORD_BYTES;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Data {
            file: file.to_path_buf(),
            offset: (whole * RECORD_BYTES) as u64,
            msg: format!(
                "truncated record: {} trailing bytes, expected {RECORD_BYTES}",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    let mut labels = Vec::with_capacity(whole);
    let mut pixels = Vec::with_capacity(whole * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Data {
                file: file.to_path_buf(),
                offset: (i * RECORD_BYTES) as u64,
                msg: format!("label byte {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

/// Raw bytes to a normalized dataset.
pub fn from_bytes(name: &str, labels: Vec<usize>, pixels: &[u8]) -> Result<Dataset> {
    let images = pixels
        .chunks_exact(1024)
        .enumerate()
        .flat_map(|(plane, px)| px.iter().map(move |&b| normalize_byte(b, plane % 3)))
        .collect();
    let mut d = Dataset::new(name, [3, 32, 32], CLASSES, images, labels)?;
    d.pad_value = (0..3).map(|c| -(CIFAR_MEAN[c] / CIFAR_STD[c])).collect();
    Ok(d)
}

pub fn load_files(dir: &Path, files: &[&str], name: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = fs::read(&path).map_err(|e| Error::Data {
            file: path.clone(),
            offset: 0,
            msg: e.to_string(),
        })?;
        let (l, p) = decode(&bytes, &path)?;
        labels.extend(l);
        pixels.extend(p);
    }
    from_bytes(name, labels, &pixels)
}

pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let name = match split {
        Split::Train => "cifar10-train",
        Split::Test => "cifar10-test",
    };
    load_files(dir, split.files(), name)
}

/// Writes records in the batch-file format.
pub fn write_records(path: &Path, labels: &[usize], pixels: &[u8]) -> Result<()> {
    if pixels.len() != labels.len() * IMAGE_BYTES {
        return Err(Error::Dataset(format!(
            "{} pixel bytes for {} records",
            pixels.len(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(IMAGE_BYTES)) {
        let l = u8::try_from(*l)
            .ok()
            .filter(|&b| (b as usize) < CLASSES)
            .ok_or_else(|| Error::Dataset(format!("label {l} out of range")))?;
        out.push(l);
        out.extend_from_slice(px);
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}
