//! MNIST-style IDX ingestion, normalization, seeded subsetting, and batch
//! iteration.
//!
//! Parsing is strict big-endian with exact magic numbers; files ending in
//! `.gz` are decompressed transparently. Pixels are scaled by 1/255 into
//! `[0, 1]` and kept in file order.

use crate::nn::Batch;
use crate::rng::Prng;
use crate::tensor::Tensor;
use flate2::read::GzDecoder;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found}, expected {expected}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: expected {expected} dimensions, header declares {found}")]
    DimCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("subset of {requested} requested from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
}

/// Parsed IDX header: magic number plus declared dimension sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn item_count(&self) -> usize {
        self.dims.first().map(|&d| d as usize).unwrap_or(0)
    }
}

/// Normalized images with labels and a provenance note recording where the
/// data came from and how it was subsetted.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn open_payload(path: &Path) -> Result<Vec<u8>, DataError> {
    let ctx = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(ctx)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(ctx)?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes).map_err(ctx)?;
    }
    Ok(bytes)
}

fn parse_header(
    path: &Path,
    bytes: &[u8],
    expected_magic: u32,
    expected_dims: usize,
) -> Result<(IdxHeader, usize), DataError> {
    let need = 4 + 4 * expected_dims;
    if bytes.len() < need {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            expected: need,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected: expected_magic,
            found: magic,
        });
    }
    // The low byte of the magic declares the dimension count.
    let declared = (magic & 0xff) as usize;
    if declared != expected_dims {
        return Err(DataError::DimCount {
            path: path.display().to_string(),
            expected: expected_dims,
            found: declared,
        });
    }
    let mut dims = Vec::with_capacity(expected_dims);
    for i in 0..expected_dims {
        let off = 4 + 4 * i;
        dims.push(u32::from_be_bytes(
            bytes[off..off + 4].try_into().expect("4 bytes"),
        ));
    }
    Ok((IdxHeader { magic, dims }, need))
}

/// Reads just the header of an IDX file (images expect magic 2051 and three
/// dimensions, labels 2049 and one).
pub fn read_idx_header(path: &Path, expected_magic: u32) -> Result<IdxHeader, DataError> {
    let bytes = open_payload(path)?;
    let expected_dims = if expected_magic == IMAGE_MAGIC { 3 } else { 1 };
    let (header, _) = parse_header(path, &bytes, expected_magic, expected_dims)?;
    Ok(header)
}

/// Loads an image/label IDX pair into a normalized dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let img_bytes = open_payload(images_path)?;
    let (img_header, img_off) = parse_header(images_path, &img_bytes, IMAGE_MAGIC, 3)?;
    let n = img_header.dims[0] as usize;
    let rows = img_header.dims[1] as usize;
    let cols = img_header.dims[2] as usize;
    let pixel_count = n * rows * cols;
    if img_bytes.len() - img_off < pixel_count {
        return Err(DataError::Truncated {
            path: images_path.display().to_string(),
            expected: img_off + pixel_count,
            found: img_bytes.len(),
        });
    }

    let lbl_bytes = open_payload(labels_path)?;
    let (lbl_header, lbl_off) = parse_header(labels_path, &lbl_bytes, LABEL_MAGIC, 1)?;
    let n_labels = lbl_header.dims[0] as usize;
    if lbl_bytes.len() - lbl_off < n_labels {
        return Err(DataError::Truncated {
            path: labels_path.display().to_string(),
            expected: lbl_off + n_labels,
            found: lbl_bytes.len(),
        });
    }
    if n != n_labels {
        return Err(DataError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let data: Vec<f64> = img_bytes[img_off..img_off + pixel_count]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels = lbl_bytes[lbl_off..lbl_off + n_labels].to_vec();
    Ok(LabeledDataset {
        images: Tensor::new(vec![n, 1, rows, cols], data).expect("pixel count checked"),
        labels,
        provenance: format!("{}+{}", images_path.display(), labels_path.display()),
    })
}

/// Writes a dataset back to a big-endian IDX pair. Pixels are quantized with
/// `round(p * 255)`, so datasets loaded from IDX round-trip bit-exactly.
pub fn save_idx(
    ds: &LabeledDataset,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let shape = ds.images.shape();
    let (n, rows, cols) = (shape[0], shape[2], shape[3]);
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(
        ds.images
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    std::fs::write(images_path, img).map_err(|source| DataError::Io {
        path: images_path.display().to_string(),
        source,
    })?;

    let mut lbl = Vec::with_capacity(8 + ds.labels.len());
    lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend_from_slice(&ds.labels);
    std::fs::write(labels_path, lbl).map_err(|source| DataError::Io {
        path: labels_path.display().to_string(),
        source,
    })
}

/// Samples `n` items without replacement via a seeded Fisher-Yates shuffle.
pub fn subset(ds: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    if n > ds.len() {
        return Err(DataError::SubsetTooLarge {
            requested: n,
            available: ds.len(),
        });
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = Prng::new(seed);
    rng.shuffle(&mut indices);
    indices.truncate(n);
    let mut out = gather(ds, &indices);
    out.provenance = format!("{};subset(n={n},seed={seed})", ds.provenance);
    Ok(out)
}

/// Copies the rows at `indices` (in order) into a new dataset.
pub fn gather(ds: &LabeledDataset, indices: &[usize]) -> LabeledDataset {
    let shape = ds.images.shape();
    let sample: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * sample);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(&ds.images.data()[i * sample..(i + 1) * sample]);
        labels.push(ds.labels[i]);
    }
    let mut new_shape = shape.to_vec();
    new_shape[0] = indices.len();
    LabeledDataset {
        images: Tensor::new(new_shape, data).expect("gather preserves sample size"),
        labels,
        provenance: ds.provenance.clone(),
    }
}

/// Splits the dataset into `ceil(n / batch_size)` batches in order; the last
/// batch may be short. `batch_size` must be at least 1.
pub fn batches(ds: &LabeledDataset, batch_size: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let shape = ds.images.shape();
    let sample: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(ds.len().div_ceil(batch_size));
    let mut start = 0;
    while start < ds.len() {
        let end = (start + batch_size).min(ds.len());
        let mut batch_shape = shape.to_vec();
        batch_shape[0] = end - start;
        let images = Tensor::new(
            batch_shape,
            ds.images.data()[start * sample..end * sample].to_vec(),
        )
        .expect("batch slice length");
        out.push(Batch::new(images, ds.labels[start..end].to_vec()).expect("dataset batch valid"));
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    /// Builds an in-memory IDX pair and returns the temp paths.
    fn write_fixture(dir: &Path, pixels: &[u8], labels: &[u8], rows: u32, cols: u32) -> (PathBuf, PathBuf) {
        let n = labels.len() as u32;
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&n.to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        img.extend_from_slice(pixels);
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&n.to_be_bytes());
        lbl.extend_from_slice(labels);
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn endpoint_pixels_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), &[0, 255, 128, 0, 255, 0, 0, 0], &[3, 7], 2, 2);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images.data()[0], 0.0);
        assert_eq!(ds.images.data()[1], 1.0);
        assert_eq!(ds.labels, vec![3, 7]);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2052u32.to_be_bytes());
        bytes.extend_from_slice(&[0; 12]);
        std::fs::write(&path, bytes).unwrap();
        let lbl = dir.path().join("labels.idx");
        std::fs::write(&lbl, [&LABEL_MAGIC.to_be_bytes()[..], &0u32.to_be_bytes()].concat()).unwrap();
        match load_idx(&path, &lbl) {
            Err(DataError::BadMagic { found: 2052, .. }) => {}
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), &[1, 2, 3], &[0], 2, 2);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_fixture(dir.path(), &[0; 8], &[1, 2], 2, 2);
        let lp2 = dir.path().join("labels3.idx");
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&3u32.to_be_bytes());
        lbl.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&lp2, lbl).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp2),
            Err(DataError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn gzip_files_load_transparently() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), &[0, 255, 10, 20], &[1], 2, 2);
        for (src, gz_name) in [(&ip, "images.idx.gz"), (&lp, "labels.idx.gz")] {
            let raw = std::fs::read(src).unwrap();
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&raw).unwrap();
            std::fs::write(dir.path().join(gz_name), enc.finish().unwrap()).unwrap();
        }
        let ds = load_idx(
            &dir.path().join("images.idx.gz"),
            &dir.path().join("labels.idx.gz"),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.images.data()[1], 1.0);
    }

    #[test]
    fn save_then_load_round_trips_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..=255).cycle().take(4 * 28 * 28).map(|v| v as u8).collect();
        let labels = vec![0, 9, 4, 7];
        let (ip, lp) = write_fixture(dir.path(), &pixels, &labels, 28, 28);
        let ds = load_idx(&ip, &lp).unwrap();
        let ip2 = dir.path().join("written.idx");
        let lp2 = dir.path().join("written-labels.idx");
        save_idx(&ds, &ip2, &lp2).unwrap();
        assert_eq!(std::fs::read(&ip).unwrap(), std::fs::read(&ip2).unwrap());
        assert_eq!(std::fs::read(&lp).unwrap(), std::fs::read(&lp2).unwrap());
    }

    fn tiny_dataset(n: usize) -> LabeledDataset {
        let data: Vec<f64> = (0..n * 4).map(|i| (i % 256) as f64 / 255.0).collect();
        LabeledDataset {
            images: Tensor::new(vec![n, 1, 2, 2], data).unwrap(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            provenance: "test".into(),
        }
    }

    #[test]
    fn full_subset_is_a_permutation() {
        let ds = tiny_dataset(20);
        let sub = subset(&ds, 20, 5).unwrap();
        let mut labels = sub.labels.clone();
        labels.sort_unstable();
        let mut expected = ds.labels.clone();
        expected.sort_unstable();
        assert_eq!(labels, expected);
    }

    #[test]
    fn subset_is_deterministic_per_seed() {
        let ds = tiny_dataset(50);
        let a = subset(&ds, 10, 99).unwrap();
        let b = subset(&ds, 10, 99).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images.data(), b.images.data());
    }

    #[test]
    fn adjacent_seeds_pick_different_subsets() {
        let n = 1000;
        let ds = tiny_dataset(n);
        let a = subset(&ds, 200, 7).unwrap();
        let b = subset(&ds, 200, 8).unwrap();
        // Compare sorted index sets via the image bytes they select.
        let key = |d: &LabeledDataset| {
            let mut rows: Vec<Vec<u64>> = d
                .images
                .data()
                .chunks(4)
                .map(|c| c.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        assert_ne!(key(&a), key(&b));
    }

    #[test]
    fn oversized_subset_is_rejected() {
        let ds = tiny_dataset(5);
        assert!(matches!(
            subset(&ds, 6, 0),
            Err(DataError::SubsetTooLarge { requested: 6, available: 5 })
        ));
    }

    #[test]
    fn batch_sizes_follow_ceiling_split() {
        let ds = tiny_dataset(10);
        let bs = batches(&ds, 4);
        let sizes: Vec<usize> = bs.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let one = batches(&ds, 10);
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn concatenated_batches_reproduce_dataset() {
        let ds = tiny_dataset(10);
        let bs = batches(&ds, 3);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for b in &bs {
            data.extend_from_slice(b.images().data());
            labels.extend_from_slice(b.labels());
        }
        assert_eq!(data, ds.images.data());
        assert_eq!(labels, ds.labels);
    }
}
