//! MNIST IDX ingestion, binarization and seeded subsampling.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rbm::shuffle;
use crate::rng::{stream, STREAM_BINARIZE, STREAM_SHUFFLE};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_THRESHOLD: u8 = 128;
pub const N_CLASSES: usize = 10;

/// Environment variable naming the directory that holds the four MNIST files.
pub const DATA_DIR_ENV: &str = "MAGB_DATA_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Raw images as parsed from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    /// `n * rows * cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

/// Images paired with labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.n != labels.len() {
            return Err(Error::Dimension { expected: images.n, got: labels.len() });
        }
        if let Some(pos) = labels.iter().position(|&l| l as usize >= N_CLASSES) {
            return Err(Error::InvalidParameter(format!("label {} at index {pos} exceeds 9", labels[pos])));
        }
        Ok(ImageSet { rows: images.rows, cols: images.cols, pixels: images.pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// The images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        ImageSet { rows: self.rows, cols: self.cols, pixels, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Inflate `bytes` if they start with the gzip signature.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Parse { offset: 0, msg: format!("gzip: {e}") })?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse { offset, msg: "truncated header".into() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse { offset: 0, msg: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}") });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, dims: &[u32]) -> Result<Vec<u8>> {
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Parse { offset: 4, msg: "dimension overflow".into() })?;
    let end = header.checked_add(len).ok_or_else(|| Error::Parse { offset: 4, msg: "dimension overflow".into() })?;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("truncated payload: declared {len} bytes, found {}", bytes.len() - header),
        });
    }
    Ok(bytes[header..end].to_vec())
}

/// Parse an IDX image file (gzip accepted).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let bytes = maybe_gunzip(bytes)?;
    check_magic(&bytes, IMAGES_MAGIC)?;
    let n = read_u32(&bytes, 4)?;
    let rows = read_u32(&bytes, 8)?;
    let cols = read_u32(&bytes, 12)?;
    let pixels = payload(&bytes, 16, &[n, rows, cols])?;
    Ok(IdxImages { n: n as usize, rows: rows as usize, cols: cols as usize, pixels })
}

/// Parse an IDX label file (gzip accepted).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(bytes)?;
    check_magic(&bytes, LABELS_MAGIC)?;
    let n = read_u32(&bytes, 4)?;
    payload(&bytes, 8, &[n])
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.n as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn load_image_set(images: &Path, labels: &Path) -> Result<ImageSet> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    ImageSet::new(parse_idx_images(&read(images)?)?, parse_idx_labels(&read(labels)?)?)
}

/// `dir/stem`, or `dir/stem.gz` if only the compressed file exists.
pub fn resolve_file(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

/// Directory from `MAGB_DATA_DIR`, if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Train and test sets from the standard file names under `dir`.
pub fn load_mnist(dir: &Path) -> Result<(ImageSet, ImageSet)> {
    let train = load_image_set(&resolve_file(dir, TRAIN_IMAGES), &resolve_file(dir, TRAIN_LABELS))?;
    let test = load_image_set(&resolve_file(dir, TEST_IMAGES), &resolve_file(dir, TEST_LABELS))?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binarize {
    /// `bit = pixel >= threshold`.
    Threshold(u8),
    /// `bit = 1` with probability `pixel / 255`.
    Stochastic,
}

impl Default for Binarize {
    fn default() -> Self {
        Binarize::Threshold(DEFAULT_THRESHOLD)
    }
}

/// One row of 0/1 values per image. The stochastic mode draws from the
/// binarize stream of `seed`.
pub fn binarize(set: &ImageSet, mode: Binarize, seed: u64) -> Array2<f64> {
    let (n, d) = (set.len(), set.dim());
    match mode {
        Binarize::Threshold(t) => Array2::from_shape_fn((n, d), |(i, j)| (set.pixels[i * d + j] >= t) as u8 as f64),
        Binarize::Stochastic => {
            let mut rng = stream(seed, STREAM_BINARIZE, 0);
            let bits: Vec<f64> =
                set.pixels.iter().map(|&p| (rng.random::<f64>() * 255.0 < p as f64) as u8 as f64).collect();
            Array2::from_shape_vec((n, d), bits).expect("pixel count matches shape")
        }
    }
}

/// First `n` indices of a seeded permutation of `0..total`.
pub fn subsample_indices(total: usize, n: usize, seed: u64, index: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::InvalidParameter(format!("requested {n} samples from a set of {total}")));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    shuffle(&mut idx, &mut stream(seed, STREAM_SHUFFLE, index));
    idx.truncate(n);
    Ok(idx)
}

/// Seeded subsets of the train and test partitions.
pub fn subsample(
    train: &ImageSet,
    test: &ImageSet,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(ImageSet, ImageSet)> {
    let tr = subsample_indices(train.len(), n_train, seed, 0)?;
    let te = subsample_indices(test.len(), n_test, seed, 1)?;
    Ok((train.select(&tr), test.select(&te)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::{write::GzEncoder, Compression};
    use std::io::Write;

    fn tiny() -> IdxImages {
        IdxImages { n: 1, rows: 2, cols: 2, pixels: vec![0, 127, 128, 255] }
    }

    #[test]
    fn handcrafted_image_file() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[9, 8, 7, 6]);
        let img = parse_idx_images(&bytes).unwrap();
        assert_eq!((img.n, img.rows, img.cols), (1, 2, 2));
        assert_eq!(img.pixels, vec![9, 8, 7, 6]);
        assert_eq!(write_idx_images(&img), bytes);
    }

    #[test]
    fn bad_magic_names_offset() {
        let mut bytes = write_idx_images(&tiny());
        bytes[3] = 0x02;
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
        assert!(err.to_string().contains("bad magic"));
        assert!(parse_idx_labels(&write_idx_images(&tiny())).is_err());
    }

    #[test]
    fn truncation_detected() {
        let bytes = write_idx_images(&tiny());
        assert!(matches!(parse_idx_images(&bytes[..18]), Err(Error::Parse { offset: 18, .. })));
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(Error::Parse { offset: 8, .. })));
        let labels = write_idx_labels(&[1, 2, 3]);
        assert!(parse_idx_labels(&labels[..9]).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        let raw = write_idx_labels(&[3, 1, 4, 1, 5]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&gz).unwrap(), vec![3, 1, 4, 1, 5]);
    }

    #[test]
    fn labels_must_be_digits() {
        assert!(ImageSet::new(tiny(), vec![10]).is_err());
        assert!(ImageSet::new(tiny(), vec![1, 2]).is_err());
        assert!(ImageSet::new(tiny(), vec![9]).is_ok());
    }

    #[test]
    fn threshold_boundary() {
        let set = ImageSet::new(tiny(), vec![0]).unwrap();
        assert_eq!(binarize(&set, Binarize::Threshold(128), 0).row(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(binarize(&set, Binarize::Threshold(129), 0).row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn stochastic_extremes() {
        let img = IdxImages {
            n: 1,
            rows: 10,
            cols: 10,
            pixels: (0..100).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect(),
        };
        let set = ImageSet::new(img, vec![0]).unwrap();
        for seed in 0..20 {
            let b = binarize(&set, Binarize::Stochastic, seed);
            for (j, v) in b.row(0).iter().enumerate() {
                assert_eq!(*v, (j % 2) as f64);
            }
        }
    }

    #[test]
    fn subsample_is_deterministic_and_distinct() {
        let a = subsample_indices(1000, 100, 7, 0).unwrap();
        assert_eq!(a, subsample_indices(1000, 100, 7, 0).unwrap());
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 100);
        let mut full = subsample_indices(50, 50, 3, 0).unwrap();
        full.sort();
        assert_eq!(full, (0..50).collect::<Vec<_>>());
        assert!(subsample_indices(10, 11, 0, 0).is_err());
    }
}
