//! MNIST (IDX) and CIFAR-10 (binary) loaders, the train/validation split and
//! deterministic mini-batching.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3072;
pub const CIFAR_RECORDS_PER_BATCH: usize = 10_000;
pub const DEFAULT_VAL_SIZE: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images in `[0,1]` as `N×H×W×C`, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, split: Split) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if images.shape().len() != 4 || n != labels.len() {
            return Err(Error::CountMismatch {
                what: format!("{split:?} dataset"),
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(pos) = labels.iter().position(|&l| l >= 10) {
            return Err(Error::BadLabel {
                path: PathBuf::new(),
                record: pos,
                label: labels[pos],
            });
        }
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn pixels(&self) -> &[f32] {
        self.images.as_slice()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Values per image (`H*W*C`).
    pub fn image_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Copy the given examples into a batch tensor of shape `(n, H, W, C)`.
    pub fn gather<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<u8>) {
        let per = self.image_len();
        let px = self.pixels();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(px[i * per..(i + 1) * per].iter().map(|&v| T::of(v as f64)));
        }
        let [h, w, c] = self.image_shape();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let images = Tensor::from_vec(&[indices.len(), h, w, c], data).expect("gather shape");
        (images, labels)
    }

    fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        let (images, labels) = self.gather::<f32>(indices);
        Dataset { images, labels, split }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub val_size: usize,
    /// Seed of the one shuffle that carves validation out of training data.
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            val_size: DEFAULT_VAL_SIZE,
            seed: 0,
        }
    }
}

/// `(train, val)` index sets: a seeded shuffle of `0..n`, val = last `val_size`.
pub fn split_indices(n: usize, val_size: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if val_size > n {
        return Err(Error::InvalidArgument(format!(
            "validation size {val_size} exceeds {n} training examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new("split", seed).shuffle(&mut order);
    let val = order.split_off(n - val_size);
    Ok((order, val))
}

fn split_train(full: &Dataset, test: Dataset, cfg: &SplitConfig) -> Result<Splits> {
    let (train_idx, val_idx) = split_indices(full.len(), cfg.val_size, cfg.seed)?;
    Ok(Splits {
        train: full.subset(&train_idx, Split::Train),
        val: full.subset(&val_idx, Split::Val),
        test,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    if path.exists() {
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        return Ok(bytes);
    }
    let gz = gz_path(path);
    let file = fs::File::open(&gz).map_err(|_| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found (also tried .gz)"),
        )
    })?;
    flate2::read::GzDecoder::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&gz, e))?;
    Ok(bytes)
}

fn gz_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".gz");
    path.with_file_name(name)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::FileSize {
            path: path.to_path_buf(),
            expected: (offset + 4) as u64,
            actual: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            expected,
            found,
        });
    }
    Ok(())
}

/// IDX3 image file → `(count, rows, cols, pixel bytes)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::FileSize {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::FileSize {
            path: path.to_path_buf(),
            expected: (8 + n) as u64,
            actual: bytes.len() as u64,
        });
    }
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l >= 10) {
        return Err(Error::BadLabel {
            path: path.to_path_buf(),
            record: pos,
            label: labels[pos],
        });
    }
    Ok(labels)
}

fn scale(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

fn mnist_file(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    let dotted_name = name.replacen("-idx", ".idx", 1);
    let dotted = dir.join(&dotted_name);
    let exists = |p: &Path| p.exists() || gz_path(p).exists();
    if !exists(&plain) && exists(&dotted) {
        dotted
    } else {
        plain
    }
}

fn load_idx_pair(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset> {
    let ipath = mnist_file(dir, images);
    let lpath = mnist_file(dir, labels);
    let (n, rows, cols, px) = parse_idx_images(&read_file(&ipath)?, &ipath)?;
    let labels = parse_idx_labels(&read_file(&lpath)?, &lpath)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            what: format!("{} / {}", ipath.display(), lpath.display()),
            images: n,
            labels: labels.len(),
        });
    }
    let images = Tensor::from_vec(&[n, rows, cols, 1], scale(&px))?;
    Dataset::new(images, labels, split)
}

/// Load the four standard MNIST IDX files (optionally gzipped) from `dir`.
pub fn load_mnist(dir: &Path, split: &SplitConfig) -> Result<Splits> {
    let full = load_idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?;
    let test = load_idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?;
    split_train(&full, test, split)
}

fn parse_cifar_batch(bytes: &[u8], path: &Path, records: usize) -> Result<(Vec<f32>, Vec<u8>)> {
    let expected = records * CIFAR_RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::FileSize {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut images = Vec::with_capacity(records * 3072);
    let mut labels = Vec::with_capacity(records);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::BadLabel {
                path: path.to_path_buf(),
                record: r,
                label: rec[0],
            });
        }
        labels.push(rec[0]);
        let planes = &rec[1..];
        // channel-major planes -> HWC
        for p in 0..1024 {
            for c in 0..3 {
                images.push(planes[c * 1024 + p] as f32 / 255.0);
            }
        }
    }
    Ok((images, labels))
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_cifar_files(dir: &Path, names: &[String], records: usize, split: Split) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path = dir.join(name);
        let (im, lb) = parse_cifar_batch(&read_file(&path)?, &path, records)?;
        images.extend(im);
        labels.extend(lb);
    }
    let n = labels.len();
    Dataset::new(Tensor::from_vec(&[n, 32, 32, 3], images)?, labels, split)
}

/// CIFAR-10 binary batches (`data_batch_1..5.bin`, `test_batch.bin`).
pub fn load_cifar10(dir: &Path, split: &SplitConfig) -> Result<Splits> {
    load_cifar10_with_records(dir, split, CIFAR_RECORDS_PER_BATCH)
}

/// As [`load_cifar10`] but with a non-standard number of records per batch
/// file (small fixtures).
pub fn load_cifar10_with_records(dir: &Path, split: &SplitConfig, records: usize) -> Result<Splits> {
    let dir = cifar_dir(dir);
    let train_names: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    let full = load_cifar_files(&dir, &train_names, records, Split::Train)?;
    let test = load_cifar_files(&dir, &["test_batch.bin".to_string()], records, Split::Test)?;
    split_train(&full, test, split)
}

/// Decode a single CIFAR record (label + 3072 channel-major bytes) to HWC.
pub fn decode_cifar_record(record: &[u8]) -> Result<(u8, Vec<f32>)> {
    let (px, labels) = parse_cifar_batch(record, Path::new("<record>"), 1)?;
    Ok((labels[0], px))
}

pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// What to do with the short batch at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastBatch {
    #[default]
    Drop,
    /// Leftover indices start the first batch of the next epoch.
    Carry,
}

/// Endless, epoch-shuffled stream of index batches.
#[derive(Debug, Clone)]
pub struct Batches {
    n: usize,
    batch_size: usize,
    last: LastBatch,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: RngStream,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, last: LastBatch, rng: RngStream) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::BatchTooLarge { batch_size, len: n });
        }
        let mut b = Self {
            n,
            batch_size,
            last,
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            rng,
        };
        b.rng.shuffle(&mut b.order);
        Ok(b)
    }

    /// Batches touched per epoch, counting a trailing short batch.
    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn new_epoch(&mut self) {
        self.order = (0..self.n).collect();
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
        self.epoch += 1;
    }
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size {
            if self.pos == self.n {
                if self.last == LastBatch::Drop {
                    batch.clear();
                }
                self.new_epoch();
            }
            let take = (self.batch_size - batch.len()).min(self.n - self.pos);
            if self.last == LastBatch::Drop && take < self.batch_size - batch.len() {
                self.pos = self.n;
                continue;
            }
            batch.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        Some(batch)
    }
}

pub mod synthetic {
    //! Small learnable stand-ins written in the real on-disk formats, for
    //! tests and demos when the datasets are not available.

    use super::*;

    fn prototypes(rng: &mut RngStream, len: usize) -> Vec<Vec<f64>> {
        (0..10)
            .map(|_| (0..len).map(|_| if rng.uniform() < 0.3 { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    fn sample(rng: &mut RngStream, protos: &[Vec<f64>], noise: f64) -> (u8, Vec<u8>) {
        let label = (rng.next_u64() % 10) as u8;
        let px = protos[label as usize]
            .iter()
            .map(|&p| {
                let v = if rng.uniform() < noise { 1.0 - p } else { p };
                (v * 255.0) as u8
            })
            .collect();
        (label, px)
    }

    /// Write MNIST-format IDX files with `train` + `test` noisy class
    /// prototypes (28x28).
    pub fn write_mnist(dir: &Path, train: usize, test: usize, seed: u64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rng = RngStream::new("synthetic-mnist", seed);
        let protos = prototypes(&mut rng, 784);
        for (n, img, lbl) in [
            (train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            (test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ] {
            let mut px = Vec::with_capacity(n * 784);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let (l, p) = sample(&mut rng, &protos, 0.25);
                labels.push(l);
                px.extend(p);
            }
            let ipath = dir.join(img);
            fs::write(&ipath, encode_idx_images(n, 28, 28, &px)).map_err(|e| Error::io(&ipath, e))?;
            let lpath = dir.join(lbl);
            fs::write(&lpath, encode_idx_labels(&labels)).map_err(|e| Error::io(&lpath, e))?;
        }
        Ok(())
    }

    /// Write CIFAR-format batch files with `records` records each.
    pub fn write_cifar10(dir: &Path, records: usize, seed: u64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rng = RngStream::new("synthetic-cifar", seed);
        let protos = prototypes(&mut rng, 3072);
        let names = (1..=5)
            .map(|i| format!("data_batch_{i}.bin"))
            .chain(std::iter::once("test_batch.bin".to_string()));
        for name in names {
            let mut bytes = Vec::with_capacity(records * CIFAR_RECORD_BYTES);
            for _ in 0..records {
                let (l, p) = sample(&mut rng, &protos, 0.25);
                bytes.push(l);
                bytes.extend(p);
            }
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_scaling_endpoints() {
        assert_eq!(scale(&[0, 255]), vec![0.0, 1.0]);
    }

    #[test]
    fn corrupt_magic_names_offset() {
        let mut bytes = encode_idx_images(1, 2, 2, &[0, 1, 2, 3]);
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes, Path::new("x")).unwrap_err();
        match &err {
            Error::BadMagic { offset, found, .. } => {
                assert_eq!(*offset, 0);
                assert_eq!(*found, 0x0000_0801);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("offset 0"));
    }

    #[test]
    fn truncated_idx_reports_sizes() {
        let bytes = encode_idx_images(2, 2, 2, &[0; 7]);
        let err = parse_idx_images(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(
            err,
            Error::FileSize {
                expected: 24,
                actual: 23,
                ..
            }
        ));
    }

    #[test]
    fn cifar_record_layout() {
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i / 1024) as u8 * 100));
        let (label, px) = decode_cifar_record(&rec).unwrap();
        assert_eq!(label, 7);
        assert_eq!(px.len(), 3072);
        // first pixel is (R, G, B) = (0, 100, 200)/255
        assert_eq!(&px[..3], &[0.0, 100.0 / 255.0, 200.0 / 255.0]);
    }

    #[test]
    fn cifar_wrong_length_and_label() {
        let err = parse_cifar_batch(&[0u8; 100], Path::new("b"), 1).unwrap_err();
        assert!(err.to_string().contains("expected 3073 bytes, found 100"), "{err}");
        let mut rec = vec![10u8];
        rec.extend([0u8; 3072]);
        assert!(matches!(
            decode_cifar_record(&rec),
            Err(Error::BadLabel { label: 10, .. })
        ));
    }

    #[test]
    fn split_is_partition() {
        let (train, val) = split_indices(100, 20, 3).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        let mut all: Vec<_> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn batches_per_epoch_arithmetic() {
        let b = Batches::new(55_000, 60, LastBatch::Drop, RngStream::new("s", 0)).unwrap();
        assert_eq!(b.batches_per_epoch(), 917);
    }

    #[test]
    fn drop_mode_yields_full_batches_only() {
        let mut b = Batches::new(10, 4, LastBatch::Drop, RngStream::new("s", 1)).unwrap();
        let first_epoch: Vec<Vec<usize>> = (&mut b).take(2).collect();
        assert!(first_epoch.iter().all(|x| x.len() == 4));
        let next = b.next().unwrap();
        assert_eq!(b.epoch(), 1);
        assert_eq!(next.len(), 4);
    }

    #[test]
    fn carry_mode_spans_epochs() {
        let mut b = Batches::new(10, 4, LastBatch::Carry, RngStream::new("s", 1)).unwrap();
        let batches: Vec<Vec<usize>> = (&mut b).take(5).collect();
        let flat: Vec<usize> = batches.concat();
        let mut first: Vec<_> = flat[..10].to_vec();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_deterministic_and_checked() {
        let a: Vec<_> = Batches::new(50, 7, LastBatch::Drop, RngStream::new("s", 9))
            .unwrap()
            .take(20)
            .collect();
        let b: Vec<_> = Batches::new(50, 7, LastBatch::Drop, RngStream::new("s", 9))
            .unwrap()
            .take(20)
            .collect();
        assert_eq!(a, b);
        assert!(Batches::new(5, 6, LastBatch::Drop, RngStream::new("s", 0)).is_err());
    }
}
