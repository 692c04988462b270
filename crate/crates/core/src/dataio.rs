//! IDX loading and dataset preparation.
//!
//! IDX is the big-endian container of the MNIST family: two zero bytes, a
//! type byte (`0x08`, unsigned byte), a rank byte, `rank` 32-bit dimensions,
//! then the payload. Files may be gzip-compressed; compression is detected
//! from the `1f 8b` prefix, not the file name.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng as _;

use crate::numerics::Rng;
use crate::{Error, Matrix, Result, Scalar};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }

    /// Number of items along the first axis.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims[1..].iter().map(|&d| d as usize).product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    /// Swaps the two image axes of every item; EMNIST stores images
    /// transposed relative to MNIST.
    pub fn transpose_images(&self) -> IdxTensor {
        assert_eq!(self.dims.len(), 3, "only rank-3 image tensors can be transposed");
        let (h, w) = (self.dims[1] as usize, self.dims[2] as usize);
        let mut data = vec![0u8; self.data.len()];
        for (src, dst) in self.data.chunks_exact(h * w).zip(data.chunks_exact_mut(h * w)) {
            for r in 0..h {
                for c in 0..w {
                    dst[c * h + r] = src[r * w + c];
                }
            }
        }
        IdxTensor {
            dims: vec![self.dims[0], self.dims[2], self.dims[1]],
            data,
        }
    }
}

/// Parses an IDX byte buffer. `path` is only used in error values.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxTensor> {
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        bytes.to_vec()
    };
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    // Two zero bytes, type 0x08 (unsigned byte), then a non-zero rank.
    if magic & 0xffff_ff00 != 0x0000_0800 || magic & 0xff == 0 {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_add(header).map(|_| n))
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.to_path_buf(),
            dims: dims.clone(),
        })?;
    let actual = bytes.len() - header;
    if actual != payload {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: payload,
            actual,
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Writes an uncompressed IDX file.
pub fn write_idx(tensor: &IdxTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Images and labels of one source file pair.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub images: IdxTensor,
    pub labels: IdxTensor,
}

impl RawDataset {
    pub fn new(images: IdxTensor, labels: IdxTensor) -> Result<Self> {
        if images.dims.len() != 3 || images.magic() != IMAGES_MAGIC {
            return Err(Error::Format("image tensor must have rank 3".into()));
        }
        if labels.dims.len() != 1 {
            return Err(Error::Format("label tensor must have rank 1".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.images.item_size()
    }
}

/// Normalized, bias-augmented data ready for training.
#[derive(Debug, Clone)]
pub struct DatasetSplit<T> {
    pub x_train: Matrix<T>,
    pub y_train: Vec<usize>,
    pub x_valid: Matrix<T>,
    pub y_valid: Vec<usize>,
    pub x_test: Matrix<T>,
    pub y_test: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> DatasetSplit<T> {
    /// Input features per sample, excluding the bias column.
    pub fn num_inputs(&self) -> usize {
        self.x_train.cols() - 1
    }
}

fn to_matrix<T: Scalar>(images: &IdxTensor, rows: &[usize]) -> Matrix<T> {
    let px = images.item_size();
    let scale = T::of(1.0 / 255.0);
    let mut data = Vec::with_capacity(rows.len() * (px + 1));
    for &r in rows {
        data.extend(
            images.data[r * px..(r + 1) * px]
                .iter()
                .map(|&b| T::of(f64::from(b)) * scale),
        );
        data.push(T::one());
    }
    Matrix::from_vec(rows.len(), px + 1, data).expect("pixel data is finite")
}

/// Normalizes pixels to `[0, 1]`, appends the bias column, and carves a
/// validation set out of the training file by a seeded shuffle. The test set
/// is the test file in its original order.
pub fn prepare<T: Scalar>(
    train: &RawDataset,
    test: &RawDataset,
    valid_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if !(valid_fraction > 0.0 && valid_fraction < 0.5) {
        return Err(Error::invalid(format!(
            "valid_fraction must lie in (0, 0.5), got {valid_fraction}"
        )));
    }
    for ds in [train, test] {
        if ds.images.len() != ds.labels.len() {
            return Err(Error::CountMismatch {
                images: ds.images.len(),
                labels: ds.labels.len(),
            });
        }
    }
    if train.pixels() != test.pixels() {
        return Err(Error::Format(format!(
            "train images have {} pixels, test images {}",
            train.pixels(),
            test.pixels()
        )));
    }
    let n = train.len();
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let (valid_idx, train_idx) = order.split_at(n_valid);
    // Keep file order inside each part so membership alone determines the split.
    let mut train_idx = train_idx.to_vec();
    let mut valid_idx = valid_idx.to_vec();
    train_idx.sort_unstable();
    valid_idx.sort_unstable();

    let labels = |ds: &RawDataset, idx: &[usize]| -> Vec<usize> {
        idx.iter().map(|&i| ds.labels.data[i] as usize).collect()
    };
    let test_idx: Vec<usize> = (0..test.len()).collect();
    let num_classes = train
        .labels
        .data
        .iter()
        .chain(&test.labels.data)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0);

    Ok(DatasetSplit {
        x_train: to_matrix(&train.images, &train_idx),
        y_train: labels(train, &train_idx),
        x_valid: to_matrix(&train.images, &valid_idx),
        y_valid: labels(train, &valid_idx),
        x_test: to_matrix(&test.images, &test_idx),
        y_test: labels(test, &test_idx),
        num_classes,
    })
}

/// Standard file stems of an MNIST-style directory.
const STEMS: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    // Prefixed layouts such as `emnist-balanced-train-images-idx3-ubyte`,
    // and the `test-` spelling EMNIST uses instead of `t10k-`.
    let alt = stem.replace("t10k-", "test-");
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.contains(stem) || n.contains(&alt))
        })
        .collect();
    hits.sort();
    hits.into_iter().next().ok_or_else(|| {
        Error::io(
            dir.join(stem),
            std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
        )
    })
}

/// Loads `{train,t10k}-{images,labels}` from `dir`. With `transpose`, image
/// axes are swapped (EMNIST).
pub fn load_dir(dir: impl AsRef<Path>, transpose: bool) -> Result<(RawDataset, RawDataset)> {
    let dir = dir.as_ref();
    let mut t = STEMS
        .iter()
        .map(|s| load_idx(find_file(dir, s)?))
        .collect::<Result<Vec<_>>>()?;
    if transpose {
        t[0] = t[0].transpose_images();
        t[2] = t[2].transpose_images();
    }
    let mut it = t.into_iter();
    let (a, b, c, d) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );
    Ok((RawDataset::new(a, b)?, RawDataset::new(c, d)?))
}

/// Writes a dataset pair using the standard uncompressed file names.
pub fn write_dir(dir: impl AsRef<Path>, train: &RawDataset, test: &RawDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = [&train.images, &train.labels, &test.images, &test.labels];
    for (stem, t) in STEMS.iter().zip(tensors) {
        write_idx(t, dir.join(stem))?;
    }
    Ok(())
}

/// Synthetic IDX images: each class has a random prototype image and samples
/// are noisy copies of it. Useful for demos and tests without the real data.
pub fn synthetic(
    samples: usize,
    side: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> RawDataset {
    assert!(classes > 0 && classes <= 256, "classes must fit in a byte");
    let mut rng = Rng::new(seed);
    let px = side * side;
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..px)
                .map(|_| if rng.random::<f64>() < 0.3 { 255.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut images = Vec::with_capacity(samples * px);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let class = rng.random_range(0..classes);
        labels.push(class as u8);
        for &p in &prototypes[class] {
            let jitter = (rng.random::<f64>() - 0.5) * 2.0 * noise * 255.0;
            images.push((p + jitter).clamp(0.0, 255.0) as u8);
        }
    }
    RawDataset {
        images: IdxTensor {
            dims: vec![samples as u32, side as u32, side as u32],
            data: images,
        },
        labels: IdxTensor {
            dims: vec![samples as u32],
            data: labels,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn parses_images_and_labels() {
        let mut bytes = header(IMAGES_MAGIC, &[2, 28, 28]);
        bytes.extend(std::iter::repeat_n(7u8, 1568));
        let t = parse_idx(&bytes, Path::new("imgs")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.item_size(), 784);

        let mut bytes = header(LABELS_MAGIC, &[10]);
        bytes.extend(0u8..10);
        let t = parse_idx(&bytes, Path::new("lbls")).unwrap();
        assert_eq!(t.data, (0u8..10).collect::<Vec<_>>());
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let mut bytes = header(LABELS_MAGIC, &[10]);
        bytes.extend(0u8..7);
        match parse_idx(&bytes, Path::new("x")) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (10, 7)),
            other => panic!("unexpected {other:?}"),
        }
        let msg = parse_idx(&bytes, Path::new("x")).unwrap_err().to_string();
        assert!(msg.contains("10") && msg.contains('7'), "{msg}");
    }

    #[test]
    fn bad_magic_and_overflow() {
        let bytes = header(0x0000_0903, &[1, 1, 1]);
        assert!(matches!(
            parse_idx(&bytes, Path::new("x")),
            Err(Error::BadMagic { found: 0x903, .. })
        ));
        let bytes = header(IMAGES_MAGIC, &[u32::MAX, u32::MAX, u32::MAX]);
        assert!(matches!(
            parse_idx(&bytes, Path::new("x")),
            Err(Error::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn gzip_is_detected_by_content() {
        let mut raw = header(LABELS_MAGIC, &[3]);
        raw.extend([1u8, 2, 3]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        let t = parse_idx(&gz, Path::new("no-extension")).unwrap();
        assert_eq!(t.data, vec![1, 2, 3]);
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic(5, 4, 3, 0.1, 1);
        let path = dir.path().join("imgs");
        write_idx(&ds.images, &path).unwrap();
        let before = fs::read(&path).unwrap();
        let loaded = load_idx(&path).unwrap();
        let again = dir.path().join("imgs2");
        write_idx(&loaded, &again).unwrap();
        assert_eq!(before, fs::read(&again).unwrap());
    }

    #[test]
    fn prepare_normalizes_and_splits() {
        let mut train = synthetic(60, 3, 4, 0.2, 5);
        train.images.data[0] = 255;
        train.images.data[1] = 0;
        let test = synthetic(12, 3, 4, 0.2, 6);
        let s = prepare::<f64>(&train, &test, 1.0 / 6.0, 9).unwrap();
        assert_eq!(s.x_train.rows(), 50);
        assert_eq!(s.x_valid.rows(), 10);
        assert_eq!(s.x_test.rows(), 12);
        assert_eq!(s.num_inputs(), 9);
        for m in [&s.x_train, &s.x_valid, &s.x_test] {
            for r in 0..m.rows() {
                assert_eq!(m.get(r, m.cols() - 1), 1.0);
                assert!(m.row(r).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        // Row 0 of the source file lands in either part with exact endpoints.
        let all: Vec<f64> = s
            .x_train
            .data()
            .iter()
            .chain(s.x_valid.data())
            .copied()
            .collect();
        assert!(all.contains(&1.0) && all.contains(&0.0));
        assert!(s.y_train.iter().chain(&s.y_test).all(|&y| y < s.num_classes));

        let again = prepare::<f64>(&train, &test, 1.0 / 6.0, 9).unwrap();
        assert_eq!(s.y_valid, again.y_valid);
        assert_eq!(s.x_valid, again.x_valid);
    }

    #[test]
    fn mnist_sized_split_arithmetic() {
        let n = 60_000usize;
        let n_valid = (n as f64 * (1.0 / 6.0)).round() as usize;
        assert_eq!((n - n_valid, n_valid), (50_000, 10_000));
    }

    #[test]
    fn prepare_rejects_bad_inputs() {
        let train = synthetic(10, 2, 2, 0.1, 1);
        let test = synthetic(4, 2, 2, 0.1, 2);
        assert!(prepare::<f64>(&train, &test, 0.0, 1).is_err());
        assert!(prepare::<f64>(&train, &test, 0.5, 1).is_err());
        let mut broken = train.clone();
        broken.labels.dims[0] = 9;
        broken.labels.data.pop();
        assert!(matches!(
            prepare::<f64>(&broken, &test, 0.2, 1),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn transpose_swaps_axes() {
        let t = IdxTensor {
            dims: vec![1, 2, 3],
            data: vec![1, 2, 3, 4, 5, 6],
        };
        let tt = t.transpose_images();
        assert_eq!(tt.dims, vec![1, 3, 2]);
        assert_eq!(tt.data, vec![1, 4, 2, 5, 3, 6]);
        assert_eq!(tt.transpose_images(), t);
    }

    #[test]
    fn directory_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let train = synthetic(20, 4, 3, 0.1, 1);
        let test = synthetic(8, 4, 3, 0.1, 2);
        write_dir(dir.path(), &train, &test).unwrap();
        let (a, b) = load_dir(dir.path(), false).unwrap();
        assert_eq!(a.images, train.images);
        assert_eq!(b.labels, test.labels);
    }
}
