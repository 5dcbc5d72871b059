//! Datasets: the sign-flip regression set, Gaussian class clusters, and
//! IDX (MNIST-style) files.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::numerics::{l2_norm, RngStream};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Transform applied to raw feature values when the dataset was built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Features are used as generated.
    Identity,
    /// Raw values in `[0, raw_max]` were divided by `divisor`.
    Divide { divisor: f64, raw_max: f64 },
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Divide { divisor, raw_max } => write!(f, "divide-by-{divisor} (raw max {raw_max})"),
        }
    }
}

/// One row of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: Option<usize>,
}

/// Row-major `n x d` feature matrix with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<usize>>,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        features: Vec<f64>,
        labels: Option<Vec<usize>>,
        normalization: Normalization,
    ) -> Result<Self> {
        if dim == 0 || features.is_empty() || !features.len().is_multiple_of(dim) {
            return Err(invalid(format!("{} feature values do not form rows of width {dim}", features.len())));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("feature value {i} is not finite")));
        }
        let n = features.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Consistency(format!("{} labels for {n} rows", l.len())));
            }
        }
        Ok(Self { name: name.into(), dim, features, labels, normalization })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example { features: self.row(i), label: self.labels.as_ref().map(|l| l[i]) }
    }

    /// One more than the largest label, or 0 without labels.
    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    pub fn max_input_norm(&self) -> f64 {
        (0..self.len()).map(|i| l2_norm(self.row(i))).fold(0.0, f64::max)
    }

    /// Worst-case feature norm implied by the normalization record, or the
    /// observed maximum when features were not rescaled from a bounded range.
    pub fn input_norm_bound(&self) -> f64 {
        match self.normalization {
            Normalization::Identity => self.max_input_norm(),
            Normalization::Divide { divisor, raw_max } => (self.dim as f64).sqrt() * raw_max / divisor,
        }
    }

    pub fn mean_features(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, x) in mean.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("subset needs at least one row"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid(format!("row {i} out of range for {} rows", self.len())));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(self.name.clone(), self.dim, features, labels, self.normalization)
    }
}

/// `n` points `(+-mu, 0, ..., 0)`, half of each sign, in shuffled order.
pub fn make_signflip_dataset(n: usize, d: usize, mu: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(invalid(format!("sign-flip dataset needs a positive even n, got {n}")));
    }
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mu must be positive, got {mu}")));
    }
    let mut signs: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
    RngStream::new(seed, 0x5167).shuffle(&mut signs);
    let mut features = vec![0.0; n * d];
    for (i, s) in signs.iter().enumerate() {
        features[i * d] = s * mu;
    }
    Dataset::new(format!("signflip-d{d}"), d, features, None, Normalization::Identity)
}

/// Unit-variance Gaussian clusters around `classes` seeded centers of norm
/// `separation / sqrt(2)`, so that centers sit about `separation` apart.
/// Labels are balanced and the row order is shuffled.
pub fn make_classification_dataset(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    Ok(make_classification_split(n, 0, d, classes, separation, seed)?.0)
}

/// Train and test sets sharing the same cluster centers. `n_test` may be 0,
/// in which case the second dataset is a copy of the first.
pub fn make_classification_split(
    n_train: usize,
    n_test: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(invalid(format!("need at least two classes, got {classes}")));
    }
    if d == 0 || n_train == 0 {
        return Err(invalid("need positive n and d"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(invalid(format!("separation must be >= 0, got {separation}")));
    }
    let root = RngStream::new(seed, 0xc1a5);
    let mut center_rng = root.derive(0);
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut c = vec![0.0; d];
            center_rng.fill_gaussian(&mut c, 1.0);
            let norm = l2_norm(&c);
            c.iter_mut().for_each(|x| *x *= radius / norm);
            c
        })
        .collect();
    let draw = |n: usize, tag: u64| -> Result<Dataset> {
        let mut rng = root.derive(tag);
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        rng.shuffle(&mut labels);
        let mut features = vec![0.0; n * d];
        for (row, &y) in features.chunks_mut(d).zip(&labels) {
            rng.fill_gaussian(row, 1.0);
            for (x, c) in row.iter_mut().zip(&centers[y]) {
                *x += c;
            }
        }
        Dataset::new(format!("clusters-c{classes}-d{d}"), d, features, Some(labels), Normalization::Identity)
    };
    let train = draw(n_train, 1)?;
    let test = if n_test == 0 { train.clone() } else { draw(n_test, 2)? };
    Ok((train, test))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("{} file truncated at byte {}", self.what, self.bytes.len()),
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn expect_magic(reader: &mut ByteReader<'_>, magic: u32) -> Result<()> {
    let found = reader.u32()?;
    if found == magic {
        Ok(())
    } else {
        Err(Error::Format(format!("{} file has magic {found:#010x}, expected {magic:#010x}", reader.what)))
    }
}

/// Parses IDX image and label byte buffers. Pixels are divided by 255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = ByteReader { bytes: images, pos: 0, what: "image" };
    expect_magic(&mut img, IDX_IMAGES_MAGIC)?;
    let n = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let dim = rows * cols;
    if dim == 0 || n == 0 {
        return Err(Error::Format(format!("image file declares {n} images of {rows}x{cols}")));
    }

    let mut lbl = ByteReader { bytes: labels, pos: 0, what: "label" };
    expect_magic(&mut lbl, IDX_LABELS_MAGIC)?;
    let n_labels = lbl.u32()? as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!("{n} images but {n_labels} labels")));
    }

    let pixels = img.take(n * dim)?;
    let raw_labels = lbl.take(n)?;
    if let Some(bad) = raw_labels.iter().find(|&&y| y > 9) {
        return Err(Error::Format(format!("label {bad} outside 0..=9")));
    }
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        format!("idx-{n}x{rows}x{cols}"),
        dim,
        features,
        Some(raw_labels.iter().map(|&y| y as usize).collect()),
        Normalization::Divide { divisor: 255.0, raw_max: 255.0 },
    )
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Serializes images and labels in IDX format (pixels as raw bytes).
pub fn encode_idx(pixels: &[u8], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lbl = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend_from_slice(labels);
    (img, lbl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signflip_small() {
        let ds = make_signflip_dataset(4, 2, 1.0, 7).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..4).map(|i| ds.row(i).to_vec()).collect();
        rows.sort_by(|a, b| b[0].partial_cmp(&a[0]).unwrap());
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(ds.mean_features(), vec![0.0, 0.0]);
        assert!(make_signflip_dataset(5, 2, 1.0, 7).is_err());
    }

    #[test]
    fn signflip_structure() {
        let ds = make_signflip_dataset(100, 1000, 2.5, 1).unwrap();
        for i in 0..ds.len() {
            let r = ds.row(i);
            assert_eq!(r[0].abs(), 2.5);
            assert!(r[1..].iter().all(|&x| x == 0.0));
            assert_eq!(l2_norm(r), 2.5);
        }
    }

    #[test]
    fn classification_is_seeded_and_balanced() {
        let a = make_classification_dataset(300, 5, 3, 4.0, 11).unwrap();
        let b = make_classification_dataset(300, 5, 3, 4.0, 11).unwrap();
        assert_eq!(a, b);
        let counts = (0..3).map(|c| a.labels().unwrap().iter().filter(|&&y| y == c).count()).collect::<Vec<_>>();
        assert_eq!(counts, vec![100, 100, 100]);
        assert_eq!(a.num_classes(), 3);
        assert!(make_classification_dataset(10, 2, 1, 1.0, 0).is_err());
    }

    #[test]
    fn subset_preserves_rows() {
        let ds = make_classification_dataset(20, 3, 2, 1.0, 3).unwrap();
        let sub = ds.subset(&[4, 1]).unwrap();
        assert_eq!(sub.row(0), ds.row(4));
        assert_eq!(sub.labels().unwrap()[1], ds.labels().unwrap()[1]);
        assert!(ds.subset(&[20]).is_err());
    }

    #[test]
    fn idx_roundtrip() {
        let pixels: Vec<u8> = (0..2 * 6).map(|i| (i * 20) as u8).collect();
        let (img, lbl) = encode_idx(&pixels, 2, 3, &[3, 9]);
        let ds = parse_idx(&img, &lbl).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 6));
        assert_eq!(ds.row(1)[0], 120.0 / 255.0);
        assert_eq!(ds.labels().unwrap(), &[3, 9]);
        assert!((ds.input_norm_bound() - 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(parse_idx(&img, &lbl).unwrap(), ds);
    }

    #[test]
    fn idx_errors() {
        let (img, lbl) = encode_idx(&[0; 8], 2, 2, &[1, 2]);
        let mut bad = img.clone();
        bad[3] = 0x04;
        assert!(matches!(parse_idx(&bad, &lbl), Err(Error::Format(_))));
        let (_, short_lbl) = encode_idx(&[0; 4], 2, 2, &[1]);
        assert!(matches!(parse_idx(&img, &short_lbl), Err(Error::Consistency(_))));
        assert!(matches!(parse_idx(&img[..img.len() - 1], &lbl), Err(Error::Io(_))));
        assert!(matches!(parse_idx(&[], &lbl), Err(Error::Io(_))));
        let (_, bad_label) = encode_idx(&[0; 8], 2, 2, &[1, 10]);
        assert!(matches!(parse_idx(&img, &bad_label), Err(Error::Format(_))));
    }
}
