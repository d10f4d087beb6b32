//! Datasets: synthetic generators, IDX and CSV loaders, train/validation
//! splitting and per-feature standardization.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GrowError, Result};
use crate::netcore::Matrix;
use crate::rng::{self, Rng, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(GrowError::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if labels.is_empty() {
            return Err(GrowError::EmptyDataset);
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(GrowError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if features.as_slice().iter().any(|v| v.is_nan()) {
            return Err(GrowError::InvalidArgument("NaN feature".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn check_generator(classes: usize, per_class: usize, label_noise: f64) -> Result<()> {
    if classes < 2 {
        return Err(GrowError::InvalidArgument("need at least 2 classes".into()));
    }
    if per_class == 0 {
        return Err(GrowError::InvalidArgument("per_class must be positive".into()));
    }
    if !(0.0..0.5).contains(&label_noise) {
        return Err(GrowError::InvalidArgument(format!(
            "label noise {label_noise} outside [0, 0.5)"
        )));
    }
    Ok(())
}

/// Resamples the labels of exactly `round(noise * N)` distinct samples
/// uniformly over all classes (so a resampled label may stay the same).
fn apply_label_noise(labels: &mut [usize], classes: usize, noise: f64, rng: &mut Rng) {
    let flips = (noise * labels.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.shuffle(rng);
    for &i in &idx[..flips] {
        labels[i] = rng.random_range(0..classes);
    }
}

fn sample_around(centers: &[Vec<f64>], assign: impl Iterator<Item = (usize, usize)>, dims: usize, rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (center, label) in assign {
        for &c in &centers[center] {
            let z: f64 = StandardNormal.sample(rng);
            feats.push(c + z);
        }
        debug_assert_eq!(centers[center].len(), dims);
        labels.push(label);
    }
    (feats, labels)
}

/// `classes` unit-variance Gaussian blobs whose means sit on a regular
/// simplex with pairwise distance `sep` (mean k is `sep / sqrt(2) * e_k`, so
/// `dims >= classes` is required). Exactly `per_class` samples per class are
/// drawn before label noise is applied.
pub fn gen_gaussians(
    classes: usize,
    dims: usize,
    per_class: usize,
    sep: f64,
    label_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    sample_gaussians(classes, dims, per_class, sep, label_noise, seed, Stream::Data)
}

pub(crate) fn sample_gaussians(
    classes: usize,
    dims: usize,
    per_class: usize,
    sep: f64,
    label_noise: f64,
    seed: u64,
    stream: Stream,
) -> Result<Dataset> {
    check_generator(classes, per_class, label_noise)?;
    if dims < classes {
        return Err(GrowError::InvalidArgument(format!(
            "simplex means need dims >= classes ({dims} < {classes})"
        )));
    }
    let scale = sep / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let mut m = vec![0.0; dims];
            m[k] = scale;
            m
        })
        .collect();
    let mut rng = rng::stream(seed, stream);
    let assign = (0..classes).flat_map(|k| std::iter::repeat_n((k, k), per_class));
    let (feats, mut labels) = sample_around(&centers, assign, dims, &mut rng);
    let mut noise_rng = rng::stream(seed ^ stream as u64, Stream::LabelNoise);
    apply_label_noise(&mut labels, classes, label_noise, &mut noise_rng);
    Dataset::new(Matrix::from_vec(labels.len(), dims, feats)?, labels, classes)
}

/// Each class is a union of `clusters_per_class` unit-variance Gaussian
/// clusters whose centers are drawn once per `seed` from `N(0, spread^2 I)`.
/// With many clusters the class boundaries are far from linear, so fitting
/// the data takes depth and training time.
#[allow(clippy::too_many_arguments)]
pub fn gen_clusters(
    classes: usize,
    dims: usize,
    clusters_per_class: usize,
    per_class: usize,
    spread: f64,
    label_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    sample_clusters(classes, dims, clusters_per_class, per_class, spread, label_noise, seed, Stream::Data)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_clusters(
    classes: usize,
    dims: usize,
    clusters_per_class: usize,
    per_class: usize,
    spread: f64,
    label_noise: f64,
    seed: u64,
    stream: Stream,
) -> Result<Dataset> {
    check_generator(classes, per_class, label_noise)?;
    if clusters_per_class == 0 || dims == 0 {
        return Err(GrowError::InvalidArgument(
            "clusters_per_class and dims must be positive".into(),
        ));
    }
    // centers depend on the seed only, so train and test share them
    let mut center_rng = rng::stream(seed, Stream::Init);
    let centers: Vec<Vec<f64>> = (0..classes * clusters_per_class)
        .map(|_| {
            (0..dims)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut center_rng);
                    spread * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut rng = rng::stream(seed, stream);
    let assign = (0..classes).flat_map(|k| {
        (0..per_class).map(move |i| (k * clusters_per_class + i % clusters_per_class, k))
    });
    let (feats, mut labels) = sample_around(&centers, assign, dims, &mut rng);
    let mut noise_rng = rng::stream(seed ^ stream as u64, Stream::LabelNoise);
    apply_label_noise(&mut labels, classes, label_noise, &mut noise_rng);
    Dataset::new(Matrix::from_vec(labels.len(), dims, feats)?, labels, classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.01,
            seed: 0,
        }
    }
}

/// Shuffled train/validation split; the validation part has
/// `max(1, floor(val_fraction * N))` samples.
pub fn split(data: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 2 {
        return Err(GrowError::InvalidArgument(format!(
            "cannot split {n} sample(s)"
        )));
    }
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(GrowError::InvalidArgument(format!(
            "validation fraction {} outside [0, 1)",
            spec.val_fraction
        )));
    }
    let n_val = ((spec.val_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(spec.seed, Stream::Split));
    let (val_idx, train_idx) = idx.split_at(n_val);
    Ok((data.subset(train_idx), data.subset(val_idx)))
}

/// Per-feature affine map to zero mean and unit variance, fitted on one
/// dataset and reusable on others. Constant features are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let (n, d) = data.features.shape();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(data.features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(data.features.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for i in 0..out.features.rows() {
            for ((v, m), s) in out.features.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

fn read_u32_be(buf: &[u8], at: usize) -> Option<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn truncated(path: &Path, what: &str) -> GrowError {
    GrowError::Truncated {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::UnexpectedEof, what.to_string()),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| GrowError::io(path, e))?;
    Ok(buf)
}

/// Loads an IDX image file (`0x00000803`, dims N×rows×cols, u8 pixels) and
/// its IDX label file (`0x00000801`). Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major. The class count is `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;

    let magic = read_u32_be(&img, 0).ok_or_else(|| truncated(images_path, "header"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(GrowError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = read_u32_be(&lab, 0).ok_or_else(|| truncated(labels_path, "header"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(GrowError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let header = |at| read_u32_be(&img, at).ok_or_else(|| truncated(images_path, "header"));
    let (n, rows, cols) = (header(4)? as usize, header(8)? as usize, header(12)? as usize);
    let n_labels = read_u32_be(&lab, 4).ok_or_else(|| truncated(labels_path, "header"))? as usize;
    if n != n_labels {
        return Err(GrowError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let d = rows * cols;
    let pixels = img
        .get(16..16 + n * d)
        .ok_or_else(|| truncated(images_path, "pixel data"))?;
    let labels: Vec<usize> = lab
        .get(8..8 + n)
        .ok_or_else(|| truncated(labels_path, "label data"))?
        .iter()
        .map(|&l| l as usize)
        .collect();
    if n == 0 {
        return Err(GrowError::EmptyDataset);
    }
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_vec(n, d, features)?, labels, classes)
}

/// Writes `data` as an IDX image/label pair with images of `rows × cols`.
/// Features are quantized to `round(255 * v)`, so data loaded by
/// [`load_idx`] survives a write/load cycle bit-exactly.
pub fn write_idx(
    data: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    if rows * cols != data.dim() {
        return Err(GrowError::Shape(format!(
            "{rows}x{cols} images need {} features, dataset has {}",
            rows * cols,
            data.dim()
        )));
    }
    if data.num_classes > 256 {
        return Err(GrowError::InvalidArgument("IDX labels are single bytes".into()));
    }
    let mut img = Vec::with_capacity(16 + data.features.as_slice().len());
    for v in [IDX_IMAGES_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        data.features
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + data.len());
    for v in [IDX_LABELS_MAGIC, data.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(data.labels.iter().map(|&l| l as u8));
    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| GrowError::io(path, e))?;
    }
    Ok(())
}

/// CSV with a header row; every column is a numeric feature except the last,
/// which holds the integer class label.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GrowError::io(path, e))?;
    let parse_err = |line: usize, message: String| GrowError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(GrowError::EmptyDataset)?;
    let columns = header.split(',').count();
    if columns < 2 {
        return Err(parse_err(1, "need at least one feature and a label column".into()));
    }
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns {
            return Err(parse_err(i + 1, format!("{} fields, header has {columns}", fields.len())));
        }
        for f in &fields[..columns - 1] {
            feats.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(i + 1, format!("bad number `{f}`")))?,
            );
        }
        let label = fields[columns - 1];
        labels.push(
            label
                .parse::<usize>()
                .map_err(|_| parse_err(i + 1, format!("bad label `{label}`")))?,
        );
    }
    if labels.is_empty() {
        return Err(GrowError::EmptyDataset);
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_vec(labels.len(), columns - 1, feats)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaussians_are_balanced_and_deterministic() {
        let a = gen_gaussians(4, 6, 25, 3.0, 0.0, 9).unwrap();
        assert_eq!(a.class_counts(), vec![25; 4]);
        assert_eq!(a, gen_gaussians(4, 6, 25, 3.0, 0.0, 9).unwrap());
        assert_ne!(a, gen_gaussians(4, 6, 25, 3.0, 0.0, 10).unwrap());
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        assert!(gen_gaussians(1, 4, 10, 1.0, 0.0, 0).is_err());
        assert!(gen_gaussians(3, 4, 10, 1.0, 0.5, 0).is_err());
        assert!(gen_gaussians(3, 4, 10, 1.0, -0.1, 0).is_err());
        assert!(gen_gaussians(5, 4, 10, 1.0, 0.0, 0).is_err());
        assert!(gen_clusters(3, 4, 0, 10, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn label_noise_fraction_matches_arithmetic() {
        // A noise fraction p relabels p*N samples uniformly, so p*(K-1)/K of
        // all labels end up wrong.
        let clean = gen_gaussians(5, 5, 4000, 2.0, 0.0, 3).unwrap();
        let noisy = gen_gaussians(5, 5, 4000, 2.0, 0.2, 3).unwrap();
        assert_eq!(clean.features, noisy.features);
        let wrong = clean
            .labels
            .iter()
            .zip(&noisy.labels)
            .filter(|(a, b)| a != b)
            .count() as f64
            / clean.len() as f64;
        assert!((wrong - 0.2 * 4.0 / 5.0).abs() < 0.01, "wrong fraction {wrong}");
    }

    #[test]
    fn clusters_share_centers_between_streams() {
        let train = sample_clusters(3, 4, 5, 300, 4.0, 0.0, 1, Stream::Data).unwrap();
        let test = sample_clusters(3, 4, 5, 300, 4.0, 0.0, 1, Stream::TestData).unwrap();
        assert_ne!(train.features, test.features);
        // per-cluster sample means agree, so both came from the same centers
        let mean_of = |d: &Dataset, cluster: usize| -> f64 {
            let rows: Vec<usize> = (0..300).filter(|i| i % 5 == cluster).collect();
            rows.iter().map(|&i| d.features.get(i, 0)).sum::<f64>() / rows.len() as f64
        };
        assert!((mean_of(&train, 2) - mean_of(&test, 2)).abs() < 0.5);
    }

    #[test]
    fn split_sizes() {
        let d = gen_gaussians(2, 2, 50, 1.0, 0.0, 0).unwrap();
        let (tr, va) = split(&d, SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len()), (99, 1));
        let d = gen_gaussians(2, 2, 25_000, 1.0, 0.0, 0).unwrap();
        let (tr, va) = split(&d, SplitSpec { val_fraction: 0.01, seed: 4 }).unwrap();
        assert_eq!((tr.len(), va.len()), (49_500, 500));
        let one = d.subset(&[0]);
        assert!(split(&one, SplitSpec::default()).is_err());
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let d = gen_gaussians(3, 3, 200, 5.0, 0.0, 2).unwrap();
        let s = Standardizer::fit(&d);
        let z = s.apply(&d);
        let z2 = Standardizer::fit(&z);
        for (m, sd) in z2.mean.iter().zip(&z2.std) {
            assert!(m.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
    }

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn idx_header_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, idx_bytes(IDX_IMAGES_MAGIC, &[10, 28, 28], &vec![0u8; 10 * 784])).unwrap();
        fs::write(&lab, idx_bytes(IDX_LABELS_MAGIC, &[10], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])).unwrap();
        let d = load_idx(&img, &lab).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes), (10, 784, 10));
        assert!(d.features.row(3).iter().all(|&v| v == 0.0));

        fs::write(&lab, idx_bytes(IDX_LABELS_MAGIC, &[9], &[0; 9])).unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(GrowError::CountMismatch { images: 10, labels: 9 })
        ));

        fs::write(&lab, idx_bytes(0x0000_0803, &[10], &[0; 10])).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(GrowError::BadMagic { .. })));

        fs::write(&lab, idx_bytes(IDX_LABELS_MAGIC, &[10], &[0; 10])).unwrap();
        fs::write(&img, idx_bytes(IDX_IMAGES_MAGIC, &[10, 28, 28], &[0u8; 100])).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(GrowError::Truncated { .. })));
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x,y,label\n0.5,1,0\n-2,3.25,2\n").unwrap();
        let d = load_csv(&p).unwrap();
        assert_eq!(d.labels, vec![0, 2]);
        assert_eq!(d.num_classes, 3);
        assert_eq!(d.features.row(1), &[-2.0, 3.25]);
        fs::write(&p, "x,y,label\n0.5,1\n").unwrap();
        assert!(matches!(load_csv(&p), Err(GrowError::Parse { .. })));
    }

    proptest! {
        #[test]
        fn split_is_a_disjoint_partition(n in 2usize..300, frac in 0.0f64..0.9, seed in any::<u64>()) {
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let feats = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
            let d = Dataset::new(feats, labels, 3).unwrap();
            let spec = SplitSpec { val_fraction: frac, seed };
            let (tr, va) = split(&d, spec).unwrap();
            prop_assert_eq!(va.len(), ((frac * n as f64).floor() as usize).clamp(1, n - 1));
            let mut ids: Vec<usize> = tr.features.as_slice().iter().chain(va.features.as_slice()).map(|&v| v as usize).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(split(&d, spec).unwrap(), (tr, va));
        }

        #[test]
        fn idx_round_trip(n in 1usize..20, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut r = rng::stream(seed, Stream::Data);
            let pixels: Vec<f64> = (0..n * rows * cols).map(|_| r.random::<u8>() as f64 / 255.0).collect();
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..7)).collect();
            let classes = labels.iter().copied().max().unwrap() + 1;
            let d = Dataset::new(Matrix::from_vec(n, rows * cols, pixels).unwrap(), labels, classes).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
            write_idx(&d, rows, cols, &img, &lab).unwrap();
            let back = load_idx(&img, &lab).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
