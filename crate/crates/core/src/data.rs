//! Dataset ingestion (CSV tables, PGM image folders), standardisation,
//! stratified splitting and synthetic Gaussian blobs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Image;
use crate::model::Dataset;
use crate::rng::stream_rng;

/// Decimal form with 17 significant digits; parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads `label,f0,f1,...` rows. The class count is the largest label plus
/// one.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 2 || &header[0] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `label,f0,f1,...`".into(),
        });
    }
    let n_features = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let label: i64 = record[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("label `{}` is not an integer", &record[0]),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                line,
                message: format!("negative label {label}"),
            });
        }
        labels.push(label as usize);
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {c}: `{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {c}: non-finite value"),
                });
            }
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let n_classes = (labels.iter().copied().max().unwrap_or(0) + 1).max(2);
    Dataset::from_flat(features, n_features, labels, n_classes)
}

pub fn write_csv<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    let mut line = String::from("label");
    for j in 0..data.n_features() {
        line.push_str(&format!(",f{j}"));
    }
    writeln!(out, "{line}")?;
    for (row, label) in data.rows().zip(data.labels()) {
        line.clear();
        line.push_str(&label.to_string());
        for &v in row {
            line.push(',');
            line.push_str(&format_f64(v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(data, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Decodes a binary (P5) PGM with maxval at most 255. Intensities are
/// divided by maxval, so 255 maps to exactly 1.0 for the usual maxval.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(format!("not a binary PGM (magic `{magic}`)"));
    }
    let mut number = |name: &str| -> std::result::Result<usize, String> {
        let t = token(&mut pos)?;
        t.parse()
            .map_err(|_| format!("bad {name} `{t}` in header"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() < width * height {
        return Err(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            width * height
        ));
    }
    let scale = maxval as f64;
    let pixels = raster[..width * height]
        .iter()
        .map(|&b| (b as f64 / scale).min(1.0))
        .collect();
    Image::new(height, width, pixels).map_err(|e| e.to_string())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_pgm(&bytes).map_err(|message| Error::Ingest {
        path: path.to_path_buf(),
        message,
    })
}

/// Encodes as P5 with maxval 255, rounding to the nearest level.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFolder {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Source file of every image.
    pub paths: Vec<PathBuf>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Ingest {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `root/<class>/*.pgm`. Classes are numbered in sorted name order and
/// files are read in sorted path order. All images must share one size.
pub fn load_image_dir(root: impl AsRef<Path>) -> Result<ImageFolder> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.len() < 2 {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            message: format!("expected at least two class directories, found {}", class_dirs.len()),
        });
    }
    let mut folder = ImageFolder {
        images: Vec::new(),
        labels: Vec::new(),
        class_names: Vec::new(),
        paths: Vec::new(),
    };
    for (label, dir) in class_dirs.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
            .collect();
        if files.is_empty() {
            return Err(Error::Ingest {
                path: dir.clone(),
                message: "class directory contains no .pgm files".into(),
            });
        }
        for file in files {
            let image = read_pgm(&file)?;
            if let Some(first) = folder.images.first() {
                if (first.height(), first.width()) != (image.height(), image.width()) {
                    return Err(Error::Ingest {
                        path: file,
                        message: format!(
                            "image is {}x{}, expected {}x{}",
                            image.height(),
                            image.width(),
                            first.height(),
                            first.width()
                        ),
                    });
                }
            }
            folder.images.push(image);
            folder.labels.push(label);
            folder.paths.push(file);
        }
        folder.class_names.push(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    Ok(folder)
}

/// Per-feature z-scoring statistics, fit on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Features with standard deviation below 1e-12; these map to 0.
    pub constant: Vec<bool>,
}

pub const CONSTANT_SD: f64 = 1e-12;

/// Training portion of a split. Standardisation statistics can only be fit
/// on this type.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSplit(pub Dataset);

/// Held-out portion of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSplit(pub Dataset);

impl std::ops::Deref for TrainSplit {
    type Target = Dataset;
    fn deref(&self) -> &Dataset {
        &self.0
    }
}

impl std::ops::Deref for TestSplit {
    type Target = Dataset;
    fn deref(&self) -> &Dataset {
        &self.0
    }
}

/// Mean and population standard deviation of every feature.
pub fn fit_standardizer(train: &TrainSplit) -> StandardizationParams {
    let n = train.n_samples() as f64;
    let d = train.n_features();
    let mut mean = vec![0.0; d];
    for row in train.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in train.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let constant = sd.iter().map(|&s| s < CONSTANT_SD).collect();
    StandardizationParams { mean, sd, constant }
}

pub fn apply_standardizer(params: &StandardizationParams, data: &Dataset) -> Result<Dataset> {
    if params.mean.len() != data.n_features() {
        return Err(Error::DimensionMismatch {
            what: "standardizer features",
            expected: params.mean.len(),
            got: data.n_features(),
        });
    }
    let mut features = data.features().to_vec();
    for row in features.chunks_exact_mut(data.n_features()) {
        standardize_row(params, row);
    }
    Ok(data.with_features(features))
}

pub fn standardize_row(params: &StandardizationParams, row: &mut [f64]) {
    for (j, v) in row.iter_mut().enumerate() {
        *v = if params.constant[j] {
            0.0
        } else {
            (*v - params.mean[j]) / params.sd[j]
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: TrainSplit,
    pub test: TestSplit,
    /// Source row of every training sample, ascending.
    pub train_indices: Vec<usize>,
    /// Source row of every test sample, ascending.
    pub test_indices: Vec<usize>,
}

/// Number of test items drawn from a group of `n`: `round(n * fraction)`,
/// kept within `[1, n - 1]`.
fn test_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Train/test partition. When stratified, each class is shuffled on its own
/// substream (stream = class index) and contributes `round(n_k * fraction)`
/// test samples (at least one, never all).
pub fn stratified_split(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut test_indices = Vec::new();
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); data.n_classes()];
        for (i, &l) in data.labels().iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    } else {
        vec![(0..data.n_samples()).collect()]
    };
    for (k, mut group) in groups.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        if group.len() < 2 {
            return Err(Error::InvalidConfig(if spec.stratified {
                format!("class {k} has a single sample; stratified split needs at least 2")
            } else {
                "split needs at least 2 samples".into()
            }));
        }
        let mut rng = stream_rng(spec.seed, k as u64);
        group.shuffle(&mut rng);
        let n_test = test_count(group.len(), spec.test_fraction);
        test_indices.extend_from_slice(&group[..n_test]);
    }
    test_indices.sort_unstable();
    let mut is_test = vec![false; data.n_samples()];
    for &i in &test_indices {
        is_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..data.n_samples()).filter(|&i| !is_test[i]).collect();
    Ok(Split {
        train: TrainSplit(data.subset(&train_indices)?),
        test: TestSplit(data.subset(&test_indices)?),
        train_indices,
        test_indices,
    })
}

/// Class centres, pairwise `separation` apart: a regular simplex when
/// `k <= d`, otherwise a regular polygon in the first two coordinates.
pub fn blob_centers(k: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    if k == 2 {
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        a[0] = -separation / 2.0;
        b[0] = separation / 2.0;
        return vec![a, b];
    }
    if k <= d {
        let edge = separation / std::f64::consts::SQRT_2;
        let centroid = edge / k as f64;
        (0..k)
            .map(|c| {
                (0..d)
                    .map(|j| {
                        let v = if j == c { edge } else { 0.0 };
                        if j < k {
                            v - centroid
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect()
    } else {
        let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
        (0..k)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                let mut v = vec![0.0; d];
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
                v
            })
            .collect()
    }
}

/// Isotropic Gaussian blobs, `n_per_class` samples per class in class order.
pub fn synth_blobs(
    n_per_class: usize,
    k: usize,
    d: usize,
    separation: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 || d < 2 {
        return Err(Error::InvalidInput(format!(
            "synthetic blobs need k >= 2 and d >= 2, got k = {k}, d = {d}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be at least 1".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite() && separation.is_finite()) {
        return Err(Error::InvalidInput("noise_sd and separation must be finite, noise_sd >= 0".into()));
    }
    let centers = blob_centers(k, d, separation);
    let mut rng = stream_rng(seed, 0);
    let mut features = Vec::with_capacity(n_per_class * k * d);
    let mut labels = Vec::with_capacity(n_per_class * k);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                features.push(c + noise_sd * z);
            }
            labels.push(class);
        }
    }
    Dataset::from_flat(features, d, labels, k)
}
