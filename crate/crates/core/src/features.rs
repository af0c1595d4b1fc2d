//! Fixed convolutional feature extractor for grayscale images.
//!
//! Each stage convolves every input channel with seeded random kernels (valid
//! cross-correlation, stride 1), sums over input channels, applies ReLU and
//! non-overlapping max pooling. The final maps are flattened and averaged
//! into `output_dim` contiguous bins. Kernels are never trained.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "pixels",
                expected: height * width,
                got: pixels.len(),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Builds an image from values already known to lie in `[0, 1]`.
    pub(crate) fn from_parts(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        Self {
            height,
            width,
            pixels,
        }
    }
}

/// Unclamped single-channel map produced inside the extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "feature map",
                expected: height * width,
                got: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

impl From<&Image> for FeatureMap {
    fn from(image: &Image) -> Self {
        Self {
            height: image.height,
            width: image.width,
            values: image.pixels.clone(),
        }
    }
}

/// Square convolution kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || weights.len() != size * size {
            return Err(Error::InvalidInput(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }
}

/// Valid cross-correlation with stride 1 (no kernel flip, no padding).
pub fn conv2d_valid(input: &FeatureMap, kernel: &Kernel) -> Result<FeatureMap> {
    let k = kernel.size;
    if k > input.height || k > input.width {
        return Err(Error::InvalidInput(format!(
            "kernel {k}x{k} larger than input {}x{}",
            input.height, input.width
        )));
    }
    let (h, w) = (input.height - k + 1, input.width - k + 1);
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..k {
                let row = &input.values[(i + a) * input.width + j..(i + a) * input.width + j + k];
                let krow = &kernel.weights[a * k..(a + 1) * k];
                acc += row.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>();
            }
            out[i * w + j] = acc;
        }
    }
    Ok(FeatureMap {
        height: h,
        width: w,
        values: out,
    })
}

pub fn relu(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.max(0.0)).collect()
}

/// Non-overlapping `pool x pool` max pooling; incomplete trailing windows are
/// dropped.
pub fn max_pool(input: &FeatureMap, pool: usize) -> Result<FeatureMap> {
    if pool == 0 {
        return Err(Error::InvalidInput("pool size must be at least 1".into()));
    }
    let (h, w) = (input.height / pool, input.width / pool);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let mut best = f64::NEG_INFINITY;
            for a in 0..pool {
                for b in 0..pool {
                    best = best.max(input.get(i * pool + a, j * pool + b));
                }
            }
            out.push(best);
        }
    }
    Ok(FeatureMap {
        height: h,
        width: w,
        values: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub n_kernels: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvStackSpec {
    pub stages: Vec<ConvStage>,
    pub output_dim: usize,
    pub kernel_seed: u64,
}

impl Default for ConvStackSpec {
    /// Two stages (8 then 4 kernels, 3x3, pool 2) binned to 256 features.
    fn default() -> Self {
        Self {
            stages: vec![
                ConvStage {
                    n_kernels: 8,
                    kernel_size: 3,
                    pool_size: 2,
                },
                ConvStage {
                    n_kernels: 4,
                    kernel_size: 3,
                    pool_size: 2,
                },
            ],
            output_dim: 256,
            kernel_seed: 0,
        }
    }
}

impl ConvStackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("feature stack needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.n_kernels == 0 || s.pool_size == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {i}: n_kernels and pool_size must be at least 1"
                )));
            }
            if s.kernel_size % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {i}: kernel_size must be odd, got {}",
                    s.kernel_size
                )));
            }
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidConfig("output_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Spatial size after every stage for an `height x width` input, or the
    /// index of the first stage that does not fit.
    pub fn stage_shapes(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (height, width);
        let mut shapes = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel_size > h || s.kernel_size > w {
                return Err(Error::ImageTooSmall {
                    stage: i,
                    detail: format!("{h}x{w} input, {0}x{0} kernel", s.kernel_size),
                });
            }
            h = (h - s.kernel_size + 1) / s.pool_size;
            w = (w - s.kernel_size + 1) / s.pool_size;
            if h == 0 || w == 0 {
                return Err(Error::ImageTooSmall {
                    stage: i,
                    detail: format!("pooling by {} leaves an empty map", s.pool_size),
                });
            }
            shapes.push((h, w));
        }
        Ok(shapes)
    }
}

/// Materialised kernels for a [`ConvStackSpec`].
#[derive(Debug, Clone)]
pub struct ConvStack {
    spec: ConvStackSpec,
    /// `kernels[stage][out][in]`
    kernels: Vec<Vec<Vec<Kernel>>>,
}

impl ConvStack {
    /// Draws Gaussian kernels with standard deviation `1 / kernel_size` from
    /// `kernel_seed`, one stream per stage.
    pub fn new(spec: ConvStackSpec) -> Result<Self> {
        spec.validate()?;
        let mut in_channels = 1;
        let mut kernels = Vec::with_capacity(spec.stages.len());
        for (s, stage) in spec.stages.iter().enumerate() {
            let mut rng = stream_rng(spec.kernel_seed, s as u64);
            let k = stage.kernel_size;
            let scale = 1.0 / k as f64;
            let stage_kernels: Vec<Vec<Kernel>> = (0..stage.n_kernels)
                .map(|_| {
                    (0..in_channels)
                        .map(|_| Kernel {
                            size: k,
                            weights: (0..k * k)
                                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                                .collect(),
                        })
                        .collect()
                })
                .collect();
            kernels.push(stage_kernels);
            in_channels = stage.n_kernels;
        }
        Ok(Self { spec, kernels })
    }

    pub fn spec(&self) -> &ConvStackSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Flattened feature vector of length `output_dim`.
    pub fn extract(&self, image: &Image) -> Result<Vec<f64>> {
        let shapes = self.spec.stage_shapes(image.height, image.width)?;
        let mut channels = vec![FeatureMap::from(image)];
        for (s, stage) in self.spec.stages.iter().enumerate() {
            let mut next = Vec::with_capacity(stage.n_kernels);
            for per_input in &self.kernels[s] {
                let mut summed: Option<FeatureMap> = None;
                for (channel, kernel) in channels.iter().zip(per_input) {
                    let conv = conv2d_valid(channel, kernel)?;
                    match summed.as_mut() {
                        None => summed = Some(conv),
                        Some(acc) => acc
                            .values
                            .iter_mut()
                            .zip(&conv.values)
                            .for_each(|(a, c)| *a += c),
                    }
                }
                let mut map = summed.expect("at least one input channel");
                map.values = relu(&map.values);
                next.push(max_pool(&map, stage.pool_size)?);
            }
            debug_assert_eq!((next[0].height, next[0].width), shapes[s]);
            channels = next;
        }
        let flat: Vec<f64> = channels.into_iter().flat_map(|m| m.values).collect();
        if flat.len() < self.spec.output_dim {
            return Err(Error::ImageTooSmall {
                stage: self.spec.stages.len() - 1,
                detail: format!(
                    "{} flattened features, fewer than output_dim {}",
                    flat.len(),
                    self.spec.output_dim
                ),
            });
        }
        Ok(average_bins(&flat, self.spec.output_dim))
    }
}

/// Means of `n_bins` contiguous, nearly equal slices of `values`
/// (`values.len() >= n_bins`). Identity when the lengths match.
pub fn average_bins(values: &[f64], n_bins: usize) -> Vec<f64> {
    let m = values.len();
    (0..n_bins)
        .map(|b| {
            let lo = b * m / n_bins;
            let hi = (b + 1) * m / n_bins;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// One-shot extraction; builds the kernels for `spec` each call.
pub fn extract_features(image: &Image, spec: &ConvStackSpec) -> Result<Vec<f64>> {
    ConvStack::new(spec.clone())?.extract(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let n = (h * w) as f64;
        Image::new(h, w, (0..h * w).map(|i| i as f64 / n).collect()).unwrap()
    }

    #[test]
    fn conv_of_ones_by_hand() {
        let ones = FeatureMap::new(3, 3, vec![1.0; 9]).unwrap();
        let k = Kernel::new(2, vec![1.0; 4]).unwrap();
        let out = conv2d_valid(&ones, &k).unwrap();
        assert_eq!((out.height, out.width), (2, 2));
        assert_eq!(out.values, vec![4.0; 4]);
    }

    #[test]
    fn conv_is_cross_correlation() {
        // asymmetric kernel exposes whether it is flipped
        let input = FeatureMap::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let k = Kernel::new(2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let out = conv2d_valid(&input, &k).unwrap();
        // (0,0): 1*1 + 5*(-1) = -4; (0,1): 2 - 6 = -4
        assert_eq!(out.values, vec![-4.0, -4.0]);
    }

    #[test]
    fn conv_identity_and_zero_kernels() {
        let img = FeatureMap::from(&ramp(4, 5));
        let id = conv2d_valid(&img, &Kernel::new(1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(id, img);
        let zero = conv2d_valid(&img, &Kernel::new(3, vec![0.0; 9]).unwrap()).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let img = FeatureMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(conv2d_valid(&img, &Kernel::new(3, vec![1.0; 9]).unwrap()).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        let pos = [0.0, 1.5, 3.0];
        assert_eq!(relu(&pos), pos.to_vec());
        let v = [-3.0, 0.5, -0.1, 7.0];
        assert_eq!(relu(&relu(&v)), relu(&v));
    }

    #[test]
    fn max_pool_examples() {
        let m = FeatureMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_pool(&m, 2).unwrap().values, vec![4.0]);
        assert_eq!(max_pool(&m, 1).unwrap(), m);
        let c = FeatureMap::new(5, 7, vec![0.3; 35]).unwrap();
        let pooled = max_pool(&c, 2).unwrap();
        assert_eq!((pooled.height, pooled.width), (2, 3));
        assert!(pooled.values.iter().all(|&v| v == 0.3));
        assert!(max_pool(&m, 0).is_err());
    }

    #[test]
    fn default_stack_gives_256_features() {
        let spec = ConvStackSpec::default();
        let small = extract_features(&ramp(50, 50), &spec).unwrap();
        assert_eq!(small.len(), 256);
        let large = extract_features(&ramp(224, 224), &spec).unwrap();
        assert_eq!(large.len(), 256);
    }

    #[test]
    fn extraction_is_deterministic_and_seed_dependent() {
        let spec = ConvStackSpec::default();
        let img = ramp(50, 50);
        let a = extract_features(&img, &spec).unwrap();
        let b = extract_features(&img, &spec).unwrap();
        assert_eq!(a, b);
        let other = ConvStackSpec {
            kernel_seed: 1,
            ..spec
        };
        assert_ne!(a, extract_features(&img, &other).unwrap());
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let zero = Image::filled(50, 50, 0.0).unwrap();
        let f = extract_features(&zero, &ConvStackSpec::default()).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_image_names_the_stage() {
        let spec = ConvStackSpec::default();
        // 8x8: stage 0 -> 6 -> 3, stage 1 -> 1 -> 0
        let err = extract_features(&ramp(8, 8), &spec).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { stage: 1, .. }), "{err}");
        let err = extract_features(&ramp(2, 2), &spec).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { stage: 0, .. }));
        // fits spatially, but 4 x 2 x 2 = 16 < 256 features
        let err = extract_features(&ramp(12, 12), &spec).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { stage: 1, .. }));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ConvStackSpec::default();
        spec.stages[0].kernel_size = 4;
        assert!(ConvStack::new(spec).is_err());
        let empty = ConvStackSpec {
            stages: vec![],
            ..ConvStackSpec::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn average_bins_behaviour() {
        assert_eq!(average_bins(&[1.0, 2.0, 3.0], 3), vec![1.0, 2.0, 3.0]);
        assert_eq!(average_bins(&[1.0, 3.0, 5.0, 7.0], 2), vec![2.0, 6.0]);
        assert_eq!(average_bins(&[1.0, 2.0, 3.0, 4.0, 5.0], 2), vec![1.5, 4.0]);
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }
}
