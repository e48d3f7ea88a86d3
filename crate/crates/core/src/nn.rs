//! Two-filter line detector with exact per-sample gradients.
//!
//! Two 3x3 filters scan the image (valid cross-correlation), each response map
//! is reduced by a global max, and a 2-to-1 dense layer produces a logit for
//! "vertical line". The loss is sigmoid binary cross-entropy.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const PARAM_COUNT: usize = 2 * (KERNEL * KERNEL + 1) + 2 + 1;

/// Ideal detector for a horizontal line.
pub const HORIZONTAL_TEMPLATE: [f64; 9] = [-1.0, -1.0, -1.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0];
/// Ideal detector for a vertical line.
pub const VERTICAL_TEMPLATE: [f64; 9] = [-1.0, 2.0, -1.0, -1.0, 2.0, -1.0, -1.0, 2.0, -1.0];

// parameter layout
const FILTER_OFFSET: [usize; 2] = [0, 10];
const BIAS_INDEX: [usize; 2] = [9, 19];
const DENSE_OFFSET: usize = 20;
const DENSE_BIAS: usize = 22;

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::InvalidConfig(format!(
                "expected a 2-d image, got shape {:?}",
                self.shape
            ))),
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.shape[1] + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logit: f64,
    /// Global-max activations of the two filters; doubles as the clustering
    /// feature vector.
    pub features: [f64; 2],
    /// Top-left corner of the winning window for each filter.
    pub argmax: [(usize, usize); 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineDetectorModel {
    params: Vec<f64>,
}

impl LineDetectorModel {
    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::DimensionMismatch {
                expected: PARAM_COUNT,
                found: params.len(),
            });
        }
        Ok(Self { params })
    }

    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; PARAM_COUNT],
        }
    }

    /// Every parameter uniform in `[-0.5, 0.5]`.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            params: (0..PARAM_COUNT)
                .map(|_| rng.random_range(-0.5..=0.5))
                .collect(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn filter(&self, which: usize) -> &[f64] {
        &self.params[FILTER_OFFSET[which]..FILTER_OFFSET[which] + 9]
    }

    pub fn set_filter(&mut self, which: usize, weights: &[f64; 9]) {
        self.params[FILTER_OFFSET[which]..FILTER_OFFSET[which] + 9].copy_from_slice(weights);
    }

    pub fn bias(&self, which: usize) -> f64 {
        self.params[BIAS_INDEX[which]]
    }

    pub fn dense_weights(&self) -> [f64; 2] {
        [self.params[DENSE_OFFSET], self.params[DENSE_OFFSET + 1]]
    }

    pub fn dense_bias(&self) -> f64 {
        self.params[DENSE_BIAS]
    }

    pub fn forward(&self, image: &Tensor) -> Result<Forward> {
        let (h, w) = image.dims2()?;
        if h < KERNEL || w < KERNEL {
            return Err(Error::UndersizedImage {
                height: h,
                width: w,
            });
        }
        let mut features = [0.0; 2];
        let mut argmax = [(0, 0); 2];
        for which in 0..2 {
            let f = self.filter(which);
            let bias = self.bias(which);
            let mut best = f64::NEG_INFINITY;
            for i in 0..=h - KERNEL {
                for j in 0..=w - KERNEL {
                    let mut acc = bias;
                    for a in 0..KERNEL {
                        for b in 0..KERNEL {
                            acc += f[a * KERNEL + b] * image.at(i + a, j + b);
                        }
                    }
                    // strict comparison keeps the first maximum in row-major order
                    if acc > best {
                        best = acc;
                        argmax[which] = (i, j);
                    }
                }
            }
            features[which] = best;
        }
        let [w0, w1] = self.dense_weights();
        let logit = w0 * features[0] + w1 * features[1] + self.dense_bias();
        Ok(Forward {
            logit,
            features,
            argmax,
        })
    }

    /// Loss of one sample and its gradient, accumulated into `grad` scaled by
    /// `weight`.
    fn backward_into(
        &self,
        sample: &Sample,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<(f64, [f64; 2])> {
        let fwd = self.forward(&sample.image)?;
        let y = sample.target();
        let loss = bce_with_logit(fwd.logit, y);
        let delta = weight * (sigmoid(fwd.logit) - y);
        let dense = self.dense_weights();
        grad[DENSE_OFFSET] += delta * fwd.features[0];
        grad[DENSE_OFFSET + 1] += delta * fwd.features[1];
        grad[DENSE_BIAS] += delta;
        for which in 0..2 {
            let d_feature = delta * dense[which];
            let (i, j) = fwd.argmax[which];
            let off = FILTER_OFFSET[which];
            for a in 0..KERNEL {
                for b in 0..KERNEL {
                    grad[off + a * KERNEL + b] += d_feature * sample.image.at(i + a, j + b);
                }
            }
            grad[BIAS_INDEX[which]] += d_feature;
        }
        Ok((loss, fwd.features))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-y log(sigmoid(z)) - (1-y) log(1 - sigmoid(z))`, evaluated stably.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineOrientation {
    Horizontal = 0,
    Vertical = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: LineOrientation,
}

impl Sample {
    pub fn target(&self) -> f64 {
        self.label as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineDataset {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

impl LineDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(horizontal, vertical)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let v = self
            .samples
            .iter()
            .filter(|s| s.label == LineOrientation::Vertical)
            .count();
        (self.samples.len() - v, v)
    }

    /// One sample per line: `label,height,width,v0,v1,...` in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("label,height,width");
        for i in 0..self.height * self.width {
            let _ = write!(out, ",p{i}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{},{}", s.label as u8, self.height, self.width);
            for v in s.image.values() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing header".into()))?;
        if !header.starts_with("label,height,width") {
            return Err(Error::Parse(format!("unexpected header: {header}")));
        }
        let mut dims = None;
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let bad = |what: &str| Error::Parse(format!("row {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 3 {
                return Err(bad("too few fields"));
            }
            let label = match fields[0] {
                "0" => LineOrientation::Horizontal,
                "1" => LineOrientation::Vertical,
                other => return Err(bad(&format!("label {other}"))),
            };
            let h: usize = fields[1].parse().map_err(|_| bad("height"))?;
            let w: usize = fields[2].parse().map_err(|_| bad("width"))?;
            if *dims.get_or_insert((h, w)) != (h, w) {
                return Err(bad("inconsistent dimensions"));
            }
            let values = fields[3..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad("pixel")))
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                image: Tensor::new(vec![h, w], values)?,
                label,
            });
        }
        let (height, width) = dims.ok_or_else(|| Error::Parse("no samples".into()))?;
        Ok(Self {
            height,
            width,
            samples,
        })
    }
}

/// `p` images with a random full row lit and `q` with a random full column,
/// shuffled, with optional clipped Gaussian pixel noise.
pub fn generate_lines(
    height: usize,
    width: usize,
    p: usize,
    q: usize,
    noise_std: f64,
    seed: u64,
) -> Result<LineDataset> {
    if height < KERNEL || width < KERNEL {
        return Err(Error::UndersizedImage { height, width });
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut samples = Vec::with_capacity(p + q);
    for idx in 0..p + q {
        let mut image = Tensor::zeros(vec![height, width]);
        let label = if idx < p {
            let row = rng.random_range(0..height);
            image.values_mut()[row * width..(row + 1) * width].fill(1.0);
            LineOrientation::Horizontal
        } else {
            let col = rng.random_range(0..width);
            for r in 0..height {
                image.values_mut()[r * width + col] = 1.0;
            }
            LineOrientation::Vertical
        };
        if noise_std > 0.0 {
            for v in image.values_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        samples.push(Sample { image, label });
    }
    samples.shuffle(&mut rng);
    Ok(LineDataset {
        height,
        width,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    pub losses: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
    pub features: Vec<[f64; 2]>,
}

impl PerSampleGrads {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }

    pub fn mean_grad(&self) -> Vec<f64> {
        let mut out = vec![0.0; PARAM_COUNT];
        for g in &self.grads {
            for (o, v) in out.iter_mut().zip(g) {
                *o += v;
            }
        }
        let n = self.grads.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Loss, exact gradient and features of every sample.
pub fn per_sample_grads<'a, I>(model: &LineDetectorModel, batch: I) -> Result<PerSampleGrads>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let mut out = PerSampleGrads {
        losses: vec![],
        grads: vec![],
        features: vec![],
    };
    for sample in batch {
        let mut grad = vec![0.0; PARAM_COUNT];
        let (loss, features) = model.backward_into(sample, 1.0, &mut grad)?;
        out.losses.push(loss);
        out.grads.push(grad);
        out.features.push(features);
    }
    if out.losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(out)
}

/// Mean loss and the gradient of the mean loss, accumulated in one pass.
pub fn batch_loss_and_grad<'a, I>(model: &LineDetectorModel, batch: I) -> Result<(f64, Vec<f64>)>
where
    I: IntoIterator<Item = &'a Sample>,
    I::IntoIter: ExactSizeIterator,
{
    let iter = batch.into_iter();
    let n = iter.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let weight = 1.0 / n as f64;
    let mut grad = vec![0.0; PARAM_COUNT];
    let mut loss = 0.0;
    for sample in iter {
        loss += weight * model.backward_into(sample, weight, &mut grad)?.0;
    }
    Ok((loss, grad))
}

pub fn mean_loss<'a, I>(model: &LineDetectorModel, batch: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for sample in batch {
        total += bce_with_logit(model.forward(&sample.image)?.logit, sample.target());
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(total / n as f64)
}

/// Cosine similarity of the mean-subtracted filter with a template; 0 when
/// either side has zero norm.
pub fn cosine_to_template(filter: &[f64], template: &[f64; 9]) -> f64 {
    let centered = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let a = centered(filter);
    let b = centered(template);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Alignment of filter-1 with the horizontal template and filter-2 with the
/// vertical one.
pub fn template_alignment(model: &LineDetectorModel) -> [f64; 2] {
    [
        cosine_to_template(model.filter(0), &HORIZONTAL_TEMPLATE),
        cosine_to_template(model.filter(1), &VERTICAL_TEMPLATE),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_image(h: usize, w: usize, orientation: LineOrientation, at: usize) -> Tensor {
        let mut img = Tensor::zeros(vec![h, w]);
        for k in 0..if orientation == LineOrientation::Horizontal {
            w
        } else {
            h
        } {
            let idx = match orientation {
                LineOrientation::Horizontal => at * w + k,
                LineOrientation::Vertical => k * w + at,
            };
            img.values_mut()[idx] = 1.0;
        }
        img
    }

    #[test]
    fn parameter_count() {
        assert_eq!(PARAM_COUNT, 23);
        assert_eq!(LineDetectorModel::init(1).params().len(), 23);
        assert!(LineDetectorModel::from_params(vec![0.0; 22]).is_err());
    }

    #[test]
    fn zero_image_gives_dense_bias() {
        let mut m = LineDetectorModel::init(3);
        m.params_mut()[BIAS_INDEX[0]] = 0.0;
        m.params_mut()[BIAS_INDEX[1]] = 0.0;
        let out = m.forward(&Tensor::zeros(vec![8, 8])).unwrap();
        assert_eq!(out.features, [0.0, 0.0]);
        assert_eq!(out.logit, m.dense_bias());
    }

    #[test]
    fn ideal_templates_respond_with_six() {
        let mut m = LineDetectorModel::zeros();
        m.set_filter(0, &HORIZONTAL_TEMPLATE);
        m.set_filter(1, &VERTICAL_TEMPLATE);
        let v = m
            .forward(&line_image(8, 8, LineOrientation::Vertical, 4))
            .unwrap();
        assert_eq!(v.features[1], 6.0);
        let h = m
            .forward(&line_image(8, 8, LineOrientation::Horizontal, 2))
            .unwrap();
        assert_eq!(h.features[0], 6.0);
    }

    #[test]
    fn undersized_image() {
        let m = LineDetectorModel::zeros();
        assert!(matches!(
            m.forward(&Tensor::zeros(vec![2, 8])),
            Err(Error::UndersizedImage { .. })
        ));
    }

    #[test]
    fn bce_matches_naive_formula() {
        for z in [-3.0, -0.2, 0.0, 0.7, 4.0] {
            for y in [0.0, 1.0] {
                let s = 1.0 / (1.0 + f64::exp(-z));
                let naive = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
                assert!((bce_with_logit(z, y) - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generated_counts_and_lines() {
        let ds = generate_lines(8, 8, 95, 5, 0.0, 42).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.counts(), (95, 5));
        for s in &ds.samples {
            let ones = s.image.values().iter().filter(|&&v| v == 1.0).count();
            let zeros = s.image.values().iter().filter(|&&v| v == 0.0).count();
            assert_eq!((ones, zeros), (8, 56));
            let full = match s.label {
                LineOrientation::Horizontal => {
                    (0..8).any(|r| (0..8).all(|c| s.image.at(r, c) == 1.0))
                }
                LineOrientation::Vertical => {
                    (0..8).any(|c| (0..8).all(|r| s.image.at(r, c) == 1.0))
                }
            };
            assert!(full);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_lines(8, 8, 10, 3, 0.1, 9).unwrap();
        let b = generate_lines(8, 8, 10, 3, 0.1, 9).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(generate_lines(2, 8, 1, 1, 0.0, 0).is_err());
    }

    #[test]
    fn single_sample_batch() {
        let ds = generate_lines(8, 8, 1, 0, 0.1, 2).unwrap();
        let m = LineDetectorModel::init(5);
        let psg = per_sample_grads(&m, &ds.samples).unwrap();
        assert_eq!(psg.mean_grad(), psg.grads[0]);
    }

    #[test]
    fn duplicated_sample_rows() {
        let ds = generate_lines(8, 8, 1, 1, 0.1, 2).unwrap();
        let m = LineDetectorModel::init(5);
        let batch = [&ds.samples[1], &ds.samples[0], &ds.samples[1]];
        let psg = per_sample_grads(&m, batch).unwrap();
        assert_eq!(psg.grads[0], psg.grads[2]);
        assert!(per_sample_grads(&m, []).is_err());
    }

    #[test]
    fn alignment_extremes() {
        let mut m = LineDetectorModel::zeros();
        assert_eq!(template_alignment(&m), [0.0, 0.0]);
        m.set_filter(0, &HORIZONTAL_TEMPLATE);
        m.set_filter(1, &VERTICAL_TEMPLATE.map(|v| -v));
        let [a, b] = template_alignment(&m);
        assert!((a - 1.0).abs() < 1e-15);
        assert!((b + 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(LineDataset::from_csv("").is_err());
        assert!(LineDataset::from_csv("label,height,width\n2,3,3,0,0,0,0,0,0,0,0,0\n").is_err());
        assert!(LineDataset::from_csv("label,height,width\n0,3,3,0,0\n").is_err());
    }
}
