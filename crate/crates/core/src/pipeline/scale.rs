use super::{LabeledExample, PipelineError};
use crate::ingest::FrameSequence;
use crate::Tensor;

pub const SCALER_EPSILON: f64 = 1e-8;

/// Per-channel standardization fitted on training windows.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl ScalerParams {
    pub fn identity(channels: usize) -> Self {
        ScalerParams {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            epsilon: SCALER_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_constant(&self, c: usize) -> bool {
        self.std[c] < self.epsilon
    }

    /// What each channel is divided by: its std, or 1 for constant
    /// channels.
    pub fn divisor(&self, c: usize) -> f64 {
        if self.is_constant(c) {
            1.0
        } else {
            self.std[c]
        }
    }
}

/// Running count/mean/M2 for one channel (Welford, with Chan's merge).
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }
}

/// Fit per-channel mean and population std over every row of every window.
pub fn fit_scaler(train: &[LabeledExample], epsilon: f64) -> Result<ScalerParams, PipelineError> {
    let first = train.first().ok_or(PipelineError::EmptyInput)?;
    let c = *first.window.shape().last().unwrap();
    let mut total = vec![Moments::default(); c];
    for e in train {
        let got = *e.window.shape().last().unwrap();
        if got != c {
            return Err(PipelineError::ChannelMismatch { expected: c, got });
        }
        let mut local = vec![Moments::default(); c];
        for row in e.window.data().chunks(c) {
            for (m, &v) in local.iter_mut().zip(row) {
                m.push(v as f64);
            }
        }
        for (t, l) in total.iter_mut().zip(&local) {
            t.merge(l);
        }
    }
    if total[0].n == 0.0 {
        return Err(PipelineError::EmptyInput);
    }
    Ok(ScalerParams {
        mean: total.iter().map(|m| m.mean).collect(),
        std: total.iter().map(|m| (m.m2 / m.n).max(0.0).sqrt()).collect(),
        epsilon,
    })
}

/// `(x − mean) / divisor` per channel.
pub fn apply_scaler(params: &ScalerParams, example: &LabeledExample) -> Result<LabeledExample, PipelineError> {
    let c = params.channels();
    let got = *example.window.shape().last().unwrap_or(&0);
    if got != c {
        return Err(PipelineError::ChannelMismatch { expected: c, got });
    }
    let scale: Vec<(f64, f64)> = (0..c).map(|i| (params.mean[i], params.divisor(i))).collect();
    let mut out = example.clone();
    for row in out.window.data_mut().chunks_mut(c) {
        for (v, &(m, d)) in row.iter_mut().zip(&scale) {
            *v = ((*v as f64 - m) / d) as f32;
        }
    }
    Ok(out)
}

/// Map raw pixel values from `[0, 255]` to `[0, 1]` (already scaled
/// sequences are kept as is) and resize to `target` (height, width) if
/// given.
pub fn scale_frames(seq: &FrameSequence, target: Option<(usize, usize)>) -> Result<FrameSequence, PipelineError> {
    let limit = if seq.scaled { 1.0 } else { 255.0 };
    if let Some(&v) = seq.frames.data().iter().find(|v| !(0.0..=limit).contains(*v)) {
        return Err(PipelineError::OutOfRange(v));
    }
    let mut frames = if seq.scaled {
        seq.frames.clone()
    } else {
        seq.frames.map(|v| v / 255.0)
    };
    if let Some((h, w)) = target {
        if (h, w) != (frames.dim(1), frames.dim(2)) {
            frames = resize_bilinear(&frames, h, w)?;
        }
    }
    Ok(FrameSequence {
        frames: frames.map(|v| v.clamp(0.0, 1.0)),
        scaled: true,
        ..seq.clone()
    })
}

/// Bilinear resize of `[T, H, W, C]` with half-pixel sample centers and
/// edge clamping.
pub fn resize_bilinear(frames: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>, PipelineError> {
    if frames.rank() != 4 || height == 0 || width == 0 {
        return Err(PipelineError::Config(format!(
            "cannot resize {:?} to {height}x{width}",
            frames.shape()
        )));
    }
    let (t, h, w, c) = (frames.dim(0), frames.dim(1), frames.dim(2), frames.dim(3));
    let taps = |dst: usize, src: usize, out: usize| {
        let x = ((dst as f64 + 0.5) * src as f64 / out as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        (lo, hi, (x - lo as f64) as f32)
    };
    let ys: Vec<_> = (0..height).map(|y| taps(y, h, height)).collect();
    let xs: Vec<_> = (0..width).map(|x| taps(x, w, width)).collect();
    let src = frames.data();
    let mut out = vec![0.0f32; t * height * width * c];
    for f in 0..t {
        let base = f * h * w * c;
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let o = ((f * height + y) * width + x) * c;
                for ch in 0..c {
                    let p = |yy: usize, xx: usize| src[base + (yy * w + xx) * c + ch];
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    out[o + ch] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[t, height, width, c], out))
}

/// Inverse-frequency weights `total / (K · count_c)`.
pub fn compute_class_weights(counts: &[usize]) -> Result<Vec<f64>, PipelineError> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(PipelineError::ZeroCountClass(c));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}
