use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{LabeledExample, PipelineError};
use crate::rng;

/// Add i.i.d. zero-mean Gaussian noise with per-channel standard deviation
/// `sigma[c]` to a signal window. The noise stream depends only on `seed`
/// and the example's provenance.
pub fn augment_signal_gaussian(example: &LabeledExample, sigma: &[f64], seed: u64) -> Result<LabeledExample, PipelineError> {
    let c = *example.window.shape().last().unwrap_or(&0);
    if sigma.len() != c {
        return Err(PipelineError::ChannelMismatch { expected: sigma.len(), got: c });
    }
    if let Some(&s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(PipelineError::NonPositiveSigma(s));
    }
    let dists: Vec<Normal<f64>> = sigma.iter().map(|&s| Normal::new(0.0, s).unwrap()).collect();
    let mut rng = rng::stream(seed, &example.provenance.seed_tags());
    let mut out = example.clone();
    for row in out.window.data_mut().chunks_mut(c) {
        for (v, d) in row.iter_mut().zip(&dists) {
            *v = (*v as f64 + d.sample(&mut rng)) as f32;
        }
    }
    Ok(out)
}

/// Ranges of the clip-level frame augmentations. Every magnitude is the
/// half-width of a uniform draw around the identity.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameAugment {
    /// Probability of mirroring the clip left to right.
    pub horizontal_flip: f64,
    /// Additive brightness offset, drawn from `[-b, b]`; `b ∈ [0, 1]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1-c, 1+c]`; `c ∈ [0, 1]`.
    pub contrast: f64,
    /// Saturation factor drawn from `[1-s, 1+s]`; `s ∈ [0, 1]`.
    pub saturation: f64,
    /// Hue rotation in turns, drawn from `[-h, h]`; `h ∈ [0, 0.5]`.
    pub hue: f64,
    /// Standard deviation of one noise field shared by every frame;
    /// `σ ∈ [0, 1]`.
    pub gaussian_noise: f64,
}

impl Default for FrameAugment {
    fn default() -> Self {
        FrameAugment {
            horizontal_flip: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
            gaussian_noise: 0.0,
        }
    }
}

impl FrameAugment {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let checks = [
            ("horizontal_flip", self.horizontal_flip, 1.0),
            ("brightness", self.brightness, 1.0),
            ("contrast", self.contrast, 1.0),
            ("saturation", self.saturation, 1.0),
            ("hue", self.hue, 0.5),
            ("gaussian_noise", self.gaussian_noise, 1.0),
        ];
        for (name, v, hi) in checks {
            if !(0.0..=hi).contains(&v) {
                return Err(PipelineError::BadRange(format!("{name} = {v} outside [0, {hi}]")));
            }
        }
        Ok(())
    }

    /// Draw one clip-level transform for frames of `height × width`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, height: usize, width: usize) -> FrameTransform {
        let mut sym = |half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
        let brightness = sym(self.brightness);
        let contrast = 1.0 + sym(self.contrast);
        let saturation = 1.0 + sym(self.saturation);
        let hue = sym(self.hue);
        let flip = rng.gen_bool(self.horizontal_flip);
        let noise = (self.gaussian_noise > 0.0).then(|| {
            let d = Normal::new(0.0, self.gaussian_noise).unwrap();
            (0..height * width * 3).map(|_| d.sample(rng) as f32).collect()
        });
        FrameTransform {
            flip,
            brightness: brightness as f32,
            contrast: contrast as f32,
            saturation: saturation as f32,
            hue: hue as f32,
            noise,
        }
    }
}

/// Concrete photometric/geometric transform applied identically to every
/// frame of a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTransform {
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Rotation about the gray axis, in turns.
    pub hue: f32,
    /// One `[H, W, 3]` field added to every frame.
    pub noise: Option<Vec<f32>>,
}

impl Default for FrameTransform {
    fn default() -> Self {
        FrameTransform {
            flip: false,
            brightness: 0.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
            noise: None,
        }
    }
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn hue_matrix(turns: f32) -> [[f32; 3]; 3] {
    let (s, c) = (std::f32::consts::TAU * turns).sin_cos();
    let a = (1.0 - c) / 3.0;
    let b = (1.0f32 / 3.0).sqrt() * s;
    [[c + a, a - b, a + b], [a + b, c + a, a - b], [a - b, a + b, c + a]]
}

impl FrameTransform {
    /// Apply to a clip `[F, H, W, 3]`, clamping to `[0, 1]` after each
    /// photometric step.
    pub fn apply(&self, clip: &crate::Tensor<f32>) -> crate::Tensor<f32> {
        let (h, w) = (clip.dim(1), clip.dim(2));
        let mut out = clip.clone();
        let clamp = |v: f32| v.clamp(0.0, 1.0);
        for frame in out.data_mut().chunks_mut(h * w * 3) {
            if self.flip {
                for row in frame.chunks_mut(w * 3) {
                    for x in 0..w / 2 {
                        for ch in 0..3 {
                            row.swap(x * 3 + ch, (w - 1 - x) * 3 + ch);
                        }
                    }
                }
            }
            if self.brightness != 0.0 {
                frame.iter_mut().for_each(|v| *v = clamp(*v + self.brightness));
            }
            if self.contrast != 1.0 {
                let mean = frame.chunks(3).map(luma).sum::<f32>() / (h * w) as f32;
                frame.iter_mut().for_each(|v| *v = clamp(mean + (*v - mean) * self.contrast));
            }
            if self.saturation != 1.0 {
                for px in frame.chunks_mut(3) {
                    let g = luma(px);
                    px.iter_mut().for_each(|v| *v = clamp(g + (*v - g) * self.saturation));
                }
            }
            if self.hue != 0.0 {
                let m = hue_matrix(self.hue);
                for px in frame.chunks_mut(3) {
                    let p = [px[0], px[1], px[2]];
                    for (o, row) in px.iter_mut().zip(&m) {
                        *o = clamp(row[0] * p[0] + row[1] * p[1] + row[2] * p[2]);
                    }
                }
            }
            if let Some(noise) = &self.noise {
                for (v, n) in frame.iter_mut().zip(noise) {
                    *v = clamp(*v + n);
                }
            }
        }
        out
    }
}

/// Draw one transform for the clip (seeded by `seed` and provenance) and
/// apply it to every frame.
pub fn augment_frames(example: &LabeledExample, ops: &FrameAugment, seed: u64) -> Result<LabeledExample, PipelineError> {
    ops.validate()?;
    if example.window.rank() != 4 || example.window.dim(3) != 3 {
        return Err(PipelineError::Config(format!(
            "frame augmentation needs a [F, H, W, 3] clip, got {:?}",
            example.window.shape()
        )));
    }
    let mut rng = rng::stream(seed, &example.provenance.seed_tags());
    let t = ops.sample(&mut rng, example.window.dim(1), example.window.dim(2));
    Ok(LabeledExample {
        window: t.apply(&example.window),
        ..example.clone()
    })
}
