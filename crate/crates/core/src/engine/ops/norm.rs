use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineResult, Mode};
use crate::tensor::{Real, Tensor};

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNormStats<T> {
    pub fn identity(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

fn channel_moments<T: Real>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len() / c;
    let inv_n = T::one() / T::of_f64(n as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_n);
    let mut var = vec![T::zero(); c];
    for row in x.chunks(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s = *s + d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s * inv_n);
    (mean, var)
}

impl<T: Real> Tape<T> {
    /// Batch normalization over every axis but the last.
    ///
    /// In train mode the batch statistics are used and the updated running
    /// statistics are returned (`running ← (1−momentum)·running +
    /// momentum·batch`, biased batch variance). In eval mode `running` is
    /// used as is; `None` falls back to mean 0 / variance 1.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: Option<&BatchNormStats<T>>,
        momentum: T,
        eps: T,
    ) -> EngineResult<(Var, Option<BatchNormStats<T>>)> {
        let vx = self.value(x);
        let c = *vx.shape().last().ok_or_else(|| shape_err("batchnorm", "rank 0"))?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(shape_err("batchnorm", format!("{c} channels vs affine params")));
        }
        let shape = vx.shape().to_vec();
        let (mean, var, updated) = match mode {
            Mode::Train => {
                let (mean, var) = channel_moments(vx.data(), c);
                let prev = running.cloned().unwrap_or_else(|| BatchNormStats::identity(c));
                let keep = T::one() - momentum;
                let updated = BatchNormStats {
                    mean: prev.mean.iter().zip(&mean).map(|(&r, &b)| keep * r + momentum * b).collect(),
                    var: prev.var.iter().zip(&var).map(|(&r, &b)| keep * r + momentum * b).collect(),
                };
                (mean, var, Some(updated))
            }
            Mode::Eval => {
                let stats = match running {
                    Some(s) => s.clone(),
                    None => {
                        log::warn!("batchnorm evaluated before any training step; using mean 0, variance 1");
                        BatchNormStats::identity(c)
                    }
                };
                (stats.mean, stats.var, None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = vx.data().to_vec();
        for row in xhat.chunks_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for ((v, &gv), &bv) in row.iter_mut().zip(&g).zip(&b) {
                *v = gv * *v + bv;
            }
        }
        let batch_stats = mode == Mode::Train;
        let y = self.push("batchnorm", &[x, gamma, beta], Tensor::from_vec(&shape, out), move |ctx| {
            let gy = ctx.grad.data();
            let gamma = ctx.inputs[1].data();
            let n = T::of_f64((gy.len() / c) as f64);
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (grow, xrow) in gy.chunks(c).zip(xhat.chunks(c)) {
                for j in 0..c {
                    sum_g[j] = sum_g[j] + grow[j];
                    sum_gx[j] = sum_gx[j] + grow[j] * xrow[j];
                }
            }
            let gx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); gy.len()];
                for ((drow, grow), xrow) in dx.chunks_mut(c).zip(gy.chunks(c)).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        let scale = gamma[j] * inv_std[j];
                        drow[j] = if batch_stats {
                            scale * (grow[j] - sum_g[j] / n - xrow[j] * sum_gx[j] / n)
                        } else {
                            scale * grow[j]
                        };
                    }
                }
                Tensor::from_vec(&shape, dx)
            });
            vec![
                gx,
                ctx.needs[1].then(|| Tensor::from_vec(&[c], sum_gx.clone())),
                ctx.needs[2].then(|| Tensor::from_vec(&[c], sum_g.clone())),
            ]
        })?;
        Ok((y, updated))
    }

    /// Layer normalization over the last axis.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> EngineResult<Var> {
        let vx = self.value(x);
        let d = *vx.shape().last().ok_or_else(|| shape_err("layernorm", "rank 0"))?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(shape_err("layernorm", format!("width {d} vs affine params")));
        }
        let shape = vx.shape().to_vec();
        let rows = vx.numel() / d;
        let inv_d = T::one() / T::of_f64(d as f64);
        let mut xhat = vx.data().to_vec();
        let mut inv_std = vec![T::zero(); rows];
        for (r, row) in xhat.chunks_mut(d).enumerate() {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let s = T::one() / (var + eps).sqrt();
            inv_std[r] = s;
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((v, &gv), &bv) in row.iter_mut().zip(g).zip(b) {
                *v = gv * *v + bv;
            }
        }
        self.push("layernorm", &[x, gamma, beta], Tensor::from_vec(&shape, out), move |ctx| {
            let gy = ctx.grad.data();
            let gamma = ctx.inputs[1].data();
            let gx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); gy.len()];
                for (r, ((drow, grow), xrow)) in dx
                    .chunks_mut(d)
                    .zip(gy.chunks(d))
                    .zip(xhat.chunks(d))
                    .enumerate()
                {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        let dxh = grow[j] * gamma[j];
                        s1 = s1 + dxh;
                        s2 = s2 + dxh * xrow[j];
                    }
                    for j in 0..d {
                        let dxh = grow[j] * gamma[j];
                        drow[j] = inv_std[r] * (dxh - s1 * inv_d - xrow[j] * s2 * inv_d);
                    }
                }
                Tensor::from_vec(&shape, dx)
            });
            let (gg, gb) = if ctx.needs[1] || ctx.needs[2] {
                let mut gg = vec![T::zero(); d];
                let mut gb = vec![T::zero(); d];
                for (grow, xrow) in gy.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] = gg[j] + grow[j] * xrow[j];
                        gb[j] = gb[j] + grow[j];
                    }
                }
                (Some(Tensor::from_vec(&[d], gg)), Some(Tensor::from_vec(&[d], gb)))
            } else {
                (None, None)
            };
            vec![gx, gg.filter(|_| ctx.needs[1]), gb.filter(|_| ctx.needs[2])]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::BatchNormStats;
    use crate::engine::gradcheck::{check_gradients, random_tensor};
    use crate::engine::{Mode, Tape};
    use crate::tensor::Tensor;

    fn bn(x: Tensor, mode: Mode, running: Option<&BatchNormStats<f64>>, eps: f64) -> (Tensor, Option<BatchNormStats<f64>>) {
        let c = *x.shape().last().unwrap();
        let mut t = Tape::<f64>::new();
        let x = t.constant(x);
        let g = t.constant(Tensor::full(&[c], 1.0));
        let b = t.constant(Tensor::zeros(&[c]));
        let (y, s) = t.batchnorm(x, g, b, mode, running, 0.1, eps).unwrap();
        (t.value(y).clone(), s)
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let x = random_tensor(&[4, 10, 3], 9).map(|v| 3.0 * v + 1.5);
        let (y, stats) = bn(x, Mode::Train, None, 1e-12);
        let n = 40.0;
        for ch in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(3).copied().collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-6, "var {var}");
        }
        let stats = stats.unwrap();
        assert!(stats.mean.iter().all(|m| m.abs() > 0.0));
    }

    #[test]
    fn identical_samples_normalize_to_zero() {
        let x = Tensor::full(&[3, 5, 2], 0.7);
        let (y, _) = bn(x, Mode::Train, None, 1e-5);
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = random_tensor(&[2, 4, 3], 3);
        let stats = BatchNormStats::identity(3);
        let (y, updated) = bn(x.clone(), Mode::Eval, Some(&stats), 0.0);
        assert!(updated.is_none());
        assert_eq!(y, x);
    }

    #[test]
    fn batchnorm_gradients() {
        for trial in 0..10 {
            let mode = if trial % 2 == 0 { Mode::Train } else { Mode::Eval };
            let stats = BatchNormStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
            let inputs = [
                random_tensor(&[3, 4, 3], 70 + trial),
                random_tensor(&[3], 80 + trial),
                random_tensor(&[3], 90 + trial),
            ];
            let r = check_gradients(&inputs, |t, v| {
                Ok(t.batchnorm(v[0], v[1], v[2], mode, Some(&stats), 0.1, 1e-5)?.0)
            })
            .unwrap();
            assert!(r.passed(1e-4), "{mode:?}: {r:?}");
        }
    }

    #[test]
    fn layernorm_gradients() {
        for trial in 0..10 {
            let inputs = [
                random_tensor(&[2, 3, 6], 100 + trial),
                random_tensor(&[6], 110 + trial),
                random_tensor(&[6], 120 + trial),
            ];
            let r = check_gradients(&inputs, |t, v| t.layernorm(v[0], v[1], v[2], 1e-5)).unwrap();
            assert!(r.passed(1e-4), "{r:?}");
        }
    }
}
