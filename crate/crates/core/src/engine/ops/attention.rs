use std::sync::Arc;

use crate::engine::kernels::softmax_in_place;
use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineError, EngineResult};
use crate::par;
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// Multi-head scaled dot-product attention inside each window.
    ///
    /// `qkv: [nB, n, 3D]` holds the projected queries, keys and values
    /// side by side; heads split `D` into contiguous blocks of `D/heads`.
    /// `mask: [nW, n, n]` is added to the logits of window `b mod nW`, so
    /// `nB` must be a multiple of `nW` with windows ordered batch-major.
    /// Returns the concatenated heads, `[nB, n, D]`.
    pub fn window_attention(
        &mut self,
        qkv: Var,
        heads: usize,
        mask: Option<Arc<Tensor<T>>>,
    ) -> EngineResult<Var> {
        let v = self.value(qkv);
        let &[nb, n, d3] = v.shape() else {
            return Err(shape_err("window_attention", format!("qkv {:?}", v.shape())));
        };
        let d = d3 / 3;
        if d3 % 3 != 0 {
            return Err(shape_err("window_attention", format!("last dim {d3} not 3·D")));
        }
        if heads == 0 || d % heads != 0 {
            return Err(EngineError::HeadsDontDivide { dim: d, heads });
        }
        if let Some(m) = &mask {
            let ok = m.rank() == 3 && m.dim(1) == n && m.dim(2) == n && m.dim(0) > 0 && nb % m.dim(0) == 0;
            if !ok {
                return Err(shape_err(
                    "window_attention",
                    format!("mask {:?} for {nb} windows of {n} tokens", m.shape()),
                ));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::of_f64(dh as f64).sqrt();
        let data = v.data();

        let per_window = par::map_range(nb, |b| {
            let win = &data[b * n * d3..(b + 1) * n * d3];
            let mask_w = mask.as_ref().map(|m| {
                let w = b % m.dim(0);
                &m.data()[w * n * n..(w + 1) * n * n]
            });
            let mut out = vec![T::zero(); n * d];
            let mut probs = vec![T::zero(); heads * n * n];
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                let p = &mut probs[h * n * n..(h + 1) * n * n];
                for i in 0..n {
                    let q = &win[i * d3 + qo..i * d3 + qo + dh];
                    let row = &mut p[i * n..(i + 1) * n];
                    for (j, s) in row.iter_mut().enumerate() {
                        let k = &win[j * d3 + ko..j * d3 + ko + dh];
                        let dot: T = q.iter().zip(k).map(|(&a, &b)| a * b).sum();
                        *s = dot * scale + mask_w.map_or(T::zero(), |m| m[i * n + j]);
                    }
                    softmax_in_place(row);
                    let o = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                    for (j, &pij) in row.iter().enumerate() {
                        let vv = &win[j * d3 + vo..j * d3 + vo + dh];
                        for (ov, &x) in o.iter_mut().zip(vv) {
                            *ov = *ov + pij * x;
                        }
                    }
                }
            }
            (out, probs)
        });

        let mut out = Vec::with_capacity(nb * n * d);
        let mut probs = Vec::with_capacity(nb * heads * n * n);
        for (o, p) in per_window {
            out.extend(o);
            probs.extend(p);
        }

        self.push("window_attention", &[qkv], Tensor::from_vec(&[nb, n, d], out), move |c| {
            let data = c.inputs[0].data();
            let gout = c.grad.data();
            let grads = par::map_range(nb, |b| {
                let win = &data[b * n * d3..(b + 1) * n * d3];
                let go = &gout[b * n * d..(b + 1) * n * d];
                let mut g = vec![T::zero(); n * d3];
                let mut dp = vec![T::zero(); n];
                for h in 0..heads {
                    let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                    let p = &probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
                    for i in 0..n {
                        let goi = &go[i * d + h * dh..i * d + (h + 1) * dh];
                        let prow = &p[i * n..(i + 1) * n];
                        for j in 0..n {
                            let vv = &win[j * d3 + vo..j * d3 + vo + dh];
                            dp[j] = goi.iter().zip(vv).map(|(&a, &b)| a * b).sum();
                            // dV_j += P_ij · dO_i
                            for (dv, &x) in g[j * d3 + vo..j * d3 + vo + dh].iter_mut().zip(goi) {
                                *dv = *dv + prow[j] * x;
                            }
                        }
                        let s: T = prow.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            let ds = prow[j] * (dp[j] - s) * scale;
                            if ds == T::zero() {
                                continue;
                            }
                            for e in 0..dh {
                                let kj = win[j * d3 + ko + e];
                                let qi = win[i * d3 + qo + e];
                                g[i * d3 + qo + e] = g[i * d3 + qo + e] + ds * kj;
                                g[j * d3 + ko + e] = g[j * d3 + ko + e] + ds * qi;
                            }
                        }
                    }
                }
                g
            });
            vec![Some(Tensor::from_vec(&[nb, n, d3], grads.concat()))]
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use crate::engine::gradcheck::{check_gradients, random_tensor};
    use crate::engine::{EngineError, Tape};
    use crate::tensor::Tensor;

    #[test]
    fn single_token_returns_its_value() {
        let mut t = Tape::<f64>::new();
        let qkv = random_tensor(&[2, 1, 12], 4);
        let x = t.constant(qkv.clone());
        let y = t.window_attention(x, 2, None).unwrap();
        for b in 0..2 {
            assert_eq!(&t.value(y).data()[b * 4..b * 4 + 4], &qkv.data()[b * 12 + 8..b * 12 + 12]);
        }
    }

    #[test]
    fn diagonal_mask_isolates_tokens() {
        let n = 3;
        let mut m = Tensor::full(&[1, n, n], -1e9);
        for i in 0..n {
            m.data_mut()[i * n + i] = 0.0;
        }
        let qkv = random_tensor(&[1, n, 6], 8);
        let mut t = Tape::<f64>::new();
        let x = t.constant(qkv.clone());
        let y = t.window_attention(x, 1, Some(Arc::new(m))).unwrap();
        for i in 0..n {
            for e in 0..2 {
                assert_eq!(t.value(y).data()[i * 2 + e], qkv.data()[i * 6 + 4 + e]);
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[1, 2, 9], 1));
        assert_eq!(
            t.window_attention(x, 2, None).unwrap_err(),
            EngineError::HeadsDontDivide { dim: 3, heads: 2 }
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        for trial in 0..10 {
            let n = 4;
            let mut m = random_tensor(&[2, n, n], 400 + trial).map(|v| if v > 0.3 { -1e9 } else { 0.0 });
            for w in 0..2 {
                for i in 0..n {
                    m.data_mut()[w * n * n + i * n + i] = 0.0;
                }
            }
            let mask = Arc::new(m);
            let qkv = random_tensor(&[4, n, 12], 410 + trial);
            let r = check_gradients(&[qkv], |t, v| t.window_attention(v[0], 2, Some(mask.clone())))
                .unwrap();
            assert!(r.passed(1e-4), "{r:?}");
        }
    }
}
