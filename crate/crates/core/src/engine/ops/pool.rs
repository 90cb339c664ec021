use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineError, EngineResult};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// Max pooling along axis 1 of `[B, L, C]`. The gradient of each window
    /// goes to the first position holding its maximum.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> EngineResult<Var> {
        let vx = self.value(x);
        let &[b, len, c] = vx.shape() else {
            return Err(shape_err("maxpool1d", format!("input {:?}", vx.shape())));
        };
        if window == 0 || stride == 0 {
            return Err(shape_err("maxpool1d", "window and stride must be positive"));
        }
        if window > len {
            return Err(EngineError::WindowTooLarge { window, len });
        }
        let out_len = (len - window) / stride + 1;
        let data = vx.data();
        let mut out = vec![T::zero(); b * out_len * c];
        let mut argmax = vec![0usize; b * out_len * c];
        for bi in 0..b {
            for t in 0..out_len {
                for ch in 0..c {
                    let mut best = (bi * len + t * stride) * c + ch;
                    for w in 1..window {
                        let idx = (bi * len + t * stride + w) * c + ch;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    let o = (bi * out_len + t) * c + ch;
                    out[o] = data[best];
                    argmax[o] = best;
                }
            }
        }
        let in_shape = vec![b, len, c];
        self.push(
            "maxpool1d",
            &[x],
            Tensor::from_vec(&[b, out_len, c], out),
            move |ctx| {
                let mut gx = Tensor::zeros(&in_shape);
                let dst = gx.data_mut();
                for (&src, &g) in argmax.iter().zip(ctx.grad.data()) {
                    dst[src] = dst[src] + g;
                }
                vec![Some(gx)]
            },
        )
    }
}
