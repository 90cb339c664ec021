use super::Activation;
use crate::engine::kernels;
use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineResult};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// `y = x·W (+ b)` over the last axis; leading axes are treated as batch.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> EngineResult<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let xs = vx.shape().to_vec();
        let &[d, m] = vw.shape() else {
            return Err(shape_err("linear", format!("weight shape {:?}", vw.shape())));
        };
        if xs.last() != Some(&d) {
            return Err(shape_err("linear", format!("input {xs:?} vs weight [{d}, {m}]")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [m] {
                return Err(shape_err("linear", format!("bias {:?}", self.value(b).shape())));
            }
        }
        let rows = vx.numel() / d;
        let mut out = kernels::matmul(vx.data(), vw.data(), rows, d, m);
        if let Some(b) = b {
            kernels::add_row_bias(&mut out, self.value(b).data());
        }
        let mut out_shape = xs.clone();
        *out_shape.last_mut().expect("rank >= 1") = m;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", &inputs, Tensor::from_vec(&out_shape, out), move |c| {
            let g = c.grad.data();
            let (vx, vw) = (c.inputs[0], c.inputs[1]);
            let gx = c.needs[0].then(|| {
                Tensor::from_vec(&xs, kernels::matmul_nt(g, vw.data(), rows, m, d))
            });
            let gw = c.needs[1]
                .then(|| Tensor::from_vec(&[d, m], kernels::matmul_tn(vx.data(), g, rows, d, m)));
            let mut grads = vec![gx, gw];
            if c.inputs.len() == 3 {
                grads.push(
                    c.needs[2].then(|| Tensor::from_vec(&[m], kernels::col_sums(g, rows, m))),
                );
            }
            grads
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> EngineResult<Var> {
        let v = self.value(x);
        let k = *v.shape().last().ok_or_else(|| shape_err("softmax", "rank 0"))?;
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(k) {
            kernels::softmax_in_place(row);
        }
        self.push("softmax", &[x], out, move |c| {
            let mut g = c.grad.clone();
            for (grow, yrow) in g.data_mut().chunks_mut(k).zip(c.output.data().chunks(k)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (gv, &y) in grow.iter_mut().zip(yrow) {
                    *gv = y * (*gv - dot);
                }
            }
            vec![Some(g)]
        })
    }

    /// Fully connected layer with an optional activation.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, activation: Activation) -> EngineResult<Var> {
        let y = self.linear(x, w, Some(b))?;
        match activation {
            Activation::None => Ok(y),
            Activation::Relu => self.relu(y),
            Activation::Softmax => self.softmax(y),
        }
    }
}
