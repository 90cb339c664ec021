use std::sync::Arc;

use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineResult};
use crate::par;
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// `out[i] = x[index[i]]` reshaped to `shape`. Any re-layout (rolls,
    /// window partitions, neighbourhood concatenation) is a gather; the
    /// backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>, shape: &[usize]) -> EngineResult<Var> {
        let vx = self.value(x);
        let n: usize = shape.iter().product();
        if n != index.len() || index.iter().any(|&i| i >= vx.numel()) {
            return Err(shape_err(
                "gather",
                format!("{} indices into {} elements as {shape:?}", index.len(), vx.numel()),
            ));
        }
        let src = vx.data();
        let mut out = vec![T::zero(); n];
        par::for_each_chunk_mut(&mut out, 4096, n, |ci, chunk| {
            let base = ci * 4096;
            for (j, o) in chunk.iter_mut().enumerate() {
                *o = src[index[base + j]];
            }
        });
        let in_shape = vx.shape().to_vec();
        self.push("gather", &[x], Tensor::from_vec(shape, out), move |c| {
            let mut g = Tensor::zeros(&in_shape);
            let dst = g.data_mut();
            for (&i, &gv) in index.iter().zip(c.grad.data()) {
                dst[i] = dst[i] + gv;
            }
            vec![Some(g)]
        })
    }
}
