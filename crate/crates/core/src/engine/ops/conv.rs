use super::Padding;
use crate::engine::kernels;
use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineError, EngineResult};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    len: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
    pad_left: usize,
    out_len: usize,
}

impl Geometry {
    fn cols<T: Real>(&self, x: &[T]) -> Vec<T> {
        let row = self.k * self.cin;
        let mut cols = vec![T::zero(); self.batch * self.out_len * row];
        for b in 0..self.batch {
            for t in 0..self.out_len {
                let dst = &mut cols[(b * self.out_len + t) * row..(b * self.out_len + t + 1) * row];
                for kk in 0..self.k {
                    let pos = (t * self.stride + kk) as isize - self.pad_left as isize;
                    if pos < 0 || pos as usize >= self.len {
                        continue;
                    }
                    let src = (b * self.len + pos as usize) * self.cin;
                    dst[kk * self.cin..(kk + 1) * self.cin]
                        .copy_from_slice(&x[src..src + self.cin]);
                }
            }
        }
        cols
    }

    fn scatter_cols<T: Real>(&self, dcols: &[T]) -> Vec<T> {
        let row = self.k * self.cin;
        let mut dx = vec![T::zero(); self.batch * self.len * self.cin];
        for b in 0..self.batch {
            for t in 0..self.out_len {
                let src = &dcols[(b * self.out_len + t) * row..(b * self.out_len + t + 1) * row];
                for kk in 0..self.k {
                    let pos = (t * self.stride + kk) as isize - self.pad_left as isize;
                    if pos < 0 || pos as usize >= self.len {
                        continue;
                    }
                    let dst = (b * self.len + pos as usize) * self.cin;
                    for (d, &s) in dx[dst..dst + self.cin]
                        .iter_mut()
                        .zip(&src[kk * self.cin..(kk + 1) * self.cin])
                    {
                        *d = *d + s;
                    }
                }
            }
        }
        dx
    }
}

impl<T: Real> Tape<T> {
    /// 1-D convolution over `[B, L, Cin]` with a `[K, Cin, Cout]` kernel.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> EngineResult<Var> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        let &[batch, len, cin] = vx.shape() else {
            return Err(shape_err("conv1d", format!("input {:?}", vx.shape())));
        };
        let &[k, kcin, cout] = vk.shape() else {
            return Err(shape_err("conv1d", format!("kernel {:?}", vk.shape())));
        };
        if kcin != cin || self.value(bias).shape() != [cout] || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!(
                    "input {:?}, kernel {:?}, bias {:?}, stride {stride}",
                    vx.shape(),
                    vk.shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let (pad_left, out_len) = match padding {
            Padding::Valid => {
                if len < k {
                    return Err(EngineError::KernelTooLarge { kernel: k, len });
                }
                (0, (len - k) / stride + 1)
            }
            Padding::Same => {
                let out_len = len.div_ceil(stride);
                let total = ((out_len - 1) * stride + k).saturating_sub(len);
                (total / 2, out_len)
            }
        };
        let geo = Geometry {
            batch,
            len,
            cin,
            k,
            cout,
            stride,
            pad_left,
            out_len,
        };
        let cols = geo.cols(vx.data());
        let rows = batch * out_len;
        let mut out = kernels::matmul(&cols, vk.data(), rows, k * cin, cout);
        kernels::add_row_bias(&mut out, self.value(bias).data());
        let out = Tensor::from_vec(&[batch, out_len, cout], out);
        self.push("conv1d", &[x, kernel, bias], out, move |c| {
            let g = c.grad.data();
            let rows = geo.batch * geo.out_len;
            let kc = geo.k * geo.cin;
            let gx = c.needs[0].then(|| {
                let dcols = kernels::matmul_nt(g, c.inputs[1].data(), rows, geo.cout, kc);
                Tensor::from_vec(&[geo.batch, geo.len, geo.cin], geo.scatter_cols(&dcols))
            });
            let gk = c.needs[1].then(|| {
                let cols = geo.cols(c.inputs[0].data());
                Tensor::from_vec(
                    &[geo.k, geo.cin, geo.cout],
                    kernels::matmul_tn(&cols, g, rows, kc, geo.cout),
                )
            });
            let gb = c.needs[2]
                .then(|| Tensor::from_vec(&[geo.cout], kernels::col_sums(g, rows, geo.cout)));
            vec![gx, gk, gb]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::engine::gradcheck::{check_gradients, random_tensor};
    use crate::engine::{EngineError, Padding, Tape};
    use crate::tensor::Tensor;

    fn run(x: Tensor, k: Tensor, stride: usize, padding: Padding) -> Result<Tensor, EngineError> {
        let cout = k.dim(2);
        let mut t = Tape::<f64>::new();
        let (x, k) = (t.constant(x), t.constant(k));
        let b = t.constant(Tensor::zeros(&[cout]));
        let y = t.conv1d(x, k, b, stride, padding)?;
        Ok(t.value(y).clone())
    }

    #[test]
    fn valid_output_length() {
        let y = run(random_tensor(&[1, 100, 4], 1), random_tensor(&[3, 4, 2], 2), 1, Padding::Valid)
            .unwrap();
        assert_eq!(y.shape(), &[1, 98, 2]);
    }

    #[test]
    fn same_output_length() {
        let y = run(random_tensor(&[2, 11, 3], 1), random_tensor(&[4, 3, 2], 2), 2, Padding::Same)
            .unwrap();
        assert_eq!(y.shape(), &[2, 6, 2]);
    }

    #[test]
    fn delta_kernel_selects_interior() {
        let x = Tensor::from_vec(&[1, 6, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let k = Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 0.0]);
        let y = run(x, k, 1, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn same_padding_keeps_delta_identity() {
        let x = Tensor::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let k = Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 0.0]);
        let y = run(x, k, 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn kernel_longer_than_input_rejected() {
        let err = run(random_tensor(&[1, 2, 1], 1), random_tensor(&[3, 1, 1], 2), 1, Padding::Valid)
            .unwrap_err();
        assert_eq!(err, EngineError::KernelTooLarge { kernel: 3, len: 2 });
    }

    #[test]
    fn gradients_match_finite_differences() {
        for trial in 0..10 {
            let stride = 1 + (trial % 2) as usize;
            let padding = if trial % 3 == 0 { Padding::Same } else { Padding::Valid };
            let inputs = [
                random_tensor(&[2, 9, 3], 40 + trial),
                random_tensor(&[3, 3, 4], 50 + trial),
                random_tensor(&[4], 60 + trial),
            ];
            let r = check_gradients(&inputs, |t, v| t.conv1d(v[0], v[1], v[2], stride, padding))
                .unwrap();
            assert!(r.passed(1e-4), "trial {trial}: {r:?}");
        }
    }
}
