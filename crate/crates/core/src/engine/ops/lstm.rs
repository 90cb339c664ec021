use crate::engine::kernels::{self, sigmoid};
use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineResult};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// One LSTM layer over `[B, T, Din]` with zero initial state.
    ///
    /// `w: [Din, 4H]`, `u: [H, 4H]`, `b: [4H]`, gate blocks ordered
    /// `[i, f, g, o]`:
    ///
    /// ```text
    /// z_t = x_t·W + h_{t-1}·U + b
    /// c_t = σ(z_f) ⊙ c_{t-1} + σ(z_i) ⊙ tanh(z_g)
    /// h_t = σ(z_o) ⊙ tanh(c_t)
    /// ```
    ///
    /// Returns `[B, T, H]` when `return_sequences`, else the last `h_T` as
    /// `[B, H]`. The backward pass is full backpropagation through time.
    pub fn lstm(
        &mut self,
        x: Var,
        w: Var,
        u: Var,
        b: Var,
        return_sequences: bool,
    ) -> EngineResult<Var> {
        let vx = self.value(x);
        let &[batch, steps, din] = vx.shape() else {
            return Err(shape_err("lstm", format!("input {:?}", vx.shape())));
        };
        let h = self.value(u).dim(0);
        let g4 = 4 * h;
        if self.value(w).shape() != [din, g4]
            || self.value(u).shape() != [h, g4]
            || self.value(b).shape() != [g4]
            || steps == 0
        {
            return Err(shape_err(
                "lstm",
                format!(
                    "input {:?}, W {:?}, U {:?}, b {:?}",
                    vx.shape(),
                    self.value(w).shape(),
                    self.value(u).shape(),
                    self.value(b).shape()
                ),
            ));
        }

        let mut xw = kernels::matmul(vx.data(), self.value(w).data(), batch * steps, din, g4);
        kernels::add_row_bias(&mut xw, self.value(b).data());
        let u_data = self.value(u).data().to_vec();

        // Post-activation gates, cell states and hidden states, all
        // indexed [b, t, ...].
        let mut gates = vec![T::zero(); batch * steps * g4];
        let mut cells = vec![T::zero(); batch * steps * h];
        let mut hidden = vec![T::zero(); batch * steps * h];
        let mut h_prev = vec![T::zero(); batch * h];
        let mut c_prev = vec![T::zero(); batch * h];
        for t in 0..steps {
            let hu = kernels::matmul(&h_prev, &u_data, batch, h, g4);
            for bi in 0..batch {
                let row = (bi * steps + t) * g4;
                let z = &xw[row..row + g4];
                let rec = &hu[bi * g4..(bi + 1) * g4];
                let gt = &mut gates[row..row + g4];
                for j in 0..h {
                    let i_g = sigmoid(z[j] + rec[j]);
                    let f_g = sigmoid(z[h + j] + rec[h + j]);
                    let g_g = (z[2 * h + j] + rec[2 * h + j]).tanh();
                    let o_g = sigmoid(z[3 * h + j] + rec[3 * h + j]);
                    gt[j] = i_g;
                    gt[h + j] = f_g;
                    gt[2 * h + j] = g_g;
                    gt[3 * h + j] = o_g;
                    let c = f_g * c_prev[bi * h + j] + i_g * g_g;
                    let hv = o_g * c.tanh();
                    c_prev[bi * h + j] = c;
                    h_prev[bi * h + j] = hv;
                    cells[(bi * steps + t) * h + j] = c;
                    hidden[(bi * steps + t) * h + j] = hv;
                }
            }
        }

        let out = if return_sequences {
            Tensor::from_vec(&[batch, steps, h], hidden.clone())
        } else {
            Tensor::from_vec(&[batch, h], h_prev)
        };

        self.push("lstm", &[x, w, u, b], out, move |ctx| {
            let gy = ctx.grad.data();
            let (vx, vw, vu) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
            let mut dz = vec![T::zero(); batch * steps * g4];
            let mut dh_next = vec![T::zero(); batch * h];
            let mut dc_next = vec![T::zero(); batch * h];
            for t in (0..steps).rev() {
                for bi in 0..batch {
                    let row = (bi * steps + t) * g4;
                    let gt = &gates[row..row + g4];
                    let dzt = &mut dz[row..row + g4];
                    for j in 0..h {
                        let k = bi * h + j;
                        let mut dh = dh_next[k];
                        if return_sequences {
                            dh = dh + gy[(bi * steps + t) * h + j];
                        } else if t == steps - 1 {
                            dh = dh + gy[k];
                        }
                        let (i_g, f_g, g_g, o_g) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                        let c = cells[(bi * steps + t) * h + j];
                        let c_before = if t > 0 {
                            cells[(bi * steps + t - 1) * h + j]
                        } else {
                            T::zero()
                        };
                        let tc = c.tanh();
                        let dc = dh * o_g * (T::one() - tc * tc) + dc_next[k];
                        dzt[j] = dc * g_g * i_g * (T::one() - i_g);
                        dzt[h + j] = dc * c_before * f_g * (T::one() - f_g);
                        dzt[2 * h + j] = dc * i_g * (T::one() - g_g * g_g);
                        dzt[3 * h + j] = dh * tc * o_g * (T::one() - o_g);
                        dc_next[k] = dc * f_g;
                    }
                }
                if t > 0 {
                    let mut dzt = vec![T::zero(); batch * g4];
                    for bi in 0..batch {
                        let row = (bi * steps + t) * g4;
                        dzt[bi * g4..(bi + 1) * g4].copy_from_slice(&dz[row..row + g4]);
                    }
                    dh_next = kernels::matmul_nt(&dzt, vu.data(), batch, g4, h);
                }
            }

            let rows = batch * steps;
            let gx = ctx.needs[0].then(|| {
                Tensor::from_vec(&[batch, steps, din], kernels::matmul_nt(&dz, vw.data(), rows, g4, din))
            });
            let gw = ctx.needs[1]
                .then(|| Tensor::from_vec(&[din, g4], kernels::matmul_tn(vx.data(), &dz, rows, din, g4)));
            let gu = ctx.needs[2].then(|| {
                let mut shifted = vec![T::zero(); rows * h];
                for bi in 0..batch {
                    for t in 1..steps {
                        let dst = (bi * steps + t) * h;
                        let src = (bi * steps + t - 1) * h;
                        shifted[dst..dst + h].copy_from_slice(&hidden[src..src + h]);
                    }
                }
                Tensor::from_vec(&[h, g4], kernels::matmul_tn(&shifted, &dz, rows, h, g4))
            });
            let gb = ctx.needs[3].then(|| Tensor::from_vec(&[g4], kernels::col_sums(&dz, rows, g4)));
            vec![gx, gw, gu, gb]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::engine::gradcheck::{check_gradients, random_tensor};
    use crate::engine::Tape;
    use crate::tensor::Tensor;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_keep_hidden_state_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[2, 5, 3], 1));
        let w = t.constant(Tensor::zeros(&[3, 16]));
        let u = t.constant(Tensor::zeros(&[4, 16]));
        let b = t.constant(Tensor::zeros(&[16]));
        let y = t.lstm(x, w, u, b, true).unwrap();
        assert_eq!(t.shape(y), &[2, 5, 4]);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // Din = H = 1, gate order [i, f, g, o].
        let (x0, wi, wf, wg, wo) = (0.7, 0.5, -0.3, 0.8, 0.2);
        let (bi, bf, bg, bo) = (0.1, 0.4, -0.2, 0.05);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_vec(&[1, 1, 1], vec![x0]));
        let w = t.constant(Tensor::from_vec(&[1, 4], vec![wi, wf, wg, wo]));
        let u = t.constant(Tensor::from_vec(&[1, 4], vec![0.9, -0.9, 0.3, 0.6]));
        let b = t.constant(Tensor::from_vec(&[4], vec![bi, bf, bg, bo]));
        let y = t.lstm(x, w, u, b, false).unwrap();

        let i = sig(x0 * wi + bi);
        let g = (x0 * wg + bg).tanh();
        let o = sig(x0 * wo + bo);
        let c = i * g; // c0 = 0, so the forget gate drops out
        let expected = o * c.tanh();
        assert!((t.value(y).data()[0] - expected).abs() <= 1e-12);
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        for trial in 0..10 {
            let (din, h) = (3, 3);
            let inputs = [
                random_tensor(&[2, 5, din], 300 + trial),
                random_tensor(&[din, 4 * h], 310 + trial),
                random_tensor(&[h, 4 * h], 320 + trial),
                random_tensor(&[4 * h], 330 + trial),
            ];
            let seq = trial % 2 == 0;
            let r = check_gradients(&inputs, |t, v| t.lstm(v[0], v[1], v[2], v[3], seq)).unwrap();
            assert!(r.passed(1e-4), "trial {trial}: {r:?}");
        }
    }
}
