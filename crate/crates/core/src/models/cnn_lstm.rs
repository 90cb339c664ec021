use rand::Rng;

use super::{check_classes, check_l2, check_rate, glorot, ForwardCtx, ForwardOut, ModelError};
use crate::engine::{Activation, BatchNormStats, Padding, ParamStore, Tape, Var};
use crate::{Real, Tensor};

/// Two conv blocks, two sequence-returning LSTMs, flatten, two dense
/// layers.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnLstmConfig {
    /// Window length in rows.
    pub length: usize,
    pub channels: usize,
    /// Output channels of the two conv blocks.
    pub filters: Vec<usize>,
    pub kernel_size: usize,
    pub padding: Padding,
    pub pool_size: usize,
    pub pool_stride: usize,
    /// Rate of every dropout layer.
    pub dropout: f64,
    /// Hidden units of the two LSTM layers.
    pub lstm_units: Vec<usize>,
    pub dense_hidden: usize,
    pub classes: usize,
    /// L2 rate on conv kernels and LSTM input/recurrent weights.
    pub l2: f64,
    /// Weight of the current batch in the running batch-norm statistics.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for CnnLstmConfig {
    fn default() -> Self {
        CnnLstmConfig {
            length: 100,
            channels: 4,
            filters: vec![64, 128],
            kernel_size: 3,
            padding: Padding::Valid,
            pool_size: 2,
            pool_stride: 2,
            dropout: 0.4,
            lstm_units: vec![64, 64],
            dense_hidden: 64,
            classes: 8,
            l2: 0.05,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

const BLOCKS: usize = 2;

impl CnnLstmConfig {
    /// Sequence length entering the LSTMs.
    pub fn lstm_steps(&self) -> Result<usize, ModelError> {
        let mut len = self.length;
        for i in 0..BLOCKS {
            len = match self.padding {
                Padding::Valid => len.checked_sub(self.kernel_size - 1).filter(|&l| l > 0),
                Padding::Same => Some(len),
            }
            .ok_or_else(|| ModelError::Config(format!("conv{} kernel {} longer than input {len}", i + 1, self.kernel_size)))?;
            if len < self.pool_size {
                return Err(ModelError::Config(format!("pool {} longer than input {len} in block {}", self.pool_size, i + 1)));
            }
            len = (len - self.pool_size) / self.pool_stride + 1;
        }
        Ok(len)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.filters.len() != BLOCKS || self.lstm_units.len() != 2 {
            return Err(ModelError::Config("exactly 2 conv blocks and 2 LSTM layers".into()));
        }
        if [self.length, self.channels, self.kernel_size, self.pool_size, self.pool_stride, self.dense_hidden]
            .contains(&0)
            || self.filters.contains(&0)
            || self.lstm_units.contains(&0)
        {
            return Err(ModelError::Config("all sizes must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return Err(ModelError::Config("bn_momentum must be in (0, 1] and bn_eps positive".into()));
        }
        check_rate("dropout", self.dropout)?;
        check_l2("l2", self.l2)?;
        check_classes(self.classes)?;
        self.lstm_steps().map(|_| ())
    }

    pub(super) fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let k = self.kernel_size;
        let mut cin = self.channels;
        for (i, &cout) in self.filters.iter().enumerate() {
            let n = i + 1;
            s.add(format!("conv{n}.kernel"), glorot(rng, &[k, cin, cout], k * cin, k * cout));
            s.add(format!("conv{n}.bias"), Tensor::zeros(&[cout]));
            s.add(format!("bn{n}.gamma"), Tensor::full(&[cout], 1.0));
            s.add(format!("bn{n}.beta"), Tensor::zeros(&[cout]));
            s.set_buffer(format!("bn{n}.running_mean"), Tensor::zeros(&[cout]));
            s.set_buffer(format!("bn{n}.running_var"), Tensor::full(&[cout], 1.0));
            cin = cout;
        }
        for (i, &h) in self.lstm_units.iter().enumerate() {
            let n = i + 1;
            s.add(format!("lstm{n}.w"), glorot(rng, &[cin, 4 * h], cin, 4 * h));
            s.add(format!("lstm{n}.u"), glorot(rng, &[h, 4 * h], h, 4 * h));
            // forget-gate bias starts at 1
            let mut b = Tensor::zeros(&[4 * h]);
            b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            s.add(format!("lstm{n}.b"), b);
            cin = h;
        }
        let flat = self.lstm_steps().expect("validated") * cin;
        s.add("dense1.w", glorot(rng, &[flat, self.dense_hidden], flat, self.dense_hidden));
        s.add("dense1.b", Tensor::zeros(&[self.dense_hidden]));
        s.add("out.w", glorot(rng, &[self.dense_hidden, self.classes], self.dense_hidden, self.classes));
        s.add("out.b", Tensor::zeros(&[self.classes]));
        s
    }

    pub(super) fn l2_params(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=BLOCKS).map(|n| format!("conv{n}.kernel")).collect();
        for n in 1..=2 {
            v.push(format!("lstm{n}.w"));
            v.push(format!("lstm{n}.u"));
        }
        v
    }

    pub(super) fn forward<T: Real>(
        &self,
        t: &mut Tape<T>,
        s: &ParamStore<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOut<T>, ModelError> {
        let mut updates = Vec::new();
        let mut h = x;
        for n in 1..=BLOCKS {
            let k = t.param(s, &format!("conv{n}.kernel"))?;
            let b = t.param(s, &format!("conv{n}.bias"))?;
            h = t.conv1d(h, k, b, 1, self.padding)?;
            let g = t.param(s, &format!("bn{n}.gamma"))?;
            let be = t.param(s, &format!("bn{n}.beta"))?;
            let (mean_key, var_key) = (format!("bn{n}.running_mean"), format!("bn{n}.running_var"));
            let running = match (s.buffer(&mean_key), s.buffer(&var_key)) {
                (Some(m), Some(v)) => Some(BatchNormStats {
                    mean: m.data().to_vec(),
                    var: v.data().to_vec(),
                }),
                _ => None,
            };
            let (y, upd) = t.batchnorm(
                h,
                g,
                be,
                ctx.mode,
                running.as_ref(),
                T::of_f64(self.bn_momentum),
                T::of_f64(self.bn_eps),
            )?;
            if let Some(u) = upd {
                let c = u.mean.len();
                updates.push((mean_key, Tensor::from_vec(&[c], u.mean)));
                updates.push((var_key, Tensor::from_vec(&[c], u.var)));
            }
            h = t.maxpool1d(y, self.pool_size, self.pool_stride)?;
            h = t.dropout(h, self.dropout, ctx.mode, ctx.rng)?;
        }
        for n in 1..=2 {
            let w = t.param(s, &format!("lstm{n}.w"))?;
            let u = t.param(s, &format!("lstm{n}.u"))?;
            let b = t.param(s, &format!("lstm{n}.b"))?;
            h = t.lstm(h, w, u, b, true)?;
        }
        let shape = t.shape(h).to_vec();
        h = t.reshape(h, &[shape[0], shape[1] * shape[2]])?;
        let (w, b) = (t.param(s, "dense1.w")?, t.param(s, "dense1.b")?);
        h = t.dense(h, w, b, Activation::Relu)?;
        h = t.dropout(h, self.dropout, ctx.mode, ctx.rng)?;
        let (w, b) = (t.param(s, "out.w")?, t.param(s, "out.b")?);
        let probs = t.dense(h, w, b, Activation::Softmax)?;
        Ok(ForwardOut {
            probs,
            buffer_updates: updates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gradcheck::{check_param_gradients, random_tensor};
    use crate::engine::Mode;
    use crate::models::ModelConfig;
    use crate::rng::CountingRng;

    fn tiny() -> CnnLstmConfig {
        CnnLstmConfig {
            length: 20,
            filters: vec![4, 8],
            lstm_units: vec![4, 4],
            dense_hidden: 6,
            ..Default::default()
        }
    }

    #[test]
    fn default_output_is_a_distribution() {
        let cfg = ModelConfig::CnnLstm(CnnLstmConfig::default());
        let store = cfg.init(1).unwrap();
        let mut tape = Tape::no_grad();
        let x = tape.constant(random_tensor(&[2, 100, 4], 2));
        let mut rng = CountingRng::new(0);
        let out = cfg.forward(&mut tape, &store, x, &mut ForwardCtx::new(Mode::Eval, &mut rng)).unwrap();
        let p = tape.value(out.probs);
        assert_eq!(p.shape(), &[2, 8]);
        for row in p.data().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(rng.draws(), 0);
        assert!(out.buffer_updates.is_empty());
    }

    #[test]
    fn eval_is_deterministic_and_shape_checked() {
        let cfg = ModelConfig::CnnLstm(tiny());
        let store = cfg.init(3).unwrap();
        let run = || {
            let mut tape = Tape::no_grad();
            let x = tape.constant(random_tensor(&[3, 20, 4], 4));
            let mut rng = CountingRng::new(0);
            let out = cfg.forward(&mut tape, &store, x, &mut ForwardCtx::new(Mode::Eval, &mut rng)).unwrap();
            tape.value(out.probs).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut tape = Tape::no_grad();
        let x = tape.constant(random_tensor(&[3, 21, 4], 4));
        let mut rng = CountingRng::new(0);
        assert!(matches!(
            cfg.forward(&mut tape, &store, x, &mut ForwardCtx::new(Mode::Eval, &mut rng)),
            Err(ModelError::InputShape { .. })
        ));
    }

    #[test]
    fn lstm_steps_and_param_shapes() {
        assert_eq!(CnnLstmConfig::default().lstm_steps().unwrap(), 23);
        let store = ModelConfig::CnnLstm(CnnLstmConfig::default()).init(0).unwrap();
        assert_eq!(store.get("conv1.kernel").unwrap().value.shape(), &[3, 4, 64]);
        assert_eq!(store.get("conv2.kernel").unwrap().value.shape(), &[3, 64, 128]);
        assert_eq!(store.get("lstm1.w").unwrap().value.shape(), &[128, 256]);
        assert_eq!(store.get("dense1.w").unwrap().value.shape(), &[23 * 64, 64]);
        assert_eq!(store.get("out.w").unwrap().value.shape(), &[64, 8]);
        let same = CnnLstmConfig { padding: Padding::Same, ..Default::default() };
        assert_eq!(same.lstm_steps().unwrap(), 25);
        let bad = CnnLstmConfig { filters: vec![64], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn train_mode_reports_running_stat_updates() {
        let cfg = ModelConfig::CnnLstm(tiny());
        let mut store = cfg.init(5).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(random_tensor(&[4, 20, 4], 6).map(|v| 3.0 * v + 2.0));
        let mut rng = CountingRng::new(1);
        let out = cfg.forward(&mut tape, &store, x, &mut ForwardCtx::new(Mode::Train, &mut rng)).unwrap();
        assert!(rng.draws() > 0);
        assert_eq!(out.buffer_updates.len(), 4);
        let before = store.buffer("bn1.running_mean").unwrap().clone();
        out.commit(&mut store);
        assert_ne!(store.buffer("bn1.running_mean").unwrap(), &before);
    }

    #[test]
    fn end_to_end_gradients() {
        for trial in 0..3u64 {
            for mode in [Mode::Eval, Mode::Train] {
                let cfg = ModelConfig::CnnLstm(CnnLstmConfig { dropout: 0.0, ..tiny() });
                let mut store = cfg.init(10 + trial).unwrap();
                // move running stats away from identity so eval mode is exercised
                store.set_buffer("bn1.running_var", Tensor::full(&[4], 1.7));
                let x = random_tensor(&[2, 20, 4], 20 + trial);
                let r = check_param_gradients(&store, |t, s| {
                    let xv = t.constant(x.clone());
                    let mut rng = CountingRng::new(0);
                    let out = cfg.forward(t, s, xv, &mut ForwardCtx::new(mode, &mut rng)).map_err(|e| match e {
                        ModelError::Engine(e) => e,
                        other => panic!("{other}"),
                    })?;
                    let loss = t.weighted_sce(out.probs, &[1, 5], &[1.0, 0.5, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0])?;
                    let (names, rate) = cfg.l2_terms();
                    let vars = names.iter().map(|n| t.param(s, n)).collect::<Result<Vec<_>, _>>()?;
                    let pen = t.l2_penalty(&vars, rate)?;
                    t.add(loss, pen)
                })
                .unwrap();
                assert!(r.passed(1e-4), "{mode:?}: {r:?}");
            }
        }
    }
}
