use rand::{Rng, RngCore};

use crate::engine::tape::{Tape, Var};
use crate::engine::{EngineError, EngineResult, Mode};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`. Eval
    /// mode and `rate == 0` return `x` unchanged without touching `rng`.
    pub fn dropout<R: RngCore + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> EngineResult<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EngineError::RateOutOfRange(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of_f64(1.0 / (1.0 - rate));
        let vx = self.value(x);
        let mask: Vec<T> = (0..vx.numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = vx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = vx.shape().to_vec();
        self.push("dropout", &[x], Tensor::from_vec(&shape, out), move |c| {
            let g = c.grad.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect();
            vec![Some(Tensor::from_vec(&shape, g))]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::engine::gradcheck::random_tensor;
    use crate::engine::{EngineError, Mode, Tape};
    use crate::rng::CountingRng;
    use crate::tensor::Tensor;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut rng = CountingRng::new(1);
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[4, 4], 1));
        assert_eq!(t.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.0, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.4, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(rng.draws(), 0);
    }

    #[test]
    fn rate_outside_unit_interval_rejected() {
        let mut rng = CountingRng::new(1);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros(&[2]));
        assert_eq!(
            t.dropout(x, 1.0, Mode::Train, &mut rng).unwrap_err(),
            EngineError::RateOutOfRange(1.0)
        );
        assert!(t.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn drop_fraction_and_mean_are_preserved() {
        let n = 1_000_000;
        let mut rng = CountingRng::new(42);
        let mut t = Tape::<f64>::new();
        let input = random_tensor(&[n], 7).map(|v| v + 2.0);
        let in_mean = input.sum() / n as f64;
        let x = t.constant(input);
        let y = t.dropout(x, 0.4, Mode::Train, &mut rng).unwrap();
        let out = t.value(y);
        let zeroed = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        let out_mean = out.sum() / n as f64;
        assert!((zeroed - 0.4).abs() <= 0.002, "zeroed fraction {zeroed}");
        assert!(((out_mean - in_mean) / in_mean).abs() <= 0.01, "{out_mean} vs {in_mean}");
    }

    #[test]
    fn same_seed_same_mask() {
        let run = || {
            let mut rng = CountingRng::new(5);
            let mut t = Tape::<f64>::new();
            let x = t.constant(Tensor::full(&[100], 1.0));
            let y = t.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
            t.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
