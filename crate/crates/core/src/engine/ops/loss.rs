use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineError, EngineResult};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped below at this value before the log.
pub const PROB_FLOOR: f64 = 1e-12;

impl<T: Real> Tape<T> {
    /// Class-weighted sparse categorical cross-entropy on probabilities
    /// `[B, K]`, reduced as a weighted mean:
    /// `Σ_b w[y_b]·(−ln p[b, y_b]) / Σ_b w[y_b]`.
    pub fn weighted_sce(&mut self, probs: Var, labels: &[usize], weights: &[T]) -> EngineResult<Var> {
        let (b, k) = self.check_probs("weighted_sce", probs, labels)?;
        if weights.len() != k {
            return Err(shape_err("weighted_sce", format!("{} weights for {k} classes", weights.len())));
        }
        let p = self.value(probs).data();
        let floor = T::of_f64(PROB_FLOOR);
        let mut num = T::zero();
        let mut den = T::zero();
        for (bi, &y) in labels.iter().enumerate() {
            let w = weights[y];
            num = num + w * -p[bi * k + y].max(floor).ln();
            den = den + w;
        }
        let labels = labels.to_vec();
        let weights = weights.to_vec();
        self.push("weighted_sce", &[probs], Tensor::scalar(num / den), move |c| {
            let p = c.inputs[0].data();
            let g0 = c.grad.data()[0];
            let mut g = Tensor::zeros(&[b, k]);
            for (bi, &y) in labels.iter().enumerate() {
                let pv = p[bi * k + y];
                if pv > floor {
                    g.data_mut()[bi * k + y] = -g0 * weights[y] / (den * pv);
                }
            }
            vec![Some(g)]
        })
    }

    /// Unweighted mean sparse categorical cross-entropy.
    pub fn sce(&mut self, probs: Var, labels: &[usize]) -> EngineResult<Var> {
        let (b, k) = self.check_probs("sce", probs, labels)?;
        let p = self.value(probs).data();
        let floor = T::of_f64(PROB_FLOOR);
        let mut num = T::zero();
        let mut den = T::zero();
        for (bi, &y) in labels.iter().enumerate() {
            num = num + -p[bi * k + y].max(floor).ln();
            den = den + T::one();
        }
        let labels = labels.to_vec();
        self.push("sce", &[probs], Tensor::scalar(num / den), move |c| {
            let p = c.inputs[0].data();
            let g0 = c.grad.data()[0];
            let mut g = Tensor::zeros(&[b, k]);
            for (bi, &y) in labels.iter().enumerate() {
                let pv = p[bi * k + y];
                if pv > floor {
                    g.data_mut()[bi * k + y] = -g0 / (den * pv);
                }
            }
            vec![Some(g)]
        })
    }

    fn check_probs(&self, op: &'static str, probs: Var, labels: &[usize]) -> EngineResult<(usize, usize)> {
        let &[b, k] = self.shape(probs) else {
            return Err(shape_err(op, format!("probs {:?}", self.shape(probs))));
        };
        if labels.len() != b || b == 0 {
            return Err(shape_err(op, format!("{} labels for batch {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(EngineError::LabelOutOfRange { label: bad, classes: k });
        }
        Ok((b, k))
    }

    /// `rate · Σ_p Σ w²` over the given parameters.
    pub fn l2_penalty(&mut self, params: &[Var], rate: T) -> EngineResult<Var> {
        if rate < T::zero() {
            return Err(EngineError::NegativeRate(rate.as_f64()));
        }
        let mut total = T::zero();
        for &p in params {
            total = total + self.value(p).data().iter().map(|&w| w * w).sum::<T>();
        }
        self.push("l2_penalty", params, Tensor::scalar(rate * total), move |c| {
            let g0 = c.grad.data()[0];
            let two_rate = T::of_f64(2.0) * rate * g0;
            c.inputs
                .iter()
                .zip(&c.needs)
                .map(|(x, &need)| need.then(|| x.scale(two_rate)))
                .collect()
        })
    }
}
