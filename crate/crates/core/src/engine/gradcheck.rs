//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it shares no
//! code with the backward closures it verifies. Non-scalar outputs are
//! reduced with fixed pseudo-random weights, `loss = Σ r_i · y_i`, which
//! exercises every output element with a distinct sensitivity.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::EngineResult;
use crate::rng;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Pairs with `|analytic| + |numeric|` below this are not compared.
pub const EXEMPT_BELOW: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub exempt: usize,
    pub max_rel_error: f64,
    /// (input or parameter name, flat index, analytic, numeric)
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tol
    }

    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs() + numeric.abs();
        if denom < EXEMPT_BELOW {
            self.exempt += 1;
            return;
        }
        self.checked += 1;
        let rel = (analytic - numeric).abs() / denom;
        if self.worst.is_none() || rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.exempt += other.exempt;
        if self.worst.is_none() || other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
}

fn projection(shape: &[usize]) -> Tensor<f64> {
    let seed = shape.iter().fold(0x5eed_u64, |a, &d| a.wrapping_mul(31).wrapping_add(d as u64));
    random_tensor(shape, seed)
}

fn project(tape: &mut Tape<f64>, out: Var) -> EngineResult<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(projection(&shape));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn eval_scalar<F>(inputs: &[Tensor<f64>], f: &F) -> EngineResult<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> EngineResult<Var>,
{
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    let l = project(&mut tape, out)?;
    Ok(tape.value(l).data()[0])
}

/// Check the gradient of `f` with respect to every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> EngineResult<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> EngineResult<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let l = project(&mut tape, out)?;
    let grads = tape.backward(l)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let fp = eval_scalar(&work, &f)?;
            work[i].data_mut()[j] = orig - STEP;
            let fm = eval_scalar(&work, &f)?;
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * STEP);
            report.record(&format!("input{i}"), j, analytic.data()[j], numeric);
        }
    }
    Ok(report)
}

/// Check the gradient of `f` with respect to every trainable parameter in
/// `store`. `f` must be a pure function of the store (fixed RNG seeds).
pub fn check_param_gradients<F>(store: &ParamStore<f64>, f: F) -> EngineResult<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> EngineResult<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let l = project(&mut tape, out)?;
    let grads = tape.backward(l)?;
    let mut analytic_store = store.clone();
    analytic_store.absorb_grads(&tape, &grads);

    let eval = |s: &ParamStore<f64>| -> EngineResult<f64> {
        let mut t = Tape::no_grad();
        let out = f(&mut t, s)?;
        let l = project(&mut t, out)?;
        Ok(t.value(l).data()[0])
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    let names: Vec<String> = store
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.name.clone())
        .collect();
    for name in names {
        let analytic = analytic_store.get(&name).expect("param").grad.clone();
        let n = analytic.numel();
        for j in 0..n {
            let orig = store.get(&name).expect("param").value.data()[j];
            work.get_mut(&name).expect("param").value.data_mut()[j] = orig + STEP;
            let fp = eval(&work)?;
            work.get_mut(&name).expect("param").value.data_mut()[j] = orig - STEP;
            let fm = eval(&work)?;
            work.get_mut(&name).expect("param").value.data_mut()[j] = orig;
            report.record(&name, j, analytic.data()[j], (fp - fm) / (2.0 * STEP));
        }
    }
    Ok(report)
}
