use crate::engine::tape::{Tape, Var};
use crate::engine::{shape_err, EngineResult};
use crate::tensor::{Real, Tensor};

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> EngineResult<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = zip_map(va, vb, |x, y| x + y);
        self.push("add", &[a, b], out, |c| {
            vec![Some(c.grad.clone()), Some(c.grad.clone())]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> EngineResult<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = zip_map(va, vb, |x, y| x * y);
        self.push("mul", &[a, b], out, |c| {
            vec![
                c.needs[0].then(|| zip_map(c.grad, c.inputs[1], |g, y| g * y)),
                c.needs[1].then(|| zip_map(c.grad, c.inputs[0], |g, x| g * x)),
            ]
        })
    }

    pub fn scale(&mut self, a: Var, factor: T) -> EngineResult<Var> {
        let out = self.value(a).scale(factor);
        self.push("scale", &[a], out, move |c| vec![Some(c.grad.scale(factor))])
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> EngineResult<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", &[a], out, |c| {
            vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.data()[0]))]
        })
    }

    pub fn relu(&mut self, a: Var) -> EngineResult<Var> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", &[a], out, |c| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| {
                if x > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }))]
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> EngineResult<Var> {
        let out = self.value(a).map(gelu);
        self.push("gelu", &[a], out, |c| {
            vec![Some(zip_map(c.grad, c.inputs[0], |g, x| g * gelu_grad(x)))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> EngineResult<Var> {
        let v = self.value(a);
        let in_shape = v.shape().to_vec();
        let out = v
            .clone()
            .reshape(shape)
            .map_err(|e| shape_err("reshape", e.to_string()))?;
        self.push("reshape", &[a], out, move |c| {
            vec![Some(Tensor::from_vec(&in_shape, c.grad.data().to_vec()))]
        })
    }

    /// Mean over axis 1 of a `[B, N, D]` tensor, giving `[B, D]`.
    pub fn mean_tokens(&mut self, a: Var) -> EngineResult<Var> {
        let v = self.value(a);
        let &[b, n, d] = v.shape() else {
            return Err(shape_err("mean_tokens", format!("{:?}", v.shape())));
        };
        let inv = T::one() / T::of_f64(n as f64);
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for t in 0..n {
                let row = &v.data()[(bi * n + t) * d..(bi * n + t + 1) * d];
                for (acc, &x) in o.iter_mut().zip(row) {
                    *acc = *acc + x;
                }
            }
            o.iter_mut().for_each(|x| *x = *x * inv);
        }
        self.push("mean_tokens", &[a], Tensor::from_vec(&[b, d], out), move |c| {
            let mut g = vec![T::zero(); b * n * d];
            for bi in 0..b {
                let grow = &c.grad.data()[bi * d..(bi + 1) * d];
                for t in 0..n {
                    for (dst, &gv) in g[(bi * n + t) * d..(bi * n + t + 1) * d]
                        .iter_mut()
                        .zip(grow)
                    {
                        *dst = gv * inv;
                    }
                }
            }
            vec![Some(Tensor::from_vec(&[b, n, d], g))]
        })
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let x3 = x * x * x;
    let inner = T::of_f64(SQRT_2_OVER_PI) * (x + T::of_f64(GELU_C) * x3);
    T::of_f64(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of_f64(0.5);
    let k = T::of_f64(SQRT_2_OVER_PI);
    let c = T::of_f64(GELU_C);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let dinner = k * (T::one() + T::of_f64(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}
