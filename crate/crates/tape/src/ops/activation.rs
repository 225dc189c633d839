use crate::{Backward, Real, Tape, Tensor, Var};

struct LeakyRelu {
    slope: f64,
}

impl<T: Real> Backward<T> for LeakyRelu {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let slope = T::of(self.slope);
        let mut gx = grad.clone();
        for (g, &x) in gx.data_mut().iter_mut().zip(inputs[0].data()) {
            if x <= T::zero() {
                *g *= slope;
            }
        }
        vec![Some(gx)]
    }
}

struct Softmax;

impl<T: Real> Backward<T> for Softmax {
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, inner) = softmax_layout(y.shape());
        let mut gx = Tensor::zeros(y.shape());
        let (yd, gd) = (y.data(), grad.data());
        let out = gx.data_mut();
        for s in 0..n {
            let base = s * c * inner;
            for p in 0..inner {
                let dot: T = (0..c).map(|k| yd[base + k * inner + p] * gd[base + k * inner + p]).sum();
                for k in 0..c {
                    let i = base + k * inner + p;
                    out[i] = yd[i] * (gd[i] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

fn softmax_layout(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "softmax needs a class dimension");
    (shape[0], shape[1], shape[2..].iter().product())
}

/// Numerically stable softmax over dimension 1 of a raw buffer.
pub fn softmax_dim1<T: Real>(shape: &[usize], x: &[T]) -> Vec<T> {
    let (n, c, inner) = softmax_layout(shape);
    let mut y = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * inner;
        for p in 0..inner {
            let mx = (0..c).map(|k| x[base + k * inner + p]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..c {
                let e = (x[base + k * inner + p] - mx).exp();
                y[base + k * inner + p] = e;
                z += e;
            }
            for k in 0..c {
                y[base + k * inner + p] /= z;
            }
        }
    }
    y
}

impl<T: Real> Tape<T> {
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(y, &[x], LeakyRelu { slope })
    }

    /// Softmax over dimension 1 (classes) of `[N,C,...]`.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = Tensor::from_vec(xv.shape(), softmax_dim1(xv.shape(), xv.data())).expect("same shape");
        self.push(y, &[x], Softmax)
    }
}
