use crate::real::{gemm, MatRef};
use crate::{Backward, Real, Tape, Tensor, Var};

/// `(outer, dim1, inner)` decomposition used by dim-1 concatenation and slicing.
fn split_dim1(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "expected at least rank 2");
    (shape[0], shape[1], shape[2..].iter().product())
}

struct Concat {
    widths: Vec<usize>,
}

impl<T: Real> Backward<T> for Concat {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, total, inner) = split_dim1(grad.shape());
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (i, (&w, x)) in self.widths.iter().zip(inputs).enumerate() {
            if needs[i] {
                let mut g = Tensor::zeros(x.shape());
                for s in 0..n {
                    let src = &grad.data()[(s * total + start) * inner..(s * total + start + w) * inner];
                    g.data_mut()[s * w * inner..(s + 1) * w * inner].copy_from_slice(src);
                }
                out.push(Some(g));
            } else {
                out.push(None);
            }
            start += w;
        }
        out
    }
}

struct Slice {
    start: usize,
}

impl<T: Real> Backward<T> for Slice {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, total, inner) = split_dim1(inputs[0].shape());
        let (_, len, _) = split_dim1(grad.shape());
        let mut g = Tensor::zeros(inputs[0].shape());
        for s in 0..n {
            let dst = &mut g.data_mut()[(s * total + self.start) * inner..(s * total + self.start + len) * inner];
            dst.copy_from_slice(&grad.data()[s * len * inner..(s + 1) * len * inner]);
        }
        vec![Some(g)]
    }
}

struct GlobalAvgPool;

impl<T: Real> Backward<T> for GlobalAvgPool {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (_, _, h, w) = inputs[0].dims4();
        let m = h * w;
        let inv = T::one() / T::of(m as f64);
        let mut g = Tensor::zeros(inputs[0].shape());
        for (plane, &gv) in g.data_mut().chunks_mut(m).zip(grad.data()) {
            plane.fill(gv * inv);
        }
        vec![Some(g)]
    }
}

struct Linear;

impl<T: Real> Backward<T> for Linear {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, d) = x.dims2();
        let (o, _) = w.dims2();
        let g = grad.data();
        let gx = needs[0].then(|| {
            let mut t = Tensor::zeros(&[n, d]);
            gemm(T::one(), MatRef::row_major(g, n, o), MatRef::row_major(w.data(), o, d), T::zero(), t.data_mut());
            t
        });
        let gw = needs[1].then(|| {
            let mut t = Tensor::zeros(&[o, d]);
            gemm(T::one(), MatRef::transposed(g, o, n), MatRef::row_major(x.data(), n, d), T::zero(), t.data_mut());
            t
        });
        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            out.push(needs[2].then(|| {
                let mut t = Tensor::zeros(&[o]);
                for row in g.chunks(o) {
                    for (acc, &v) in t.data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                t
            }));
        }
        out
    }
}

impl<T: Real> Tape<T> {
    /// Concatenates along dimension 1 (channels or features).
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.value(xs[0]).shape().to_vec();
        let (n, _, inner) = split_dim1(&first);
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.value(v).shape();
                assert!(s[0] == n && s[2..] == first[2..], "concat shape mismatch: {s:?} vs {first:?}");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut shape = first.clone();
        shape[1] = total;
        let mut y = Tensor::zeros(&shape);
        for s in 0..n {
            let mut start = 0;
            for (&v, &w) in xs.iter().zip(&widths) {
                let src = &self.value(v).data()[s * w * inner..(s + 1) * w * inner];
                y.data_mut()[(s * total + start) * inner..(s * total + start + w) * inner].copy_from_slice(src);
                start += w;
            }
        }
        self.push(y, xs, Concat { widths })
    }

    /// Elements `start..start+len` of dimension 1.
    pub fn slice_dim1(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        let (n, total, inner) = split_dim1(&xs);
        assert!(start + len <= total, "slice {start}..{} out of range {total}", start + len);
        let mut shape = xs.clone();
        shape[1] = len;
        let mut y = Tensor::zeros(&shape);
        for s in 0..n {
            let src = &self.value(x).data()[(s * total + start) * inner..(s * total + start + len) * inner];
            y.data_mut()[s * len * inner..(s + 1) * len * inner].copy_from_slice(src);
        }
        self.push(y, &[x], Slice { start })
    }

    /// Spatial mean: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let inv = T::one() / T::of((h * w) as f64);
        let data = xv.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let y = Tensor::from_vec(&[n, c], data).expect("pooled shape");
        self.push(y, &[x], GlobalAvgPool)
    }

    /// `y = x·wᵀ + b` with `x: [N,D]`, `w: [O,D]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, d) = xv.dims2();
        let (o, wd) = wv.dims2();
        assert_eq!(d, wd, "linear input width {d} != weight width {wd}");
        let mut y = Tensor::zeros(&[n, o]);
        gemm(T::one(), MatRef::row_major(xv.data(), n, d), MatRef::transposed(wv.data(), d, o), T::zero(), y.data_mut());
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), &[o], "linear bias shape");
            for row in y.data_mut().chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(y, &parents, Linear)
    }
}
