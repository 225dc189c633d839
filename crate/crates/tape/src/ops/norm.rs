use crate::{Backward, Real, Tape, Tensor, Var};

struct InstanceNorm<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for InstanceNorm<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (n, c, h, w) = x.dims4();
        let m = h * w;
        let mf = T::of(m as f64);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gg = Tensor::zeros(&[c]);
        let mut gbeta = Tensor::zeros(&[c]);
        let g = grad.data();
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * m;
                let gy = &g[off..off + m];
                let xh = &self.xhat[off..off + m];
                let sum_g: T = gy.iter().copied().sum();
                let sum_gx: T = gy.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                gg.data_mut()[ch] += sum_gx;
                gbeta.data_mut()[ch] += sum_g;
                if let Some(gx) = gx.as_mut() {
                    let scale = gamma.data()[ch] * self.inv_std[s * c + ch] / mf;
                    let dst = &mut gx.data_mut()[off..off + m];
                    for ((d, &gyv), &xhv) in dst.iter_mut().zip(gy).zip(xh) {
                        *d = scale * (mf * gyv - sum_g - xhv * sum_gx);
                    }
                }
            }
        }
        vec![gx, needs[1].then_some(gg), needs[2].then_some(gbeta)]
    }
}

impl<T: Real> Tape<T> {
    /// Per-sample, per-channel normalization over H×W with affine `gamma`/`beta` (both `[C]`).
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        assert_eq!(self.value(gamma).shape(), &[c], "instance_norm gamma shape");
        assert_eq!(self.value(beta).shape(), &[c], "instance_norm beta shape");
        let m = h * w;
        let mf = T::of(m as f64);
        let eps = T::of(eps);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = Tensor::zeros(xv.shape());
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut inv_std = vec![T::zero(); n * c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * m;
                let src = &xv.data()[off..off + m];
                let mean = src.iter().copied().sum::<T>() / mf;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
                let is = T::one() / (var + eps).sqrt();
                inv_std[s * c + ch] = is;
                let dst = &mut y.data_mut()[off..off + m];
                for ((d, xh), &v) in dst.iter_mut().zip(&mut xhat[off..off + m]).zip(src) {
                    *xh = (v - mean) * is;
                    *d = gv[ch] * *xh + bv[ch];
                }
            }
        }
        self.push(y, &[x, gamma, beta], InstanceNorm { xhat, inv_std })
    }
}
