use crate::kernels::{conv_backward_sample, conv_forward_sample, ConvGeometry, Scratch};
use crate::real::{gemm, MatRef};
use crate::{Backward, Real, Tape, Tensor, Var};

struct Conv2d {
    stride: usize,
    pad: usize,
}

impl<T: Real> Backward<T> for Conv2d {
    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, c, h, wd) = x.dims4();
        let (oc, _, k, _) = w.dims4();
        let g = ConvGeometry::new(c, h, wd, k, self.stride, self.pad);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape()));
        let mut gb = (inputs.len() > 2 && needs[2]).then(|| Tensor::zeros(&[oc]));
        let mut scratch = Scratch::new();
        for s in 0..n {
            conv_backward_sample(
                &g,
                x.sample(s),
                w.data(),
                oc,
                grad.sample(s),
                gw.as_mut().map(|t| t.data_mut()),
                gb.as_mut().map(|t| t.data_mut()),
                gx.as_mut().map(|t| t.sample_mut(s)),
                &mut scratch,
            );
        }
        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            out.push(gb);
        }
        out
    }
}

struct ConvTranspose;

/// Gathers an NCHW gradient into the `(Co·s·s) × (H·W)` layout of the
/// transposed-convolution GEMM.
fn gather_blocks<T: Real>(gy: &[T], co: usize, h: usize, w: usize, s: usize, out: &mut [T]) {
    let (ow, hw) = (w * s, h * w);
    for c in 0..co {
        for a in 0..s {
            for b in 0..s {
                let row = (c * s + a) * s + b;
                let dst = &mut out[row * hw..(row + 1) * hw];
                for i in 0..h {
                    let src = &gy[(c * h * s + i * s + a) * ow..];
                    for j in 0..w {
                        dst[i * w + j] = src[j * s + b];
                    }
                }
            }
        }
    }
}

impl<T: Real> Backward<T> for ConvTranspose {
    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, ci, h, wd) = x.dims4();
        let (_, co, s, _) = w.dims4();
        let (rows, hw) = (co * s * s, h * wd);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape()));
        let mut gb = (inputs.len() > 2 && needs[2]).then(|| Tensor::<T>::zeros(&[co]));
        let mut gz = vec![T::zero(); rows * hw];
        for smp in 0..n {
            let gy = grad.sample(smp);
            gather_blocks(gy, co, h, wd, s, &mut gz);
            if let Some(gw) = gw.as_mut() {
                gemm(T::one(), MatRef::row_major(x.sample(smp), ci, hw), MatRef::transposed(&gz, hw, rows), T::one(), gw.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                gemm(T::one(), MatRef::row_major(w.data(), ci, rows), MatRef::row_major(&gz, rows, hw), T::zero(), gx.sample_mut(smp));
            }
            if let Some(gb) = gb.as_mut() {
                let plane = hw * s * s;
                for (c, b) in gb.data_mut().iter_mut().enumerate() {
                    *b += gy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
                }
            }
        }
        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            out.push(gb);
        }
        out
    }
}

impl<T: Real> Tape<T> {
    /// 2-D convolution. `x: [N,C,H,W]`, `w: [Co,C,k,k]`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, c, h, wd) = xv.dims4();
        let (oc, wc, k, k2) = wv.dims4();
        assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
        assert_eq!(k, k2, "conv2d expects square kernels");
        let g = ConvGeometry::new(c, h, wd, k, stride, pad);
        let bias = b.map(|b| {
            assert_eq!(self.value(b).shape(), &[oc], "conv2d bias shape");
            self.value(b).data().to_vec()
        });
        let mut y = Tensor::zeros(&[n, oc, g.out_h, g.out_w]);
        let mut scratch = Scratch::new();
        for s in 0..n {
            conv_forward_sample(&g, xv.sample(s), wv.data(), bias.as_deref(), oc, y.sample_mut(s), &mut scratch);
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(y, &parents, Conv2d { stride, pad })
    }

    /// Transposed convolution with kernel size equal to its stride
    /// (non-overlapping upsampling). `w: [C,Co,s,s]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, ci, h, wd) = xv.dims4();
        let (wci, co, s, s2) = wv.dims4();
        assert_eq!(ci, wci, "conv_transpose2d channel mismatch");
        assert_eq!(s, s2, "conv_transpose2d expects square kernels");
        let (rows, hw) = (co * s * s, h * wd);
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut y = Tensor::zeros(&[n, co, h * s, wd * s]);
        let mut z = vec![T::zero(); rows * hw];
        let ow = wd * s;
        for smp in 0..n {
            gemm(T::one(), MatRef::transposed(wv.data(), rows, ci), MatRef::row_major(xv.sample(smp), ci, hw), T::zero(), &mut z);
            let ys = y.sample_mut(smp);
            for c in 0..co {
                let bv = bias.as_ref().map_or(T::zero(), |b| b[c]);
                for a in 0..s {
                    for bb in 0..s {
                        let row = &z[((c * s + a) * s + bb) * hw..][..hw];
                        for i in 0..h {
                            let dst = &mut ys[(c * h * s + i * s + a) * ow..];
                            for j in 0..wd {
                                dst[j * s + bb] = row[i * wd + j] + bv;
                            }
                        }
                    }
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(y, &parents, ConvTranspose)
    }
}
