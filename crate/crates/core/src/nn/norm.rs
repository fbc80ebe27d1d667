use ndarray::{Array1, Array4, ArrayD, IxDyn};

use super::conv::dims;
use super::{join, Float, Mode, Module, Param};

struct BnCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
}

/// Per-channel batch normalisation with running statistics.
pub struct BatchNorm2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    channels: usize,
    cache: Option<BnCache<T>>,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            weight: Param::weight(ArrayD::ones(IxDyn(&[channels]))),
            bias: Param::weight(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: Param::buffer(ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(ArrayD::ones(IxDyn(&[channels]))),
            momentum: 0.1,
            eps: 1e-5,
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let [n, c, h, w] = dims(x);
        assert_eq!(c, self.channels, "batch-norm channels");
        let plane = h * w;
        let xs = x.as_slice().expect("standard layout input");
        let gamma = self.weight.value.as_slice().expect("contiguous");
        let beta = self.bias.value.as_slice().expect("contiguous");
        let mut y = Array4::<T>::zeros((n, c, h, w));
        let eps = T::lit(self.eps);

        match mode {
            Mode::Eval => {
                let rm = self.running_mean.value.as_slice().expect("contiguous");
                let rv = self.running_var.value.as_slice().expect("contiguous");
                let ys = y.as_slice_mut().expect("fresh array");
                for ci in 0..c {
                    let inv = T::one() / (rv[ci] + eps).sqrt();
                    let scale = gamma[ci] * inv;
                    let shift = beta[ci] - rm[ci] * scale;
                    for ni in 0..n {
                        let off = (ni * c + ci) * plane;
                        for (d, &v) in ys[off..off + plane].iter_mut().zip(&xs[off..off + plane]) {
                            *d = v * scale + shift;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                let m = n * plane;
                let mf = T::from_usize(m).expect("count");
                let mut xhat = Array4::<T>::zeros((n, c, h, w));
                let mut inv_std = Array1::<T>::zeros(c);
                let momentum = T::lit(self.momentum);
                {
                    let hs = xhat.as_slice_mut().expect("fresh array");
                    let ys = y.as_slice_mut().expect("fresh array");
                    let rm = self.running_mean.value.as_slice_mut().expect("contiguous");
                    let rv = self.running_var.value.as_slice_mut().expect("contiguous");
                    for ci in 0..c {
                        let mut sum = T::zero();
                        for ni in 0..n {
                            let off = (ni * c + ci) * plane;
                            for &v in &xs[off..off + plane] {
                                sum += v;
                            }
                        }
                        let mean = sum / mf;
                        let mut sq = T::zero();
                        for ni in 0..n {
                            let off = (ni * c + ci) * plane;
                            for &v in &xs[off..off + plane] {
                                let d = v - mean;
                                sq += d * d;
                            }
                        }
                        let var = sq / mf;
                        let inv = T::one() / (var + eps).sqrt();
                        inv_std[ci] = inv;
                        for ni in 0..n {
                            let off = (ni * c + ci) * plane;
                            for i in off..off + plane {
                                let xh = (xs[i] - mean) * inv;
                                hs[i] = xh;
                                ys[i] = xh * gamma[ci] + beta[ci];
                            }
                        }
                        let unbiased = if m > 1 {
                            var * mf / (mf - T::one())
                        } else {
                            var
                        };
                        rm[ci] = rm[ci] * (T::one() - momentum) + mean * momentum;
                        rv[ci] = rv[ci] * (T::one() - momentum) + unbiased * momentum;
                    }
                }
                self.cache = Some(BnCache { xhat, inv_std });
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("batch-norm backward without a training forward");
        let [n, c, h, w] = dims(dy);
        let plane = h * w;
        let mf = T::from_usize(n * plane).expect("count");
        let ds = dy.as_slice().expect("standard layout grad");
        let hs = cache.xhat.as_slice().expect("standard layout");
        let gamma = self.weight.value.as_slice().expect("contiguous");
        let gg = self.weight.grad.as_slice_mut().expect("contiguous");
        let gb = self.bias.grad.as_slice_mut().expect("contiguous");
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for ni in 0..n {
                let off = (ni * c + ci) * plane;
                for i in off..off + plane {
                    sum_dy += ds[i];
                    sum_dy_xhat += ds[i] * hs[i];
                }
            }
            gg[ci] += sum_dy_xhat;
            gb[ci] += sum_dy;
            let scale = gamma[ci] * cache.inv_std[ci];
            let mean_dy = sum_dy / mf;
            let mean_dy_xhat = sum_dy_xhat / mf;
            for ni in 0..n {
                let off = (ni * c + ci) * plane;
                for i in off..off + plane {
                    dxs[i] = scale * (ds[i] - mean_dy - hs[i] * mean_dy_xhat);
                }
            }
        }
        dx
    }
}

impl<T: Float> Module<T> for BatchNorm2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}
