use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::{join, kaiming_normal, uniform, Float, Mode, Module, Param};

struct ConvCache<T> {
    col: Array2<T>,
    in_shape: [usize; 4],
}

/// 2-D convolution, square kernel, symmetric zero padding.
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<ConvCache<T>>,
}

pub fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl<T: Float> Conv2d<T> {
    /// He-normal (fan-out) weights, no bias: the residual-network convention.
    pub fn new_no_bias<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_out = out_channels * kernel * kernel;
        let weight = kaiming_normal(&[out_channels, in_channels, kernel, kernel], fan_out, rng);
        Conv2d {
            weight: Param::weight(weight),
            bias: None,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    /// He-normal (fan-in) weights and a small uniform bias.
    pub fn new_with_bias<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = kaiming_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = uniform(&[out_channels], 1.0 / (fan_in as f64).sqrt(), rng);
        Conv2d {
            weight: Param::weight(weight),
            bias: Some(Param::weight(bias)),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out(h, self.kernel, self.stride, self.padding)?,
            conv_out(w, self.kernel, self.stride, self.padding)?,
        ))
    }

    fn weight_2d(&self) -> ArrayView2<'_, T> {
        let k = self.in_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, k))
            .expect("contiguous conv weight")
    }

    fn im2col(&self, x: &Array4<T>, oh: usize, ow: usize) -> Array2<T> {
        let [n, c, h, w] = dims(x);
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let plane = oh * ow;
        let mut col = Array2::<T>::zeros((c * k * k, n * plane));
        let xs = x.as_slice().expect("standard layout input");
        let cs = col.as_slice_mut().expect("fresh array");
        let row_len = n * plane;
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let r = (ci * k + ki) * k + kj;
                    let row = &mut cs[r * row_len..(r + 1) * row_len];
                    for ni in 0..n {
                        let src = &xs[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * s + ki) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut row[ni * plane + oy * ow..ni * plane + (oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kj) as isize - p;
                                if ix >= 0 && (ix as usize) < w {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &Array2<T>, in_shape: [usize; 4], oh: usize, ow: usize) -> Array4<T> {
        let [n, c, h, w] = in_shape;
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let plane = oh * ow;
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        let ds = dx.as_slice_mut().expect("fresh array");
        let cs = col.as_slice().expect("standard layout col");
        let row_len = n * plane;
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let r = (ci * k + ki) * k + kj;
                    let row = &cs[r * row_len..(r + 1) * row_len];
                    for ni in 0..n {
                        let dst = &mut ds[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * s + ki) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                            let src = &row[ni * plane + oy * ow..ni * plane + (oy + 1) * ow];
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * s + kj) as isize - p;
                                if ix >= 0 && (ix as usize) < w {
                                    dst_row[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let [n, c, h, w] = dims(x);
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self
            .output_hw(h, w)
            .expect("conv input smaller than kernel");
        let col = self.im2col(x, oh, ow);
        let plane = oh * ow;
        let mut ymat = Array2::<T>::zeros((self.out_channels, n * plane));
        general_mat_mul(T::one(), &self.weight_2d(), &col, T::zero(), &mut ymat);

        let mut y = Array4::<T>::zeros((n, self.out_channels, oh, ow));
        {
            let ys = y.as_slice_mut().expect("fresh array");
            let ms = ymat.as_slice().expect("fresh array");
            let bias = self.bias.as_ref().map(|b| b.value.as_slice().expect("contiguous bias"));
            for o in 0..self.out_channels {
                let b = bias.map_or(T::zero(), |b| b[o]);
                for ni in 0..n {
                    let src = &ms[o * n * plane + ni * plane..o * n * plane + (ni + 1) * plane];
                    let dst = &mut ys[(ni * self.out_channels + o) * plane..(ni * self.out_channels + o + 1) * plane];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
        }
        self.cache = match mode {
            Mode::Train => Some(ConvCache {
                col,
                in_shape: [n, c, h, w],
            }),
            Mode::Eval => None,
        };
        y
    }

    /// Accumulates weight/bias gradients; returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: &Array4<T>, need_dx: bool) -> Option<Array4<T>> {
        let cache = self.cache.take().expect("conv backward without a training forward");
        let [n, oc, oh, ow] = dims(dy);
        debug_assert_eq!(oc, self.out_channels);
        let plane = oh * ow;
        let mut dmat = Array2::<T>::zeros((oc, n * plane));
        {
            let ds = dy.as_slice().expect("standard layout grad");
            let ms = dmat.as_slice_mut().expect("fresh array");
            for o in 0..oc {
                for ni in 0..n {
                    let src = &ds[(ni * oc + o) * plane..(ni * oc + o + 1) * plane];
                    ms[o * n * plane + ni * plane..o * n * plane + (ni + 1) * plane].copy_from_slice(src);
                }
            }
        }
        if let Some(bias) = self.bias.as_mut() {
            let gb = bias.grad.as_slice_mut().expect("contiguous bias grad");
            for (o, row) in dmat.outer_iter().enumerate() {
                gb[o] += row.sum();
            }
        }
        {
            let k = self.in_channels * self.kernel * self.kernel;
            let mut gw: ArrayViewMut2<'_, T> = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((oc, k))
                .expect("contiguous conv grad");
            general_mat_mul(T::one(), &dmat, &cache.col.t(), T::one(), &mut gw);
        }
        if !need_dx {
            return None;
        }
        let mut dcol = Array2::<T>::zeros(cache.col.raw_dim());
        general_mat_mul(T::one(), &self.weight_2d().t(), &dmat, T::zero(), &mut dcol);
        Some(self.col2im(&dcol, cache.in_shape, oh, ow))
    }
}

pub(crate) fn dims<T>(x: &Array4<T>) -> [usize; 4] {
    let d = x.dim();
    [d.0, d.1, d.2, d.3]
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}
