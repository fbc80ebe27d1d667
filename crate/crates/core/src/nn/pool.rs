use ndarray::{Array2, Array4};

use super::conv::{conv_out, dims};
use super::{Float, Mode};

/// Max pooling with -inf padding; ties resolve to the first element in scan order.
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
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

    pub fn forward<T: Float>(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let [n, c, h, w] = dims(x);
        let (oh, ow) = self.output_hw(h, w).expect("pool input smaller than kernel");
        let xs = x.as_slice().expect("standard layout input");
        let mut y = Array4::<T>::zeros((n, c, oh, ow));
        let mut arg = vec![0usize; n * c * oh * ow];
        let ys = y.as_slice_mut().expect("fresh array");
        let p = self.padding as isize;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if best_i == usize::MAX || xs[i] > best {
                                best = xs[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    ys[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        self.cache = match mode {
            Mode::Train => Some((arg, [n, c, h, w])),
            Mode::Eval => None,
        };
        y
    }

    pub fn backward<T: Float>(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (arg, [n, c, h, w]) = self.cache.take().expect("pool backward without a training forward");
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh array");
        for (&i, &g) in arg.iter().zip(dy.as_slice().expect("standard layout grad")) {
            dxs[i] += g;
        }
        dx
    }
}

/// Mean over the spatial axes: N×C×H×W → N×C.
pub fn global_avg_pool<T: Float>(x: &Array4<T>) -> Array2<T> {
    let [n, c, h, w] = dims(x);
    let xs = x.as_slice().expect("standard layout input");
    let inv = T::one() / T::from_usize(h * w).expect("count");
    Array2::from_shape_fn((n, c), |(ni, ci)| {
        let off = (ni * c + ci) * h * w;
        let mut s = T::zero();
        for &v in &xs[off..off + h * w] {
            s += v;
        }
        s * inv
    })
}

pub fn global_avg_pool_backward<T: Float>(dy: &Array2<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c) = dy.dim();
    let inv = T::one() / T::from_usize(h * w).expect("count");
    Array4::from_shape_fn((n, c, h, w), |(ni, ci, _, _)| dy[[ni, ci]] * inv)
}
