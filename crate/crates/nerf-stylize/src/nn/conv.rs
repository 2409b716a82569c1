use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

use crate::real::{rf, Real};

/// 3x3 convolution with zero padding 1 and stride 1 on `(C, H, W)` tensors,
/// implemented as im2col + matrix product.
#[derive(Clone, Debug)]
pub struct Conv2d<F> {
    /// `(c_out, c_in * 9)`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub c_in: usize,
    pub c_out: usize,
}

#[derive(Clone, Debug)]
pub struct Conv2dGrad<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Conv2d<F> {
    pub fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let fan_in = c_in * 9;
        let bound = rf::<F>((6.0 / fan_in as f64).sqrt());
        let weight = Array2::from_shape_fn((c_out, fan_in), |_| rng.gen_range(-bound..bound));
        Conv2d {
            weight,
            bias: Array1::zeros(c_out),
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, x: ArrayView3<'_, F>) -> Array3<F> {
        let (_, h, w) = x.dim();
        let col = im2col(x);
        let mut y = self.weight.dot(&col); // (c_out, h*w)
        for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + *b);
        }
        y.into_shape_with_order((self.c_out, h, w)).unwrap()
    }

    /// Returns `(dx, grads)`.
    pub fn backward(
        &self,
        x: ArrayView3<'_, F>,
        dy: ArrayView3<'_, F>,
    ) -> (Array3<F>, Conv2dGrad<F>) {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.c_in);
        let col = im2col(x);
        let dy_mat = dy
            .to_owned()
            .into_shape_with_order((self.c_out, h * w))
            .unwrap();
        let dw = dy_mat.dot(&col.t());
        let db = dy_mat.sum_axis(Axis(1));
        let dcol = self.weight.t().dot(&dy_mat);
        let dx = col2im(dcol.view(), self.c_in, h, w);
        (dx, Conv2dGrad { weight: dw, bias: db })
    }
}

/// `(C, H, W) -> (C*9, H*W)` patch matrix for a 3x3 kernel, zero padding 1.
fn im2col<F: Real>(x: ArrayView3<'_, F>) -> Array2<F> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let mut col = Array2::zeros((c * 9, h * w));
    let cs = col.as_slice_mut().unwrap();
    for ci in 0..c {
        let xoff = ci * h * w;
        for kh in 0..3usize {
            for kw in 0..3usize {
                let row = (ci * 9 + kh * 3 + kw) * (h * w);
                for oh in 0..h {
                    let sh = oh as isize + kh as isize - 1;
                    if sh < 0 || sh >= h as isize {
                        continue;
                    }
                    let src = xoff + sh as usize * w;
                    let dst = row + oh * w;
                    // valid source column range for this kernel offset
                    let (w0, w1) = col_range(w, kw);
                    for ow in w0..w1 {
                        let sw = (ow as isize + kw as isize - 1) as usize;
                        cs[dst + ow] = xs[src + sw];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add inverse of [`im2col`].
fn col2im<F: Real>(dcol: ndarray::ArrayView2<'_, F>, c: usize, h: usize, w: usize) -> Array3<F> {
    let dcol = dcol.as_standard_layout();
    let ds = dcol.as_slice().unwrap();
    let mut dx = Array3::zeros((c, h, w));
    let xs = dx.as_slice_mut().unwrap();
    for ci in 0..c {
        let xoff = ci * h * w;
        for kh in 0..3usize {
            for kw in 0..3usize {
                let row = (ci * 9 + kh * 3 + kw) * (h * w);
                for oh in 0..h {
                    let sh = oh as isize + kh as isize - 1;
                    if sh < 0 || sh >= h as isize {
                        continue;
                    }
                    let src = xoff + sh as usize * w;
                    let dst = row + oh * w;
                    let (w0, w1) = col_range(w, kw);
                    for ow in w0..w1 {
                        let sw = (ow as isize + kw as isize - 1) as usize;
                        xs[src + sw] = xs[src + sw] + ds[dst + ow];
                    }
                }
            }
        }
    }
    dx
}

#[inline]
fn col_range(w: usize, kw: usize) -> (usize, usize) {
    match kw {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// 2x2 average pooling, stride 2. Requires even spatial dims.
#[derive(Clone, Copy, Debug, Default)]
pub struct AvgPool2;

impl AvgPool2 {
    pub fn forward<F: Real>(&self, x: ArrayView3<'_, F>) -> Array3<F> {
        let (c, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dims");
        let quarter = rf::<F>(0.25);
        Array3::from_shape_fn((c, h / 2, w / 2), |(ci, oh, ow)| {
            (x[(ci, 2 * oh, 2 * ow)]
                + x[(ci, 2 * oh, 2 * ow + 1)]
                + x[(ci, 2 * oh + 1, 2 * ow)]
                + x[(ci, 2 * oh + 1, 2 * ow + 1)])
                * quarter
        })
    }

    pub fn backward<F: Real>(&self, dy: ArrayView3<'_, F>) -> Array3<F> {
        let (c, h, w) = dy.dim();
        let quarter = rf::<F>(0.25);
        Array3::from_shape_fn((c, h * 2, w * 2), |(ci, ih, iw)| {
            dy[(ci, ih / 2, iw / 2)] * quarter
        })
    }
}

/// Nearest-neighbor 2x upsampling.
#[derive(Clone, Copy, Debug, Default)]
pub struct UpsampleNearest2;

impl UpsampleNearest2 {
    pub fn forward<F: Real>(&self, x: ArrayView3<'_, F>) -> Array3<F> {
        let (c, h, w) = x.dim();
        Array3::from_shape_fn((c, h * 2, w * 2), |(ci, oh, ow)| x[(ci, oh / 2, ow / 2)])
    }

    pub fn backward<F: Real>(&self, dy: ArrayView3<'_, F>) -> Array3<F> {
        let (c, h, w) = dy.dim();
        let mut dx = Array3::zeros((c, h / 2, w / 2));
        for ci in 0..c {
            for ih in 0..h {
                for iw in 0..w {
                    dx[(ci, ih / 2, iw / 2)] = dx[(ci, ih / 2, iw / 2)] + dy[(ci, ih, iw)];
                }
            }
        }
        dx
    }
}
