use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::real::{rf, Real};

/// Row count above which matrix products are split into fixed-size row chunks
/// and evaluated in parallel. Chunk boundaries are fixed by index, so results
/// do not depend on thread scheduling.
const PAR_ROWS: usize = 1024;

/// `a (m,k) . b (k,n)`, chunk-parallel over rows of `a`.
pub fn matmul<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    matmul_into(a, b, &mut out);
    out
}

/// `out += a . b`, chunk-parallel over rows of `a`. Chunk boundaries are
/// fixed by index, so results do not depend on thread scheduling.
pub fn matmul_into<F: Real>(
    a: ArrayView2<'_, F>,
    b: ArrayView2<'_, F>,
    out: &mut Array2<F>,
) {
    use ndarray::linalg::general_mat_mul;
    let m = a.nrows();
    if m < 2 * PAR_ROWS {
        general_mat_mul(F::one(), &a, &b, F::one(), out);
        return;
    }
    let mut blocks: Vec<(usize, ndarray::ArrayViewMut2<'_, F>)> = Vec::new();
    let mut rest = out.view_mut();
    let mut start = 0;
    while start < m {
        let len = PAR_ROWS.min(m - start);
        let (head, tail) = rest.split_at(ndarray::Axis(0), len);
        blocks.push((start, head));
        rest = tail;
        start += len;
    }
    blocks.into_par_iter().for_each(|(row0, mut block)| {
        let rows = block.nrows();
        general_mat_mul(
            F::one(),
            &a.slice(s![row0..row0 + rows, ..]),
            &b,
            F::one(),
            &mut block,
        );
    });
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// `ln(1 + e^x)`, used for nonnegative density outputs.
    Softplus,
}

impl Activation {
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed in terms of the pre-activation value.
    pub fn deriv<F: Real>(self, x: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (F::one() - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn softplus<F: Real>(x: F) -> F {
    // max(x, 0) + ln(1 + e^-|x|), stable in both tails
    let m = if x > F::zero() { x } else { F::zero() };
    m + (F::one() + (-x.abs()).exp()).ln()
}

/// Fully connected layer, weight layout `(out, in)`.
#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Clone, Debug)]
pub struct DenseGrad<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    /// He-uniform initialization, deterministic given the RNG state.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = rf::<F>((6.0 / in_dim as f64).sqrt());
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| {
            rng.gen_range(-bound..bound)
        });
        Dense {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `(n, in) -> (n, out)`
    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        let m = x.nrows();
        let mut y = Array2::zeros((m, self.out_dim()));
        for mut row in y.outer_iter_mut() {
            row.assign(&self.bias);
        }
        matmul_into(x, self.weight.t(), &mut y);
        y
    }

    /// Returns the gradient w.r.t. the input and the parameter gradients.
    pub fn backward(
        &self,
        x: ArrayView2<'_, F>,
        dy: ArrayView2<'_, F>,
    ) -> (Array2<F>, DenseGrad<F>) {
        let dx = matmul(dy, self.weight.view());
        let dw = matmul(dy.t(), x);
        let db = dy.sum_axis(Axis(0));
        (dx, DenseGrad { weight: dw, bias: db })
    }
}

/// Plain MLP with one activation on hidden layers, an output activation, and
/// an optional skip connection that concatenates the network input onto one
/// hidden layer's input.
#[derive(Clone, Debug)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
    pub hidden: Activation,
    pub output: Activation,
    /// Index of the layer whose input is `concat(h, x0)`.
    pub skip_at: Option<usize>,
}

pub struct MlpCache<F> {
    /// Input fed to each layer (after any skip concatenation).
    inputs: Vec<Array2<F>>,
    /// Pre-activation output of each layer.
    preacts: Vec<Array2<F>>,
}

#[derive(Clone, Debug)]
pub struct MlpGrad<F> {
    pub layers: Vec<DenseGrad<F>>,
}

impl<F: Real> Mlp<F> {
    /// `dims` lists layer widths input-first, e.g. `[in, h, h, out]`.
    pub fn init<R: Rng>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        skip_at: Option<usize>,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let mut in_dim = dims[i];
            if skip_at == Some(i) {
                in_dim += dims[0];
            }
            layers.push(Dense::init(in_dim, dims[i + 1], rng));
        }
        Mlp {
            layers,
            hidden,
            output,
            skip_at,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        self.forward_cache(x).0
    }

    pub fn forward_cache(&self, x: ArrayView2<'_, F>) -> (Array2<F>, MlpCache<F>) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            if self.skip_at == Some(i) && i > 0 {
                h = concat_cols(h.view(), x);
            }
            let z = layer.forward(h.view());
            let act = if i + 1 == n { self.output } else { self.hidden };
            let next = z.mapv(|v| act.apply(v));
            inputs.push(std::mem::replace(&mut h, next));
            preacts.push(z);
        }
        (
            h,
            MlpCache { inputs, preacts },
        )
    }

    /// Backprop. Returns the gradient w.r.t. the network input `x0` and the
    /// per-layer parameter gradients.
    pub fn backward(&self, cache: &MlpCache<F>, dy: ArrayView2<'_, F>) -> (Array2<F>, MlpGrad<F>) {
        let n = self.layers.len();
        let x0_dim = self.layers[0].in_dim();
        let mut dx0: Option<Array2<F>> = None;
        let mut grads: Vec<Option<DenseGrad<F>>> = (0..n).map(|_| None).collect();
        let mut delta = dy.to_owned();
        for i in (0..n).rev() {
            let act = if i + 1 == n { self.output } else { self.hidden };
            let dz = ndarray::Zip::from(&delta)
                .and(&cache.preacts[i])
                .map_collect(|d, z| *d * act.deriv(*z));
            let (dx, g) = self.layers[i].backward(cache.inputs[i].view(), dz.view());
            grads[i] = Some(g);
            if self.skip_at == Some(i) && i > 0 {
                // input was concat(h, x0): split the gradient
                let h_dim = dx.ncols() - x0_dim;
                let dskip = dx.slice(s![.., h_dim..]).to_owned();
                match &mut dx0 {
                    Some(acc) => *acc += &dskip,
                    None => dx0 = Some(dskip),
                }
                delta = dx.slice(s![.., ..h_dim]).to_owned();
            } else {
                delta = dx;
            }
        }
        let dx0 = match dx0 {
            Some(acc) => acc + &delta,
            None => delta,
        };
        (
            dx0,
            MlpGrad {
                layers: grads.into_iter().map(|g| g.unwrap()).collect(),
            },
        )
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice().unwrap());
            out.push(l.bias.as_slice().unwrap());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
        }
        out
    }
}

impl<F: Real> MlpGrad<F> {
    pub fn grad_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.weight.as_slice().unwrap());
            out.push(g.bias.as_slice().unwrap());
        }
        out
    }

    pub fn add(&mut self, other: &MlpGrad<F>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

pub fn concat_cols<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    assert_eq!(a.nrows(), b.nrows(), "row counts must match");
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}
