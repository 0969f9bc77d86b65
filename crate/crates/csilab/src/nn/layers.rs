//! Tensor primitives behind the model: im2col convolution, its adjoint
//! (transposed convolution), dense layers and batch normalization.
//!
//! Everything is generic over the element type so the training path runs in
//! f32 while gradient checks instantiate the identical code in f64.
//!
//! Layout conventions: activations are `[batch, height, width, channels]`;
//! convolution kernels are `[kh, kw, c_in, c_out]`; transposed-convolution
//! kernels are `[kh, kw, c_out, c_in]`. A transposed convolution is the
//! exact adjoint of the stride-2 "same" convolution with the mirrored
//! geometry, which is what makes the decoder invert the encoder's shape
//! sequence for any input size.

use ndarray::{Array1, Array2, Array4, NdFloat};
use num_traits::FromPrimitive;

use super::KERNEL;

/// Element type of all layer math.
pub trait Elem: NdFloat + FromPrimitive {}
impl Elem for f32 {}
impl Elem for f64 {}

/// Geometry of one "same"-padded convolution from `(in_h, in_w)` down to
/// `(out_h, out_w) = ceil(in / stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// "Same" padding: total padding `max((out-1)*stride + kernel - in, 0)`,
    /// split with the smaller half leading.
    pub fn same(in_h: usize, in_w: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + KERNEL).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + KERNEL).saturating_sub(in_w);
        ConvGeom {
            in_h,
            in_w,
            out_h,
            out_w,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    fn patch_cols(&self, channels: usize) -> usize {
        KERNEL * KERNEL * channels
    }
}

/// Gather 3x3 patches of `x` into a `[batch*out_h*out_w, 9*c]` matrix.
/// Out-of-range taps read as zero.
pub fn im2col<F: Elem>(x: &Array4<F>, g: &ConvGeom) -> Array2<F> {
    let (b, h, w, c) = x.dim();
    debug_assert_eq!((h, w), (g.in_h, g.in_w));
    let mut m = Array2::zeros((b * g.out_h * g.out_w, g.patch_cols(c)));
    let xs = x.as_slice().expect("activations are standard layout");
    let ms = m.as_slice_mut().expect("fresh matrix is standard layout");
    let row_len = g.patch_cols(c);
    for bi in 0..b {
        for oh in 0..g.out_h {
            let ih0 = (oh * g.stride) as isize - g.pad_top as isize;
            for ow in 0..g.out_w {
                let iw0 = (ow * g.stride) as isize - g.pad_left as isize;
                let row = (bi * g.out_h + oh) * g.out_w + ow;
                let dst_base = row * row_len;
                for kh in 0..KERNEL {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kw in 0..KERNEL {
                        let iw = iw0 + kw as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + ih as usize) * w + iw as usize) * c;
                        let dst = dst_base + (kh * KERNEL + kw) * c;
                        ms[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    m
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into an image tensor.
pub fn col2im<F: Elem>(m: &Array2<F>, g: &ConvGeom, batch: usize, channels: usize) -> Array4<F> {
    debug_assert_eq!(m.dim(), (batch * g.out_h * g.out_w, g.patch_cols(channels)));
    let mut x = Array4::zeros((batch, g.in_h, g.in_w, channels));
    let ms = m.as_slice().expect("matrix is standard layout");
    let xs = x.as_slice_mut().expect("fresh tensor is standard layout");
    let row_len = g.patch_cols(channels);
    let (h, w, c) = (g.in_h, g.in_w, channels);
    for bi in 0..batch {
        for oh in 0..g.out_h {
            let ih0 = (oh * g.stride) as isize - g.pad_top as isize;
            for ow in 0..g.out_w {
                let iw0 = (ow * g.stride) as isize - g.pad_left as isize;
                let row = (bi * g.out_h + oh) * g.out_w + ow;
                let src_base = row * row_len;
                for kh in 0..KERNEL {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kw in 0..KERNEL {
                        let iw = iw0 + kw as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let dst = ((bi * h + ih as usize) * w + iw as usize) * c;
                        let src = src_base + (kh * KERNEL + kw) * c;
                        for k in 0..c {
                            xs[dst + k] += ms[src + k];
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_channel_bias<F: Elem>(y: &mut Array4<F>, bias: &Array1<F>) {
    let c = bias.len();
    let ys = y.as_slice_mut().expect("standard layout");
    let bs = bias.as_slice().expect("standard layout");
    for chunk in ys.chunks_exact_mut(c) {
        for (v, b) in chunk.iter_mut().zip(bs) {
            *v += *b;
        }
    }
}

/// `weight [kh,kw,cin,cout]` viewed as a `[9*cin, cout]` matrix.
fn weight_matrix<F: Elem>(weight: &Array4<F>) -> Array2<F> {
    let (kh, kw, cin, cout) = weight.dim();
    weight
        .view()
        .into_shape_with_order((kh * kw * cin, cout))
        .expect("kernel is standard layout")
        .to_owned()
}

/// Convolution forward pass. Returns the output and the patch matrix, which
/// the backward pass reuses.
pub fn conv_forward<F: Elem>(
    x: &Array4<F>,
    weight: &Array4<F>,
    bias: &Array1<F>,
    g: &ConvGeom,
) -> (Array4<F>, Array2<F>) {
    let b = x.dim().0;
    let cout = weight.dim().3;
    let m = im2col(x, g);
    let y_mat = m.dot(&weight_matrix(weight));
    let mut y = y_mat
        .into_shape_with_order((b, g.out_h, g.out_w, cout))
        .expect("contiguous matmul result");
    add_channel_bias(&mut y, bias);
    (y, m)
}

/// Convolution backward pass given the cached patch matrix.
#[allow(clippy::type_complexity)]
pub fn conv_backward<F: Elem>(
    m: &Array2<F>,
    weight: &Array4<F>,
    dy: &Array4<F>,
    g: &ConvGeom,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (b, oh, ow, cout) = dy.dim();
    debug_assert_eq!((oh, ow), (g.out_h, g.out_w));
    let (kh, kw, cin, _) = weight.dim();
    let dy_mat = dy
        .view()
        .into_shape_with_order((b * oh * ow, cout))
        .expect("standard layout");
    let dw = m.t().dot(&dy_mat);
    let dw = dw
        .into_shape_with_order((kh, kw, cin, cout))
        .expect("contiguous");
    let db = dy_mat.sum_axis(ndarray::Axis(0));
    let dm = dy_mat.dot(&weight_matrix(weight).t());
    let dx = col2im(&dm, g, b, cin);
    (dx, dw, db)
}

/// Transposed convolution forward: the adjoint of the convolution whose
/// geometry maps the *output* of this layer down to its input. The kernel
/// layout is `[kh, kw, c_out, c_in]`.
pub fn conv_transpose_forward<F: Elem>(
    s: &Array4<F>,
    weight: &Array4<F>,
    bias: &Array1<F>,
    g: &ConvGeom,
) -> Array4<F> {
    let (b, h, w, cs) = s.dim();
    debug_assert_eq!((h, w), (g.out_h, g.out_w));
    let cout = weight.dim().2;
    let s_mat = s
        .view()
        .into_shape_with_order((b * h * w, cs))
        .expect("standard layout");
    // weight as [9*cout, cs]; adjoint of y = M.W is col2im(S.W^T).
    let wm = weight_matrix(weight);
    let dm = s_mat.dot(&wm.t());
    let mut y = col2im(&dm, g, b, cout);
    add_channel_bias(&mut y, bias);
    y
}

/// Transposed convolution backward: gradient w.r.t. input is a plain
/// convolution of the output cotangent.
#[allow(clippy::type_complexity)]
pub fn conv_transpose_backward<F: Elem>(
    s: &Array4<F>,
    weight: &Array4<F>,
    d_out: &Array4<F>,
    g: &ConvGeom,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (b, h, w, cs) = s.dim();
    let (kh, kw, cout, _) = weight.dim();
    let s_mat = s
        .view()
        .into_shape_with_order((b * h * w, cs))
        .expect("standard layout");
    let m = im2col(d_out, g);
    let ds_mat = m.dot(&weight_matrix(weight));
    let ds = ds_mat
        .into_shape_with_order((b, h, w, cs))
        .expect("contiguous");
    let dw = m.t().dot(&s_mat);
    let dw = dw
        .into_shape_with_order((kh, kw, cout, cs))
        .expect("contiguous");
    let mut db = Array1::zeros(cout);
    for v in d_out.view().into_shape_with_order((d_out.len() / cout, cout)).unwrap().rows() {
        db += &v;
    }
    (ds, dw, db)
}

/// Dense forward: `y = x W + b` with `W [d_in, d_out]`.
pub fn dense_forward<F: Elem>(x: &Array2<F>, weight: &Array2<F>, bias: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(weight);
    for mut row in y.rows_mut() {
        row += bias;
    }
    y
}

#[allow(clippy::type_complexity)]
pub fn dense_backward<F: Elem>(
    x: &Array2<F>,
    weight: &Array2<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = dy.dot(&weight.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(ndarray::Axis(0));
    (dx, dw, db)
}

/// Variance floor inside the batch-norm square root.
pub const BN_EPS: f64 = 1e-3;

/// Batch-norm trainable and running parameters, all per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub moving_mean: Array1<F>,
    pub moving_var: Array1<F>,
}

impl<F: Elem> BatchNormParams<F> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            moving_mean: Array1::zeros(channels),
            moving_var: Array1::ones(channels),
        }
    }
}

/// What the batch-norm backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    pub x_hat: Array4<F>,
    pub inv_std: Array1<F>,
}

/// Momentum of the running statistics: `new = 0.99*old + 0.01*batch`.
pub const BN_MOMENTUM: f64 = 0.99;

/// Training-mode batch norm: standardize with batch moments, update the
/// running moments in place.
pub fn batch_norm_train<F: Elem>(
    x: &Array4<F>,
    params: &mut BatchNormParams<F>,
) -> (Array4<F>, BatchNormCache<F>) {
    let (b, h, w, c) = x.dim();
    let n = F::from_usize(b * h * w).unwrap();
    let eps = F::from_f64(BN_EPS).unwrap();
    let momentum = F::from_f64(BN_MOMENTUM).unwrap();

    let flat = x.view().into_shape_with_order((b * h * w, c)).unwrap();
    let mean = flat.sum_axis(ndarray::Axis(0)) / n;
    let mut var = Array1::<F>::zeros(c);
    for row in flat.rows() {
        for (k, v) in row.iter().enumerate() {
            let d = *v - mean[k];
            var[k] += d * d;
        }
    }
    var /= n;

    let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
    let mut x_hat = Array4::zeros(x.dim());
    {
        let xs = x.as_slice().unwrap();
        let hs = x_hat.as_slice_mut().unwrap();
        for (i, v) in xs.iter().enumerate() {
            let k = i % c;
            hs[i] = (*v - mean[k]) * inv_std[k];
        }
    }
    let mut y = Array4::zeros(x.dim());
    {
        let hs = x_hat.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for (i, v) in hs.iter().enumerate() {
            let k = i % c;
            ys[i] = params.gamma[k] * *v + params.beta[k];
        }
    }

    let one = F::one();
    for k in 0..c {
        params.moving_mean[k] = momentum * params.moving_mean[k] + (one - momentum) * mean[k];
        params.moving_var[k] = momentum * params.moving_var[k] + (one - momentum) * var[k];
    }

    (y, BatchNormCache { x_hat, inv_std })
}

/// Inference-mode batch norm using the running statistics.
pub fn batch_norm_infer<F: Elem>(x: &Array4<F>, params: &BatchNormParams<F>) -> Array4<F> {
    let c = x.dim().3;
    let eps = F::from_f64(BN_EPS).unwrap();
    let scale: Vec<F> = (0..c)
        .map(|k| params.gamma[k] / (params.moving_var[k] + eps).sqrt())
        .collect();
    let shift: Vec<F> = (0..c)
        .map(|k| params.beta[k] - scale[k] * params.moving_mean[k])
        .collect();
    let mut y = x.clone();
    let ys = y.as_slice_mut().unwrap();
    for (i, v) in ys.iter_mut().enumerate() {
        let k = i % c;
        *v = scale[k] * *v + shift[k];
    }
    y
}

/// Batch-norm backward in training mode.
pub fn batch_norm_backward<F: Elem>(
    dy: &Array4<F>,
    params: &BatchNormParams<F>,
    cache: &BatchNormCache<F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (b, h, w, c) = dy.dim();
    let n = F::from_usize(b * h * w).unwrap();
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    {
        let dys = dy.as_slice().unwrap();
        let hs = cache.x_hat.as_slice().unwrap();
        for (i, d) in dys.iter().enumerate() {
            let k = i % c;
            dbeta[k] += *d;
            dgamma[k] += *d * hs[i];
        }
    }
    let mut dx = Array4::zeros(dy.dim());
    {
        let dys = dy.as_slice().unwrap();
        let hs = cache.x_hat.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        for (i, d) in dys.iter().enumerate() {
            let k = i % c;
            let coeff = params.gamma[k] * cache.inv_std[k] / n;
            dxs[i] = coeff * (n * *d - dbeta[k] - hs[i] * dgamma[k]);
        }
    }
    (dx, dgamma, dbeta)
}
