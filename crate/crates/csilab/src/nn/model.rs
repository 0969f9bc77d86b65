//! Forward and backward passes over a [`ModelSpec`], plus the
//! reconstruction loss and weight initialization.

use ndarray::{Array1, Array2, Array4, ArrayViewD, ArrayViewMutD};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

use super::layers::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, conv_backward, conv_forward,
    conv_transpose_backward, conv_transpose_forward, dense_backward, dense_forward,
    BatchNormCache, BatchNormParams, ConvGeom, Elem,
};
use super::{IoShape, LayerSpec, ModelSpec, Shape3, KERNEL};

/// Batched activations flowing through a network.
#[derive(Debug, Clone)]
pub enum Activations<F> {
    /// `[batch, height, width, channels]`
    Spatial(Array4<F>),
    /// `[batch, features]`
    Flat(Array2<F>),
}

impl<F: Elem> Activations<F> {
    pub fn batch_len(&self) -> usize {
        match self {
            Activations::Spatial(t) => t.dim().0,
            Activations::Flat(t) => t.dim().0,
        }
    }

    fn describe(&self) -> String {
        match self {
            Activations::Spatial(t) => {
                let (_, h, w, c) = t.dim();
                format!("{h}x{w}x{c}")
            }
            Activations::Flat(t) => format!("{}", t.dim().1),
        }
    }

    fn matches(&self, io: &IoShape) -> bool {
        match (self, io) {
            (Activations::Spatial(t), IoShape::Tensor([h, w, c])) => {
                let (_, th, tw, tc) = t.dim();
                (th, tw, tc) == (*h, *w, *c)
            }
            (Activations::Flat(t), IoShape::Vector(n)) => t.dim().1 == *n,
            _ => false,
        }
    }

    pub fn into_spatial(self) -> Array4<F> {
        match self {
            Activations::Spatial(t) => t,
            Activations::Flat(_) => panic!("expected spatial activations"),
        }
    }

    pub fn into_flat(self) -> Array2<F> {
        match self {
            Activations::Flat(t) => t,
            Activations::Spatial(_) => panic!("expected flat activations"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Weights of one layer; `Stateless` for shape/activation layers.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<F> {
    Conv { weight: Array4<F>, bias: Array1<F> },
    ConvT { weight: Array4<F>, bias: Array1<F> },
    Dense { weight: Array2<F>, bias: Array1<F> },
    BatchNorm(BatchNormParams<F>),
    Stateless,
}

/// All weights of one network, aligned with `ModelSpec::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<F = f32> {
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Elem> NetState<F> {
    /// Mutable views of the optimizer-visible parameters, in a fixed order.
    pub fn trainable_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Conv { weight, bias } | LayerParams::ConvT { weight, bias } => {
                    out.push(weight.view_mut().into_dyn());
                    out.push(bias.view_mut().into_dyn());
                }
                LayerParams::Dense { weight, bias } => {
                    out.push(weight.view_mut().into_dyn());
                    out.push(bias.view_mut().into_dyn());
                }
                LayerParams::BatchNorm(bn) => {
                    out.push(bn.gamma.view_mut().into_dyn());
                    out.push(bn.beta.view_mut().into_dyn());
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }
}

/// Per-layer gradients, aligned with the spec's layer list.
#[derive(Debug, Clone)]
pub enum LayerGrads<F> {
    Conv { dw: Array4<F>, db: Array1<F> },
    Dense { dw: Array2<F>, db: Array1<F> },
    BatchNorm { dgamma: Array1<F>, dbeta: Array1<F> },
    None,
}

impl<F: Elem> LayerGrads<F> {
    /// Views aligned with [`NetState::trainable_views_mut`].
    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        match self {
            LayerGrads::Conv { dw, db } => vec![dw.view().into_dyn(), db.view().into_dyn()],
            LayerGrads::Dense { dw, db } => vec![dw.view().into_dyn(), db.view().into_dyn()],
            LayerGrads::BatchNorm { dgamma, dbeta } => {
                vec![dgamma.view().into_dyn(), dbeta.view().into_dyn()]
            }
            LayerGrads::None => vec![],
        }
    }
}

/// Forward-pass byproducts the backward pass consumes.
pub enum LayerCache<F> {
    ConvPatches(Array2<F>),
    ConvTInput(Array4<F>),
    DenseInput(Array2<F>),
    BatchNorm(BatchNormCache<F>),
    ReluOutput(Array4<F>),
    TanhOutput(Array2<F>),
    None,
}

/// Fan-in-scaled uniform initialization; batch norm starts at identity,
/// biases at zero.
pub fn init_net<F: Elem>(spec: &ModelSpec, seed: u64) -> NetState<F> {
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let mut rng = rng_from(seed, stream::INIT, idx as u64);
        let params = match layer {
            LayerSpec::ConvStride2 { in_shape, out_shape }
            | LayerSpec::ConvUnitStride { in_shape, out_shape } => {
                let (cin, cout) = (in_shape[2], out_shape[2]);
                let limit = (6.0 / (KERNEL * KERNEL * cin) as f64).sqrt();
                LayerParams::Conv {
                    weight: Array4::from_shape_simple_fn((KERNEL, KERNEL, cin, cout), || {
                        F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit).unwrap()
                    }),
                    bias: Array1::zeros(cout),
                }
            }
            LayerSpec::ConvTransposeStride2 { in_shape, out_shape } => {
                let (cin, cout) = (in_shape[2], out_shape[2]);
                let limit = (6.0 / (KERNEL * KERNEL * cin) as f64).sqrt();
                LayerParams::ConvT {
                    weight: Array4::from_shape_simple_fn((KERNEL, KERNEL, cout, cin), || {
                        F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit).unwrap()
                    }),
                    bias: Array1::zeros(cout),
                }
            }
            LayerSpec::Dense { in_len, out_len } => {
                let limit = (6.0 / *in_len as f64).sqrt();
                LayerParams::Dense {
                    weight: Array2::from_shape_simple_fn((*in_len, *out_len), || {
                        F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit).unwrap()
                    }),
                    bias: Array1::zeros(*out_len),
                }
            }
            LayerSpec::BatchNorm { shape } => {
                LayerParams::BatchNorm(BatchNormParams::identity(shape[2]))
            }
            _ => LayerParams::Stateless,
        };
        layers.push(params);
    }
    NetState { layers }
}

fn shape_err<F: Elem>(idx: usize, layer: &LayerSpec, expected: &IoShape, got: &Activations<F>) -> Error {
    Error::ShapeMismatch {
        layer: idx,
        name: layer.name().to_string(),
        expected: expected.to_string(),
        actual: got.describe(),
    }
}

fn expected_input(layer: &LayerSpec) -> IoShape {
    match layer {
        LayerSpec::ConvStride2 { in_shape, .. }
        | LayerSpec::ConvTransposeStride2 { in_shape, .. }
        | LayerSpec::ConvUnitStride { in_shape, .. }
        | LayerSpec::Flatten { in_shape, .. } => IoShape::Tensor(*in_shape),
        LayerSpec::BatchNorm { shape } | LayerSpec::Relu { shape } => IoShape::Tensor(*shape),
        LayerSpec::Tanh { len } => IoShape::Vector(*len),
        LayerSpec::Reshape { in_len, .. } => IoShape::Vector(*in_len),
        LayerSpec::Dense { in_len, .. } => IoShape::Vector(*in_len),
    }
}

/// Geometry of the convolution this layer applies (or, for a transposed
/// convolution, the one it is the adjoint of).
fn layer_geom(layer: &LayerSpec) -> ConvGeom {
    match layer {
        LayerSpec::ConvStride2 { in_shape, .. } => ConvGeom::same(in_shape[0], in_shape[1], 2),
        LayerSpec::ConvUnitStride { in_shape, .. } => ConvGeom::same(in_shape[0], in_shape[1], 1),
        LayerSpec::ConvTransposeStride2 { out_shape, .. } => {
            ConvGeom::same(out_shape[0], out_shape[1], 2)
        }
        _ => unreachable!("not a convolution layer"),
    }
}

fn reshape_to_flat<F: Elem>(t: Array4<F>) -> Array2<F> {
    let (b, h, w, c) = t.dim();
    t.into_shape_with_order((b, h * w * c)).expect("contiguous")
}

fn reshape_to_spatial<F: Elem>(t: Array2<F>, shape: Shape3) -> Array4<F> {
    let b = t.dim().0;
    t.into_shape_with_order((b, shape[0], shape[1], shape[2]))
        .expect("contiguous")
}

fn check_input<F: Elem>(
    idx: usize,
    layer: &LayerSpec,
    x: &Activations<F>,
) -> Result<()> {
    let expected = expected_input(layer);
    if !x.matches(&expected) {
        return Err(shape_err(idx, layer, &expected, x));
    }
    Ok(())
}

/// One forward step; `net` is mutable only for the training-mode batch-norm
/// running statistics.
fn forward_layer<F: Elem>(
    idx: usize,
    layer: &LayerSpec,
    params: &mut LayerParams<F>,
    x: Activations<F>,
    mode: Mode,
    caches: Option<&mut Vec<LayerCache<F>>>,
) -> Result<Activations<F>> {
    check_input(idx, layer, &x)?;
    let mut cache = LayerCache::None;
    let out = match (layer, params) {
        (LayerSpec::ConvStride2 { .. }, LayerParams::Conv { weight, bias })
        | (LayerSpec::ConvUnitStride { .. }, LayerParams::Conv { weight, bias }) => {
            let g = layer_geom(layer);
            let (y, m) = conv_forward(&x.into_spatial(), weight, bias, &g);
            cache = LayerCache::ConvPatches(m);
            Activations::Spatial(y)
        }
        (LayerSpec::ConvTransposeStride2 { .. }, LayerParams::ConvT { weight, bias }) => {
            let g = layer_geom(layer);
            let s = x.into_spatial();
            let y = conv_transpose_forward(&s, weight, bias, &g);
            cache = LayerCache::ConvTInput(s);
            Activations::Spatial(y)
        }
        (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => {
            let t = x.into_spatial();
            match mode {
                Mode::Train => {
                    let (y, bn_cache) = batch_norm_train(&t, bn);
                    cache = LayerCache::BatchNorm(bn_cache);
                    Activations::Spatial(y)
                }
                Mode::Infer => Activations::Spatial(batch_norm_infer(&t, bn)),
            }
        }
        (LayerSpec::Relu { .. }, _) => {
            let mut t = x.into_spatial();
            t.mapv_inplace(|v| v.max(F::zero()));
            cache = LayerCache::ReluOutput(t.clone());
            Activations::Spatial(t)
        }
        (LayerSpec::Tanh { .. }, _) => {
            let mut t = x.into_flat();
            t.mapv_inplace(|v| v.tanh());
            cache = LayerCache::TanhOutput(t.clone());
            Activations::Flat(t)
        }
        (LayerSpec::Flatten { .. }, _) => Activations::Flat(reshape_to_flat(x.into_spatial())),
        (LayerSpec::Reshape { out_shape, .. }, _) => {
            Activations::Spatial(reshape_to_spatial(x.into_flat(), *out_shape))
        }
        (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => {
            let xf = x.into_flat();
            let y = dense_forward(&xf, weight, bias);
            cache = LayerCache::DenseInput(xf);
            Activations::Flat(y)
        }
        (layer, _) => {
            return Err(Error::Config(format!(
                "layer {idx} ({}) has mismatched parameters",
                layer.name()
            )))
        }
    };
    if let Some(caches) = caches {
        caches.push(cache);
    }
    Ok(out)
}

/// Inference pass with running batch-norm statistics; the state is not
/// modified.
pub fn forward_infer<F: Elem>(
    spec: &ModelSpec,
    net: &NetState<F>,
    x: Activations<F>,
) -> Result<Activations<F>> {
    let mut net = net.clone();
    forward_with_mode(spec, &mut net, x, Mode::Infer, None)
}

/// Training pass: batch statistics, running-moment updates, and caches for
/// [`backward`].
pub fn forward_train<F: Elem>(
    spec: &ModelSpec,
    net: &mut NetState<F>,
    x: Activations<F>,
) -> Result<(Activations<F>, Vec<LayerCache<F>>)> {
    let mut caches = Vec::with_capacity(spec.layers.len());
    let y = forward_with_mode(spec, net, x, Mode::Train, Some(&mut caches))?;
    Ok((y, caches))
}

fn forward_with_mode<F: Elem>(
    spec: &ModelSpec,
    net: &mut NetState<F>,
    mut x: Activations<F>,
    mode: Mode,
    mut caches: Option<&mut Vec<LayerCache<F>>>,
) -> Result<Activations<F>> {
    if net.layers.len() != spec.layers.len() {
        return Err(Error::Config(
            "state and spec have different layer counts".into(),
        ));
    }
    for (idx, (layer, params)) in spec.layers.iter().zip(net.layers.iter_mut()).enumerate() {
        x = forward_layer(idx, layer, params, x, mode, caches.as_deref_mut())?;
    }
    Ok(x)
}

/// Backward pass over the cached forward; returns the input cotangent and
/// per-layer gradients aligned with the spec.
pub fn backward<F: Elem>(
    spec: &ModelSpec,
    net: &NetState<F>,
    caches: &[LayerCache<F>],
    d_out: Activations<F>,
) -> Result<(Activations<F>, Vec<LayerGrads<F>>)> {
    let mut grads: Vec<LayerGrads<F>> = (0..spec.layers.len()).map(|_| LayerGrads::None).collect();
    let mut d = d_out;
    for idx in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[idx];
        let params = &net.layers[idx];
        let cache = &caches[idx];
        d = match (layer, params, cache) {
            (
                LayerSpec::ConvStride2 { .. } | LayerSpec::ConvUnitStride { .. },
                LayerParams::Conv { weight, .. },
                LayerCache::ConvPatches(m),
            ) => {
                let g = layer_geom(layer);
                let (dx, dw, db) = conv_backward(m, weight, &d.into_spatial(), &g);
                grads[idx] = LayerGrads::Conv { dw, db };
                Activations::Spatial(dx)
            }
            (
                LayerSpec::ConvTransposeStride2 { .. },
                LayerParams::ConvT { weight, .. },
                LayerCache::ConvTInput(s),
            ) => {
                let g = layer_geom(layer);
                let (ds, dw, db) = conv_transpose_backward(s, weight, &d.into_spatial(), &g);
                grads[idx] = LayerGrads::Conv { dw, db };
                Activations::Spatial(ds)
            }
            (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(bn), LayerCache::BatchNorm(c)) => {
                let (dx, dgamma, dbeta) = batch_norm_backward(&d.into_spatial(), bn, c);
                grads[idx] = LayerGrads::BatchNorm { dgamma, dbeta };
                Activations::Spatial(dx)
            }
            (LayerSpec::Relu { .. }, _, LayerCache::ReluOutput(y)) => {
                let mut dt = d.into_spatial();
                ndarray::Zip::from(&mut dt).and(y).for_each(|dv, yv| {
                    if *yv <= F::zero() {
                        *dv = F::zero();
                    }
                });
                Activations::Spatial(dt)
            }
            (LayerSpec::Tanh { .. }, _, LayerCache::TanhOutput(y)) => {
                let mut dt = d.into_flat();
                ndarray::Zip::from(&mut dt).and(y).for_each(|dv, yv| {
                    *dv = *dv * (F::one() - *yv * *yv);
                });
                Activations::Flat(dt)
            }
            (LayerSpec::Flatten { in_shape, .. }, _, _) => {
                Activations::Spatial(reshape_to_spatial(d.into_flat(), *in_shape))
            }
            (LayerSpec::Reshape { .. }, _, _) => {
                Activations::Flat(reshape_to_flat(d.into_spatial()))
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense { weight, .. }, LayerCache::DenseInput(x)) => {
                let (dx, dw, db) = dense_backward(x, weight, &d.into_flat());
                grads[idx] = LayerGrads::Dense { dw, db };
                Activations::Flat(dx)
            }
            _ => {
                return Err(Error::Config(format!(
                    "layer {idx} ({}) has mismatched cache or parameters",
                    spec.layers[idx].name()
                )))
            }
        };
    }
    Ok((d, grads))
}

/// Least-squares reconstruction loss: per-sample squared Frobenius norm of
/// the residual, averaged over the batch.
pub fn reconstruction_loss<F: Elem>(recon: &Array4<F>, target: &Array4<F>) -> F {
    debug_assert_eq!(recon.dim(), target.dim());
    let batch = F::from_usize(recon.dim().0).unwrap();
    let mut acc = F::zero();
    for (r, t) in recon.iter().zip(target.iter()) {
        let d = *r - *t;
        acc = acc + d * d;
    }
    acc / batch
}

/// Gradient of [`reconstruction_loss`] w.r.t. the reconstruction.
pub fn reconstruction_loss_grad<F: Elem>(recon: &Array4<F>, target: &Array4<F>) -> Array4<F> {
    let batch = F::from_usize(recon.dim().0).unwrap();
    let two = F::from_f64(2.0).unwrap();
    let mut d = recon - target;
    d.mapv_inplace(|v| two * v / batch);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_decoder, build_encoder};
    use ndarray::Array;

    fn ramp_input(b: usize, h: usize, w: usize) -> Array4<f32> {
        Array::from_shape_fn((b, h, w, 2), |(i, a, c, k)| {
            (((i * 13 + a * 7 + c * 3 + k) % 17) as f32) / 8.5 - 1.0
        })
    }

    #[test]
    fn encoder_emits_bounded_codewords() {
        let spec = build_encoder(16, 32, 32).unwrap();
        let mut net = init_net::<f32>(&spec, 3);
        let x = ramp_input(4, 16, 32);
        let (z, _) = forward_train(&spec, &mut net, Activations::Spatial(x.clone())).unwrap();
        let z = z.into_flat();
        assert_eq!(z.dim(), (4, 32));
        assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));

        let z2 = forward_infer(&spec, &net, Activations::Spatial(x))
            .unwrap()
            .into_flat();
        assert_eq!(z2.dim(), (4, 32));
        assert!(z2.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decoder_restores_input_shape() {
        let spec = build_decoder(16, 32, 32).unwrap();
        let net = init_net::<f32>(&spec, 4);
        let z = Array2::from_elem((3, 32), 0.1f32);
        let y = forward_infer(&spec, &net, Activations::Flat(z))
            .unwrap()
            .into_spatial();
        assert_eq!(y.dim(), (3, 16, 32, 2));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_input_gives_finite_codeword_strictly_inside_bounds() {
        let spec = build_encoder(16, 32, 8).unwrap();
        let mut net = init_net::<f32>(&spec, 5);
        let x = Array4::zeros((2, 16, 32, 2));
        let (z, _) = forward_train(&spec, &mut net, Activations::Spatial(x)).unwrap();
        let z = z.into_flat();
        assert!(z.iter().all(|v| v.is_finite() && v.abs() < 1.0));
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let spec = build_encoder(16, 32, 8).unwrap();
        let net = init_net::<f32>(&spec, 6);
        let bad = Array4::<f32>::zeros((1, 8, 32, 2));
        let err = forward_infer(&spec, &net, Activations::Spatial(bad)).unwrap_err();
        match err {
            Error::ShapeMismatch {
                layer,
                name,
                expected,
                actual,
            } => {
                assert_eq!(layer, 0);
                assert_eq!(name, "conv_stride2");
                assert_eq!(expected, "16x32x2");
                assert_eq!(actual, "8x32x2");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn loss_identities() {
        let x = ramp_input(3, 4, 4);
        assert_eq!(reconstruction_loss(&x, &x), 0.0);
        let shifted = &x + 1.0f32;
        // Constant offset of 1 on every entry: loss is the element count
        // per sample.
        let per_sample = (4 * 4 * 2) as f32;
        assert!((reconstruction_loss(&shifted, &x) - per_sample).abs() < 1e-4);
    }

    #[test]
    fn loss_matches_scalar_reimplementation() {
        let r = ramp_input(2, 3, 5);
        let t = ramp_input(2, 3, 5).mapv(|v| v * 0.7 + 0.1);
        let fast = reconstruction_loss(&r, &t) as f64;
        let mut acc = 0.0f64;
        for (a, b) in r.iter().zip(t.iter()) {
            acc += (*a as f64 - *b as f64).powi(2);
        }
        let oracle = acc / 2.0;
        assert!((fast - oracle).abs() < 1e-6 * oracle.max(1.0));
    }

    /// Central-difference gradient check over every trainable parameter of
    /// a small encoder+decoder pair, in f64.
    #[test]
    fn analytic_gradients_match_central_differences() {
        let enc = build_encoder(8, 8, 4).unwrap();
        let dec = build_decoder(8, 8, 4).unwrap();
        let mut enc_net = init_net::<f64>(&enc, 11);
        let mut dec_net = init_net::<f64>(&dec, 12);
        let x = Array::from_shape_fn((2, 8, 8, 2), |(i, a, c, k)| {
            (((i * 7 + a * 5 + c * 3 + k * 11) % 13) as f64) / 6.0 - 1.0
        });

        let loss_fn = |enc_net: &mut NetState<f64>, dec_net: &mut NetState<f64>| -> f64 {
            let (z, _) = forward_train(&enc, enc_net, Activations::Spatial(x.clone())).unwrap();
            let (y, _) = forward_train(&dec, dec_net, z).unwrap();
            reconstruction_loss(&y.into_spatial(), &x)
        };

        // Analytic gradients.
        let (z, enc_caches) =
            forward_train(&enc, &mut enc_net, Activations::Spatial(x.clone())).unwrap();
        let (y, dec_caches) = forward_train(&dec, &mut dec_net, z).unwrap();
        let y = y.into_spatial();
        let d_loss = reconstruction_loss_grad(&y, &x);
        let (dz, dec_grads) =
            backward(&dec, &dec_net, &dec_caches, Activations::Spatial(d_loss)).unwrap();
        let (_, enc_grads) = backward(&enc, &enc_net, &enc_caches, dz).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        for (net_grads, which) in [(enc_grads, 0usize), (dec_grads, 1usize)] {
            for (layer_idx, g) in net_grads.iter().enumerate() {
                for (param_idx, gview) in g.views().into_iter().enumerate() {
                    // Probe a handful of entries per tensor to keep runtime sane.
                    let len = gview.len();
                    let probes: Vec<usize> = [0, len / 3, len / 2, len.saturating_sub(1)]
                        .into_iter()
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    for flat in probes {
                        let analytic = *gview.as_slice().unwrap().get(flat).unwrap();
                        let bump = |enc_net: &mut NetState<f64>,
                                    dec_net: &mut NetState<f64>,
                                    delta: f64| {
                            let net = if which == 0 { enc_net } else { dec_net };
                            let mut views = net.trainable_views_mut();
                            // Trainable views are ordered (w, b) per
                            // parameterized layer; recover the slot from the
                            // layer's grads alignment.
                            let slot = slot_index(
                                if which == 0 { &enc } else { &dec },
                                layer_idx,
                                param_idx,
                            );
                            *views[slot].as_slice_mut().unwrap().get_mut(flat).unwrap() += delta;
                        };
                        bump(&mut enc_net, &mut dec_net, h);
                        let plus = loss_fn(&mut enc_net, &mut dec_net);
                        bump(&mut enc_net, &mut dec_net, -2.0 * h);
                        let minus = loss_fn(&mut enc_net, &mut dec_net);
                        bump(&mut enc_net, &mut dec_net, h);
                        let numeric = (plus - minus) / (2.0 * h);
                        // Relative error below 1e-4; the absolute floor
                        // covers true-zero directions (e.g. conv bias ahead
                        // of batch norm) where central differences only
                        // produce rounding noise.
                        let denom = analytic.abs().max(numeric.abs());
                        assert!(
                            (analytic - numeric).abs() <= 1e-7 + 1e-4 * denom,
                            "net {which} layer {layer_idx} param {param_idx} entry {flat}: \
                             analytic {analytic} vs numeric {numeric}"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 50, "gradient check exercised too few parameters");
    }

    /// Index into `trainable_views_mut` for parameter `param_idx` of layer
    /// `layer_idx`.
    fn slot_index(spec: &ModelSpec, layer_idx: usize, param_idx: usize) -> usize {
        let mut slot = 0;
        for layer in &spec.layers[..layer_idx] {
            slot += match layer {
                LayerSpec::ConvStride2 { .. }
                | LayerSpec::ConvTransposeStride2 { .. }
                | LayerSpec::ConvUnitStride { .. }
                | LayerSpec::Dense { .. }
                | LayerSpec::BatchNorm { .. } => 2,
                _ => 0,
            };
        }
        slot + param_idx
    }
}
