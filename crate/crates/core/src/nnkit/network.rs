use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use super::kernels::{gemm_acc, transpose};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Pre-activations of the exponential output are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Exp,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    /// Fully connected layer over the flattened input.
    Dense { units: usize },
    /// Single-input-channel 2D convolution, stride 1, no padding.
    Conv { filters: usize, height: usize, width: usize },
    Activation { activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape, without the batch dimension.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Dense stack `input -> hidden... -> output` with ReLU between layers and
    /// `output_activation` at the end.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, output_activation: Activation) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Activation { activation: Activation::Relu });
        }
        layers.push(LayerSpec::Dense { units: output });
        if output_activation != Activation::Identity {
            layers.push(LayerSpec::Activation { activation: output_activation });
        }
        NetworkSpec { input_shape: vec![input], layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Dense { in_dim: usize, out_dim: usize },
    Conv { filters: usize, kh: usize, kw: usize, h: usize, w: usize },
    Act(Activation),
}

#[derive(Debug, Clone)]
struct Layer {
    kind: Kind,
    /// Offset of this layer's parameters in the flat parameter vector.
    offset: usize,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    fn num_params(&self) -> usize {
        match self.kind {
            Kind::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            Kind::Conv { filters, kh, kw, .. } => filters * kh * kw + filters,
            Kind::Act(_) => 0,
        }
    }

    fn weight_count(&self) -> usize {
        match self.kind {
            Kind::Dense { in_dim, out_dim } => in_dim * out_dim,
            Kind::Conv { filters, kh, kw, .. } => filters * kh * kw,
            Kind::Act(_) => 0,
        }
    }
}

fn build_layers(spec: &NetworkSpec) -> Result<(Vec<Layer>, Vec<usize>)> {
    if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(Error::InvalidSpec(format!("input shape {:?}", spec.input_shape)));
    }
    let mut shape = spec.input_shape.clone();
    let mut offset = 0;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        let in_dim: usize = shape.iter().product();
        let (kind, next) = match *l {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::InvalidSpec(format!("layer {i}: dense with zero units")));
                }
                (Kind::Dense { in_dim, out_dim: units }, vec![units])
            }
            LayerSpec::Conv { filters, height, width } => {
                let [h, w] = shape[..] else {
                    return Err(Error::InvalidSpec(format!("layer {i}: conv needs a 2D single-channel input, got {shape:?}")));
                };
                if filters == 0 || height == 0 || width == 0 || height > h || width > w {
                    return Err(Error::InvalidSpec(format!("layer {i}: conv kernel ({height},{width}) x {filters} on input ({h},{w})")));
                }
                (
                    Kind::Conv { filters, kh: height, kw: width, h, w },
                    vec![filters, h - height + 1, w - width + 1],
                )
            }
            LayerSpec::Activation { activation } => (Kind::Act(activation), shape.clone()),
        };
        let layer = Layer {
            kind,
            offset,
            in_dim,
            out_dim: next.iter().product(),
        };
        offset += layer.num_params();
        layers.push(layer);
        shape = next;
    }
    Ok((layers, shape))
}

/// Feed-forward network with flat parameter and gradient storage.
///
/// `forward` keeps the activations needed by the next `backward`; `predict`
/// is the cache-free inference path.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    output_shape: Vec<usize>,
    params: Vec<f64>,
    grads: Vec<f64>,
    cache: Option<Vec<Vec<f64>>>,
    cache_batch: usize,
}

impl Network {
    /// All parameters zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let (layers, output_shape) = build_layers(&spec)?;
        let n = layers.iter().map(Layer::num_params).sum();
        Ok(Network {
            spec,
            layers,
            output_shape,
            params: vec![0.0; n],
            grads: vec![0.0; n],
            cache: None,
            cache_batch: 0,
        })
    }

    /// Seeded initialization: He-uniform weights for layers feeding a ReLU,
    /// small uniform weights for output layers, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for i in 0..net.layers.len() {
            let layer = &net.layers[i];
            let fan_in = match layer.kind {
                Kind::Dense { in_dim, .. } => in_dim,
                Kind::Conv { kh, kw, .. } => kh * kw,
                Kind::Act(_) => continue,
            };
            let feeds_relu = matches!(
                net.layers.get(i + 1).map(|l| &l.kind),
                Some(Kind::Act(Activation::Relu))
            );
            let limit = if feeds_relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                0.1 * (3.0 / fan_in as f64).sqrt()
            };
            let (start, count) = (layer.offset, layer.weight_count());
            for p in &mut net.params[start..start + count] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_weights(spec: NetworkSpec, weights: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if weights.len() != net.params.len() {
            return Err(Error::ShapeMismatch { expected: vec![net.params.len()], got: vec![weights.len()] });
        }
        net.params = weights;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    /// Parameters and accumulated gradients together, for optimizer steps.
    pub fn params_and_grads(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.params, &self.grads)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Weight and bias slices of the `index`-th layer spec, if it has parameters.
    pub fn layer_params(&self, index: usize) -> Option<(&[f64], &[f64])> {
        let l = self.layers.get(index)?;
        let n = l.num_params();
        if n == 0 {
            return None;
        }
        let w = l.weight_count();
        Some((&self.params[l.offset..l.offset + w], &self.params[l.offset + w..l.offset + n]))
    }

    pub fn layer_params_mut(&mut self, index: usize) -> Option<(&mut [f64], &mut [f64])> {
        let l = self.layers.get(index)?;
        let n = l.num_params();
        if n == 0 {
            return None;
        }
        let w = l.weight_count();
        let (weights, biases) = self.params[l.offset..l.offset + n].split_at_mut(w);
        Some((weights, biases))
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let expected_row = self.input_dim();
        if x.shape().len() < 2 || x.row_len() != expected_row {
            let mut expected = vec![x.batch()];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(Error::ShapeMismatch { expected, got: x.shape().to_vec() });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("network input"));
        }
        Ok(x.batch())
    }

    fn output_tensor(&self, batch: usize, data: Vec<f64>) -> Result<Tensor> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.output_shape);
        let t = Tensor::new(shape, data)?;
        if !t.all_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok(t)
    }

    fn run(&self, x: &[f64], batch: usize, mut cache: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; batch * layer.out_dim];
            match layer.kind {
                Kind::Dense { in_dim, out_dim } => {
                    let w = &self.params[layer.offset..layer.offset + in_dim * out_dim];
                    let b = &self.params[layer.offset + in_dim * out_dim..layer.offset + in_dim * out_dim + out_dim];
                    for row in out.chunks_exact_mut(out_dim) {
                        row.copy_from_slice(b);
                    }
                    gemm_acc(&cur, batch, in_dim, w, out_dim, &mut out);
                }
                Kind::Conv { filters, kh, kw, h, w } => {
                    let weights = &self.params[layer.offset..layer.offset + filters * kh * kw];
                    let bias = &self.params[layer.offset + filters * kh * kw..layer.offset + layer.num_params()];
                    conv_forward(&cur, batch, h, w, weights, bias, filters, kh, kw, &mut out);
                }
                Kind::Act(a) => {
                    for (o, &i) in out.iter_mut().zip(&cur) {
                        *o = match a {
                            Activation::Relu => i.max(0.0),
                            Activation::Exp => i.clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
                            Activation::Identity => i,
                        };
                    }
                }
            }
            let input = std::mem::replace(&mut cur, out);
            if let Some(c) = cache.as_deref_mut() {
                c.push(input);
            }
        }
        if let Some(c) = cache {
            c.push(cur.clone());
        }
        cur
    }

    /// Forward pass that records activations for `backward`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let mut cache = Vec::with_capacity(self.layers.len() + 1);
        let out = self.run(x.data(), batch, Some(&mut cache));
        self.cache = Some(cache);
        self.cache_batch = batch;
        self.output_tensor(batch, out)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let out = self.run(x.data(), batch, None);
        self.output_tensor(batch, out)
    }

    /// Backpropagate `dy` (gradient of the loss w.r.t. the last forward
    /// output), accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let batch = self.cache_batch;
        let dx = self.backward_impl(dy, true)?;
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.spec.input_shape);
        Tensor::new(shape, dx.unwrap_or_default())
    }

    /// Like `backward` but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, dy: &Tensor) -> Result<()> {
        self.backward_impl(dy, false).map(|_| ())
    }

    fn backward_impl(&mut self, dy: &Tensor, want_input_grad: bool) -> Result<Option<Vec<f64>>> {
        let cache = self.cache.take().ok_or(Error::NoCache)?;
        let batch = self.cache_batch;
        if dy.len() != batch * self.output_dim() {
            let mut expected = vec![batch];
            expected.extend_from_slice(&self.output_shape);
            return Err(Error::ShapeMismatch { expected, got: dy.shape().to_vec() });
        }
        // Lowest layer index whose input gradient is still needed.
        let first_param_layer = self.layers.iter().position(|l| l.num_params() > 0).unwrap_or(0);
        let mut grad = dy.data().to_vec();
        let mut scratch = Vec::new();
        let mut scratch2 = Vec::new();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache[li];
            let need_dx = want_input_grad || li > first_param_layer;
            let mut dx = if need_dx { vec![0.0; batch * layer.in_dim] } else { Vec::new() };
            match layer.kind {
                Kind::Dense { in_dim, out_dim } => {
                    let wn = in_dim * out_dim;
                    let (params, grads) = (&self.params, &mut self.grads);
                    let w = &params[layer.offset..layer.offset + wn];
                    let (dw, db) = grads[layer.offset..layer.offset + wn + out_dim].split_at_mut(wn);
                    // dW += x^T dy
                    transpose(input, batch, in_dim, &mut scratch);
                    gemm_acc(&scratch, in_dim, batch, &grad, out_dim, dw);
                    for row in grad.chunks_exact(out_dim) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    if need_dx {
                        // dx = dy W^T
                        transpose(w, in_dim, out_dim, &mut scratch2);
                        gemm_acc(&grad, batch, out_dim, &scratch2, in_dim, &mut dx);
                    }
                }
                Kind::Conv { filters, kh, kw, h, w } => {
                    let wn = filters * kh * kw;
                    let weights = &self.params[layer.offset..layer.offset + wn];
                    let (dw, db) = self.grads[layer.offset..layer.offset + wn + filters].split_at_mut(wn);
                    conv_backward(input, batch, h, w, weights, filters, kh, kw, &grad, dw, db, need_dx.then_some(&mut dx[..]));
                }
                Kind::Act(a) => {
                    if need_dx {
                        let output = &cache[li + 1];
                        for i in 0..dx.len() {
                            dx[i] = match a {
                                Activation::Relu => {
                                    if input[i] > 0.0 {
                                        grad[i]
                                    } else {
                                        0.0
                                    }
                                }
                                Activation::Exp => {
                                    if input[i].abs() < EXP_CLAMP {
                                        grad[i] * output[i]
                                    } else {
                                        0.0
                                    }
                                }
                                Activation::Identity => grad[i],
                            };
                        }
                    }
                }
            }
            if !need_dx {
                return Ok(None);
            }
            grad = dx;
        }
        Ok(Some(grad))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    batch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    filters: usize,
    kh: usize,
    kw: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    for b in 0..batch {
        let xin = &x[b * h * w..(b + 1) * h * w];
        let y = &mut out[b * filters * oh * ow..(b + 1) * filters * oh * ow];
        for f in 0..filters {
            let k = &weights[f * kh * kw..(f + 1) * kh * kw];
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = bias[f];
                    for di in 0..kh {
                        for dj in 0..kw {
                            s += k[di * kw + dj] * xin[(i + di) * w + j + dj];
                        }
                    }
                    y[(f * oh + i) * ow + j] = s;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    batch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    filters: usize,
    kh: usize,
    kw: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    for b in 0..batch {
        let xin = &x[b * h * w..(b + 1) * h * w];
        let g = &dy[b * filters * oh * ow..(b + 1) * filters * oh * ow];
        for f in 0..filters {
            for i in 0..oh {
                for j in 0..ow {
                    let gy = g[(f * oh + i) * ow + j];
                    db[f] += gy;
                    for di in 0..kh {
                        for dj in 0..kw {
                            dw[(f * kh + di) * kw + dj] += gy * xin[(i + di) * w + j + dj];
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxb = &mut dx[b * h * w..(b + 1) * h * w];
                        for di in 0..kh {
                            for dj in 0..kw {
                                dxb[(i + di) * w + j + dj] += gy * weights[(f * kh + di) * kw + dj];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(NetworkSpec::mlp(5, &[7], 3, Activation::Identity)).unwrap();
        let x = random_input(&mut rng(), vec![4, 5]);
        assert!(net.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_layer() {
        let spec = NetworkSpec::mlp(4, &[], 4, Activation::Identity);
        let mut w = vec![0.0; 20];
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let net = Network::from_weights(spec, w).unwrap();
        let x = random_input(&mut rng(), vec![3, 4]);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn two_layer_matches_straight_line_evaluation() {
        let mut r = rng();
        let net = Network::new(NetworkSpec::mlp(6, &[9], 4, Activation::Exp), &mut r).unwrap();
        let x = random_input(&mut r, vec![5, 6]);
        let y = net.predict(&x).unwrap();
        let (w1, b1) = net.layer_params(0).unwrap();
        let (w2, b2) = net.layer_params(2).unwrap();
        for s in 0..5 {
            let xs = x.row(s);
            let hidden: Vec<f64> = (0..9)
                .map(|j| (b1[j] + (0..6).map(|i| xs[i] * w1[i * 9 + j]).sum::<f64>()).max(0.0))
                .collect();
            for k in 0..4 {
                let z = b2[k] + (0..9).map(|j| hidden[j] * w2[j * 4 + k]).sum::<f64>();
                assert!((y.row(s)[k] - z.exp()).abs() <= 1e-12 * z.exp().max(1.0));
            }
        }
    }

    #[test]
    fn linear_squared_loss_matches_closed_form() {
        // L = 1/2 sum ||X W + b - T||^2 has dW = X^T (XW + b - T), db = sum rows.
        let mut r = rng();
        let net_spec = NetworkSpec::mlp(3, &[], 2, Activation::Identity);
        let mut net = Network::new(net_spec, &mut r).unwrap();
        let x = random_input(&mut r, vec![6, 3]);
        let t = random_input(&mut r, vec![6, 2]);
        let y = net.forward(&x).unwrap();
        let resid: Vec<f64> = y.data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
        net.backward(&Tensor::new(vec![6, 2], resid.clone()).unwrap()).unwrap();
        let g = net.grads();
        for i in 0..3 {
            for j in 0..2 {
                let expect: f64 = (0..6).map(|s| x.row(s)[i] * resid[s * 2 + j]).sum();
                assert!((g[i * 2 + j] - expect).abs() < 1e-10);
            }
        }
        for j in 0..2 {
            let expect: f64 = (0..6).map(|s| resid[s * 2 + j]).sum();
            assert!((g[6 + j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut r = rng();
        let spec = NetworkSpec {
            input_shape: vec![19, 3],
            layers: vec![
                LayerSpec::Conv { filters: 4, height: 5, width: 1 },
                LayerSpec::Activation { activation: Activation::Relu },
                LayerSpec::Dense { units: 8 },
            ],
        };
        let mut net = Network::new(spec, &mut r).unwrap();
        assert_eq!(net.output_dim(), 8);
        let x = random_input(&mut r, vec![3, 19, 3]);
        net.forward(&x).unwrap();
        let dx = net.backward(&Tensor::zeros(vec![3, 8])).unwrap();
        assert!(net.grads().iter().all(|&g| g == 0.0));
        assert!(dx.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn errors_on_bad_shapes_and_missing_cache() {
        let mut net = Network::new(NetworkSpec::mlp(3, &[4], 2, Activation::Identity), &mut rng()).unwrap();
        assert!(matches!(net.predict(&Tensor::zeros(vec![2, 4])), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(net.backward(&Tensor::zeros(vec![2, 2])), Err(Error::NoCache)));
        let bad = NetworkSpec {
            input_shape: vec![6],
            layers: vec![LayerSpec::Conv { filters: 2, height: 2, width: 1 }],
        };
        assert!(matches!(Network::zeros(bad), Err(Error::InvalidSpec(_))));
        let mut nan = Tensor::zeros(vec![1, 3]);
        nan.data_mut()[0] = f64::NAN;
        assert!(matches!(net.predict(&nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn exp_output_strictly_positive() {
        let mut r = rng();
        let mut net = Network::new(NetworkSpec::mlp(3, &[4], 2, Activation::Exp), &mut r).unwrap();
        let (_, b) = net.layer_params_mut(2).unwrap();
        b.iter_mut().for_each(|v| *v = -1e6);
        let y = net.predict(&random_input(&mut r, vec![4, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn initialization_is_seeded() {
        let spec = NetworkSpec::mlp(10, &[20], 3, Activation::Identity);
        let a = Network::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = Network::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }
}
