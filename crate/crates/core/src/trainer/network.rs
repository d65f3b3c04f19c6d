//! Small feed-forward networks (dense and valid-padding convolution layers)
//! with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fixtures::rng;
use crate::linalg::{Matrix, Tensor4D};
use crate::metrics::WeightTensor;
use crate::rmsgd::LayerGroup;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    #[serde(rename = "conv2d")]
    Conv2D {
        h: usize,
        w: usize,
        n_in: usize,
        n_out: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Relu,
    Tanh,
    Flatten,
    SoftmaxCrossEntropy,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    KaimingUniform,
    Orthogonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
}

impl NetworkSpec {
    /// Dense stack `sizes[0] → … → sizes[last]` with `act` between dense
    /// layers and a softmax cross-entropy head.
    pub fn mlp(sizes: &[usize], act: LayerSpec, seed: u64, init: Init) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            if i > 0 {
                layers.push(act.clone());
            }
            layers.push(LayerSpec::Dense {
                input: pair[0],
                output: pair[1],
            });
        }
        layers.push(LayerSpec::SoftmaxCrossEntropy);
        Self {
            input_shape: vec![sizes[0]],
            layers,
            seed,
            init,
        }
    }

    /// Checks that consecutive layers compose and returns the number of
    /// classes the head predicts.
    pub fn validate(&self) -> Result<usize, TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidSpec(msg));
        let mut shape = match self.input_shape.as_slice() {
            [f] if *f > 0 => Shape::Vector(*f),
            [c, h, w] if c * h * w > 0 => Shape::Image(*c, *h, *w),
            other => {
                return bad(format!(
                    "input_shape {other:?} must be [features] or [channels, height, width]"
                ))
            }
        };
        let mut weight_layers = 0;
        let mut classes = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if classes.is_some() {
                return bad(format!("layer {i} follows the softmax_cross_entropy head"));
            }
            shape = match (layer, shape) {
                (LayerSpec::Dense { input, output }, Shape::Vector(f)) => {
                    if *input != f || *output == 0 {
                        return bad(format!("layer {i}: dense({input}, {output}) receives {f} features"));
                    }
                    weight_layers += 1;
                    Shape::Vector(*output)
                }
                (
                    LayerSpec::Conv2D {
                        h,
                        w,
                        n_in,
                        n_out,
                        stride,
                    },
                    Shape::Image(c, ih, iw),
                ) => {
                    if *n_in != c || *h == 0 || *w == 0 || *n_out == 0 || *stride == 0 || *h > ih || *w > iw {
                        return bad(format!(
                            "layer {i}: conv2d({h}x{w}, {n_in}->{n_out}, stride {stride}) cannot take a {c}x{ih}x{iw} input"
                        ));
                    }
                    weight_layers += 1;
                    Shape::Image(*n_out, (ih - h) / stride + 1, (iw - w) / stride + 1)
                }
                (LayerSpec::Relu | LayerSpec::Tanh, s) => s,
                (LayerSpec::Flatten, Shape::Image(c, h, w)) => Shape::Vector(c * h * w),
                (LayerSpec::Flatten, s @ Shape::Vector(_)) => s,
                (LayerSpec::SoftmaxCrossEntropy, Shape::Vector(k)) if k >= 2 => {
                    classes = Some(k);
                    shape
                }
                (layer, s) => return bad(format!("layer {i}: {layer:?} cannot follow output shape {s:?}")),
            };
        }
        if weight_layers == 0 {
            return bad("network has no dense or conv2d layer".into());
        }
        classes.ok_or_else(|| TrainError::InvalidSpec("network must end in softmax_cross_entropy".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Vector(usize),
    Image(usize, usize, usize),
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    /// 0-based layer group.
    pub group: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    h: usize,
    w: usize,
    n_in: usize,
    n_out: usize,
    stride: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Dense {
        weight: usize,
        bias: usize,
        input: usize,
        output: usize,
    },
    Conv {
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    Relu,
    Tanh,
    Flatten,
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    ops: Vec<Op>,
    params: Vec<Param>,
    groups: Vec<LayerGroup>,
    num_classes: usize,
}

/// Loss and per-parameter gradients averaged over a batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: f64,
    pub correct: usize,
    pub grads: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self, TrainError> {
        let num_classes = spec.validate()?;
        let mut init_rng = rng(spec.seed ^ 0x5EED_0001);
        let mut ops = Vec::new();
        let mut params = Vec::new();
        let mut groups = Vec::new();
        let mut dims = spec.input_shape.clone();
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Dense { input, output } => {
                    let group = groups.len();
                    let name = format!("layer{}", group + 1);
                    let w = init_weights(spec.init, output, input, &mut init_rng);
                    params.push(Param {
                        name: format!("{name}.weight"),
                        dims: vec![output, input],
                        data: w,
                        group,
                    });
                    params.push(Param {
                        name: format!("{name}.bias"),
                        dims: vec![output],
                        data: vec![0.0; output],
                        group,
                    });
                    groups.push(LayerGroup {
                        layer_index: group + 1,
                        weight_ref: format!("{name}.weight"),
                        attached_params: vec![format!("{name}.bias")],
                    });
                    ops.push(Op::Dense {
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                        input,
                        output,
                    });
                    dims = vec![output];
                }
                LayerSpec::Conv2D {
                    h,
                    w,
                    n_in,
                    n_out,
                    stride,
                } => {
                    let (in_h, in_w) = (dims[1], dims[2]);
                    let geom = ConvGeom {
                        h,
                        w,
                        n_in,
                        n_out,
                        stride,
                        in_h,
                        in_w,
                        out_h: (in_h - h) / stride + 1,
                        out_w: (in_w - w) / stride + 1,
                    };
                    let group = groups.len();
                    let name = format!("layer{}", group + 1);
                    // rows of the fan-out × fan-in draw are output channels;
                    // store them as h×w×n_in×n_out
                    let fan_in = h * w * n_in;
                    let draw = init_weights(spec.init, n_out, fan_in, &mut init_rng);
                    let mut data = vec![0.0; fan_in * n_out];
                    for l in 0..n_out {
                        for f in 0..fan_in {
                            data[f * n_out + l] = draw[l * fan_in + f];
                        }
                    }
                    params.push(Param {
                        name: format!("{name}.weight"),
                        dims: vec![h, w, n_in, n_out],
                        data,
                        group,
                    });
                    params.push(Param {
                        name: format!("{name}.bias"),
                        dims: vec![n_out],
                        data: vec![0.0; n_out],
                        group,
                    });
                    groups.push(LayerGroup {
                        layer_index: group + 1,
                        weight_ref: format!("{name}.weight"),
                        attached_params: vec![format!("{name}.bias")],
                    });
                    ops.push(Op::Conv {
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                        geom,
                    });
                    dims = vec![n_out, geom.out_h, geom.out_w];
                }
                LayerSpec::Relu => ops.push(Op::Relu),
                LayerSpec::Tanh => ops.push(Op::Tanh),
                LayerSpec::Flatten => {
                    ops.push(Op::Flatten);
                    dims = vec![dims.iter().product()];
                }
                LayerSpec::SoftmaxCrossEntropy => {}
            }
        }
        Ok(Self {
            spec: spec.clone(),
            ops,
            params,
            groups,
            num_classes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn groups(&self) -> &[LayerGroup] {
        &self.groups
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// `(group, len)` for every parameter, as the optimizer expects.
    pub fn param_layout(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(|p| (p.group, p.data.len())).collect()
    }

    /// The probe-able weight of every layer group, in layer order.
    pub fn weight_tensors(&self) -> Vec<(String, WeightTensor)> {
        self.ops
            .iter()
            .filter_map(|op| match *op {
                Op::Dense {
                    weight, input, output, ..
                } => {
                    let p = &self.params[weight];
                    let m = Matrix::new(output, input, p.data.clone()).ok()?;
                    Some((p.name.clone(), WeightTensor::Dense(m)))
                }
                Op::Conv { weight, geom, .. } => {
                    let p = &self.params[weight];
                    let t = Tensor4D::new(geom.h, geom.w, geom.n_in, geom.n_out, p.data.clone()).ok()?;
                    Some((p.name.clone(), WeightTensor::Conv(t)))
                }
                _ => None,
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for op in &self.ops {
            a = self.forward_op(op, &a);
        }
        a
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Mean cross-entropy and accuracy over a set of samples.
    pub fn evaluate(&self, features: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
        let mut loss = 0.0;
        let mut correct = 0;
        for (x, &y) in features.iter().zip(labels) {
            let z = self.logits(x);
            let (l, _) = softmax_xent(&z, y);
            loss += l;
            if argmax(&z) == y {
                correct += 1;
            }
        }
        let n = labels.len().max(1) as f64;
        (loss / n, correct as f64 / n)
    }

    /// Mean loss and gradients of the batch `indices` of `(features, labels)`.
    pub fn gradients(&self, features: &[Vec<f64>], labels: &[usize], indices: &[usize]) -> BatchGradients {
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let mut loss = 0.0;
        let mut correct = 0;
        let scale = 1.0 / indices.len().max(1) as f64;
        for &i in indices {
            let mut acts = Vec::with_capacity(self.ops.len() + 1);
            acts.push(features[i].clone());
            for op in &self.ops {
                let next = self.forward_op(op, acts.last().expect("non-empty"));
                acts.push(next);
            }
            let logits = acts.last().expect("non-empty");
            if argmax(logits) == labels[i] {
                correct += 1;
            }
            let (l, mut delta) = softmax_xent(logits, labels[i]);
            loss += l;
            delta.iter_mut().for_each(|d| *d *= scale);
            for (k, op) in self.ops.iter().enumerate().rev() {
                delta = self.backward_op(op, &acts[k], &acts[k + 1], &delta, &mut grads);
            }
        }
        BatchGradients {
            loss: loss * scale,
            correct,
            grads,
        }
    }

    fn forward_op(&self, op: &Op, x: &[f64]) -> Vec<f64> {
        match *op {
            Op::Dense {
                weight,
                bias,
                input,
                output,
            } => {
                let w = &self.params[weight].data;
                let b = &self.params[bias].data;
                (0..output)
                    .map(|o| {
                        let row = &w[o * input..(o + 1) * input];
                        b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect()
            }
            Op::Conv { weight, bias, geom: g } => {
                let w = &self.params[weight].data;
                let b = &self.params[bias].data;
                let mut out = vec![0.0; g.n_out * g.out_h * g.out_w];
                for l in 0..g.n_out {
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let mut acc = b[l];
                            for i in 0..g.h {
                                for j in 0..g.w {
                                    let (iy, ix) = (oy * g.stride + i, ox * g.stride + j);
                                    for k in 0..g.n_in {
                                        acc += w[((i * g.w + j) * g.n_in + k) * g.n_out + l]
                                            * x[(k * g.in_h + iy) * g.in_w + ix];
                                    }
                                }
                            }
                            out[(l * g.out_h + oy) * g.out_w + ox] = acc;
                        }
                    }
                }
                out
            }
            Op::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            Op::Tanh => x.iter().map(|v| v.tanh()).collect(),
            Op::Flatten => x.to_vec(),
        }
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    fn backward_op(&self, op: &Op, x: &[f64], y: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        match *op {
            Op::Dense {
                weight,
                bias,
                input,
                output,
            } => {
                let w = &self.params[weight].data;
                let mut dx = vec![0.0; input];
                for o in 0..output {
                    let d = dy[o];
                    if d == 0.0 {
                        continue;
                    }
                    grads[bias][o] += d;
                    let gw = &mut grads[weight][o * input..(o + 1) * input];
                    for ((g, xi), (dxi, wi)) in gw.iter_mut().zip(x).zip(dx.iter_mut().zip(&w[o * input..])) {
                        *g += d * xi;
                        *dxi += d * wi;
                    }
                }
                dx
            }
            Op::Conv { weight, bias, geom: g } => {
                let w = &self.params[weight].data;
                let mut dx = vec![0.0; x.len()];
                for l in 0..g.n_out {
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let d = dy[(l * g.out_h + oy) * g.out_w + ox];
                            if d == 0.0 {
                                continue;
                            }
                            grads[bias][l] += d;
                            for i in 0..g.h {
                                for j in 0..g.w {
                                    let (iy, ix) = (oy * g.stride + i, ox * g.stride + j);
                                    for k in 0..g.n_in {
                                        let wi = ((i * g.w + j) * g.n_in + k) * g.n_out + l;
                                        let xi = (k * g.in_h + iy) * g.in_w + ix;
                                        grads[weight][wi] += d * x[xi];
                                        dx[xi] += d * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
            Op::Relu => x
                .iter()
                .zip(dy)
                .map(|(xi, d)| if *xi > 0.0 { *d } else { 0.0 })
                .collect(),
            Op::Tanh => y.iter().zip(dy).map(|(yi, d)| d * (1.0 - yi * yi)).collect(),
            Op::Flatten => dy.to_vec(),
        }
    }
}

fn init_weights(init: Init, fan_out: usize, fan_in: usize, r: &mut impl Rng) -> Vec<f64> {
    match init {
        Init::KaimingUniform => {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..fan_out * fan_in).map(|_| r.random_range(-bound..bound)).collect()
        }
        Init::Orthogonal => {
            // orthonormal rows (or columns, when fan_out > fan_in) from a
            // Gram–Schmidt pass over a uniform draw
            let (rows, cols) = (fan_out.min(fan_in), fan_out.max(fan_in));
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
            while basis.len() < rows {
                let mut v: Vec<f64> = (0..cols).map(|_| r.random_range(-1.0..1.0)).collect();
                for _ in 0..2 {
                    for q in &basis {
                        let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                        v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    v.iter_mut().for_each(|x| *x /= norm);
                    basis.push(v);
                }
            }
            let mut out = vec![0.0; fan_out * fan_in];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    out[o * fan_in + i] = if fan_out <= fan_in { basis[o][i] } else { basis[i][o] };
                }
            }
            out
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `softmax(z)` against `label` and its gradient `p − e_label`.
fn softmax_xent(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (z[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_conv_spec() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![1, 5, 5],
            layers: vec![
                LayerSpec::Conv2D {
                    h: 3,
                    w: 3,
                    n_in: 1,
                    n_out: 4,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 36, output: 3 },
                LayerSpec::SoftmaxCrossEntropy,
            ],
            seed: 1,
            init: Init::KaimingUniform,
        }
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut spec = NetworkSpec::mlp(&[2, 8, 2], LayerSpec::Relu, 0, Init::KaimingUniform);
        assert_eq!(spec.validate().unwrap(), 2);
        spec.layers[2] = LayerSpec::Dense { input: 9, output: 2 };
        assert!(spec.validate().is_err());
        let headless = NetworkSpec {
            layers: vec![LayerSpec::Dense { input: 2, output: 2 }],
            ..NetworkSpec::mlp(&[2, 2], LayerSpec::Relu, 0, Init::KaimingUniform)
        };
        assert!(headless.validate().is_err());
        let no_weights = NetworkSpec {
            layers: vec![LayerSpec::Relu, LayerSpec::SoftmaxCrossEntropy],
            ..headless.clone()
        };
        assert!(no_weights.validate().is_err());
        assert_eq!(small_conv_spec().validate().unwrap(), 3);
    }

    #[test]
    fn layout_and_groups() {
        let net = Network::new(&small_conv_spec()).unwrap();
        let names: Vec<_> = net.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["layer1.weight", "layer1.bias", "layer2.weight", "layer2.bias"]);
        assert_eq!(net.params()[0].dims, vec![3, 3, 1, 4]);
        assert_eq!(net.params()[2].dims, vec![3, 36]);
        assert_eq!(net.groups().len(), 2);
        assert_eq!(net.groups()[1].attached_params, vec!["layer2.bias".to_string()]);
        assert_eq!(net.weight_tensors().len(), 2);
    }

    #[test]
    fn uniform_output_loss_is_log_classes() {
        let mut net = Network::new(&NetworkSpec::mlp(&[3, 5, 4], LayerSpec::Tanh, 2, Init::KaimingUniform)).unwrap();
        for p in net.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (loss, _) = net.evaluate(&[vec![0.3, -1.0, 2.0]], &[1]);
        assert!((loss - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_init_is_orthonormal() {
        let mut r = rng(3);
        for (fo, fi) in [(4, 7), (7, 4), (5, 5)] {
            let w = Matrix::new(fo, fi, init_weights(Init::Orthogonal, fo, fi, &mut r)).unwrap();
            let gram = if fo <= fi {
                w.matmul(&w.transpose())
            } else {
                w.transpose().matmul(&w)
            }
            .unwrap();
            let k = fo.min(fi);
            assert!(gram.sub(&Matrix::identity(k)).unwrap().frobenius_norm() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::identity_op)]
    fn conv_forward_matches_direct_sum() {
        let net = Network::new(&small_conv_spec()).unwrap();
        let x: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = net.forward_op(&net.ops[0], &x);
        let w = &net.params[0].data;
        // output channel 2 at (1, 2)
        let mut expect = net.params[1].data[2];
        for i in 0..3 {
            for j in 0..3 {
                expect += w[((i * 3 + j) * 1) * 4 + 2] * x[(1 + i) * 5 + (2 + j)];
            }
        }
        assert!((out[(2 * 3 + 1) * 3 + 2] - expect).abs() < 1e-14);
    }
}
