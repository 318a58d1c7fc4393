//! The three lesion classifiers: declarative layer specs, build-time shape
//! checking, Xavier initialization, forward pass, and backpropagation.
//!
//! A spec holds no weights, so shape audits of full-size networks allocate
//! nothing. Weights live in a name-keyed map initialized separately.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{self as ops, Tensor};

pub const NUM_CLASSES: usize = 8;

/// Fixed class order for labels, one-hot targets, and confusion matrices.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["MLN", "MCN", "BCC", "AK", "BK", "DF", "VL", "SCC"];

/// Index of a class name in [`CLASS_NAMES`].
pub fn class_index(name: &str) -> Result<usize> {
    CLASS_NAMES
        .iter()
        .position(|&c| c == name)
        .ok_or_else(|| Error::param("class_index", format!("unknown class {name:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid 3x3 convolution, stride 1: spatial dims shrink by 2.
    Conv3x3 { filters: usize },
    /// 2x2 max pooling, stride 2: spatial dims halve.
    MaxPool2,
    Relu,
    /// Collapse [C,H,W] to a vector; must terminate a path.
    Flatten,
    /// Joins the two path vectors; must open the head of a two-path net.
    ConcatJoin,
    Dense { units: usize },
    /// Output normalizer; must terminate the head right after `Dense { 8 }`.
    Softmax,
}

/// One convolutional branch: input descriptor plus the layers up to and
/// including its flatten.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSpec {
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// A whole network: one or two paths feeding a shared dense head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub paths: Vec<PathSpec>,
    pub head: Vec<LayerSpec>,
}

/// One line of a shape audit: layer description, output shape, parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub layer: String,
    pub output: Vec<usize>,
    pub params: usize,
}

fn audit_path(path_idx: usize, path: &PathSpec, rows: &mut Vec<AuditRow>) -> Result<usize> {
    let tag = format!("p{path_idx}");
    let [c, h, w] = path.input;
    if c != 1 && c != 3 {
        return Err(Error::param("NetworkSpec", format!("{tag} input channels {c}; expected 1 or 3")));
    }
    rows.push(AuditRow { layer: format!("{tag} input"), output: vec![c, h, w], params: 0 });
    let (mut c, mut h, mut w) = (c, h, w);
    let mut flat: Option<usize> = None;
    for (i, layer) in path.layers.iter().enumerate() {
        if flat.is_some() {
            return Err(Error::param("NetworkSpec", format!("{tag} layer {i} follows flatten")));
        }
        let row = match *layer {
            LayerSpec::Conv3x3 { filters } => {
                if h < 3 || w < 3 {
                    return Err(Error::param(
                        "NetworkSpec",
                        format!("{tag} conv layer {i}: input {h}x{w} smaller than 3x3"),
                    ));
                }
                let params = filters * (c * 9) + filters;
                (c, h, w) = (filters, h - 2, w - 2);
                AuditRow { layer: format!("{tag} conv3x3({filters})"), output: vec![c, h, w], params }
            }
            LayerSpec::MaxPool2 => {
                if h < 2 || w < 2 {
                    return Err(Error::param(
                        "NetworkSpec",
                        format!("{tag} pool layer {i}: input {h}x{w} smaller than 2x2"),
                    ));
                }
                (h, w) = (h / 2, w / 2);
                AuditRow { layer: format!("{tag} maxpool2"), output: vec![c, h, w], params: 0 }
            }
            LayerSpec::Relu => AuditRow { layer: format!("{tag} relu"), output: vec![c, h, w], params: 0 },
            LayerSpec::Flatten => {
                flat = Some(c * h * w);
                AuditRow { layer: format!("{tag} flatten"), output: vec![c * h * w], params: 0 }
            }
            _ => {
                return Err(Error::param(
                    "NetworkSpec",
                    format!("{tag} layer {i} ({layer:?}) not allowed inside a path"),
                ))
            }
        };
        rows.push(row);
    }
    flat.ok_or_else(|| Error::param("NetworkSpec", format!("{tag} does not end in flatten")))
}

impl NetworkSpec {
    /// Checks that every layer's input chains legally from its predecessor
    /// and that the network ends in an 8-unit softmax. Returns the audit
    /// table; allocates no tensor data.
    pub fn audit(&self) -> Result<Vec<AuditRow>> {
        if self.paths.is_empty() || self.paths.len() > 2 {
            return Err(Error::param("NetworkSpec", format!("{} paths; expected 1 or 2", self.paths.len())));
        }
        let mut rows = Vec::new();
        let mut flats = Vec::new();
        for (p, path) in self.paths.iter().enumerate() {
            flats.push(audit_path(p, path, &mut rows)?);
        }
        let dual = self.paths.len() == 2;
        let mut head = self.head.iter().enumerate();
        let mut n = if dual {
            match head.next() {
                Some((_, LayerSpec::ConcatJoin)) => {
                    let joined = flats[0] + flats[1];
                    rows.push(AuditRow { layer: "concat".into(), output: vec![joined], params: 0 });
                    joined
                }
                other => {
                    return Err(Error::param(
                        "NetworkSpec",
                        format!("two-path head must open with a concat join, found {other:?}"),
                    ))
                }
            }
        } else {
            flats[0]
        };
        let mut last_vec: Vec<LayerSpec> = Vec::new();
        for (i, layer) in head {
            let row = match *layer {
                LayerSpec::Dense { units } => {
                    let params = units * n + units;
                    n = units;
                    AuditRow { layer: format!("dense({units})"), output: vec![n], params }
                }
                LayerSpec::Relu => AuditRow { layer: "relu".into(), output: vec![n], params: 0 },
                LayerSpec::Softmax => AuditRow { layer: "softmax".into(), output: vec![n], params: 0 },
                _ => {
                    return Err(Error::param(
                        "NetworkSpec",
                        format!("head layer {i} ({layer:?}) not allowed in the head"),
                    ))
                }
            };
            rows.push(row);
            last_vec.push(*layer);
        }
        match last_vec.as_slice() {
            [.., LayerSpec::Dense { units: NUM_CLASSES }, LayerSpec::Softmax] if n == NUM_CLASSES => {}
            _ => {
                return Err(Error::param(
                    "NetworkSpec",
                    format!("network must end with dense({NUM_CLASSES}) then softmax; output is {n}"),
                ))
            }
        }
        Ok(rows)
    }

    /// Sum of trainable parameters across all layers.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.audit()?.iter().map(|r| r.params).sum())
    }

    /// Plain-text audit table (layer, output shape, parameter count).
    pub fn format_audit(&self) -> Result<String> {
        let rows = self.audit()?;
        let mut s = format!("{}\n{:<22} {:<18} {:>12}\n", self.name, "layer", "output", "params");
        for r in &rows {
            let shape = r
                .output
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            writeln!(s, "{:<22} {:<18} {:>12}", r.layer, shape, r.params).unwrap();
        }
        let total: usize = rows.iter().map(|r| r.params).sum();
        writeln!(s, "{:<22} {:<18} {:>12}", "total", "", total).unwrap();
        Ok(s)
    }
}

fn conv_stack_m2(filters: (usize, usize)) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv3x3 { filters: filters.0 },
        LayerSpec::Relu,
        LayerSpec::Conv3x3 { filters: filters.1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Flatten,
    ]
}

/// Grayscale single-path classifier: conv(64), pool, conv(32), pool, then a
/// 32-unit dense layer into the 8-way output. Canonical input is 1x512x512;
/// smaller inputs keep the same topology.
pub fn build_model1(h: usize, w: usize) -> Result<NetworkSpec> {
    let spec = NetworkSpec {
        name: format!("m1 {h}x{w}"),
        paths: vec![PathSpec {
            input: [1, h, w],
            layers: vec![
                LayerSpec::Conv3x3 { filters: 64 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv3x3 { filters: 32 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
            ],
        }],
        head: vec![
            LayerSpec::Dense { units: 32 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: NUM_CLASSES },
            LayerSpec::Softmax,
        ],
    };
    spec.audit()?;
    Ok(spec)
}

fn m2_head(join: bool) -> Vec<LayerSpec> {
    let mut head = Vec::new();
    if join {
        head.push(LayerSpec::ConcatJoin);
    }
    head.extend([
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 32 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: NUM_CLASSES },
        LayerSpec::Softmax,
    ]);
    head
}

/// RGB single-path classifier over the masked image: conv(32), conv(64),
/// pool, then dense 64-32-8. Canonical input is 3x256x256.
pub fn build_model2_onepath(h: usize, w: usize) -> Result<NetworkSpec> {
    let spec = NetworkSpec {
        name: format!("m2-one {h}x{w}"),
        paths: vec![PathSpec { input: [3, h, w], layers: conv_stack_m2((32, 64)) }],
        head: m2_head(false),
    };
    spec.audit()?;
    Ok(spec)
}

/// Two-path classifier: path 0 takes the original image, path 1 the mask
/// replicated to 3 channels. Both conv stacks mirror the one-path model;
/// their flattened features concatenate before the dense head.
pub fn build_model2_dualpath(h: usize, w: usize) -> Result<NetworkSpec> {
    let path = PathSpec { input: [3, h, w], layers: conv_stack_m2((32, 64)) };
    let spec = NetworkSpec {
        name: format!("m2-dual {h}x{w}"),
        paths: vec![path.clone(), path],
        head: m2_head(true),
    };
    spec.audit()?;
    Ok(spec)
}

/// Name-keyed parameter store. Keys follow `path<p>.conv<i>.{kernels,bias}`
/// and `head.dense<i>.{weights,bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::param("ModelWeights", format!("missing tensor {name:?}")))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.data().len()).sum()
    }
}

fn conv_names(p: usize, i: usize) -> (String, String) {
    (format!("path{p}.conv{i}.kernels"), format!("path{p}.conv{i}.bias"))
}

fn dense_names(i: usize) -> (String, String) {
    (format!("head.dense{i}.weights"), format!("head.dense{i}.bias"))
}

fn init_tensor(
    tensors: &mut BTreeMap<String, Tensor>,
    rng: &SeededRng,
    name: String,
    shape: Vec<usize>,
    fans: (usize, usize),
) -> Result<()> {
    let mut stream = rng.derive(crate::rng::hash_bytes(name.as_bytes()));
    let t = ops::xavier_uniform_init(&shape, fans.0, fans.1, &mut stream)?;
    tensors.insert(name, t);
    Ok(())
}

/// Xavier-uniform kernels and dense weights, zero biases. Each tensor draws
/// from a stream derived from its name, so initialization order is
/// irrelevant and any two tensors are independent.
pub fn init_weights(spec: &NetworkSpec, rng: &SeededRng) -> Result<ModelWeights> {
    spec.audit()?;
    let mut tensors = BTreeMap::new();
    let mut flats = Vec::new();
    for (p, path) in spec.paths.iter().enumerate() {
        let [mut c, mut h, mut w] = path.input;
        let mut conv_i = 0;
        for layer in &path.layers {
            match *layer {
                LayerSpec::Conv3x3 { filters } => {
                    let (kn, bn) = conv_names(p, conv_i);
                    init_tensor(&mut tensors, rng, kn, vec![filters, c, 3, 3], (c * 9, filters * 9))?;
                    tensors.insert(bn, Tensor::zeros(&[filters]));
                    conv_i += 1;
                    (c, h, w) = (filters, h - 2, w - 2);
                }
                LayerSpec::MaxPool2 => (h, w) = (h / 2, w / 2),
                _ => {}
            }
        }
        flats.push(c * h * w);
    }
    let mut n: usize = flats.iter().sum();
    let mut dense_i = 0;
    for layer in &spec.head {
        if let LayerSpec::Dense { units } = *layer {
            let (wn, bn) = dense_names(dense_i);
            init_tensor(&mut tensors, rng, wn, vec![units, n], (n, units))?;
            tensors.insert(bn, Tensor::zeros(&[units]));
            dense_i += 1;
            n = units;
        }
    }
    Ok(ModelWeights { tensors })
}

/// Activations recorded by a forward pass, kept for backpropagation.
/// `path_acts[p][0]` is the input; each layer appends its output. The head
/// list starts at the joined (or single) feature vector.
pub struct ForwardTrace {
    path_acts: Vec<Vec<Tensor>>,
    head_acts: Vec<Tensor>,
}

impl ForwardTrace {
    /// The network output (softmax probabilities).
    pub fn output(&self) -> &Tensor {
        self.head_acts.last().expect("head is never empty")
    }
}

/// Head layers with the leading concat join stripped; the join is handled
/// when the head input is assembled.
fn effective_head(spec: &NetworkSpec) -> &[LayerSpec] {
    match spec.head.first() {
        Some(LayerSpec::ConcatJoin) => &spec.head[1..],
        _ => &spec.head,
    }
}

/// Runs the network, recording every activation.
pub fn forward_trace(spec: &NetworkSpec, weights: &ModelWeights, inputs: &[&Tensor]) -> Result<ForwardTrace> {
    if inputs.len() != spec.paths.len() {
        return Err(Error::shape(
            "forward",
            format!("{} input tensor(s)", spec.paths.len()),
            format!("{}", inputs.len()),
        ));
    }
    let mut path_acts = Vec::with_capacity(spec.paths.len());
    for (p, (path, &input)) in spec.paths.iter().zip(inputs).enumerate() {
        crate::tensor::expect_shape("forward", input, &path.input)?;
        let mut acts = vec![input.clone()];
        let mut conv_i = 0;
        for layer in &path.layers {
            let cur = acts.last().unwrap();
            let next = match *layer {
                LayerSpec::Conv3x3 { .. } => {
                    let (kn, bn) = conv_names(p, conv_i);
                    conv_i += 1;
                    ops::conv2d(cur, weights.get(&kn)?, weights.get(&bn)?)?
                }
                LayerSpec::MaxPool2 => ops::maxpool2d(cur, 2, 2)?,
                LayerSpec::Relu => ops::relu(cur)?,
                LayerSpec::Flatten => ops::flatten(cur)?,
                _ => return Err(Error::param("forward", format!("{layer:?} inside a path"))),
            };
            acts.push(next);
        }
        path_acts.push(acts);
    }
    let joined = if spec.paths.len() == 2 {
        ops::concat(path_acts[0].last().unwrap(), path_acts[1].last().unwrap())?
    } else {
        path_acts[0].last().unwrap().clone()
    };
    let mut head_acts = vec![joined];
    let mut dense_i = 0;
    for layer in effective_head(spec) {
        let cur = head_acts.last().unwrap();
        let next = match *layer {
            LayerSpec::Dense { .. } => {
                let (wn, bn) = dense_names(dense_i);
                dense_i += 1;
                ops::dense(cur, weights.get(&wn)?, weights.get(&bn)?)?
            }
            LayerSpec::Relu => ops::relu(cur)?,
            LayerSpec::Softmax => ops::softmax(cur)?,
            _ => return Err(Error::param("forward", format!("{layer:?} in the head"))),
        };
        head_acts.push(next);
    }
    Ok(ForwardTrace { path_acts, head_acts })
}

/// Softmax class probabilities for one sample.
pub fn forward(spec: &NetworkSpec, weights: &ModelWeights, inputs: &[&Tensor]) -> Result<Tensor> {
    Ok(forward_trace(spec, weights, inputs)?.output().clone())
}

/// Parameter gradients, keyed like [`ModelWeights`].
pub type Gradients = BTreeMap<String, Tensor>;

/// Backpropagates `out_grad` (the loss gradient at the probabilities)
/// through the trace, returning gradients for every weight tensor.
pub fn backward(
    spec: &NetworkSpec,
    weights: &ModelWeights,
    trace: &ForwardTrace,
    out_grad: &Tensor,
) -> Result<Gradients> {
    let mut grads: Gradients = BTreeMap::new();
    let head_layers = effective_head(spec);
    let dense_total = head_layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Dense { .. }))
        .count();
    let mut dense_i = dense_total;
    let mut g = out_grad.clone();
    for (i, layer) in head_layers.iter().enumerate().rev() {
        let input = &trace.head_acts[i];
        let output = &trace.head_acts[i + 1];
        g = match *layer {
            LayerSpec::Dense { .. } => {
                dense_i -= 1;
                let (wn, bn) = dense_names(dense_i);
                let (gx, gw, gb) = ops::dense_backward(input, weights.get(&wn)?, weights.get(&bn)?, &g)?;
                grads.insert(wn, gw);
                grads.insert(bn, gb);
                gx
            }
            LayerSpec::Relu => ops::relu_backward(input, &g)?,
            LayerSpec::Softmax => ops::softmax_backward(output, &g)?,
            _ => unreachable!("audited head"),
        };
    }
    let path_grads: Vec<Tensor> = if spec.paths.len() == 2 {
        let (a, b) = ops::concat_backward(
            trace.path_acts[0].last().unwrap(),
            trace.path_acts[1].last().unwrap(),
            &g,
        )?;
        vec![a, b]
    } else {
        vec![g]
    };
    for (p, (path, mut g)) in spec.paths.iter().zip(path_grads).enumerate() {
        let conv_total = path
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv3x3 { .. }))
            .count();
        let mut conv_i = conv_total;
        for (i, layer) in path.layers.iter().enumerate().rev() {
            let input = &trace.path_acts[p][i];
            g = match *layer {
                LayerSpec::Conv3x3 { .. } => {
                    conv_i -= 1;
                    let (kn, bn) = conv_names(p, conv_i);
                    let (gin, gk, gb) = ops::conv2d_backward(input, weights.get(&kn)?, &g)?;
                    grads.insert(kn, gk);
                    grads.insert(bn, gb);
                    gin
                }
                LayerSpec::MaxPool2 => ops::maxpool2d_backward(input, &g)?,
                LayerSpec::Relu => ops::relu_backward(input, &g)?,
                LayerSpec::Flatten => ops::flatten_backward(input, &g)?,
                _ => unreachable!("audited path"),
            };
        }
    }
    Ok(grads)
}

/// One-hot vector at the argmax probability; exact ties go to the lowest
/// index.
pub fn predict(probabilities: &Tensor) -> Result<Tensor> {
    let p = probabilities.data();
    if p.is_empty() {
        return Err(Error::shape("predict", "non-empty probability vector", "[0]"));
    }
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    let mut out = vec![0.0f32; p.len()];
    out[best] = 1.0;
    Tensor::new(probabilities.shape().to_vec(), out)
}

/// Argmax index with the same tie rule as [`predict`].
pub fn predicted_class(probabilities: &Tensor) -> Result<usize> {
    let one_hot = predict(probabilities)?;
    Ok(one_hot.data().iter().position(|&v| v == 1.0).unwrap())
}
