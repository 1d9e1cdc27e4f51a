//! A minimal differentiable CNN used as the attack target.
//!
//! The network is small enough to train in seconds on 32×32 images while
//! still exposing several distinct feature-map scales for white-box
//! detection. Everything is double precision and fully deterministic given
//! (architecture, seed): forward, input gradient, and SGD training.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, LabeledImages};
use crate::error::{Error, Result};

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![0.0; len] }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("tensor in {context}")))
        }
    }
}

/// One layer of the architecture descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    Relu,
    GlobalAvgPool,
    Dense { inputs: usize, outputs: usize },
}

/// Architecture: input shape plus an ordered layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input: (usize, usize, usize), // (channels, height, width)
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Default desk-scale target: three conv stages, global average pooling,
    /// and a linear classifier head.
    pub fn default_for(classes: usize) -> Self {
        Architecture {
            input: (3, 32, 32),
            layers: vec![
                LayerSpec::Conv2d { in_ch: 3, out_ch: 16, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 2, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv2d { in_ch: 32, out_ch: 32, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 32, outputs: classes },
            ],
        }
    }

    /// Output shape of every layer, checking inter-layer compatibility.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape("input dimensions must be positive".into()));
        }
        let mut cur = vec![c, h, w];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                    if cur.len() != 3 || cur[0] != *in_ch {
                        return Err(Error::Shape(format!(
                            "layer {i} (conv) expects {in_ch} input channels, got shape {cur:?}"
                        )));
                    }
                    if *kernel == 0 || *stride == 0 {
                        return Err(Error::Shape(format!("layer {i}: kernel/stride must be positive")));
                    }
                    let oh = conv_out(cur[1], *kernel, *stride, *pad).ok_or_else(|| {
                        Error::Shape(format!("layer {i}: kernel exceeds padded height"))
                    })?;
                    let ow = conv_out(cur[2], *kernel, *stride, *pad).ok_or_else(|| {
                        Error::Shape(format!("layer {i}: kernel exceeds padded width"))
                    })?;
                    vec![*out_ch, oh, ow]
                }
                LayerSpec::Relu => cur,
                LayerSpec::GlobalAvgPool => {
                    if cur.len() != 3 {
                        return Err(Error::Shape(format!(
                            "layer {i} (gap) expects a 3D map, got shape {cur:?}"
                        )));
                    }
                    vec![cur[0]]
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let flat: usize = cur.iter().product();
                    if flat != *inputs {
                        return Err(Error::Shape(format!(
                            "layer {i} (dense) expects {inputs} inputs, got {flat} (shape {cur:?})"
                        )));
                    }
                    vec![*outputs]
                }
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Stable per-layer names: conv1, relu1, conv2, ..., pool1, dense1.
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        self.layers
            .iter()
            .map(|l| {
                let kind = match l {
                    LayerSpec::Conv2d { .. } => "conv",
                    LayerSpec::Relu => "relu",
                    LayerSpec::GlobalAvgPool => "pool",
                    LayerSpec::Dense { .. } => "dense",
                };
                let n = counts.entry(kind).or_insert(0);
                *n += 1;
                format!("{kind}{n}")
            })
            .collect()
    }

    /// Number of classes (output width of the last layer).
    pub fn classes(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs, .. }) => Ok(*outputs),
            _ => Err(Error::Shape("architecture must end in a dense layer".into())),
        }
    }

    /// Single-line text descriptor, parseable by [`Architecture::parse`].
    pub fn describe(&self) -> String {
        let mut parts = vec![format!("input {} {} {}", self.input.0, self.input.1, self.input.2)];
        for l in &self.layers {
            parts.push(match l {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                    format!("conv {in_ch} {out_ch} {kernel} {stride} {pad}")
                }
                LayerSpec::Relu => "relu".to_string(),
                LayerSpec::GlobalAvgPool => "gap".to_string(),
                LayerSpec::Dense { inputs, outputs } => format!("dense {inputs} {outputs}"),
            });
        }
        parts.join("; ")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for part in s.split(';') {
            let toks: Vec<&str> = part.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let ints = |n: usize| -> Result<Vec<usize>> {
                if toks.len() != n + 1 {
                    return Err(Error::Format(format!("bad descriptor clause '{}'", part.trim())));
                }
                toks[1..]
                    .iter()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad integer '{t}' in descriptor")))
                    })
                    .collect()
            };
            match toks[0] {
                "input" => {
                    let v = ints(3)?;
                    input = Some((v[0], v[1], v[2]));
                }
                "conv" => {
                    let v = ints(5)?;
                    layers.push(LayerSpec::Conv2d {
                        in_ch: v[0],
                        out_ch: v[1],
                        kernel: v[2],
                        stride: v[3],
                        pad: v[4],
                    });
                }
                "relu" => layers.push(LayerSpec::Relu),
                "gap" => layers.push(LayerSpec::GlobalAvgPool),
                "dense" => {
                    let v = ints(2)?;
                    layers.push(LayerSpec::Dense { inputs: v[0], outputs: v[1] });
                }
                other => return Err(Error::Format(format!("unknown layer kind '{other}'"))),
            }
        }
        let input = input.ok_or_else(|| Error::Format("descriptor missing input clause".into()))?;
        let arch = Architecture { input, layers };
        arch.layer_shapes()?;
        Ok(arch)
    }
}

fn conv_out(dim: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = dim + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Weights and biases of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams { weights: Vec::new(), biases: Vec::new() }
    }
}

/// Post-activation values of the layers captured during a forward pass.
pub type ActivationTrace = BTreeMap<String, Tensor>;

/// A trained (or fresh) network: architecture plus per-layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    params: Vec<LayerParams>,
}

impl Network {
    /// Fresh network with uniform Glorot init, seeded.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.layer_shapes()?;
        arch.classes()?;
        let names = arch.layer_names();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                    let fan_in = in_ch * kernel * kernel;
                    let fan_out = out_ch * kernel * kernel;
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    LayerParams {
                        weights: (0..out_ch * in_ch * kernel * kernel)
                            .map(|_| rng.gen_range(-s..=s))
                            .collect(),
                        biases: vec![0.0; *out_ch],
                    }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let s = (6.0 / (inputs + outputs) as f64).sqrt();
                    LayerParams {
                        weights: (0..inputs * outputs).map(|_| rng.gen_range(-s..=s)).collect(),
                        biases: vec![0.0; *outputs],
                    }
                }
                _ => LayerParams::empty(),
            })
            .collect();
        Ok(Network { arch, names, shapes, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn layer_shape(&self, name: &str) -> Result<&[usize]> {
        let idx = self.layer_index(name)?;
        Ok(&self.shapes[idx])
    }

    /// Names of layers whose output is a multi-channel 2D map, usable for
    /// white-box spectral features.
    pub fn capturable_layers(&self) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.shapes)
            .filter(|(_, s)| s.len() == 3 && s[1] >= 2 && s[2] >= 2)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn class_count(&self) -> usize {
        self.arch.classes().expect("validated at construction")
    }

    /// All parameters set to zero; useful as a degenerate baseline in tests.
    pub fn zeroed(&self) -> Network {
        let mut net = self.clone();
        for p in &mut net.params {
            for w in &mut p.weights {
                *w = 0.0;
            }
            for b in &mut p.biases {
                *b = 0.0;
            }
        }
        net
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.biases.len()).sum()
    }

    fn layer_index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownLayer {
            name: name.to_string(),
            valid: self.names.clone(),
        })
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let (c, h, w) = self.arch.input;
        if image.channels != c || image.height != h || image.width != w {
            return Err(Error::Shape(format!(
                "network expects {}x{}x{} input, image is {}x{}x{}",
                c, h, w, image.channels, image.height, image.width
            )));
        }
        Ok(())
    }

    /// Run all layers, keeping every intermediate output (needed for backward).
    fn forward_full(&self, image: &Image) -> Vec<Tensor> {
        let (c, h, w) = self.arch.input;
        // Center pixels around zero; [0,1] inputs otherwise carry a large DC
        // component that dominates the conditioning of the first layer.
        let mut cur =
            Tensor { shape: vec![c, h, w], data: image.pixels.iter().map(|p| p - 0.5).collect() };
        let mut acts = Vec::with_capacity(self.arch.layers.len() + 1);
        acts.push(cur.clone());
        for (li, layer) in self.arch.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => conv_forward(
                    &cur,
                    &self.params[li],
                    *in_ch,
                    *out_ch,
                    *kernel,
                    *stride,
                    *pad,
                    &self.shapes[li],
                ),
                LayerSpec::Relu => Tensor {
                    shape: cur.shape.clone(),
                    data: cur.data.iter().map(|v| v.max(0.0)).collect(),
                },
                LayerSpec::GlobalAvgPool => {
                    let (ch, area) = (cur.shape[0], cur.shape[1] * cur.shape[2]);
                    let data = (0..ch)
                        .map(|c| cur.data[c * area..(c + 1) * area].iter().sum::<f64>() / area as f64)
                        .collect();
                    Tensor { shape: vec![ch], data }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let p = &self.params[li];
                    let data = (0..*outputs)
                        .map(|o| {
                            p.biases[o]
                                + (0..*inputs)
                                    .map(|i| p.weights[o * inputs + i] * cur.data[i])
                                    .sum::<f64>()
                        })
                        .collect();
                    Tensor { shape: vec![*outputs], data }
                }
            };
            acts.push(cur.clone());
        }
        acts
    }

    /// Forward pass returning logits and the requested activation maps.
    pub fn forward(&self, image: &Image, capture: &[String]) -> Result<(Tensor, ActivationTrace)> {
        self.check_input(image)?;
        for name in capture {
            self.layer_index(name)?;
        }
        let acts = self.forward_full(image);
        let logits = acts.last().unwrap().clone();
        logits.assert_finite("forward logits")?;
        let mut trace = ActivationTrace::new();
        for name in capture {
            let idx = self.layer_index(name)?;
            trace.insert(name.clone(), acts[idx + 1].clone());
        }
        Ok((logits, trace))
    }

    /// Softmax class probabilities for one image.
    pub fn probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        let (logits, _) = self.forward(image, &[])?;
        Ok(softmax(&logits.data))
    }

    /// Predicted class index (argmax of logits).
    pub fn predict(&self, image: &Image) -> Result<usize> {
        let (logits, _) = self.forward(image, &[])?;
        Ok(argmax(&logits.data))
    }

    /// Cross-entropy loss of one labeled image.
    pub fn loss(&self, image: &Image, label: usize) -> Result<f64> {
        self.check_label(label)?;
        let (logits, _) = self.forward(image, &[])?;
        Ok(cross_entropy(&logits.data, label))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        let classes = self.class_count();
        if label >= classes {
            return Err(Error::Data(format!("label {label} out of range (classes: {classes})")));
        }
        Ok(())
    }

    /// Gradient of the cross-entropy loss with respect to the input pixels.
    pub fn input_gradient(&self, image: &Image, label: usize) -> Result<Tensor> {
        self.check_input(image)?;
        self.check_label(label)?;
        let acts = self.forward_full(image);
        let (grad_input, _) = self.backward(&acts, label, false);
        grad_input.assert_finite("input gradient")?;
        Ok(grad_input)
    }

    /// Backward pass from the softmax/cross-entropy head. Returns the input
    /// gradient and, when requested, per-layer parameter gradients.
    fn backward(&self, acts: &[Tensor], label: usize, want_params: bool) -> (Tensor, Vec<LayerParams>) {
        let logits = acts.last().unwrap();
        let probs = softmax(&logits.data);
        let mut grad: Vec<f64> = probs;
        grad[label] -= 1.0; // d CE / d logits

        let mut param_grads: Vec<LayerParams> =
            if want_params { self.params.iter().map(|_| LayerParams::empty()).collect() } else { Vec::new() };

        let mut grad_t = Tensor { shape: logits.shape.clone(), data: grad };
        for (li, layer) in self.arch.layers.iter().enumerate().rev() {
            let input = &acts[li];
            grad_t = match layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                    let (gin, gp) = conv_backward(
                        input,
                        &grad_t,
                        &self.params[li],
                        *in_ch,
                        *out_ch,
                        *kernel,
                        *stride,
                        *pad,
                        want_params,
                    );
                    if want_params {
                        param_grads[li] = gp;
                    }
                    gin
                }
                LayerSpec::Relu => Tensor {
                    shape: input.shape.clone(),
                    data: input
                        .data
                        .iter()
                        .zip(&grad_t.data)
                        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                },
                LayerSpec::GlobalAvgPool => {
                    let (ch, hh, ww) = (input.shape[0], input.shape[1], input.shape[2]);
                    let area = (hh * ww) as f64;
                    let mut data = vec![0.0; ch * hh * ww];
                    for c in 0..ch {
                        let g = grad_t.data[c] / area;
                        for v in &mut data[c * hh * ww..(c + 1) * hh * ww] {
                            *v = g;
                        }
                    }
                    Tensor { shape: input.shape.clone(), data }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let p = &self.params[li];
                    if want_params {
                        let mut gw = vec![0.0; inputs * outputs];
                        for o in 0..*outputs {
                            let go = grad_t.data[o];
                            for i in 0..*inputs {
                                gw[o * inputs + i] = go * input.data[i];
                            }
                        }
                        param_grads[li] = LayerParams { weights: gw, biases: grad_t.data.clone() };
                    }
                    let mut gin = vec![0.0; *inputs];
                    for o in 0..*outputs {
                        let go = grad_t.data[o];
                        for i in 0..*inputs {
                            gin[i] += p.weights[o * inputs + i] * go;
                        }
                    }
                    Tensor { shape: input.shape.clone(), data: gin }
                }
            };
        }
        (grad_t, param_grads)
    }

    /// Mini-batch SGD with a fixed learning rate. Deterministic per seed.
    ///
    /// The documented default recipe is `epochs=8, lr=0.05` on the synthetic
    /// two-class dataset; the achieved held-out accuracy is recorded in the
    /// README.
    pub fn train(&self, data: &LabeledImages, epochs: usize, lr: f64, seed: u64) -> Result<Network> {
        if data.images.is_empty() {
            return Err(Error::Data("training dataset is empty".into()));
        }
        let classes = self.class_count();
        for (i, &l) in data.labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::Data(format!("label {l} of sample {i} out of range")));
            }
        }
        let mut net = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.images.len()).collect();
        const BATCH: usize = 16;
        const MOMENTUM: f64 = 0.9;
        let mut velocity: Vec<LayerParams> = net
            .params
            .iter()
            .map(|p| LayerParams {
                weights: vec![0.0; p.weights.len()],
                biases: vec![0.0; p.biases.len()],
            })
            .collect();
        for epoch in 0..epochs {
            // Fisher-Yates with the epoch rng stream
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(BATCH) {
                let mut accum: Vec<LayerParams> =
                    net.params.iter().map(|_| LayerParams::empty()).collect();
                for &si in chunk {
                    let acts = net.forward_full(&data.images[si]);
                    let (_, grads) = net.backward(&acts, data.labels[si], true);
                    for (a, g) in accum.iter_mut().zip(grads) {
                        if a.weights.is_empty() {
                            *a = g;
                        } else {
                            for (x, y) in a.weights.iter_mut().zip(&g.weights) {
                                *x += *y;
                            }
                            for (x, y) in a.biases.iter_mut().zip(&g.biases) {
                                *x += *y;
                            }
                        }
                    }
                }
                let mut scale = lr / chunk.len() as f64;
                // Global-norm gradient clipping guards against loss spikes
                // from hard samples blowing up the weights.
                const CLIP: f64 = 5.0;
                let sq: f64 = accum
                    .iter()
                    .flat_map(|g| g.weights.iter().chain(&g.biases))
                    .map(|g| g * g)
                    .sum();
                let norm = sq.sqrt() / chunk.len() as f64;
                if norm > CLIP {
                    scale *= CLIP / norm;
                }
                for ((p, g), v) in net.params.iter_mut().zip(&accum).zip(&mut velocity) {
                    for ((w, gw), vw) in p.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                        *vw = MOMENTUM * *vw - scale * gw;
                        *w += *vw;
                    }
                    for ((b, gb), vb) in p.biases.iter_mut().zip(&g.biases).zip(&mut v.biases) {
                        *vb = MOMENTUM * *vb - scale * gb;
                        *b += *vb;
                    }
                }
            }
            let loss = net.mean_loss(data)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
        }
        Ok(net)
    }

    /// Mean cross-entropy over a labeled set.
    pub fn mean_loss(&self, data: &LabeledImages) -> Result<f64> {
        let mut total = 0.0;
        for (img, &label) in data.images.iter().zip(&data.labels) {
            total += self.loss(img, label)?;
        }
        Ok(total / data.images.len() as f64)
    }

    /// Fraction of correctly classified samples.
    pub fn accuracy(&self, data: &LabeledImages) -> Result<f64> {
        let mut correct = 0usize;
        for (img, &label) in data.images.iter().zip(&data.labels) {
            if self.predict(img)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.images.len() as f64)
    }

    // ---- serialization: magic "SSNET1", length-prefixed descriptor line,
    // then parameters as little-endian f64 in layer order ----

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"SSNET1")?;
        let desc = self.arch.describe();
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc.as_bytes())?;
        for p in &self.params {
            for v in p.weights.iter().chain(&p.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Network> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != b"SSNET1" {
            return Err(Error::Format("bad magic, not a SSNET1 network file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut desc = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut desc)?;
        let desc =
            String::from_utf8(desc).map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
        let arch = Architecture::parse(&desc)?;
        let mut net = Network::new(arch, 0)?;
        let mut buf = [0u8; 8];
        for p in &mut net.params {
            for v in p.weights.iter_mut().chain(p.biases.iter_mut()) {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(net)
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_file(path: &std::path::Path) -> Result<Network> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Network::load(&mut f)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let probs = softmax(logits);
    -probs[label].max(1e-300).ln()
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &Tensor,
    params: &LayerParams,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_shape: &[usize],
) -> Tensor {
    let (ih, iw) = (input.shape[1], input.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = vec![0.0; out_ch * oh * ow];
    for o in 0..out_ch {
        for ci in 0..in_ch {
            let wbase = (o * in_ch + ci) * kernel * kernel;
            let ibase = ci * ih * iw;
            for oy in 0..oh {
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let irow = ibase + iy as usize * iw;
                    let orow = (o * oh + oy) * ow;
                    for kx in 0..kernel {
                        let wv = params.weights[wbase + ky * kernel + kx];
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            out[orow + ox] += wv * input.data[irow + ix as usize];
                        }
                    }
                }
            }
        }
        for v in &mut out[o * oh * ow..(o + 1) * oh * ow] {
            *v += params.biases[o];
        }
    }
    Tensor { shape: out_shape.to_vec(), data: out }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &Tensor,
    grad_out: &Tensor,
    params: &LayerParams,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    want_params: bool,
) -> (Tensor, LayerParams) {
    let (ih, iw) = (input.shape[1], input.shape[2]);
    let (oh, ow) = (grad_out.shape[1], grad_out.shape[2]);
    let mut grad_in = vec![0.0; in_ch * ih * iw];
    let mut grad_w = if want_params { vec![0.0; out_ch * in_ch * kernel * kernel] } else { Vec::new() };
    let mut grad_b = if want_params { vec![0.0; out_ch] } else { Vec::new() };

    for o in 0..out_ch {
        if want_params {
            grad_b[o] = grad_out.data[o * oh * ow..(o + 1) * oh * ow].iter().sum();
        }
        for ci in 0..in_ch {
            let wbase = (o * in_ch + ci) * kernel * kernel;
            let ibase = ci * ih * iw;
            for oy in 0..oh {
                let orow = (o * oh + oy) * ow;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let irow = ibase + iy as usize * iw;
                    for kx in 0..kernel {
                        let wv = params.weights[wbase + ky * kernel + kx];
                        let mut gw = 0.0;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let go = grad_out.data[orow + ox];
                            grad_in[irow + ix as usize] += wv * go;
                            gw += go * input.data[irow + ix as usize];
                        }
                        if want_params {
                            grad_w[wbase + ky * kernel + kx] += gw;
                        }
                    }
                }
            }
        }
    }
    (
        Tensor { shape: input.shape.clone(), data: grad_in },
        LayerParams { weights: grad_w, biases: grad_b },
    )
}
