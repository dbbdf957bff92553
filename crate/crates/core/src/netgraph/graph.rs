//! Static DAG of layers with cached activations and reverse-mode gradients.

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_bwd, batchnorm_fwd, bilinear_upsample, bilinear_upsample_bwd, conv2d_bwd, conv2d_fwd,
    depthwise_atrous_conv_bwd, depthwise_atrous_conv_fwd, pixel_shuffle_bwd, pixel_shuffle_fwd, relu_bwd,
    relu_fwd, BatchNormCache, BatchNormState, ConvSpec, Mode, Param,
};
use crate::rng::{kaiming_init, Rng};
use crate::scalar::Scalar;
use crate::tensor::{concat_many, Dims, Tensor};

/// Index of a tensor produced or consumed by graph nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot(pub(crate) usize);

impl Slot {
    /// Position in the vector returned by [`Graph::infer_dims`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv { spec: ConvSpec, weight: Param<T>, bias: Option<Param<T>> },
    BatchNorm(BatchNormState<T>),
    Relu,
    Concat,
    PixelShuffle { t: usize },
    Bilinear { t: usize },
}

impl<T> Layer<T> {
    /// Short type tag used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { spec, .. } if spec.depthwise => "depthwise",
            Layer::Conv { spec, .. } if spec.is_pointwise() => "pointwise",
            Layer::Conv { .. } => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::Concat => "concat",
            Layer::PixelShuffle { .. } => "pixel_shuffle",
            Layer::Bilinear { .. } => "bilinear",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node<T> {
    pub name: String,
    pub layer: Layer<T>,
    pub inputs: Vec<Slot>,
    pub output: Slot,
}

#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    slot_channels: Vec<usize>,
    inputs: Vec<Slot>,
    outputs: Vec<Slot>,
    acts: Vec<Option<Tensor<T>>>,
    bn_caches: Vec<Option<BatchNormCache<T>>>,
    peak_live: usize,
}

impl<T: Scalar> Graph<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node<T>] {
        &mut self.nodes
    }

    pub fn input_slots(&self) -> &[Slot] {
        &self.inputs
    }

    pub fn output_slots(&self) -> &[Slot] {
        &self.outputs
    }

    pub fn slot_channels(&self, s: Slot) -> usize {
        self.slot_channels[s.0]
    }

    /// Number of trainable scalars (conv weights and biases, BN affine).
    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| layer_param_count(&n.layer)).sum()
    }

    /// Extents of every slot for the given input extents, without computing.
    pub fn infer_dims(&self, inputs: &[Dims]) -> Result<Vec<Dims>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Shape(format!("graph takes {} inputs, got {}", self.inputs.len(), inputs.len())));
        }
        let mut dims: Vec<Option<Dims>> = vec![None; self.slot_channels.len()];
        for (s, d) in self.inputs.iter().zip(inputs) {
            if d.c != self.slot_channels[s.0] {
                return Err(Error::Shape(format!("input slot {} expects {} channels, got {d}", s.0, self.slot_channels[s.0])));
            }
            dims[s.0] = Some(*d);
        }
        for node in &self.nodes {
            let ins: Vec<Dims> = node.inputs.iter().map(|s| dims[s.0].expect("topological order")).collect();
            let out = node_out_dims(node, &ins).map_err(|e| at_node(&node.name, e))?;
            dims[node.output.0] = Some(out);
        }
        Ok(dims.into_iter().map(|d| d.expect("every slot produced")).collect())
    }

    /// Runs every node in order; activations are kept for [`Graph::backward`].
    pub fn forward(&mut self, inputs: &[&Tensor<T>], mode: Mode) -> Result<Vec<Tensor<T>>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Shape(format!("graph takes {} inputs, got {}", self.inputs.len(), inputs.len())));
        }
        let mut acts: Vec<Option<Tensor<T>>> = vec![None; self.slot_channels.len()];
        for (s, x) in self.inputs.iter().zip(inputs) {
            if x.dims().c != self.slot_channels[s.0] {
                return Err(Error::Shape(format!(
                    "input slot {} expects {} channels, got {}",
                    s.0,
                    self.slot_channels[s.0],
                    x.dims()
                )));
            }
            x.check_finite("graph input")?;
            acts[s.0] = Some((*x).clone());
        }
        let last_use = self.last_use();
        let mut live: usize = inputs.iter().map(|x| x.len()).sum();
        let mut peak = live;
        let mut bn_caches = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter_mut().enumerate() {
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|s| acts[s.0].as_ref().expect("topological order")).collect();
            let (out, cache) = run_node(node, &ins, mode).map_err(|e| at_node(&node.name, e))?;
            out.check_finite(&format!("node {}", node.name))?;
            bn_caches[idx] = cache;
            live += out.len();
            peak = peak.max(live);
            acts[node.output.0] = Some(out);
            for s in &node.inputs {
                if last_use[s.0] == Some(idx) {
                    live -= acts[s.0].as_ref().map_or(0, |t| t.len());
                }
            }
        }
        let outs = self.outputs.iter().map(|s| acts[s.0].clone().expect("output produced")).collect();
        self.acts = acts;
        self.bn_caches = bn_caches;
        self.peak_live = peak;
        Ok(outs)
    }

    /// Peak number of live activation elements during the last forward pass,
    /// assuming each tensor is released after its last consumer.
    pub fn activation_peak(&self) -> usize {
        self.peak_live
    }

    /// Peak live activation elements that a forward pass over tensors of the
    /// given slot extents would reach; matches [`Graph::activation_peak`].
    pub fn planned_activation_peak(&self, slot_dims: &[Dims]) -> usize {
        let last_use = self.last_use();
        let mut live: usize = self.inputs.iter().map(|s| slot_dims[s.0].len()).sum();
        let mut peak = live;
        for (idx, node) in self.nodes.iter().enumerate() {
            live += slot_dims[node.output.0].len();
            peak = peak.max(live);
            for s in &node.inputs {
                if last_use[s.0] == Some(idx) {
                    live -= slot_dims[s.0].len();
                }
            }
        }
        peak
    }

    fn last_use(&self) -> Vec<Option<usize>> {
        let mut last = vec![None; self.slot_channels.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for s in &node.inputs {
                last[s.0] = Some(i);
            }
        }
        for s in &self.outputs {
            last[s.0] = None;
        }
        last
    }

    /// Back-propagates output gradients, accumulating into parameter grads.
    /// Returns gradients for the graph inputs.
    pub fn backward(&mut self, grad_outputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if self.acts.is_empty() {
            return Err(Error::State("backward called before forward".into()));
        }
        if grad_outputs.len() != self.outputs.len() {
            return Err(Error::Shape(format!("{} output grads for {} outputs", grad_outputs.len(), self.outputs.len())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.slot_channels.len()];
        for (s, g) in self.outputs.iter().zip(grad_outputs) {
            let want = self.acts[s.0].as_ref().expect("forward output").dims();
            if g.dims() != want {
                return Err(Error::Shape(format!("output grad {} vs output {want}", g.dims())));
            }
            accumulate(&mut grads[s.0], (*g).clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[self.nodes[idx].output.0].take() else {
                continue;
            };
            let node = &mut self.nodes[idx];
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|s| self.acts[s.0].as_ref().expect("cached")).collect();
            let gins = backward_node(node, &ins, &gout, self.bn_caches[idx].as_ref()).map_err(|e| at_node(&node.name, e))?;
            for (s, g) in node.inputs.clone().into_iter().zip(gins) {
                accumulate(&mut grads[s.0], g);
            }
        }
        Ok(self
            .inputs
            .iter()
            .map(|s| {
                grads[s.0].take().unwrap_or_else(|| {
                    Tensor::zeros(self.acts[s.0].as_ref().expect("input cached").dims())
                })
            })
            .collect())
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        self.acts.clear();
        self.bn_caches.clear();
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn sgd_step(&mut self, lr: T, momentum: T) {
        for p in self.params_mut() {
            p.sgd_step(lr, momentum);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.layer {
                Layer::Conv { weight, bias, .. } => {
                    out.push(weight);
                    if let Some(b) = bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Every persisted tensor (parameters and BN running statistics), in a
    /// fixed order, under the name `<node>.<field>`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.layer {
                Layer::Conv { weight, bias, .. } => {
                    out.push((format!("{}.weight", node.name), &weight.value));
                    if let Some(b) = bias {
                        out.push((format!("{}.bias", node.name), &b.value));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{}.gamma", node.name), &bn.gamma.value));
                    out.push((format!("{}.beta", node.name), &bn.beta.value));
                    out.push((format!("{}.running_mean", node.name), &bn.running_mean));
                    out.push((format!("{}.running_var", node.name), &bn.running_var));
                }
                _ => {}
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            let name = node.name.clone();
            match &mut node.layer {
                Layer::Conv { weight, bias, .. } => {
                    out.push((format!("{name}.weight"), &mut weight.value));
                    if let Some(b) = bias {
                        out.push((format!("{name}.bias"), &mut b.value));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{name}.gamma"), &mut bn.gamma.value));
                    out.push((format!("{name}.beta"), &mut bn.beta.value));
                    out.push((format!("{name}.running_mean"), &mut bn.running_mean));
                    out.push((format!("{name}.running_var"), &mut bn.running_var));
                }
                _ => {}
            }
        }
        out
    }

    /// Parameter gradients in the same order as [`Graph::params_mut`].
    pub fn grads(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.layer {
                Layer::Conv { weight, bias, .. } => {
                    out.push((format!("{}.weight", node.name), &weight.grad));
                    if let Some(b) = bias {
                        out.push((format!("{}.bias", node.name), &b.grad));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{}.gamma", node.name), &bn.gamma.grad));
                    out.push((format!("{}.beta", node.name), &bn.beta.grad));
                }
                _ => {}
            }
        }
        out
    }
}

pub(crate) fn layer_param_count<T: Scalar>(layer: &Layer<T>) -> usize {
    match layer {
        Layer::Conv { weight, bias, .. } => weight.value.len() + bias.as_ref().map_or(0, |b| b.value.len()),
        Layer::BatchNorm(bn) => 2 * bn.channels(),
        _ => 0,
    }
}

fn at_node(name: &str, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("node {name}: {m}")),
        Error::Spec(m) => Error::Spec(format!("node {name}: {m}")),
        Error::DegenerateBatch(m) => Error::DegenerateBatch(format!("node {name}: {m}")),
        other => other,
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub(crate) fn node_out_dims<T: Scalar>(node: &Node<T>, ins: &[Dims]) -> Result<Dims> {
    let d = ins[0];
    match &node.layer {
        Layer::Conv { spec, .. } => {
            if d.c != spec.in_channels {
                return Err(Error::Shape(format!("expects {} channels, got {d}", spec.in_channels)));
            }
            Ok(spec.out_dims(d))
        }
        Layer::BatchNorm(_) | Layer::Relu => Ok(d),
        Layer::Concat => {
            for o in ins {
                if o.n != d.n || o.h != d.h || o.w != d.w {
                    return Err(Error::Shape(format!("concat of {o} with {d}: batch/spatial extents differ")));
                }
            }
            Ok(d.with_c(ins.iter().map(|o| o.c).sum()))
        }
        Layer::PixelShuffle { t } => {
            if d.c % (t * t) != 0 {
                return Err(Error::Shape(format!("{} channels not divisible by {}", d.c, t * t)));
            }
            Ok(Dims { c: d.c / (t * t), h: d.h * t, w: d.w * t, ..d })
        }
        Layer::Bilinear { t } => Ok(Dims { h: d.h * t, w: d.w * t, ..d }),
    }
}

type NodeOut<T> = (Tensor<T>, Option<BatchNormCache<T>>);

fn run_node<T: Scalar>(node: &mut Node<T>, ins: &[&Tensor<T>], mode: Mode) -> Result<NodeOut<T>> {
    let x = ins[0];
    Ok(match &mut node.layer {
        Layer::Conv { spec, weight, bias } => {
            let out = if spec.depthwise {
                depthwise_atrous_conv_fwd(x, &weight.value, spec)?
            } else {
                conv2d_fwd(x, &weight.value, bias.as_ref().map(|b| &b.value), spec)?
            };
            (out, None)
        }
        Layer::BatchNorm(state) => {
            let (out, cache) = batchnorm_fwd(x, state, mode)?;
            (out, Some(cache))
        }
        Layer::Relu => (relu_fwd(x), None),
        Layer::Concat => (concat_many(ins)?, None),
        Layer::PixelShuffle { t } => (pixel_shuffle_fwd(x, *t)?, None),
        Layer::Bilinear { t } => (bilinear_upsample(x, *t)?, None),
    })
}

fn backward_node<T: Scalar>(
    node: &mut Node<T>,
    ins: &[&Tensor<T>],
    gout: &Tensor<T>,
    cache: Option<&BatchNormCache<T>>,
) -> Result<Vec<Tensor<T>>> {
    let x = ins[0];
    Ok(match &mut node.layer {
        Layer::Conv { spec, weight, bias } => {
            if spec.depthwise {
                let (gi, gw) = depthwise_atrous_conv_bwd(x, gout, &weight.value, spec)?;
                weight.grad.add_assign(&gw);
                vec![gi]
            } else {
                let g = conv2d_bwd(x, gout, &weight.value, bias.is_some(), spec)?;
                weight.grad.add_assign(&g.weight);
                if let (Some(b), Some(gb)) = (bias.as_mut(), g.bias.as_ref()) {
                    b.grad.add_assign(gb);
                }
                vec![g.input]
            }
        }
        Layer::BatchNorm(state) => {
            let cache = cache.ok_or_else(|| Error::State("batch norm cache missing".into()))?;
            vec![batchnorm_bwd(gout, cache, state)?]
        }
        Layer::Relu => vec![relu_bwd(x, gout)?],
        Layer::Concat => {
            let mut start = 0;
            let mut parts = Vec::with_capacity(ins.len());
            for t in ins {
                let c = t.dims().c;
                parts.push(gout.slice_channels(start, c)?);
                start += c;
            }
            parts
        }
        Layer::PixelShuffle { t } => vec![pixel_shuffle_bwd(gout, *t)?],
        Layer::Bilinear { t } => vec![bilinear_upsample_bwd(gout, *t)?],
    })
}

/// Incremental graph construction; nodes are appended in topological order.
pub struct GraphBuilder<T> {
    nodes: Vec<Node<T>>,
    slot_channels: Vec<usize>,
    inputs: Vec<Slot>,
    rng: Rng,
}

impl<T: Scalar> GraphBuilder<T> {
    /// `seed` drives weight initialization, in node creation order.
    pub fn new(seed: u64) -> Self {
        GraphBuilder { nodes: Vec::new(), slot_channels: Vec::new(), inputs: Vec::new(), rng: Rng::new(seed) }
    }

    fn new_slot(&mut self, channels: usize) -> Slot {
        self.slot_channels.push(channels);
        Slot(self.slot_channels.len() - 1)
    }

    pub fn channels(&self, s: Slot) -> usize {
        self.slot_channels[s.0]
    }

    pub fn input(&mut self, channels: usize) -> Slot {
        let s = self.new_slot(channels);
        self.inputs.push(s);
        s
    }

    fn push(&mut self, name: String, layer: Layer<T>, inputs: Vec<Slot>, channels: usize) -> Slot {
        let output = self.new_slot(channels);
        self.nodes.push(Node { name, layer, inputs, output });
        output
    }

    pub fn conv(&mut self, name: impl Into<String>, x: Slot, spec: ConvSpec, with_bias: bool) -> crate::Result<Slot> {
        let name = name.into();
        spec.validate().map_err(|e| at_node(&name, e))?;
        if self.channels(x) != spec.in_channels {
            return Err(Error::Config(format!(
                "node {name}: input has {} channels, conv expects {}",
                self.channels(x),
                spec.in_channels
            )));
        }
        let weight = Param::new(kaiming_init(&mut self.rng, spec.weight_dims(), spec.fan_in()));
        let bias = with_bias.then(|| Param::new(Tensor::zeros(Dims { n: 1, c: spec.out_channels, h: 1, w: 1 })));
        Ok(self.push(name, Layer::Conv { spec, weight, bias }, vec![x], spec.out_channels))
    }

    pub fn batch_norm(&mut self, name: impl Into<String>, x: Slot) -> Slot {
        let c = self.channels(x);
        self.push(name.into(), Layer::BatchNorm(BatchNormState::new(c)), vec![x], c)
    }

    pub fn relu(&mut self, name: impl Into<String>, x: Slot) -> Slot {
        let c = self.channels(x);
        self.push(name.into(), Layer::Relu, vec![x], c)
    }

    /// Conv (no bias) followed by batch norm and ReLU, named `<prefix>.conv|bn|relu`.
    pub fn conv_bn_relu(&mut self, prefix: &str, x: Slot, spec: ConvSpec) -> crate::Result<Slot> {
        let c = self.conv(format!("{prefix}.conv"), x, spec, false)?;
        let b = self.batch_norm(format!("{prefix}.bn"), c);
        Ok(self.relu(format!("{prefix}.relu"), b))
    }

    /// Re-initializes the most recent conv so that the `t^2` output channels
    /// of each shuffle group share one filter ("ICNR"): the following pixel
    /// shuffle then starts out as nearest-neighbour upsampling.
    pub fn tie_subpixel_phases(&mut self, t: usize) -> crate::Result<()> {
        let node = self
            .nodes
            .iter_mut()
            .rev()
            .find(|n| matches!(n.layer, Layer::Conv { .. }))
            .ok_or_else(|| Error::Config("no conv to re-initialize".into()))?;
        let Layer::Conv { spec, weight, .. } = &mut node.layer else { unreachable!() };
        let t2 = t * t;
        if spec.depthwise || spec.out_channels % t2 != 0 {
            return Err(Error::Config(format!("node {}: cannot tie phases for t = {t}", node.name)));
        }
        let per_out = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let w = weight.value.data_mut();
        for group in 0..spec.out_channels / t2 {
            let first = group * t2 * per_out;
            for phase in 1..t2 {
                let dst = first + phase * per_out;
                w.copy_within(first..first + per_out, dst);
            }
        }
        Ok(())
    }

    pub fn concat(&mut self, name: impl Into<String>, xs: &[Slot]) -> Slot {
        let c = xs.iter().map(|s| self.channels(*s)).sum();
        self.push(name.into(), Layer::Concat, xs.to_vec(), c)
    }

    pub fn pixel_shuffle(&mut self, name: impl Into<String>, x: Slot, t: usize) -> crate::Result<Slot> {
        let name = name.into();
        let c = self.channels(x);
        if t == 0 || c % (t * t) != 0 {
            return Err(Error::Config(format!("node {name}: {c} channels not divisible by t^2 for t = {t}")));
        }
        Ok(self.push(name, Layer::PixelShuffle { t }, vec![x], c / (t * t)))
    }

    pub fn bilinear(&mut self, name: impl Into<String>, x: Slot, t: usize) -> crate::Result<Slot> {
        let name = name.into();
        if t == 0 {
            return Err(Error::Config(format!("node {name}: upsample factor must be >= 1")));
        }
        let c = self.channels(x);
        Ok(self.push(name, Layer::Bilinear { t }, vec![x], c))
    }

    pub fn finish(self, outputs: &[Slot]) -> Graph<T> {
        Graph {
            nodes: self.nodes,
            slot_channels: self.slot_channels,
            inputs: self.inputs,
            outputs: outputs.to_vec(),
            acts: Vec::new(),
            bn_caches: Vec::new(),
            peak_live: 0,
        }
    }
}
