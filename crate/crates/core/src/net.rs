//! Static layer graphs.
//!
//! A [`Network`] is a fixed DAG over the layer kinds in [`layers`]: nodes are
//! appended in topological order and may only reference earlier nodes, which
//! is enough for every architecture in the zoo (skip connections and channel
//! concatenation included) without a general autodiff tape. [`LayerSpec`] is
//! the declarative, serializable description of a single layer used for shape
//! inference and documentation of model stacks.

use crate::error::{Error, Result};
use crate::layers;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Layer kinds that appear in model layer stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    Prelu,
    AddSkip,
    Concat,
    UpsampleBicubic,
}

/// Declarative description of one layer; `infer` gives its output shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub fn conv(cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            stride,
            padding,
        }
    }

    pub fn tconv(cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::TransposedConv,
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            stride,
            padding,
        }
    }

    pub fn prelu(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Prelu,
            in_channels: channels,
            out_channels: channels,
            kernel: (0, 0),
            stride: 1,
            padding: 0,
        }
    }

    pub fn add_skip(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::AddSkip,
            in_channels: channels,
            out_channels: channels,
            kernel: (0, 0),
            stride: 1,
            padding: 0,
        }
    }

    /// Channel concatenation; `cout` is the total channel count afterwards.
    pub fn concat(cin: usize, cout: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Concat,
            in_channels: cin,
            out_channels: cout,
            kernel: (0, 0),
            stride: 1,
            padding: 0,
        }
    }

    pub fn upsample_bicubic(channels: usize, factor: usize) -> Self {
        LayerSpec {
            kind: LayerKind::UpsampleBicubic,
            in_channels: channels,
            out_channels: channels,
            kernel: (0, 0),
            stride: factor,
            padding: 0,
        }
    }

    /// Output shape for an input of shape `(c, h, w)`.
    pub fn infer(&self, shape: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = shape;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "{:?} expects {} input channels, got {c}",
                self.kind, self.in_channels
            )));
        }
        match self.kind {
            LayerKind::Conv => Ok((
                self.out_channels,
                layers::conv_out_len(h, self.kernel.0, self.stride, self.padding)?,
                layers::conv_out_len(w, self.kernel.1, self.stride, self.padding)?,
            )),
            LayerKind::TransposedConv => Ok((
                self.out_channels,
                layers::tconv_out_len(h, self.kernel.0, self.stride, self.padding)?,
                layers::tconv_out_len(w, self.kernel.1, self.stride, self.padding)?,
            )),
            LayerKind::Prelu | LayerKind::AddSkip => Ok((c, h, w)),
            LayerKind::Concat => Ok((self.out_channels, h, w)),
            LayerKind::UpsampleBicubic => Ok((c, h * self.stride, w * self.stride)),
        }
    }
}

/// Compose shape inference over a layer stack.
pub fn infer_stack(
    stack: &[LayerSpec],
    input: (usize, usize, usize),
) -> Result<(usize, usize, usize)> {
    let mut shape = input;
    for (i, spec) in stack.iter().enumerate() {
        shape = spec
            .infer(shape)
            .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
    }
    Ok(shape)
}

/// A named parameter tensor. Frozen parameters are skipped by the optimizer
/// and by the gradient checker.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Node identifier within a network.
pub type NodeId = usize;

#[derive(Debug, Clone)]
pub(crate) enum NodeOp {
    Input,
    Conv {
        input: NodeId,
        w: usize,
        b: usize,
        stride: usize,
        padding: usize,
    },
    TConv {
        input: NodeId,
        w: usize,
        b: usize,
        stride: usize,
        padding: usize,
    },
    Prelu {
        input: NodeId,
        slope: usize,
    },
    /// value[a] + scale_b * value[b]; scale -1 expresses residual differences.
    Add {
        a: NodeId,
        b: NodeId,
        scale_b: f64,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    UpsampleBicubic {
        input: NodeId,
        factor: usize,
    },
    AvgPool {
        input: NodeId,
        k: usize,
    },
    GlobalAvgPool {
        input: NodeId,
    },
}

/// Fixed-topology network with named parameters.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub(crate) nodes: Vec<NodeOp>,
    pub(crate) params: Vec<Param<T>>,
    taps: Vec<(String, NodeId)>,
}

/// Gradients from one backward pass, aligned with `Network::params`.
pub struct Grads<T> {
    pub params: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

impl<T: Element> Network<T> {
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn tap_node(&self, name: &str) -> Option<NodeId> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            taps: self.taps.clone(),
        }
    }

    /// Evaluate every node; element `i` is node `i`'s output.
    pub fn forward_all(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for op in &self.nodes {
            let v = match op {
                NodeOp::Input => input.clone(),
                NodeOp::Conv {
                    input,
                    w,
                    b,
                    stride,
                    padding,
                } => layers::conv2d_forward(
                    &values[*input],
                    &self.params[*w].value,
                    &self.params[*b].value,
                    *stride,
                    *padding,
                )?,
                NodeOp::TConv {
                    input,
                    w,
                    b,
                    stride,
                    padding,
                } => layers::tconv2d_forward(
                    &values[*input],
                    &self.params[*w].value,
                    &self.params[*b].value,
                    *stride,
                    *padding,
                )?,
                NodeOp::Prelu { input, slope } => {
                    layers::prelu_forward(&values[*input], &self.params[*slope].value)?
                }
                NodeOp::Add { a, b, scale_b } => {
                    let sb = T::from_f64(*scale_b);
                    values[*a].zip_map(&values[*b], |x, y| x + sb * y)?
                }
                NodeOp::Concat { parts } => concat_channels(
                    &parts.iter().map(|&p| &values[p]).collect::<Vec<_>>(),
                )?,
                NodeOp::UpsampleBicubic { input, factor } => {
                    layers::upsample_bicubic_forward(&values[*input], *factor)?
                }
                NodeOp::AvgPool { input, k } => layers::avg_pool_forward(&values[*input], *k)?,
                NodeOp::GlobalAvgPool { input } => {
                    layers::global_avg_pool_forward(&values[*input])?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Output of the final node.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_all(input)?.pop().expect("nonempty network"))
    }

    /// Backpropagate `grad_output` (gradient at the final node) through the
    /// graph, given the `values` from [`Network::forward_all`].
    pub fn backward(&self, values: &[Tensor<T>], grad_output: &Tensor<T>) -> Result<Grads<T>> {
        let mut param_grads: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims()))
            .collect();
        let mut node_grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let last = self.nodes.len() - 1;
        if grad_output.dims() != values[last].dims() {
            return Err(Error::shape(format!(
                "grad_output dims {:?} vs network output {:?}",
                grad_output.dims(),
                values[last].dims()
            )));
        }
        node_grads[last] = Some(grad_output.clone());

        let mut input_grad: Option<Tensor<T>> = None;
        for idx in (0..self.nodes.len()).rev() {
            let grad = match node_grads[idx].take() {
                Some(g) => g,
                None => continue, // node does not influence the output
            };
            match &self.nodes[idx] {
                NodeOp::Input => {
                    accumulate(&mut input_grad, grad)?;
                }
                NodeOp::Conv {
                    input,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (gi, gw, gb) = layers::conv2d_backward(
                        &values[*input],
                        &self.params[*w].value,
                        &grad,
                        *stride,
                        *padding,
                    )?;
                    param_grads[*w].add_scaled(&gw, T::ONE)?;
                    param_grads[*b].add_scaled(&gb, T::ONE)?;
                    accumulate(&mut node_grads[*input], gi)?;
                }
                NodeOp::TConv {
                    input,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (gi, gw, gb) = layers::tconv2d_backward(
                        &values[*input],
                        &self.params[*w].value,
                        &grad,
                        *stride,
                        *padding,
                    )?;
                    param_grads[*w].add_scaled(&gw, T::ONE)?;
                    param_grads[*b].add_scaled(&gb, T::ONE)?;
                    accumulate(&mut node_grads[*input], gi)?;
                }
                NodeOp::Prelu { input, slope } => {
                    let (gi, gs) = layers::prelu_backward(
                        &values[*input],
                        &self.params[*slope].value,
                        &grad,
                    )?;
                    param_grads[*slope].add_scaled(&gs, T::ONE)?;
                    accumulate(&mut node_grads[*input], gi)?;
                }
                NodeOp::Add { a, b, scale_b } => {
                    let mut gb = grad.clone();
                    gb.scale(T::from_f64(*scale_b));
                    accumulate(&mut node_grads[*b], gb)?;
                    accumulate(&mut node_grads[*a], grad)?;
                }
                NodeOp::Concat { parts } => {
                    let mut offset = 0usize;
                    for &p in parts {
                        let (pc, ph, pw) = values[p].shape3()?;
                        let mut g = Tensor::<T>::zeros(&[pc, ph, pw]);
                        for c in 0..pc {
                            for y in 0..ph {
                                g.row3_mut(c, y)
                                    .copy_from_slice(grad.row3(offset + c, y));
                            }
                        }
                        offset += pc;
                        accumulate(&mut node_grads[p], g)?;
                    }
                }
                NodeOp::UpsampleBicubic { input, .. } => {
                    let gi = layers::upsample_bicubic_backward(values[*input].dims(), &grad)?;
                    accumulate(&mut node_grads[*input], gi)?;
                }
                NodeOp::AvgPool { input, k } => {
                    let gi = layers::avg_pool_backward(values[*input].dims(), *k, &grad)?;
                    accumulate(&mut node_grads[*input], gi)?;
                }
                NodeOp::GlobalAvgPool { input } => {
                    let gi = layers::global_avg_pool_backward(values[*input].dims(), &grad)?;
                    accumulate(&mut node_grads[*input], gi)?;
                }
            }
        }
        Ok(Grads {
            params: param_grads,
            input: input_grad
                .ok_or_else(|| Error::shape("network has no input node".to_string()))?,
        })
    }

    /// Smallest |pre-activation| seen by any PReLU node for this input, or
    /// infinity when the graph has none. Finite-difference gradient checks
    /// need this margin to stay clear of the activation kink.
    pub fn prelu_margin(&self, input: &Tensor<T>) -> Result<f64> {
        let values = self.forward_all(input)?;
        let mut margin = f64::INFINITY;
        for op in &self.nodes {
            if let NodeOp::Prelu { input: i, .. } = op {
                for &v in values[*i].data() {
                    margin = margin.min(v.to_f64().abs());
                }
            }
        }
        Ok(margin)
    }

    /// Per-node output shapes for an input of shape `(c, h, w)`.
    pub fn infer_shapes(
        &self,
        input: (usize, usize, usize),
    ) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(self.nodes.len());
        for op in &self.nodes {
            let s = match op {
                NodeOp::Input => input,
                NodeOp::Conv {
                    input: i,
                    w,
                    stride,
                    padding,
                    ..
                } => {
                    let (cout, cin, kh, kw) = self.params[*w].value.shape4()?;
                    let (c, h, wd) = shapes[*i];
                    if c != cin {
                        return Err(Error::shape(format!(
                            "conv '{}' expects {cin} channels, got {c}",
                            self.params[*w].name
                        )));
                    }
                    (
                        cout,
                        layers::conv_out_len(h, kh, *stride, *padding)?,
                        layers::conv_out_len(wd, kw, *stride, *padding)?,
                    )
                }
                NodeOp::TConv {
                    input: i,
                    w,
                    stride,
                    padding,
                    ..
                } => {
                    let (cin, cout, kh, kw) = self.params[*w].value.shape4()?;
                    let (c, h, wd) = shapes[*i];
                    if c != cin {
                        return Err(Error::shape(format!(
                            "tconv '{}' expects {cin} channels, got {c}",
                            self.params[*w].name
                        )));
                    }
                    (
                        cout,
                        layers::tconv_out_len(h, kh, *stride, *padding)?,
                        layers::tconv_out_len(wd, kw, *stride, *padding)?,
                    )
                }
                NodeOp::Prelu { input: i, .. } => shapes[*i],
                NodeOp::Add { a, b, .. } => {
                    if shapes[*a] != shapes[*b] {
                        return Err(Error::shape(format!(
                            "add over {:?} vs {:?}",
                            shapes[*a], shapes[*b]
                        )));
                    }
                    shapes[*a]
                }
                NodeOp::Concat { parts } => {
                    let (_, h, w) = shapes[parts[0]];
                    let mut c = 0usize;
                    for &p in parts {
                        let (pc, ph, pw) = shapes[p];
                        if (ph, pw) != (h, w) {
                            return Err(Error::shape(format!(
                                "concat spatial mismatch {:?} vs {:?}",
                                shapes[parts[0]], shapes[p]
                            )));
                        }
                        c += pc;
                    }
                    (c, h, w)
                }
                NodeOp::UpsampleBicubic { input: i, factor } => {
                    let (c, h, w) = shapes[*i];
                    (c, h * factor, w * factor)
                }
                NodeOp::AvgPool { input: i, k } => {
                    let (c, h, w) = shapes[*i];
                    if h % k != 0 || w % k != 0 {
                        return Err(Error::shape(format!("pool {k} on ({h},{w})")));
                    }
                    (c, h / k, w / k)
                }
                NodeOp::GlobalAvgPool { input: i } => {
                    let (c, _, _) = shapes[*i];
                    (c, 1, 1)
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Multiply-accumulate count for one forward pass, counting convolution
    /// work: `2*Cin*Cout*kH*kW*Hout*Wout` for a convolution, the mirrored
    /// formula over the small side for a transposed convolution, and the
    /// 4-tap separable cost for bicubic upsampling. Activations, skips and
    /// pooling are free by this model.
    pub fn flops(&self, input: (usize, usize, usize)) -> Result<u64> {
        let shapes = self.infer_shapes(input)?;
        let mut total = 0u64;
        for (idx, op) in self.nodes.iter().enumerate() {
            total += match op {
                NodeOp::Conv { w, .. } => {
                    let (cout, cin, kh, kw) = self.params[*w].value.shape4()?;
                    let (_, oh, ow) = shapes[idx];
                    2 * (cin * cout * kh * kw * oh * ow) as u64
                }
                NodeOp::TConv { input: i, w, .. } => {
                    let (cin, cout, kh, kw) = self.params[*w].value.shape4()?;
                    let (_, ih, iw) = shapes[*i];
                    2 * (cin * cout * kh * kw * ih * iw) as u64
                }
                NodeOp::UpsampleBicubic { input: i, .. } => {
                    let (c, ih, _) = shapes[*i];
                    let (_, oh, ow) = shapes[idx];
                    // Horizontal pass then vertical pass, 4 taps each.
                    2 * 4 * (c * (ih * ow + oh * ow)) as u64
                }
                _ => 0,
            };
        }
        Ok(total)
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_scaled(&grad, T::ONE),
        None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}

fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let (_, h, w) = parts[0].shape3()?;
    let mut c_total = 0usize;
    for p in parts {
        let (pc, ph, pw) = p.shape3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape(format!(
                "concat spatial mismatch: {:?} vs {:?}",
                parts[0].dims(),
                p.dims()
            )));
        }
        c_total += pc;
    }
    let mut out = Tensor::<T>::zeros(&[c_total, h, w]);
    let mut offset = 0usize;
    for p in parts {
        let (pc, _, _) = p.shape3()?;
        for c in 0..pc {
            for y in 0..h {
                out.row3_mut(offset + c, y).copy_from_slice(p.row3(c, y));
            }
        }
        offset += pc;
    }
    Ok(out)
}

/// Incremental builder. Nodes may only reference already-added nodes, so the
/// resulting graph is topologically ordered by construction.
pub struct NetBuilder<T> {
    nodes: Vec<NodeOp>,
    params: Vec<Param<T>>,
    taps: Vec<(String, NodeId)>,
    rng: Rng,
}

impl<T: Element> NetBuilder<T> {
    pub fn new(seed: u64) -> Self {
        let mut b = NetBuilder {
            nodes: Vec::new(),
            params: Vec::new(),
            taps: Vec::new(),
            rng: Rng::new(seed),
        };
        b.nodes.push(NodeOp::Input);
        b
    }

    /// The input node's id (always 0).
    pub fn input(&self) -> NodeId {
        0
    }

    fn check_ref(&self, id: NodeId) {
        assert!(id < self.nodes.len(), "node {id} referenced before creation");
    }

    /// He-uniform fan-in initialization: U(-b, b) with b = sqrt(6 / fan_in).
    fn he_tensor(&mut self, dims: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(dims, |_| T::from_f64(rng.uniform(-bound, bound)))
    }

    fn push_param(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> usize {
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
        });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        input: NodeId,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> NodeId {
        self.check_ref(input);
        let w = self.he_tensor(&[cout, cin, k, k], cin * k * k);
        let w = self.push_param(&format!("{name}.weight"), w, true);
        let b = self.push_param(&format!("{name}.bias"), Tensor::zeros(&[cout]), true);
        self.nodes.push(NodeOp::Conv {
            input,
            w,
            b,
            stride,
            padding,
        });
        self.nodes.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn tconv(
        &mut self,
        input: NodeId,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> NodeId {
        self.check_ref(input);
        let w = self.he_tensor(&[cin, cout, k, k], cin * k * k);
        let w = self.push_param(&format!("{name}.weight"), w, true);
        let b = self.push_param(&format!("{name}.bias"), Tensor::zeros(&[cout]), true);
        self.nodes.push(NodeOp::TConv {
            input,
            w,
            b,
            stride,
            padding,
        });
        self.nodes.len() - 1
    }

    pub fn prelu(&mut self, input: NodeId, name: &str, channels: usize) -> NodeId {
        self.check_ref(input);
        let slopes = Tensor::filled(&[channels], T::from_f64(0.25));
        let slope = self.push_param(&format!("{name}.slope"), slopes, true);
        self.nodes.push(NodeOp::Prelu { input, slope });
        self.nodes.len() - 1
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.add_scaled(a, b, 1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.add_scaled(a, b, -1.0)
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, scale_b: f64) -> NodeId {
        self.check_ref(a);
        self.check_ref(b);
        self.nodes.push(NodeOp::Add { a, b, scale_b });
        self.nodes.len() - 1
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat needs at least one part");
        for &p in parts {
            self.check_ref(p);
        }
        self.nodes.push(NodeOp::Concat {
            parts: parts.to_vec(),
        });
        self.nodes.len() - 1
    }

    pub fn upsample_bicubic(&mut self, input: NodeId, factor: usize) -> NodeId {
        self.check_ref(input);
        self.nodes.push(NodeOp::UpsampleBicubic { input, factor });
        self.nodes.len() - 1
    }

    pub fn avg_pool(&mut self, input: NodeId, k: usize) -> NodeId {
        self.check_ref(input);
        self.nodes.push(NodeOp::AvgPool { input, k });
        self.nodes.len() - 1
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> NodeId {
        self.check_ref(input);
        self.nodes.push(NodeOp::GlobalAvgPool { input });
        self.nodes.len() - 1
    }

    /// Record a named intermediate output (e.g. a pyramid level).
    pub fn tap(&mut self, name: &str, node: NodeId) {
        self.check_ref(node);
        self.taps.push((name.to_string(), node));
    }

    /// Finish the graph; `output` must be the last node added.
    pub fn build(self, output: NodeId) -> Network<T> {
        assert_eq!(
            output,
            self.nodes.len() - 1,
            "network output must be the last node"
        );
        Network {
            nodes: self.nodes,
            params: self.params,
            taps: self.taps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(seed: u64) -> Network<f64> {
        let mut b = NetBuilder::<f64>::new(seed);
        let x = b.input();
        let c1 = b.conv(x, "c1", 1, 2, 3, 1, 1);
        let p1 = b.prelu(c1, "p1", 2);
        let c2 = b.conv(p1, "c2", 2, 1, 3, 1, 1);
        let s = b.add(c2, x);
        b.build(s)
    }

    #[test]
    fn forward_shapes_match_inference() {
        let net = tiny_net(1);
        let input = Tensor::<f64>::from_fn(&[1, 6, 7], |i| (i as f64) * 0.01 - 0.2);
        let shapes = net.infer_shapes((1, 6, 7)).unwrap();
        let values = net.forward_all(&input).unwrap();
        for (s, v) in shapes.iter().zip(&values) {
            assert_eq!(v.dims(), &[s.0, s.1, s.2]);
        }
    }

    #[test]
    fn deterministic_init() {
        let a = tiny_net(9);
        let b = tiny_net(9);
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
        let c = tiny_net(10);
        assert_ne!(a.params()[0].value.data(), c.params()[0].value.data());
    }

    #[test]
    fn concat_roundtrip_through_backward() {
        let mut b = NetBuilder::<f64>::new(4);
        let x = b.input();
        let c1 = b.conv(x, "a", 1, 2, 3, 1, 1);
        let c2 = b.conv(x, "b", 1, 3, 3, 1, 1);
        let cat = b.concat(&[c1, c2]);
        let out = b.conv(cat, "head", 5, 1, 1, 1, 0);
        let net = b.build(out);
        let input = Tensor::<f64>::from_fn(&[1, 5, 5], |i| (i as f64).sin());
        let values = net.forward_all(&input).unwrap();
        let grad = Tensor::<f64>::filled(values.last().unwrap().dims(), 1.0);
        let grads = net.backward(&values, &grad).unwrap();
        assert_eq!(grads.input.dims(), input.dims());
        assert_eq!(grads.params.len(), net.params().len());
    }

    #[test]
    fn flops_formula_for_single_conv() {
        // 1->1 channels, 3x3 kernel, 8x8 output: 2*1*1*9*64 = 1152.
        let mut b = NetBuilder::<f32>::new(0);
        let x = b.input();
        let c = b.conv(x, "c", 1, 1, 3, 1, 1);
        let net = b.build(c);
        assert_eq!(net.flops((1, 8, 8)).unwrap(), 1152);
    }

    #[test]
    fn stack_inference_rejects_bad_channels() {
        let stack = vec![LayerSpec::conv(1, 4, 3, 1, 1), LayerSpec::conv(8, 1, 3, 1, 1)];
        assert!(infer_stack(&stack, (1, 16, 16)).is_err());
    }
}
