//! Tape-based reverse-mode autodiff over the operations the trainer needs.
//!
//! A [`Graph`] is an append-only arena of nodes; every operation records its
//! inputs by [`NodeId`] and stores its forward value. [`Graph::backward`]
//! walks the tape in reverse and deposits gradients on every node that the
//! loss actually depends on, so parameter gradients fall out of the same
//! arena the forward pass was recorded in. The op set is deliberately small:
//! this is the training path for a patch-similarity network, not a general
//! autodiff framework.

use crate::error::{Error, Result};
use crate::tensor::{conv, cosine_from_sums, PadMode, Tensor, ZERO_NORM_EPS};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        pad: PadMode,
    },
    Tanh {
        input: NodeId,
    },
    ConcatChannels {
        inputs: Vec<NodeId>,
    },
    CropCenter {
        input: NodeId,
    },
    CosineCenter {
        a: NodeId,
        b: NodeId,
    },
    Hinge {
        pos: NodeId,
        neg: NodeId,
        margin: f32,
    },
    MeanAll {
        input: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward computation plus, after [`Graph::backward`], gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::State(format!("node id {} is not part of this graph", id.0)))
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        Ok(&self.node(id)?.value)
    }

    /// Gradient of the loss with respect to a node's value. Zero-filled for
    /// leaves the loss does not depend on.
    pub fn grad(&self, id: NodeId) -> Result<&[f32]> {
        if !self.backward_done {
            return Err(Error::State(
                "gradients requested before backward ran".into(),
            ));
        }
        self.node(id)?
            .value
            .grad()
            .ok_or_else(|| Error::State("node has no gradient buffer".into()))
    }

    /// Records a 3×3 convolution; `kernel` is `[O, C, 3, 3]`, `bias` `[O]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        pad: PadMode,
    ) -> Result<NodeId> {
        let out = conv::conv_forward(
            &self.node(input)?.value,
            &self.node(kernel)?.value,
            &self.node(bias)?.value,
            pad,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad,
            },
            out,
        ))
    }

    pub fn tanh(&mut self, input: NodeId) -> Result<NodeId> {
        let out = super::tanh_activation(&self.node(input)?.value);
        Ok(self.push(Op::Tanh { input }, out))
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = inputs
            .iter()
            .map(|id| self.node(*id).map(|n| &n.value))
            .collect::<Result<_>>()?;
        let out = super::concat_channels(&tensors)?;
        Ok(self.push(
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
            out,
        ))
    }

    /// Center crop of a `[B, C, H, W]` node down to `oh×ow`.
    pub fn crop_center(&mut self, input: NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        let out = super::crop_center(&self.node(input)?.value, oh, ow)?;
        Ok(self.push(Op::CropCenter { input }, out))
    }

    /// Cosine similarity of the channel vectors at the spatial center of two
    /// `[B, C, H, W]` nodes. Output shape is `[B]`. Entries where either
    /// vector's norm is below [`ZERO_NORM_EPS`] are 0 with zero gradient.
    pub fn cosine_center(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ta = &self.node(a)?.value;
        let tb = &self.node(b)?.value;
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "cosine_center shapes differ: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (bs, c, h, w) = ta.dims4()?;
        let center = (h / 2) * w + (w / 2);
        let plane = h * w;
        let mut sims = vec![0.0f32; bs];
        for bi in 0..bs {
            let base = bi * c * plane + center;
            let mut dot = 0.0f64;
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for ci in 0..c {
                let av = ta.data()[base + ci * plane] as f64;
                let bv = tb.data()[base + ci * plane] as f64;
                dot += av * bv;
                na += av * av;
                nb += bv * bv;
            }
            sims[bi] = cosine_from_sums(dot, na, nb);
        }
        let out = Tensor::new(&[bs], sims)?;
        Ok(self.push(Op::CosineCenter { a, b }, out))
    }

    /// Elementwise hinge `max(0, margin + neg - pos)` over two same-shape
    /// nodes (typically `[B]` similarity vectors).
    pub fn hinge(&mut self, pos: NodeId, neg: NodeId, margin: f32) -> Result<NodeId> {
        let tp = &self.node(pos)?.value;
        let tn = &self.node(neg)?.value;
        if tp.shape() != tn.shape() {
            return Err(Error::Shape(format!(
                "hinge shapes differ: {:?} vs {:?}",
                tp.shape(),
                tn.shape()
            )));
        }
        let data: Vec<f32> = tp
            .data()
            .iter()
            .zip(tn.data())
            .map(|(p, n)| super::hinge_loss(*p, *n, margin))
            .collect();
        let out = Tensor::new(tp.shape(), data)?;
        Ok(self.push(Op::Hinge { pos, neg, margin }, out))
    }

    /// Mean over all elements, producing the scalar training loss.
    pub fn mean_all(&mut self, input: NodeId) -> Result<NodeId> {
        let t = &self.node(input)?.value;
        if t.is_empty() {
            return Err(Error::Shape("mean over an empty tensor".into()));
        }
        let mut sum = 0.0f64;
        for v in t.data() {
            sum += *v as f64;
        }
        let out = Tensor::scalar((sum / t.len() as f64) as f32);
        Ok(self.push(Op::MeanAll { input }, out))
    }

    /// Reverse pass from a scalar loss node. Populates gradient buffers on
    /// every node the loss depends on (and zero buffers on untouched leaves,
    /// so unused parameters read back as all-zero gradients).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; record a new forward pass first".into(),
            ));
        }
        let loss_node = self.node(loss)?;
        if matches!(loss_node.op, Op::Leaf) {
            return Err(Error::State(
                "backward called on a leaf: no forward pass was recorded".into(),
            ));
        }
        if loss_node.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        // Restrict propagation to ancestors of the loss.
        let mut reachable = vec![false; self.nodes.len()];
        let mut stack = vec![loss.0];
        while let Some(i) = stack.pop() {
            if reachable[i] {
                continue;
            }
            reachable[i] = true;
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    ..
                } => stack.extend([input.0, kernel.0, bias.0]),
                Op::Tanh { input } | Op::CropCenter { input } | Op::MeanAll { input } => {
                    stack.push(input.0)
                }
                Op::ConcatChannels { inputs } => stack.extend(inputs.iter().map(|n| n.0)),
                Op::CosineCenter { a, b } => stack.extend([a.0, b.0]),
                Op::Hinge { pos, neg, .. } => stack.extend([pos.0, neg.0]),
            }
        }

        let mut grads: Vec<Option<Vec<f32>>> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| reachable[i].then(|| vec![0.0f32; n.value.len()]))
            .collect();
        grads[loss.0].as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !reachable[i] {
                continue;
            }
            let grad_out = grads[i].take().unwrap();
            match self.nodes[i].op.clone() {
                Op::Leaf => {
                    grads[i] = Some(grad_out);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    pad,
                } => {
                    let grad_tensor =
                        Tensor::new(self.nodes[i].value.shape(), grad_out.clone())?;
                    let (gin, gker, gbias) = conv::conv_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        &grad_tensor,
                        pad,
                    )?;
                    accumulate(&mut grads, input.0, gin.data());
                    accumulate(&mut grads, kernel.0, gker.data());
                    accumulate(&mut grads, bias.0, gbias.data());
                    grads[i] = Some(grad_out);
                }
                Op::Tanh { input } => {
                    let y = self.nodes[i].value.data();
                    let gin = grads[input.0].as_mut().unwrap();
                    for j in 0..y.len() {
                        gin[j] += grad_out[j] * (1.0 - y[j] * y[j]);
                    }
                    grads[i] = Some(grad_out);
                }
                Op::ConcatChannels { inputs } => {
                    let (b0, _, h, w) = self.nodes[i].value.dims4()?;
                    let plane = h * w;
                    let total_c = self.nodes[i].value.shape()[1];
                    for bi in 0..b0 {
                        let mut c_off = 0;
                        for src in &inputs {
                            let c = self.nodes[src.0].value.shape()[1];
                            let gin = grads[src.0].as_mut().unwrap();
                            let from = &grad_out[(bi * total_c + c_off) * plane..][..c * plane];
                            let to = &mut gin[bi * c * plane..][..c * plane];
                            for (t, f) in to.iter_mut().zip(from) {
                                *t += f;
                            }
                            c_off += c;
                        }
                    }
                    grads[i] = Some(grad_out);
                }
                Op::CropCenter { input } => {
                    let (b, c, h, w) = self.nodes[input.0].value.dims4()?;
                    let (_, _, oh, ow) = self.nodes[i].value.dims4()?;
                    let (oy, ox) = ((h - oh) / 2, (w - ow) / 2);
                    let gin = grads[input.0].as_mut().unwrap();
                    for bi in 0..b {
                        for ci in 0..c {
                            let src = &grad_out[(bi * c + ci) * oh * ow..][..oh * ow];
                            let dst = &mut gin[(bi * c + ci) * h * w..][..h * w];
                            for y in 0..oh {
                                let row = &mut dst[(y + oy) * w + ox..][..ow];
                                for (d, s) in row.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                    grads[i] = Some(grad_out);
                }
                Op::CosineCenter { a, b } => {
                    let ta = &self.nodes[a.0].value;
                    let tb = &self.nodes[b.0].value;
                    let (bs, c, h, w) = ta.dims4()?;
                    let center = (h / 2) * w + (w / 2);
                    let plane = h * w;
                    for bi in 0..bs {
                        let g = grad_out[bi] as f64;
                        if g == 0.0 {
                            continue;
                        }
                        let base = bi * c * plane + center;
                        let mut dot = 0.0f64;
                        let mut na2 = 0.0f64;
                        let mut nb2 = 0.0f64;
                        for ci in 0..c {
                            let av = ta.data()[base + ci * plane] as f64;
                            let bv = tb.data()[base + ci * plane] as f64;
                            dot += av * bv;
                            na2 += av * av;
                            nb2 += bv * bv;
                        }
                        let na = na2.sqrt();
                        let nb = nb2.sqrt();
                        if na < ZERO_NORM_EPS as f64 || nb < ZERO_NORM_EPS as f64 {
                            continue;
                        }
                        let sim = dot / (na * nb);
                        let ga = grads[a.0].as_mut().unwrap();
                        for ci in 0..c {
                            let av = ta.data()[base + ci * plane] as f64;
                            let bv = tb.data()[base + ci * plane] as f64;
                            ga[base + ci * plane] +=
                                (g * (bv / (na * nb) - sim * av / na2)) as f32;
                        }
                        let gb = grads[b.0].as_mut().unwrap();
                        for ci in 0..c {
                            let av = ta.data()[base + ci * plane] as f64;
                            let bv = tb.data()[base + ci * plane] as f64;
                            gb[base + ci * plane] +=
                                (g * (av / (na * nb) - sim * bv / nb2)) as f32;
                        }
                    }
                    grads[i] = Some(grad_out);
                }
                Op::Hinge { pos, neg, margin } => {
                    let tp = self.nodes[pos.0].value.data();
                    let tn = self.nodes[neg.0].value.data();
                    for j in 0..tp.len() {
                        if margin + tn[j] - tp[j] > 0.0 {
                            grads[pos.0].as_mut().unwrap()[j] -= grad_out[j];
                            grads[neg.0].as_mut().unwrap()[j] += grad_out[j];
                        }
                    }
                    grads[i] = Some(grad_out);
                }
                Op::MeanAll { input } => {
                    let n = self.nodes[input.0].value.len() as f32;
                    let g = grad_out[0] / n;
                    let gin = grads[input.0].as_mut().unwrap();
                    for v in gin.iter_mut() {
                        *v += g;
                    }
                    grads[i] = Some(grad_out);
                }
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            let grad = match grads[i].take() {
                Some(g) => g,
                // Leaves outside the loss's ancestry still read back as
                // zero gradients.
                None => vec![0.0f32; node.value.len()],
            };
            node.value.set_grad(grad);
        }
        self.backward_done = true;
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], idx: usize, delta: &[f32]) {
    let buf = grads[idx].as_mut().expect("gradient buffer for reachable node");
    debug_assert_eq!(buf.len(), delta.len());
    for (b, d) in buf.iter_mut().zip(delta) {
        *b += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect()).unwrap()
    }

    /// Two-layer patch chain ending in hinge loss; returns the loss value.
    fn patch_loss(
        anchor: &Tensor,
        positive: &Tensor,
        negative: &Tensor,
        k1: &Tensor,
        b1: &Tensor,
        k2: &Tensor,
        b2: &Tensor,
    ) -> f32 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = [anchor, positive, negative]
            .iter()
            .map(|t| g.leaf((*t).clone()))
            .collect();
        let k1 = g.leaf(k1.clone());
        let b1 = g.leaf(b1.clone());
        let k2 = g.leaf(k2.clone());
        let b2 = g.leaf(b2.clone());
        let feats: Vec<NodeId> = ids
            .iter()
            .map(|id| {
                let c1 = g.conv2d(*id, k1, b1, PadMode::Reflect1).unwrap();
                let t1 = g.tanh(c1).unwrap();
                let c2 = g.conv2d(t1, k2, b2, PadMode::Reflect1).unwrap();
                g.tanh(c2).unwrap()
            })
            .collect();
        let s_pos = g.cosine_center(feats[0], feats[1]).unwrap();
        let s_neg = g.cosine_center(feats[0], feats[2]).unwrap();
        let h = g.hinge(s_pos, s_neg, 0.2).unwrap();
        let loss = g.mean_all(h).unwrap();
        g.value(loss).unwrap().data()[0]
    }

    #[test]
    fn gradients_match_finite_differences_through_full_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let anchor = random_tensor(&mut rng, &[2, 1, 5, 5]);
        let positive = random_tensor(&mut rng, &[2, 1, 5, 5]);
        let negative = random_tensor(&mut rng, &[2, 1, 5, 5]);
        let k1 = random_tensor(&mut rng, &[4, 1, 3, 3]);
        let b1 = random_tensor(&mut rng, &[4]);
        let k2 = random_tensor(&mut rng, &[4, 4, 3, 3]);
        let b2 = random_tensor(&mut rng, &[4]);

        let mut g = Graph::new();
        let a_id = g.leaf(anchor.clone());
        let p_id = g.leaf(positive.clone());
        let n_id = g.leaf(negative.clone());
        let k1_id = g.leaf(k1.clone());
        let b1_id = g.leaf(b1.clone());
        let k2_id = g.leaf(k2.clone());
        let b2_id = g.leaf(b2.clone());
        let feats: Vec<NodeId> = [a_id, p_id, n_id]
            .iter()
            .map(|id| {
                let c1 = g.conv2d(*id, k1_id, b1_id, PadMode::Reflect1).unwrap();
                let t1 = g.tanh(c1).unwrap();
                let c2 = g.conv2d(t1, k2_id, b2_id, PadMode::Reflect1).unwrap();
                g.tanh(c2).unwrap()
            })
            .collect();
        let s_pos = g.cosine_center(feats[0], feats[1]).unwrap();
        let s_neg = g.cosine_center(feats[0], feats[2]).unwrap();
        let h = g.hinge(s_pos, s_neg, 0.2).unwrap();
        let loss = g.mean_all(h).unwrap();
        let base = g.value(loss).unwrap().data()[0];
        assert!(base > 0.0, "hinge must be active for a meaningful check");
        g.backward(loss).unwrap();

        let step = 1e-3f32;
        let check_param = |which: usize, idx: usize, analytic: f32| {
            let mut params = [
                anchor.clone(),
                positive.clone(),
                negative.clone(),
                k1.clone(),
                b1.clone(),
                k2.clone(),
                b2.clone(),
            ];
            params[which].data_mut()[idx] += step;
            let plus = patch_loss(
                &params[0], &params[1], &params[2], &params[3], &params[4], &params[5],
                &params[6],
            );
            params[which].data_mut()[idx] -= 2.0 * step;
            let minus = patch_loss(
                &params[0], &params[1], &params[2], &params[3], &params[4], &params[5],
                &params[6],
            );
            let numeric = (plus as f64 - minus as f64) / (2.0 * step as f64);
            let denom = numeric.abs().max(analytic.abs() as f64).max(1e-4);
            let rel = (numeric - analytic as f64).abs() / denom;
            assert!(
                rel < 1e-2,
                "param {which} idx {idx}: analytic {analytic} vs numeric {numeric}"
            );
        };

        let ids = [a_id, p_id, n_id, k1_id, b1_id, k2_id, b2_id];
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        for (which, id) in ids.iter().enumerate() {
            let grad = g.grad(*id).unwrap().to_vec();
            for _ in 0..4 {
                let idx = rng2.random_range(0..grad.len());
                check_param(which, idx, grad[idx]);
            }
        }
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.leaf(random_tensor(&mut rng, &[1, 1, 3, 3]));
        let k = g.leaf(random_tensor(&mut rng, &[2, 1, 3, 3]));
        let b = g.leaf(random_tensor(&mut rng, &[2]));
        let unused = g.leaf(random_tensor(&mut rng, &[2, 1, 3, 3]));
        let c = g.conv2d(x, k, b, PadMode::Reflect1).unwrap();
        let t = g.tanh(c).unwrap();
        let loss = g.mean_all(t).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(unused).unwrap().iter().all(|v| *v == 0.0));
        assert!(g.grad(k).unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn inactive_hinge_blocks_all_gradients() {
        // s_pos = 1 (identical patches), s_neg clearly below the margin gap:
        // the hinge is flat, so every upstream gradient must be zero.
        let patch = Tensor::new(&[1, 2, 1, 1], vec![1.0, 0.5]).unwrap();
        let opposite = Tensor::new(&[1, 2, 1, 1], vec![-1.0, -0.5]).unwrap();
        let mut g = Graph::new();
        let a = g.leaf(patch.clone());
        let p = g.leaf(patch);
        let n = g.leaf(opposite);
        let s_pos = g.cosine_center(a, p).unwrap();
        let s_neg = g.cosine_center(a, n).unwrap();
        let h = g.hinge(s_pos, s_neg, 0.2).unwrap();
        let loss = g.mean_all(h).unwrap();
        assert_eq!(g.value(loss).unwrap().data()[0], 0.0);
        g.backward(loss).unwrap();
        assert!(g.grad(a).unwrap().iter().all(|v| *v == 0.0));
        assert!(g.grad(n).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn crop_center_forward_and_backward_roundtrip() {
        let t = Tensor::new(&[1, 1, 5, 5], (0..25).map(|v| v as f32).collect()).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(t);
        let c = g.crop_center(x, 3, 3).unwrap();
        assert_eq!(
            g.value(c).unwrap().data(),
            &[6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]
        );
        let loss = g.mean_all(c).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        // Gradient mass lands only inside the cropped window.
        let inside: f32 = [6, 7, 8, 11, 12, 13, 16, 17, 18]
            .iter()
            .map(|&i| grad[i as usize])
            .sum();
        assert!((inside - 1.0).abs() < 1e-6);
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[24], 0.0);
    }

    #[test]
    fn backward_state_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0));
        // A leaf is not a recorded forward pass.
        assert!(matches!(g.backward(x), Err(Error::State(_))));

        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let t = g.tanh(x).unwrap();
        assert!(matches!(g.grad(t), Err(Error::State(_))));
        let loss = g.mean_all(t).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::State(_))));

        // Ids from another graph are rejected.
        let mut other = Graph::new();
        let y = other.leaf(Tensor::scalar(3.0));
        let _ = y;
        let stale = NodeId(17);
        assert!(matches!(g.value(stale), Err(Error::State(_))));
    }

    #[test]
    fn batched_hinge_means_per_sample_losses() {
        // Two batch entries with hand-computable cosines: identical vectors
        // (sim 1) and orthogonal vectors (sim 0).
        let a = Tensor::new(&[2, 2, 1, 1], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let n = Tensor::new(&[2, 2, 1, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let (a, b, n) = (g.leaf(a), g.leaf(b), g.leaf(n));
        let s_pos = g.cosine_center(a, b).unwrap();
        let s_neg = g.cosine_center(a, n).unwrap();
        assert_eq!(g.value(s_pos).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.value(s_neg).unwrap().data(), &[0.0, 1.0]);
        let h = g.hinge(s_pos, s_neg, 0.2).unwrap();
        // Entry 0: max(0, 0.2 + 0 - 1) = 0; entry 1: max(0, 0.2 + 1 - 0) = 1.2.
        assert_eq!(g.value(h).unwrap().data(), &[0.0, 1.2]);
        let loss = g.mean_all(h).unwrap();
        assert!((g.value(loss).unwrap().data()[0] - 0.6).abs() < 1e-7);
    }
}
