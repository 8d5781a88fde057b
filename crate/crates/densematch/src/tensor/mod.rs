//! Minimal f32 tensor type and the differentiable operations the feature
//! network is built from: 3×3 convolution, TanH, channel concatenation,
//! cosine similarity and the pairwise hinge loss.
//!
//! Storage is row-major `f32`. Reductions that feed a division (cosine dot
//! products and norms) accumulate in `f64`; everything else stays in `f32`.
//! [`graph::Graph`] records these same operations on a tape for reverse-mode
//! gradients during training. The free functions in this module are the
//! inference path and carry no autodiff state.

pub mod graph;

pub(crate) mod conv;

use crate::error::{Error, Result};

/// Norms below this threshold make a cosine similarity undefined; the
/// similarity is reported as 0.0 instead of dividing by a denormal.
pub const ZERO_NORM_EPS: f32 = 1e-8;

/// Border handling for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Mirror one pixel across the border without repeating the edge sample
    /// (`cba|abc|cba` style). Output keeps the input's spatial size. This is
    /// what the feature network uses at every layer.
    Reflect1,
    /// No padding; output shrinks by two in each spatial dimension. Used by
    /// the trainer's patch pyramid, where the receptive field never reaches
    /// the patch border.
    Valid,
}

/// Dense row-major f32 tensor with an optional gradient buffer of the same
/// shape. Shapes are arbitrary rank; the convolution ops expect 4-D
/// `[batch, channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching data buffer.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if shape.is_empty() || expect != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
            grad: None,
        }
    }

    /// Single-element tensor, used for scalar loss values.
    pub fn scalar(value: f32) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Gradient buffer, populated by [`graph::Graph::backward`] for
    /// parameter tensors read back out of a graph.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f32>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    /// Interprets the tensor as `[batch, channels, height, width]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected a 4-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Element accessor for 4-D tensors; intended for tests and small code
    /// paths, the hot loops index the raw buffer directly.
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        let (_, ch, h, w) = (
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
        );
        self.data[((b * ch + c) * h + y) * w + x]
    }
}

/// Weights of one convolution layer: a `[out, in, 3, 3]` kernel and an
/// `[out]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    kernel: Tensor,
    bias: Tensor,
}

impl ConvLayerParams {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<ConvLayerParams> {
        let (out_c, _in_c, kh, kw) = kernel.dims4()?;
        if kh != 3 || kw != 3 {
            return Err(Error::Shape(format!(
                "kernel spatial dims must be 3×3, got {kh}×{kw}"
            )));
        }
        if bias.shape() != [out_c] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {out_c} output channels",
                bias.shape()
            )));
        }
        Ok(ConvLayerParams { kernel, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn kernel_mut(&mut self) -> &mut Tensor {
        &mut self.kernel
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// Kernel weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// 3×3 convolution of a `[B, C, H, W]` input with stride 1.
///
/// `Reflect1` keeps the spatial size; `Valid` shrinks it by two per axis and
/// requires `H, W >= 3`.
pub fn conv2d(input: &Tensor, params: &ConvLayerParams, pad: PadMode) -> Result<Tensor> {
    conv::conv_forward(input, params.kernel(), params.bias(), pad)
}

/// Elementwise TanH. Output magnitudes never exceed 1.0; values saturate to
/// ±1.0 at f32 precision once |x| is past roughly 9.
pub fn tanh_activation(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.grad = None;
    for v in out.data.iter_mut() {
        *v = v.tanh();
    }
    out
}

/// Concatenates tensors along the channel axis. All inputs must agree in
/// batch and spatial dims; channel blocks appear in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::Shape("concat_channels needs at least one input".into()));
    }
    let (b0, _, h0, w0) = inputs[0].dims4()?;
    let mut total_c = 0;
    for t in inputs {
        let (b, c, h, w) = t.dims4()?;
        if b != b0 || h != h0 || w != w0 {
            return Err(Error::Shape(format!(
                "concat_channels inputs disagree: [{b0}, _, {h0}, {w0}] vs [{b}, _, {h}, {w}]"
            )));
        }
        total_c += c;
    }
    let plane = h0 * w0;
    let mut data = vec![0.0f32; b0 * total_c * plane];
    for b in 0..b0 {
        let mut c_off = 0;
        for t in inputs {
            let c = t.shape()[1];
            let src = &t.data[b * c * plane..(b + 1) * c * plane];
            let dst = &mut data[(b * total_c + c_off) * plane..][..c * plane];
            dst.copy_from_slice(src);
            c_off += c;
        }
    }
    Tensor::new(&[b0, total_c, h0, w0], data)
}

/// Cosine similarity between the channel vectors of two `[B, C, H, W]`
/// tensors, evaluated per spatial position. Returns `[B, 1, H, W]` with
/// values clamped to [-1, 1]; positions where either vector's norm falls
/// below [`ZERO_NORM_EPS`] report 0.0.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "cosine_similarity shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (bs, c, h, w) = a.dims4()?;
    let plane = h * w;
    let mut out = vec![0.0f32; bs * plane];
    for bi in 0..bs {
        for p in 0..plane {
            let base = bi * c * plane + p;
            let mut dot = 0.0f64;
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for ci in 0..c {
                let av = a.data[base + ci * plane] as f64;
                let bv = b.data[base + ci * plane] as f64;
                dot += av * bv;
                na += av * av;
                nb += bv * bv;
            }
            out[bi * plane + p] = cosine_from_sums(dot, na, nb);
        }
    }
    Tensor::new(&[bs, 1, h, w], out)
}

/// Final division step of a cosine similarity: `dot / (||a|| * ||b||)` with
/// the zero-norm guard and clamping shared by every caller in the crate.
pub(crate) fn cosine_from_sums(dot: f64, norm_sq_a: f64, norm_sq_b: f64) -> f32 {
    let na = norm_sq_a.sqrt();
    let nb = norm_sq_b.sqrt();
    if na < ZERO_NORM_EPS as f64 || nb < ZERO_NORM_EPS as f64 {
        return 0.0;
    }
    ((dot / (na * nb)) as f32).clamp(-1.0, 1.0)
}

/// Pairwise hinge loss `max(0, margin + s_neg - s_pos)`: zero exactly when
/// the positive score beats the negative one by at least the margin.
pub fn hinge_loss(s_pos: f32, s_neg: f32, margin: f32) -> f32 {
    (margin + s_neg - s_pos).max(0.0)
}

/// Center crop of a `[B, C, H, W]` tensor down to `oh×ow` (offsets floor to
/// the upper-left when the size difference is odd).
pub fn crop_center(input: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    if oh > h || ow > w || oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("cannot crop {h}×{w} down to {oh}×{ow}")));
    }
    let (oy, ox) = ((h - oh) / 2, (w - ow) / 2);
    let mut data = vec![0.0f32; b * c * oh * ow];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &input.data()[(bi * c + ci) * h * w..][..h * w];
            let dst = &mut data[(bi * c + ci) * oh * ow..][..oh * ow];
            for y in 0..oh {
                dst[y * ow..(y + 1) * ow].copy_from_slice(&plane[(y + oy) * w + ox..][..ow]);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_tensor(shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::new(shape, (0..len).map(|i| i as f32 * 0.1 - 2.0).collect()).unwrap()
    }

    #[test]
    fn tensor_new_rejects_mismatched_buffer() {
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_params_reject_non_3x3_kernels() {
        let kernel = Tensor::zeros(&[4, 2, 2, 2]);
        let bias = Tensor::zeros(&[4]);
        assert!(matches!(
            ConvLayerParams::new(kernel, bias),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_params_reject_bias_length_mismatch() {
        let kernel = Tensor::zeros(&[4, 2, 3, 3]);
        let bias = Tensor::zeros(&[3]);
        assert!(matches!(
            ConvLayerParams::new(kernel, bias),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv2d_identity_kernel_reproduces_input() {
        // Kernel with a single 1.0 at the spatial center copies the input.
        let mut kdata = vec![0.0f32; 9];
        kdata[4] = 1.0;
        let params = ConvLayerParams::new(
            Tensor::new(&[1, 1, 3, 3], kdata).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let input = seq_tensor(&[1, 1, 5, 7]);
        let out = conv2d(&input, &params, PadMode::Reflect1).unwrap();
        assert_eq!(out.shape(), input.shape());
        for (o, i) in out.data().iter().zip(input.data()) {
            assert!((o - i).abs() < 1e-6, "{o} vs {i}");
        }
    }

    #[test]
    fn conv2d_ones_kernel_on_constant_input_sums_to_nine() {
        // Reflect padding mirrors the constant, so every 3×3 window sums to 9.
        let params = ConvLayerParams::new(
            Tensor::filled(&[1, 1, 3, 3], 1.0),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let input = Tensor::filled(&[1, 1, 4, 4], 1.0);
        let out = conv2d(&input, &params, PadMode::Reflect1).unwrap();
        for v in out.data() {
            assert!((v - 9.0).abs() < 1e-6, "expected 9.0, got {v}");
        }
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let params = ConvLayerParams::new(
            Tensor::zeros(&[4, 3, 3, 3]),
            Tensor::zeros(&[4]),
        )
        .unwrap();
        let input = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(matches!(
            conv2d(&input, &params, PadMode::Reflect1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv2d_valid_needs_at_least_3x3() {
        let params = ConvLayerParams::new(
            Tensor::zeros(&[1, 1, 3, 3]),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let input = Tensor::zeros(&[1, 1, 2, 5]);
        assert!(matches!(
            conv2d(&input, &params, PadMode::Valid),
            Err(Error::Shape(_))
        ));
        let ok = conv2d(&Tensor::zeros(&[1, 1, 3, 3]), &params, PadMode::Valid).unwrap();
        assert_eq!(ok.shape(), &[1, 1, 1, 1]);
    }

    #[test]
    fn tanh_matches_reference_points() {
        let input = Tensor::new(&[1, 1, 1, 3], vec![0.0, 20.0, -20.0]).unwrap();
        let out = tanh_activation(&input);
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - 1.0).abs() < 1e-6);
        assert!((out.data()[2] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn concat_channels_stacks_blocks_in_order() {
        let a = Tensor::filled(&[1, 2, 4, 4], 1.0);
        let b = Tensor::filled(&[1, 2, 4, 4], 2.0);
        let out = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4, 4]);
        for c in 0..4 {
            let expect = if c < 2 { 1.0 } else { 2.0 };
            assert_eq!(out.at4(0, c, 2, 3), expect);
        }
    }

    #[test]
    fn concat_channels_rejects_spatial_mismatch_and_empty_input() {
        let a = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1, 2, 5, 4]);
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::Shape(_))));
        assert!(matches!(concat_channels(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn cosine_similarity_reference_cases() {
        let v = Tensor::new(&[1, 3, 1, 1], vec![0.3, -1.2, 0.5]).unwrap();
        let same = cosine_similarity(&v, &v).unwrap();
        assert!((same.data()[0] - 1.0).abs() < 1e-6);

        let neg = Tensor::new(&[1, 3, 1, 1], vec![-0.3, 1.2, -0.5]).unwrap();
        let opposite = cosine_similarity(&v, &neg).unwrap();
        assert!((opposite.data()[0] + 1.0).abs() < 1e-6);

        let zero = Tensor::zeros(&[1, 3, 1, 1]);
        let guarded = cosine_similarity(&v, &zero).unwrap();
        assert_eq!(guarded.data()[0], 0.0);
    }

    #[test]
    fn hinge_loss_reference_cases() {
        assert_eq!(hinge_loss(0.9, 0.5, 0.2), 0.0);
        assert!((hinge_loss(0.5, 0.9, 0.2) - 0.6).abs() < 1e-7);
        // Equal scores leave exactly the margin (zero scores keep the f32
        // arithmetic exact; other equal scores land within an ulp).
        assert_eq!(hinge_loss(0.0, 0.0, 0.2), 0.2);
        assert!((hinge_loss(0.4, 0.4, 0.2) - 0.2).abs() <= f32::EPSILON);
    }

    proptest! {
        #[test]
        fn tanh_is_monotone_and_bounded(a in -8.0f32..8.0, b in -8.0f32..8.0) {
            let t = tanh_activation(&Tensor::new(&[1, 1, 1, 2], vec![a, b]).unwrap());
            let (ta, tb) = (t.data()[0], t.data()[1]);
            prop_assert!(ta.abs() < 1.0 && tb.abs() < 1.0);
            if a < b {
                // Strictness can vanish in f32 near saturation or for very
                // close inputs; non-decreasing must hold everywhere.
                prop_assert!(ta <= tb);
                if b - a > 0.01 && a.abs() < 4.0 && b.abs() < 4.0 {
                    prop_assert!(ta < tb);
                }
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            vals in proptest::collection::vec(-3.0f32..3.0, 8),
            scale in 0.1f32..10.0,
        ) {
            let a = Tensor::new(&[1, 4, 1, 2], vals.clone()).unwrap();
            let b = seq_tensor(&[1, 4, 1, 2]);
            let scaled = Tensor::new(
                &[1, 4, 1, 2],
                vals.iter().map(|v| v * scale).collect(),
            ).unwrap();
            let plain = cosine_similarity(&a, &b).unwrap();
            let stretched = cosine_similarity(&scaled, &b).unwrap();
            for (p, s) in plain.data().iter().zip(stretched.data()) {
                prop_assert!((p - s).abs() < 1e-5, "{p} vs {s}");
            }
        }

        #[test]
        fn cosine_stays_in_unit_range(
            a in proptest::collection::vec(-10.0f32..10.0, 6),
            b in proptest::collection::vec(-10.0f32..10.0, 6),
        ) {
            let ta = Tensor::new(&[1, 6, 1, 1], a).unwrap();
            let tb = Tensor::new(&[1, 6, 1, 1], b).unwrap();
            let sim = cosine_similarity(&ta, &tb).unwrap().data()[0];
            prop_assert!((-1.0..=1.0).contains(&sim));
        }

        #[test]
        fn hinge_loss_is_nonnegative_and_zero_iff_margin_met(
            s_pos in -1.0f32..1.0,
            s_neg in -1.0f32..1.0,
        ) {
            let loss = hinge_loss(s_pos, s_neg, 0.2);
            prop_assert!(loss >= 0.0);
            prop_assert_eq!(loss == 0.0, s_pos >= s_neg + 0.2);
        }
    }
}
