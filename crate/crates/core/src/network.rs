//! Layer descriptions and floating-point networks.
//!
//! Tensors are stored height-major, then width, then channel (HWC). Dense
//! layers consume their input in that flattened order, which makes a dense
//! layer identical to a convolution whose kernel covers the whole input.
//! Conv and dense weights are laid out `[c_o][k_h][k_w][c_i]`, depthwise
//! weights `[c][k_h][k_w]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

fn shape_err<T>(msg: impl Into<String>) -> Result<T, ShapeError> {
    Err(ShapeError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    DepthwiseConv2d,
    Dense,
    MaxPool,
    AvgPool,
    ResidualAdd,
}

impl LayerKind {
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::Dense)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.w + x) * self.c + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Second operand of a residual add: the index of the layer whose
    /// output is added to this layer's input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_source: Option<usize>,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv2d(input: Shape, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            in_channels: input.c,
            out_channels,
            in_h: input.h,
            in_w: input.w,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            activation: Activation::Relu,
            residual_source: None,
        }
    }

    pub fn depthwise(input: Shape, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kind: LayerKind::DepthwiseConv2d, ..Self::conv2d(input, input.c, kernel, stride, padding) }
    }

    /// Fully connected layer over the flattened input.
    pub fn dense(input: Shape, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            kernel_h: input.h,
            kernel_w: input.w,
            ..Self::conv2d(input, out_channels, 1, 1, 0)
        }
    }

    pub fn max_pool(input: Shape, kernel: usize, stride: usize) -> Self {
        Self { kind: LayerKind::MaxPool, ..Self::conv2d(input, input.c, kernel, stride, 0) }
    }

    pub fn avg_pool(input: Shape, kernel: usize, stride: usize) -> Self {
        Self { kind: LayerKind::AvgPool, ..Self::conv2d(input, input.c, kernel, stride, 0) }
    }

    pub fn residual(input: Shape, source: usize) -> Self {
        Self {
            kind: LayerKind::ResidualAdd,
            residual_source: Some(source),
            activation: Activation::None,
            ..Self::conv2d(input, input.c, 1, 1, 0)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn in_shape(&self) -> Shape {
        Shape::new(self.in_h, self.in_w, self.in_channels)
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.out_h(), self.out_w(), self.out_channels)
    }

    pub fn is_mac(&self) -> bool {
        self.kind.has_weights()
    }

    /// Multiply-accumulates of the unpruned layer.
    pub fn macs(&self) -> u64 {
        let outputs = (self.out_h() * self.out_w()) as u64;
        let window = (self.kernel_h * self.kernel_w) as u64;
        match self.kind {
            LayerKind::Conv2d | LayerKind::Dense => {
                outputs * self.out_channels as u64 * self.in_channels as u64 * window
            }
            LayerKind::DepthwiseConv2d => outputs * self.in_channels as u64 * window,
            _ => 0,
        }
    }

    /// MACs contributed by a single output channel.
    pub fn macs_per_channel(&self) -> u64 {
        if self.out_channels == 0 {
            0
        } else {
            self.macs() / self.out_channels as u64
        }
    }

    pub fn weights_per_channel(&self) -> usize {
        let window = self.kernel_h * self.kernel_w;
        match self.kind {
            LayerKind::Conv2d | LayerKind::Dense => window * self.in_channels,
            LayerKind::DepthwiseConv2d => window,
            _ => 0,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weights_per_channel() * if self.is_mac() { self.out_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let s = self;
        if s.in_channels == 0 || s.out_channels == 0 || s.in_h == 0 || s.in_w == 0 {
            return shape_err(format!("{:?} with empty dimension", s.kind));
        }
        if s.kernel_h == 0 || s.kernel_w == 0 || s.stride == 0 {
            return shape_err("kernel and stride must be positive");
        }
        if s.in_h + 2 * s.padding < s.kernel_h || s.in_w + 2 * s.padding < s.kernel_w {
            return shape_err(format!("kernel {}x{} larger than padded input", s.kernel_h, s.kernel_w));
        }
        if (s.in_h + 2 * s.padding - s.kernel_h) % s.stride != 0 || (s.in_w + 2 * s.padding - s.kernel_w) % s.stride != 0
        {
            return shape_err("stride does not tile the padded input");
        }
        match s.kind {
            LayerKind::Conv2d => {}
            LayerKind::Dense => {
                if s.kernel_h != s.in_h || s.kernel_w != s.in_w || s.padding != 0 || s.stride != 1 {
                    return shape_err("dense layer kernel must cover the whole input");
                }
            }
            LayerKind::DepthwiseConv2d | LayerKind::MaxPool | LayerKind::AvgPool => {
                if s.out_channels != s.in_channels {
                    return shape_err(format!("{:?} must keep the channel count", s.kind));
                }
                if s.kind != LayerKind::DepthwiseConv2d && s.padding != 0 {
                    return shape_err("pooling layers take no padding");
                }
                if s.kind == LayerKind::AvgPool && !(s.kernel_h * s.kernel_w).is_power_of_two() {
                    return shape_err("average pooling window area must be a power of two");
                }
            }
            LayerKind::ResidualAdd => {
                if s.out_channels != s.in_channels || s.kernel_h != 1 || s.kernel_w != 1 || s.padding != 0 {
                    return shape_err("residual add is elementwise");
                }
                if s.residual_source.is_none() {
                    return shape_err("residual add needs a source layer");
                }
            }
        }
        Ok(())
    }
}

/// Validates the layer chain: every layer consumes the previous output and
/// residual sources are earlier layers of matching shape. The last layer
/// must carry weights so the network ends in raw class scores.
pub fn validate_chain(specs: &[LayerSpec]) -> Result<(), ShapeError> {
    if specs.is_empty() {
        return shape_err("network has no layers");
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate().map_err(|e| ShapeError(format!("layer {i}: {}", e.0)))?;
        if i > 0 && specs[i - 1].out_shape() != s.in_shape() {
            return shape_err(format!(
                "layer {i} expects {} but layer {} produces {}",
                s.in_shape(),
                i - 1,
                specs[i - 1].out_shape()
            ));
        }
        if let Some(src) = s.residual_source {
            if src + 1 >= i {
                return shape_err(format!("layer {i}: residual source {src} must precede the previous layer"));
            }
            if specs[src].out_shape() != s.in_shape() {
                return shape_err(format!("layer {i}: residual source shape mismatch"));
            }
        }
    }
    if !specs.last().is_some_and(|s| s.is_mac()) {
        return shape_err("last layer must be a weighted layer");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayer {
    pub spec: LayerSpec,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl FloatLayer {
    pub fn new(spec: LayerSpec) -> Self {
        let weights = vec![0.0; spec.weight_count()];
        let bias = vec![0.0; if spec.is_mac() { spec.out_channels } else { 0 }];
        Self { spec, weights, bias }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatNetwork {
    pub layers: Vec<FloatLayer>,
}

impl FloatNetwork {
    pub fn new(layers: Vec<FloatLayer>) -> Result<Self, ShapeError> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        validate_chain(&self.specs())?;
        for (i, l) in self.layers.iter().enumerate() {
            let want_b = if l.spec.is_mac() { l.spec.out_channels } else { 0 };
            if l.weights.len() != l.spec.weight_count() || l.bias.len() != want_b {
                return shape_err(format!("layer {i}: parameter count mismatch"));
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Shape {
        self.layers[0].spec.in_shape()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_channels)
    }

    /// Outputs of every layer, in order. The last entry holds the class scores.
    pub fn forward_all(&self, input: &[f32]) -> Vec<Vec<f32>> {
        let mut outs: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outs[i - 1] };
            let skip = layer.spec.residual_source.map(|s| outs[s].as_slice());
            let y = float_layer_forward(layer, x, skip, i + 1 == self.layers.len());
            outs.push(y);
        }
        outs
    }

    pub fn forward(&self, input: &[f32]) -> Vec<f32> {
        self.forward_all(input).pop().unwrap_or_default()
    }

    pub fn predict(&self, input: &[f32]) -> usize {
        argmax(&self.forward(input))
    }
}

/// Index of the largest score; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Pre-activation of a conv or dense layer.
pub(crate) fn conv_preact(spec: &LayerSpec, w: &[f32], b: &[f32], x: &[f32]) -> Vec<f32> {
    let is = spec.in_shape();
    let os = spec.out_shape();
    let (kh, kw, ci) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
    let mut y = vec![0.0f32; os.len()];
    for oy in 0..os.h {
        for ox in 0..os.w {
            for co in 0..os.c {
                let mut acc = b[co];
                for ky in 0..kh {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= is.h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix < 0 || ix >= is.w as isize {
                            continue;
                        }
                        let xi = is.index(iy as usize, ix as usize, 0);
                        let wi = ((co * kh + ky) * kw + kx) * ci;
                        acc += w[wi..wi + ci].iter().zip(&x[xi..xi + ci]).map(|(a, b)| a * b).sum::<f32>();
                    }
                }
                y[os.index(oy, ox, co)] = acc;
            }
        }
    }
    y
}

fn float_layer_forward(layer: &FloatLayer, x: &[f32], skip: Option<&[f32]>, last: bool) -> Vec<f32> {
    let spec = &layer.spec;
    let is = spec.in_shape();
    let os = spec.out_shape();
    let mut y = match spec.kind {
        LayerKind::Conv2d | LayerKind::Dense => conv_preact(spec, &layer.weights, &layer.bias, x),
        LayerKind::DepthwiseConv2d => {
            let mut y = vec![0.0f32; os.len()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    for c in 0..os.c {
                        let mut acc = layer.bias[c];
                        for ky in 0..spec.kernel_h {
                            for kx in 0..spec.kernel_w {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= is.h as isize || ix >= is.w as isize {
                                    continue;
                                }
                                let w = layer.weights[(c * spec.kernel_h + ky) * spec.kernel_w + kx];
                                acc += w * x[is.index(iy as usize, ix as usize, c)];
                            }
                        }
                        y[os.index(oy, ox, c)] = acc;
                    }
                }
            }
            y
        }
        LayerKind::MaxPool | LayerKind::AvgPool => {
            let mut y = vec![0.0f32; os.len()];
            let area = (spec.kernel_h * spec.kernel_w) as f32;
            for oy in 0..os.h {
                for ox in 0..os.w {
                    for c in 0..os.c {
                        let vals = (0..spec.kernel_h).flat_map(|ky| {
                            (0..spec.kernel_w)
                                .map(move |kx| x[is.index(oy * spec.stride + ky, ox * spec.stride + kx, c)])
                        });
                        y[os.index(oy, ox, c)] = if spec.kind == LayerKind::MaxPool {
                            vals.fold(f32::NEG_INFINITY, f32::max)
                        } else {
                            vals.sum::<f32>() / area
                        };
                    }
                }
            }
            y
        }
        LayerKind::ResidualAdd => {
            let skip = skip.expect("validated residual source");
            x.iter().zip(skip).map(|(a, b)| a + b).collect()
        }
    };
    if spec.activation == Activation::Relu && !last && spec.kind != LayerKind::MaxPool && spec.kind != LayerKind::AvgPool {
        for v in &mut y {
            *v = v.max(0.0);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_and_macs() {
        let s = LayerSpec::conv2d(Shape::new(8, 8, 3), 16, 3, 1, 1);
        assert_eq!(s.out_shape(), Shape::new(8, 8, 16));
        assert_eq!(s.macs(), 16 * 64 * 3 * 9);
        let d = LayerSpec::depthwise(Shape::new(6, 6, 4), 3, 1, 0);
        assert_eq!(d.macs(), 4 * 16 * 9);
        let f = LayerSpec::dense(Shape::new(2, 2, 4), 10);
        assert_eq!(f.macs(), 160);
        assert_eq!(f.out_shape(), Shape::new(1, 1, 10));
    }

    #[test]
    fn invalid_shapes() {
        let mut s = LayerSpec::conv2d(Shape::new(5, 5, 1), 1, 2, 2, 0);
        assert!(s.validate().is_err());
        s.stride = 1;
        assert!(s.validate().is_ok());
        assert!(LayerSpec::avg_pool(Shape::new(6, 6, 1), 3, 3).validate().is_err());
        let chain = [LayerSpec::dense(Shape::new(1, 1, 4), 3), LayerSpec::dense(Shape::new(1, 1, 4), 2)];
        assert!(validate_chain(&chain).is_err());
    }

    #[test]
    fn tiny_forward() {
        let mut l = FloatLayer::new(LayerSpec::dense(Shape::new(1, 1, 2), 1));
        l.weights = vec![2.0, -1.0];
        l.bias = vec![0.5];
        let net = FloatNetwork::new(vec![l]).unwrap();
        assert_eq!(net.forward(&[3.0, 1.0]), vec![5.5]);
    }

    #[test]
    fn pooling_forward() {
        let mut pool = FloatLayer::new(LayerSpec::max_pool(Shape::new(2, 2, 1), 2, 2));
        pool.spec.activation = Activation::None;
        let mut head = FloatLayer::new(LayerSpec::dense(Shape::new(1, 1, 1), 1));
        head.weights = vec![1.0];
        let net = FloatNetwork::new(vec![pool, head]).unwrap();
        assert_eq!(net.forward(&[1.0, 4.0, -2.0, 3.0]), vec![4.0]);
    }
}
