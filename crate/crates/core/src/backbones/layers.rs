//! Building blocks shared by both backbones and the head.

use autograd::{conv2d, temporal_conv, Float, Tensor};

use super::store::{Init, NormId, ParamId, Session};

pub const NORM_EPS: f64 = 1e-5;

/// Square 2-D convolution without bias (always followed by a norm).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<F: Float>(
        init: &mut Init<'_, F>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            weight: init.uniform(
                &format!("{name}.weight"),
                &[cout, cin, kernel, kernel],
                (6.0 / fan_in as f64).sqrt(),
            ),
            stride,
            pad,
        }
    }

    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        conv2d(x, s.param(self.weight), self.stride, self.pad)
    }
}

/// Convolution along time over frame-major `[B*T, C, H, W]` features.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    pub weight: ParamId,
}

impl TemporalConv {
    pub fn new<F: Float>(init: &mut Init<'_, F>, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        let fan_in = cin * kernel;
        Self {
            weight: init.uniform(
                &format!("{name}.weight"),
                &[cout, cin, kernel],
                (6.0 / fan_in as f64).sqrt(),
            ),
        }
    }

    pub fn forward<'g, F: Float>(
        &self,
        s: &Session<'g, '_, F>,
        x: Tensor<'g, F>,
        frames: usize,
    ) -> Tensor<'g, F> {
        temporal_conv(x, s.param(self.weight), frames)
    }
}

/// Batch normalization over a channel axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: NormId,
}

impl BatchNorm {
    pub fn new<F: Float>(init: &mut Init<'_, F>, name: &str, channels: usize) -> Self {
        Self::with_scale(init, name, channels, 1.0)
    }

    /// `scale` initializes gamma; zero makes a residual branch start as
    /// the identity.
    pub fn with_scale<F: Float>(init: &mut Init<'_, F>, name: &str, channels: usize, scale: f64) -> Self {
        Self {
            gamma: init.constant(&format!("{name}.gamma"), &[channels], scale),
            beta: init.constant(&format!("{name}.beta"), &[channels], 0.0),
            stats: init.norm(name, channels),
        }
    }

    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>, axis: usize) -> Tensor<'g, F> {
        s.batch_norm(x, self.gamma, self.beta, self.stats, axis, NORM_EPS)
    }
}

/// `y = x W + b` over the last axis, `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Float>(init: &mut Init<'_, F>, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        Self {
            weight: init.uniform(&format!("{name}.weight"), &[din, dout], bound),
            bias: bias.then(|| init.constant(&format!("{name}.bias"), &[dout], 0.0)),
        }
    }

    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        let y = x.matmul(s.param(self.weight));
        match self.bias {
            Some(b) => y.add(s.param(b)),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Float>(init: &mut Init<'_, F>, name: &str, dim: usize) -> Self {
        Self {
            gamma: init.constant(&format!("{name}.gamma"), &[dim], 1.0),
            beta: init.constant(&format!("{name}.beta"), &[dim], 0.0),
        }
    }

    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        x.layer_norm(s.param(self.gamma), s.param(self.beta), F::of(NORM_EPS))
    }
}

/// Convolution, batch norm and optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBn {
    pub fn new<F: Float>(
        init: &mut Init<'_, F>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(init, &format!("{name}.conv"), cin, cout, kernel, stride, kernel / 2),
            bn: BatchNorm::new(init, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        self.bn.forward(s, self.conv.forward(s, x), 1)
    }
}
