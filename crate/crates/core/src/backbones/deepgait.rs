//! Pseudo-3D convolutional backbone.
//!
//! `layer0` is a per-frame convolutional stem and `layer1` stacks 2-D basic
//! blocks. `layer2`–`layer4` stack P3D blocks, which insert a temporal
//! convolution between the two spatial ones. Features stay frame-major
//! (`[B*T, C, H, W]`) throughout, and time is never downsampled.

use autograd::{Float, Tensor};

use super::layers::{BatchNorm, Conv2d, ConvBn, TemporalConv};
use super::store::{Init, Session};
use super::DeepGaitConfig;

/// 1×1 strided projection used when a block changes shape.
#[derive(Clone, Debug)]
struct Projection {
    conv: Conv2d,
    bn: BatchNorm,
}

impl Projection {
    fn maybe<F: Float>(init: &mut Init<'_, F>, name: &str, cin: usize, cout: usize, stride: usize) -> Option<Self> {
        (cin != cout || stride != 1).then(|| Self {
            conv: Conv2d::new(init, &format!("{name}.shortcut.conv"), cin, cout, 1, stride, 0),
            bn: BatchNorm::new(init, &format!("{name}.shortcut.bn"), cout),
        })
    }

    fn forward<'g, F: Float>(this: &Option<Self>, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        match this {
            Some(p) => p.bn.forward(s, p.conv.forward(s, x), 1),
            None => x,
        }
    }
}

/// Two spatial convolutions with batch norm and an identity shortcut.
#[derive(Clone, Debug)]
struct BasicBlock2d {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<Projection>,
}

impl BasicBlock2d {
    fn new<F: Float>(init: &mut Init<'_, F>, name: &str, cin: usize, cout: usize, stride: usize, residual_scale: f64) -> Self {
        let conv2 = ConvBn {
            conv: Conv2d::new(init, &format!("{name}.conv2.conv"), cout, cout, 3, 1, 1),
            bn: BatchNorm::with_scale(init, &format!("{name}.conv2.bn"), cout, residual_scale),
        };
        Self {
            conv1: ConvBn::new(init, &format!("{name}.conv1"), cin, cout, 3, stride),
            conv2,
            shortcut: Projection::maybe(init, name, cin, cout, stride),
        }
    }

    fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        let out = self.conv1.forward(s, x).relu();
        let out = self.conv2.forward(s, out);
        out.add(Projection::forward(&self.shortcut, s, x)).relu()
    }
}

/// Spatial conv, residual temporal conv, spatial conv, shortcut.
#[derive(Clone, Debug)]
struct P3dBlock {
    conv1: ConvBn,
    temporal: TemporalConv,
    temporal_bn: BatchNorm,
    conv2: ConvBn,
    shortcut: Option<Projection>,
}

impl P3dBlock {
    #[allow(clippy::too_many_arguments)]
    fn new<F: Float>(
        init: &mut Init<'_, F>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        kernel: usize,
        residual_scale: f64,
    ) -> Self {
        let temporal = TemporalConv::new(init, &format!("{name}.temporal.conv"), cout, cout, kernel);
        let temporal_bn = BatchNorm::with_scale(init, &format!("{name}.temporal.bn"), cout, residual_scale);
        let conv2 = ConvBn {
            conv: Conv2d::new(init, &format!("{name}.conv2.conv"), cout, cout, 3, 1, 1),
            bn: BatchNorm::with_scale(init, &format!("{name}.conv2.bn"), cout, residual_scale),
        };
        Self {
            conv1: ConvBn::new(init, &format!("{name}.conv1"), cin, cout, 3, stride),
            temporal,
            temporal_bn,
            conv2,
            shortcut: Projection::maybe(init, name, cin, cout, stride),
        }
    }

    fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>, frames: usize) -> Tensor<'g, F> {
        let out = self.conv1.forward(s, x).relu();
        let motion = self.temporal_bn.forward(s, self.temporal.forward(s, out, frames), 1);
        let out = out.add(motion).relu();
        let out = self.conv2.forward(s, out);
        out.add(Projection::forward(&self.shortcut, s, x)).relu()
    }
}

#[derive(Clone, Debug)]
enum Block {
    Basic(BasicBlock2d),
    P3d(P3dBlock),
}

#[derive(Clone, Debug)]
pub struct DeepGaitV2 {
    stem: ConvBn,
    stages: Vec<Vec<Block>>,
}

pub const GROUPS: [&str; 5] = ["layer0", "layer1", "layer2", "layer3", "layer4"];

impl DeepGaitV2 {
    pub fn new<F: Float>(init: &mut Init<'_, F>, cfg: &DeepGaitConfig) -> Self {
        let residual_scale = if cfg.zero_init_residual { 0.0 } else { 1.0 };
        init.set_group(GROUPS[0]);
        let stem = ConvBn::new(init, "stem", 1, cfg.stem_channels, 3, 1);
        let mut cin = cfg.stem_channels;
        let mut stages = Vec::new();
        for (i, &group) in GROUPS[1..].iter().enumerate() {
            init.set_group(group);
            let cout = cfg.channels[i];
            let blocks = (0..cfg.blocks[i])
                .map(|b| {
                    let stride = if b == 0 { cfg.strides[i] } else { 1 };
                    let name = format!("block{b}");
                    let block = if i == 0 {
                        Block::Basic(BasicBlock2d::new(init, &name, cin, cout, stride, residual_scale))
                    } else {
                        Block::P3d(P3dBlock::new(init, &name, cin, cout, stride, cfg.temporal_kernel, residual_scale))
                    };
                    cin = cout;
                    block
                })
                .collect();
            stages.push(blocks);
        }
        Self { stem, stages }
    }

    /// `x: [B*T, 1, H, W]` to `[B*T, C, H', W']`.
    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>, frames: usize) -> Tensor<'g, F> {
        let mut x = s.tap(GROUPS[0], self.stem.forward(s, x).relu());
        for (stage, group) in self.stages.iter().zip(&GROUPS[1..]) {
            for block in stage {
                x = match block {
                    Block::Basic(b) => b.forward(s, x),
                    Block::P3d(b) => b.forward(s, x, frames),
                };
            }
            x = s.tap(group, x);
        }
        x
    }
}
