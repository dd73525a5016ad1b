//! Hybrid convolution and shifted-window attention backbone.
//!
//! A per-frame convolutional stem feeds a strided patch embedding, then two
//! attention stages joined by patch merging. Each stage alternates plain
//! and half-window-shifted attention blocks with pre-norm residuals.
//! Attention stays within a frame; temporal mixing is left to the head.

use std::rc::Rc;

use autograd::{Float, NdArray, Tensor};

use super::layers::{Conv2d, ConvBn, LayerNorm, Linear};
use super::store::{Init, ParamId, Session};
use super::SwinConfig;

/// Additive bias for cross-region pairs in shifted windows.
const MASKED: f64 = -100.0;

/// Relative-position bias index for every (query, key) pair in a window.
fn relative_index(window: usize) -> Vec<usize> {
    let side = 2 * window - 1;
    let l = window * window;
    let mut idx = Vec::with_capacity(l * l);
    for q in 0..l {
        for k in 0..l {
            let dy = (q / window) as isize - (k / window) as isize + window as isize - 1;
            let dx = (q % window) as isize - (k % window) as isize + window as isize - 1;
            idx.push(dy as usize * side + dx as usize);
        }
    }
    idx
}

/// `[nW, L, L]` mask separating regions that the cyclic shift made
/// adjacent. Row-major window order, matching [`partition`].
pub fn shift_mask(height: usize, width: usize, window: usize, shift: usize) -> Vec<f64> {
    let region = |i: usize, n: usize| {
        if i < n - window {
            0
        } else if i < n - shift {
            1
        } else {
            2
        }
    };
    let (nh, nw) = (height / window, width / window);
    let l = window * window;
    let mut mask = vec![0.0; nh * nw * l * l];
    for wy in 0..nh {
        for wx in 0..nw {
            let w = wy * nw + wx;
            let label = |t: usize| {
                let (y, x) = (wy * window + t / window, wx * window + t % window);
                region(y, height) * 3 + region(x, width)
            };
            for q in 0..l {
                for k in 0..l {
                    if label(q) != label(k) {
                        mask[(w * l + q) * l + k] = MASKED;
                    }
                }
            }
        }
    }
    mask
}

/// `[N, H, W, C]` to `[N * nW, ws * ws, C]`.
fn partition<'g, F: Float>(x: Tensor<'g, F>, window: usize) -> Tensor<'g, F> {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    x.reshape(&[n, h / window, window, w / window, window, c])
        .permute(&[0, 1, 3, 2, 4, 5])
        .reshape(&[n * (h / window) * (w / window), window * window, c])
}

/// Inverse of [`partition`].
fn merge_windows<'g, F: Float>(x: Tensor<'g, F>, window: usize, n: usize, h: usize, w: usize) -> Tensor<'g, F> {
    let c = x.shape()[2];
    x.reshape(&[n, h / window, w / window, window, window, c])
        .permute(&[0, 1, 3, 2, 4, 5])
        .reshape(&[n, h, w, c])
}

#[derive(Clone, Debug)]
struct WindowAttention {
    qkv: Linear,
    proj: Linear,
    bias_table: ParamId,
    heads: usize,
    window: usize,
    index: Rc<[usize]>,
}

impl WindowAttention {
    fn new<F: Float>(init: &mut Init<'_, F>, name: &str, dim: usize, heads: usize, window: usize) -> Self {
        let side = 2 * window - 1;
        Self {
            qkv: Linear::new(init, &format!("{name}.qkv"), dim, 3 * dim, true),
            proj: Linear::new(init, &format!("{name}.proj"), dim, dim, true),
            bias_table: init.uniform(&format!("{name}.relative_bias"), &[side * side, heads], 0.02),
            heads,
            window,
            index: relative_index(window).into(),
        }
    }

    /// `x: [N * nW, L, C]`; `mask: [nW, L, L]` when shifted.
    fn forward<'g, F: Float>(
        &self,
        s: &Session<'g, '_, F>,
        x: Tensor<'g, F>,
        images: usize,
        mask: Option<Tensor<'g, F>>,
    ) -> Tensor<'g, F> {
        let shape = x.shape();
        let (bw, l, c) = (shape[0], shape[1], shape[2]);
        let (h, d) = (self.heads, c / self.heads);
        let qkv = self
            .qkv
            .forward(s, x)
            .reshape(&[bw, l, 3, h, d])
            .permute(&[2, 0, 3, 1, 4]);
        let part = |i: usize| qkv.narrow(0, i, 1).reshape(&[bw, h, l, d]);
        let (q, k, v) = (part(0), part(1), part(2));
        let scale = F::of(1.0 / (d as f64).sqrt());
        let mut attn = q.mul_scalar(scale).matmul(k.permute(&[0, 1, 3, 2]));
        let bias = s
            .param(self.bias_table)
            .gather_rows(Rc::clone(&self.index))
            .permute(&[1, 0])
            .reshape(&[h, l, l]);
        attn = attn.add(bias);
        if let Some(mask) = mask {
            let windows = bw / images;
            attn = attn
                .reshape(&[images, windows, h, l, l])
                .add(mask)
                .reshape(&[bw, h, l, l]);
        }
        let out = attn.softmax().matmul(v).permute(&[0, 2, 1, 3]).reshape(&[bw, l, c]);
        self.proj.forward(s, out)
    }
}

#[derive(Clone, Debug)]
struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    shift: usize,
}

impl SwinBlock {
    fn forward<'g, F: Float>(
        &self,
        s: &Session<'g, '_, F>,
        x: Tensor<'g, F>,
        mask: Option<Tensor<'g, F>>,
    ) -> Tensor<'g, F> {
        let shape = x.shape();
        let (n, h, w) = (shape[0], shape[1], shape[2]);
        let ws = self.attn.window;
        let mut y = self.norm1.forward(s, x);
        if self.shift > 0 {
            let k = self.shift as isize;
            y = y.roll(1, -k).roll(2, -k);
        }
        let y = self.attn.forward(s, partition(y, ws), n, mask.filter(|_| self.shift > 0));
        let mut y = merge_windows(y, ws, n, h, w);
        if self.shift > 0 {
            let k = self.shift as isize;
            y = y.roll(1, k).roll(2, k);
        }
        let x = x.add(y);
        let hidden = self.fc1.forward(s, self.norm2.forward(s, x)).gelu();
        x.add(self.fc2.forward(s, hidden))
    }
}

/// 2×2 neighbourhood concatenation followed by a linear projection.
#[derive(Clone, Debug)]
struct PatchMerging {
    norm: LayerNorm,
    reduce: Linear,
}

impl PatchMerging {
    fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        let shape = x.shape();
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let merged = x
            .reshape(&[n, h / 2, 2, w / 2, 2, c])
            .permute(&[0, 1, 3, 4, 2, 5])
            .reshape(&[n, h / 2, w / 2, 4 * c]);
        self.reduce.forward(s, self.norm.forward(s, merged))
    }
}

#[derive(Clone, Debug)]
struct Stage {
    blocks: Vec<SwinBlock>,
    grid: (usize, usize),
    window: usize,
    shift: usize,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    fn new<F: Float>(
        init: &mut Init<'_, F>,
        dim: usize,
        depth: usize,
        heads: usize,
        window: usize,
        shift: usize,
        mlp_ratio: usize,
        grid: (usize, usize),
    ) -> Self {
        // a grid that fits in one window has nothing to shift across
        let shift = if grid.0 <= window && grid.1 <= window { 0 } else { shift };
        let blocks = (0..depth)
            .map(|b| {
                let name = format!("block{b}");
                SwinBlock {
                    norm1: LayerNorm::new(init, &format!("{name}.norm1"), dim),
                    attn: WindowAttention::new(init, &format!("{name}.attn"), dim, heads, window),
                    norm2: LayerNorm::new(init, &format!("{name}.norm2"), dim),
                    fc1: Linear::new(init, &format!("{name}.mlp.fc1"), dim, mlp_ratio * dim, true),
                    fc2: Linear::new(init, &format!("{name}.mlp.fc2"), mlp_ratio * dim, dim, true),
                    shift: if b % 2 == 1 { shift } else { 0 },
                }
            })
            .collect();
        Self {
            blocks,
            grid,
            window,
            shift,
        }
    }

    fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, mut x: Tensor<'g, F>) -> Tensor<'g, F> {
        let mask = (self.shift > 0).then(|| {
            let (h, w) = self.grid;
            let windows = (h / self.window) * (w / self.window);
            let l = self.window * self.window;
            let data = shift_mask(h, w, self.window, self.shift);
            s.graph().constant(NdArray::from_vec(
                vec![windows, 1, l, l],
                data.into_iter().map(F::of).collect(),
            ))
        });
        for block in &self.blocks {
            x = block.forward(s, x, mask);
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct SwinGait {
    stem: [ConvBn; 2],
    embed: Conv2d,
    embed_norm: LayerNorm,
    stage1: Stage,
    merge: PatchMerging,
    stage2: Stage,
    final_norm: LayerNorm,
}

pub const GROUPS: [&str; 4] = ["cnn_stem", "patch_embed", "swin_stage1", "swin_stage2"];

fn channels_first<'g, F: Float>(x: Tensor<'g, F>) -> Tensor<'g, F> {
    x.permute(&[0, 3, 1, 2])
}

fn channels_last<'g, F: Float>(x: Tensor<'g, F>) -> Tensor<'g, F> {
    x.permute(&[0, 2, 3, 1])
}

impl SwinGait {
    pub fn new<F: Float>(init: &mut Init<'_, F>, cfg: &SwinConfig) -> Self {
        let [s0, s1] = cfg.stem_channels;
        let [d0, d1] = cfg.dims;
        let grid1 = (cfg.input.0 / cfg.patch, cfg.input.1 / cfg.patch);
        let grid2 = (grid1.0 / 2, grid1.1 / 2);
        let shift = if cfg.shift { cfg.window / 2 } else { 0 };

        init.set_group(GROUPS[0]);
        let stem = [
            ConvBn::new(init, "conv1", 1, s0, 3, 1),
            ConvBn::new(init, "conv2", s0, s1, 3, 1),
        ];
        init.set_group(GROUPS[1]);
        let embed = Conv2d::new(init, "proj", s1, d0, cfg.patch, cfg.patch, 0);
        let embed_norm = LayerNorm::new(init, "norm", d0);
        init.set_group(GROUPS[2]);
        let stage1 = Stage::new(init, d0, cfg.depths[0], cfg.heads[0], cfg.window, shift, cfg.mlp_ratio, grid1);
        let merge = PatchMerging {
            norm: LayerNorm::new(init, "merge.norm", 4 * d0),
            reduce: Linear::new(init, "merge.reduce", 4 * d0, d1, false),
        };
        init.set_group(GROUPS[3]);
        let stage2 = Stage::new(init, d1, cfg.depths[1], cfg.heads[1], cfg.window, shift, cfg.mlp_ratio, grid2);
        let final_norm = LayerNorm::new(init, "norm", d1);
        Self {
            stem,
            embed,
            embed_norm,
            stage1,
            merge,
            stage2,
            final_norm,
        }
    }

    /// `x: [B*T, 1, H, W]` to `[B*T, C, H', W']`.
    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>) -> Tensor<'g, F> {
        let mut x = x;
        for layer in &self.stem {
            x = layer.forward(s, x).relu();
        }
        let x = s.tap(GROUPS[0], x);
        let tokens = channels_last(self.embed.forward(s, x));
        let tokens = self.embed_norm.forward(s, tokens);
        let tokens = channels_last(s.tap(GROUPS[1], channels_first(tokens)));
        let tokens = self.merge.forward(s, self.stage1.forward(s, tokens));
        let tokens = channels_last(s.tap(GROUPS[2], channels_first(tokens)));
        let tokens = self.final_norm.forward(s, self.stage2.forward(s, tokens));
        s.tap(GROUPS[3], channels_first(tokens))
    }
}
