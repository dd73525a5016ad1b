//! Grad-CAM heatmaps over silhouette clips and their PNG overlays.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{Float, Graph, NdArray};

use crate::backbones::store::{Mode, Session};
use crate::data::FrailtyLabel;
use crate::error::{Error, Result};
use crate::imageio::{write_png, Image8};
use crate::model::GaitModel;
use crate::pipeline::{assemble_batch, Clip, FitPlan};

/// Per-frame heatmaps in `[0, 1]`, each frame max-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct CamSequence {
    pub length: usize,
    pub height: usize,
    pub width: usize,
    /// `[T, H, W]` row-major.
    pub maps: Vec<f32>,
    pub target: FrailtyLabel,
    pub layer: String,
}

impl CamSequence {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.maps[t * n..(t + 1) * n]
    }
}

/// Deepest spatial layer of each backbone.
pub fn default_layer<F: Float>(model: &GaitModel<F>) -> &'static str {
    model.config.backbone.groups().last().expect("backbones have groups")
}

/// `relu(Σ_c w_tc · A_tc)` per frame with `w_tc` the spatial mean of the
/// gradient. `activations` and `grads` are `[T, C, h, w]`; returns
/// unnormalized `[T, h, w]` maps.
pub fn cam_from_activations<F: Float>(activations: &NdArray<F>, grads: &NdArray<F>) -> Vec<f64> {
    assert_eq!(activations.shape(), grads.shape(), "activation and gradient shapes differ");
    let s = activations.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let (a, g) = (activations.data(), grads.data());
    let mut out = vec![0.0; t * hw];
    for f in 0..t {
        let map = &mut out[f * hw..(f + 1) * hw];
        for ch in 0..c {
            let base = (f * c + ch) * hw;
            let weight = g[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64;
            for (m, v) in map.iter_mut().zip(&a[base..base + hw]) {
                *m += weight * v.as_f64();
            }
        }
        map.iter_mut().for_each(|m| *m = m.max(0.0));
    }
    out
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, scale: f64, n: usize| {
        let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(n - 1), x - i0 as f64)
    };
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        let (y0, y1, fy) = coord(r, sy, h);
        for c in 0..out_w {
            let (x0, x1, fx) = coord(c, sx, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out[r * out_w + c] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Scales a map so its maximum is 1; an all-zero map stays zero.
pub fn max_normalize(map: &mut [f64]) {
    let max = map.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        map.iter_mut().for_each(|v| *v /= max);
    }
}

/// Grad-CAM of `target` at the output of backbone group `layer`, in
/// evaluation mode, resized to the clip resolution.
pub fn grad_cam<F: Float>(model: &GaitModel<F>, clip: &Clip, target: FrailtyLabel, layer: &str) -> Result<CamSequence> {
    let backbone = &model.config.backbone;
    if !backbone.groups().contains(&layer) {
        return Err(Error::Config(format!(
            "layer `{layer}` is not a spatial layer of {} (one of {:?})",
            backbone.kind(),
            backbone.groups()
        )));
    }
    let fit = FitPlan::new((clip.height, clip.width), backbone.input())?;
    let batch = assemble_batch(std::slice::from_ref(clip), &fit)?;
    let graph = Graph::new();
    let session = Session::new(&graph, &model.store, Mode::Eval, Default::default()).with_tap(layer);
    let out = model.forward_batch(&session, &batch);
    let tapped = session.tapped().expect("layer output was tapped");
    let score = out.head.logits.narrow(1, target.index(), 1).sum();
    let grads = graph.backward(score);
    let activations = tapped.value();
    let zero = NdArray::zeros(activations.shape().to_vec());
    let grad = grads.get(tapped).unwrap_or(&zero);
    let raw = cam_from_activations(&activations, grad);

    let (h, w) = (activations.shape()[2], activations.shape()[3]);
    let (canvas_h, canvas_w) = fit.canvas();
    let mut maps = Vec::with_capacity(clip.length * clip.height * clip.width);
    for frame in raw.chunks(h * w) {
        let up = resize_bilinear(frame, h, w, canvas_h, canvas_w);
        let mut cropped: Vec<f64> = (0..clip.height)
            .flat_map(|r| {
                let row = (r + fit.pad_top) * canvas_w + fit.pad_left;
                up[row..row + clip.width].to_vec()
            })
            .collect();
        max_normalize(&mut cropped);
        maps.extend(cropped.iter().map(|&v| v as f32));
    }
    Ok(CamSequence {
        length: clip.length,
        height: clip.height,
        width: clip.width,
        maps,
        target,
        layer: layer.to_string(),
    })
}

/// Jet colormap for `v` in `[0, 1]`.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |x: f32| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Opacity of the heatmap at full activation.
pub const OVERLAY_ALPHA: f32 = 0.5;

/// One overlay pixel: grayscale silhouette blended with the colormapped
/// CAM at opacity `OVERLAY_ALPHA · cam`.
pub fn blend_pixel(silhouette: f32, cam: f32) -> [u8; 3] {
    let gray = silhouette.clamp(0.0, 1.0);
    let alpha = OVERLAY_ALPHA * cam.clamp(0.0, 1.0);
    let color = jet(cam);
    color.map(|c| (((1.0 - alpha) * gray + alpha * c) * 255.0).round() as u8)
}

pub fn overlay_file_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

/// Writes one RGB overlay per frame as `frame_%04d.png`.
pub fn render_overlay(clip: &Clip, cam: &CamSequence, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if (clip.length, clip.height, clip.width) != (cam.length, cam.height, cam.width) {
        return Err(Error::Validation(format!(
            "clip is {}x{}x{} but CAM is {}x{}x{}",
            clip.length, clip.height, clip.width, cam.length, cam.height, cam.width
        )));
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    (0..clip.length)
        .map(|t| {
            let data = clip
                .frame(t)
                .iter()
                .zip(cam.frame(t))
                .flat_map(|(&s, &c)| blend_pixel(s, c))
                .collect();
            let path = out_dir.join(overlay_file_name(t));
            write_png(
                &path,
                &Image8 {
                    height: clip.height,
                    width: clip.width,
                    channels: 3,
                    data,
                },
            )?;
            Ok(path)
        })
        .collect()
}

/// Activation-weighted centroid `(row, col)` and total mass per frame;
/// `None` for an all-zero frame.
pub fn cam_centroids(cam: &CamSequence) -> Vec<Option<(f64, f64, f64)>> {
    (0..cam.length)
        .map(|t| {
            let (mut mass, mut r, mut c) = (0.0, 0.0, 0.0);
            for (i, &v) in cam.frame(t).iter().enumerate() {
                let v = v as f64;
                mass += v;
                r += v * (i / cam.width) as f64;
                c += v * (i % cam.width) as f64;
            }
            (mass > 0.0).then(|| (r / mass, c / mass, mass))
        })
        .collect()
}

pub fn centroids_csv(cam: &CamSequence) -> String {
    let mut out = String::from("frame,row,col,mass\n");
    for (t, c) in cam_centroids(cam).into_iter().enumerate() {
        let _ = match c {
            Some((r, col, m)) => writeln!(out, "{t},{r:.4},{col:.4},{m:.4}"),
            None => writeln!(out, "{t},,,0"),
        };
    }
    out
}

/// Mean CAM value inside and outside a `[top, bottom) x [left, right)` box
/// of one frame.
pub fn box_means(cam: &CamSequence, t: usize, bbox: (usize, usize, usize, usize)) -> (f64, f64) {
    let (top, bottom, left, right) = bbox;
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (i, &v) in cam.frame(t).iter().enumerate() {
        let (r, c) = (i / cam.width, i % cam.width);
        if (top..bottom).contains(&r) && (left..right).contains(&c) {
            inside += v as f64;
            n_in += 1;
        } else {
            outside += v as f64;
            n_out += 1;
        }
    }
    (inside / n_in.max(1) as f64, outside / n_out.max(1) as f64)
}

/// Bounding box of the nonzero pixels of one clip frame.
pub fn foreground_box(clip: &Clip, t: usize) -> Option<(usize, usize, usize, usize)> {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for (i, &v) in clip.frame(t).iter().enumerate() {
        if v > 0.5 {
            let (r, c) = (i / clip.width, i % clip.width);
            bbox = Some(match bbox {
                None => (r, r + 1, c, c + 1),
                Some((t, b, l, rt)) => (t.min(r), b.max(r + 1), l.min(c), rt.max(c + 1)),
            });
        }
    }
    bbox
}
