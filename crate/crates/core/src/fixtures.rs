//! Synthetic scenes for tests and demos.
//!
//! Each scene is a few coloured shapes over a gradient, with a depth map that
//! recedes toward the top of the frame. Its "underwater" rendering applies
//! per-channel exponential attenuation and additive backscatter with depth,
//! so a toy translator has a real, depth-dependent mapping to learn.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ContrastiveConfig, Method, TrainConfig};
use crate::data::io::{save_depth_png, save_png};
use crate::data::{assemble_rgbd, PairedExample, UnpairedDataset};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Per-channel attenuation per unit depth (red fades fastest).
const ATTENUATION: [f32; 3] = [2.4, 0.9, 0.45];
/// Per-channel veiling light colour in [0, 1].
const BACKSCATTER: [f32; 3] = [0.05, 0.35, 0.45];

/// A scene in [0, 1] units: RGB planes plus depth in [0, 1].
#[derive(Debug, Clone)]
pub struct Scene {
    pub size: usize,
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
}

impl Scene {
    pub fn generate(id: u64, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id.wrapping_mul(0xA076_1D64_78BD_642F));
        let n = size * size;
        let top: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..1.0));
        let bottom: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.7));
        let mut rgb = vec![0f32; 3 * n];
        let mut depth = vec![0f32; n];
        let s = size as f32;
        for r in 0..size {
            let t = r as f32 / (s - 1.0).max(1.0);
            for c in 0..size {
                for ch in 0..3 {
                    rgb[ch * n + r * size + c] = top[ch] * (1.0 - t) + bottom[ch] * t;
                }
                depth[r * size + c] = 0.9 - 0.6 * t;
            }
        }
        for _ in 0..rng.random_range(1..4) {
            let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            let radius = rng.random_range(0.1..0.35) * s;
            let colour: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let d = rng.random_range(0.1..0.6);
            for r in 0..size {
                for c in 0..size {
                    let (dy, dx) = (r as f32 - cy, c as f32 - cx);
                    if dy * dy + dx * dx <= radius * radius {
                        for ch in 0..3 {
                            rgb[ch * n + r * size + c] = colour[ch];
                        }
                        depth[r * size + c] = d;
                    }
                }
            }
        }
        Self { size, rgb, depth }
    }

    /// The same scene seen through water.
    pub fn underwater(&self) -> Vec<f32> {
        let n = self.size * self.size;
        let mut out = vec![0f32; 3 * n];
        for ch in 0..3 {
            for i in 0..n {
                let t = (-ATTENUATION[ch] * self.depth[i]).exp();
                out[ch * n + i] = self.rgb[ch * n + i] * t + BACKSCATTER[ch] * (1.0 - t);
            }
        }
        out
    }

    fn to_image(channels: usize, size: usize, unit: &[f32]) -> Result<ImageTensor> {
        ImageTensor::new(channels, size, size, unit.iter().map(|v| v * 2.0 - 1.0).collect())
    }

    pub fn uniform_image(&self) -> Result<ImageTensor> {
        Self::to_image(3, self.size, &self.rgb)
    }

    pub fn underwater_image(&self) -> Result<ImageTensor> {
        Self::to_image(3, self.size, &self.underwater())
    }

    pub fn depth_image(&self) -> Result<ImageTensor> {
        Self::to_image(1, self.size, &self.depth)
    }
}

/// Small widths that train in seconds on a CPU at `image_size` 16 to 64.
pub fn toy_config(method: Method, image_size: usize) -> TrainConfig {
    let mut c = TrainConfig::for_method(method);
    c.image_size = image_size;
    c.ngf = 8;
    c.ndf = 8;
    c.n_res_blocks = 3;
    c.disc_layers = 1;
    c.unet_downs = image_size.trailing_zeros().min(5) as usize;
    c.ae_width = 4;
    c.batch_size = 4;
    c.epochs = 1;
    c.checkpoint_every = 1;
    let patches = (image_size / 4).pow(2).min(64);
    c.contrastive = ContrastiveConfig {
        patches_per_image: patches,
        negatives_per_anchor: patches - 1,
        embed_dim: 64,
        layer_indices: ContrastiveConfig::default_layers(c.encoder_depth()),
        ..ContrastiveConfig::default()
    };
    c
}

/// `n` aligned pairs; with `depth` the inputs are RGBD.
pub fn paired_set(n: usize, size: usize, seed: u64, depth: bool) -> Result<Vec<PairedExample>> {
    (0..n as u64)
        .map(|id| {
            let scene = Scene::generate(id, size, seed);
            let rgb = scene.uniform_image()?;
            let x = if depth { assemble_rgbd(&rgb, &scene.depth_image()?)? } else { rgb };
            Ok(PairedExample {
                x,
                y: scene.underwater_image()?,
                scene_id: format!("{id:04}"),
            })
        })
        .collect()
}

/// Sources are scenes `0..n_source`, targets the underwater renders of the
/// disjoint scenes `n_source..n_source + n_target`.
pub fn unpaired_set(n_source: usize, n_target: usize, size: usize, seed: u64, depth: bool) -> Result<UnpairedDataset> {
    let mut source = Vec::with_capacity(n_source);
    let mut target = Vec::with_capacity(n_target);
    let source_ids: Vec<u64> = (0..n_source as u64).collect();
    let target_ids: Vec<u64> = (n_source as u64..(n_source + n_target) as u64).collect();
    for &id in &source_ids {
        let scene = Scene::generate(id, size, seed);
        let rgb = scene.uniform_image()?;
        source.push(if depth { assemble_rgbd(&rgb, &scene.depth_image()?)? } else { rgb });
    }
    for &id in &target_ids {
        let scene = Scene::generate(id, size, seed);
        let rgb = scene.underwater_image()?;
        target.push(if depth { assemble_rgbd(&rgb, &scene.depth_image()?)? } else { rgb });
    }
    Ok(UnpairedDataset {
        source,
        target,
        source_ids,
        target_ids,
        overlapping_ranges: false,
    })
}

/// Writes `root/{A,B,depth}/<id>.png` for every id in `ids` (zero-padded to
/// four digits). Depth is 16-bit over `[0, 65535]`.
pub fn write_dataset_tree(root: &Path, ids: impl IntoIterator<Item = u64>, size: usize, seed: u64) -> Result<()> {
    for sub in ["A", "B", "depth"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for id in ids {
        let scene = Scene::generate(id, size, seed);
        let name = format!("{id:04}.png");
        save_png(&root.join("A").join(&name), &scene.underwater_image()?)?;
        save_png(&root.join("B").join(&name), &scene.uniform_image()?)?;
        let d: Vec<u16> = scene.depth.iter().map(|v| (v * 65535.0).round() as u16).collect();
        save_depth_png(&root.join("depth").join(&name), size as u32, size as u32, &d)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let a = Scene::generate(3, 16, 1);
        let b = Scene::generate(3, 16, 1);
        assert_eq!(a.rgb, b.rgb);
        assert!(a.underwater().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a.rgb, Scene::generate(4, 16, 1).rgb);
    }

    #[test]
    fn water_shifts_colour_toward_blue_green() {
        let s = Scene::generate(0, 16, 0);
        let uw = s.underwater();
        let n = 256;
        let mean = |v: &[f32], ch: usize| v[ch * n..(ch + 1) * n].iter().sum::<f32>() / n as f32;
        assert!(mean(&uw, 0) < mean(&s.rgb, 0));
        assert!(mean(&uw, 2) - mean(&uw, 0) > mean(&s.rgb, 2) - mean(&s.rgb, 0));
    }
}
