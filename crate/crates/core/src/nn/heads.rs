//! Projection heads and patch-feature sampling for the contrastive loss.

use candle_core::{Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Linear;
use super::params::ParamPath;
use super::PatchEncoder;
use crate::config::ContrastiveConfig;
use crate::error::{Error, Result};

/// One two-layer MLP per tapped encoder layer, mapping `C_l` features to `K` dims.
#[derive(Debug, Clone)]
pub struct ProjectionHeads {
    heads: Vec<(usize, Linear, Linear)>,
    embed_dim: usize,
    normalize: bool,
}

impl ProjectionHeads {
    pub fn new(p: &mut ParamPath<'_>, encoder: &dyn PatchEncoder, cfg: &ContrastiveConfig) -> Result<Self> {
        let mut heads = Vec::with_capacity(cfg.layer_indices.len());
        for &layer in &cfg.layer_indices {
            let c = encoder.layer_channels(layer)?;
            let mut hp = p.pp(format!("layer{layer}"));
            let fc1 = Linear::new(&mut hp.pp("fc1"), c, cfg.embed_dim)?;
            let fc2 = Linear::new(&mut hp.pp("fc2"), cfg.embed_dim, cfg.embed_dim)?;
            heads.push((layer, fc1, fc2));
        }
        Ok(Self {
            heads,
            embed_dim: cfg.embed_dim,
            normalize: cfg.normalize_embeddings,
        })
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        self.heads.iter().map(|(l, _, _)| *l).collect()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    /// First and second linear layer of the head for `layer`.
    pub fn head(&self, layer: usize) -> Option<(&Linear, &Linear)> {
        self.heads
            .iter()
            .find(|(l, _, _)| *l == layer)
            .map(|(_, a, b)| (a, b))
    }

    /// Projects `(..., C)` features to `(..., K)`.
    pub fn project(&self, layer: usize, features: &Tensor) -> Result<Tensor> {
        let (fc1, fc2) = self
            .head(layer)
            .ok_or_else(|| Error::InvalidInput(format!("no projection head for layer {layer}")))?;
        let h = fc2.forward(&fc1.forward(features)?.relu()?)?;
        if self.normalize {
            l2_normalize(&h)
        } else {
            Ok(h)
        }
    }
}

/// Squared-norm floor: keeps the gradient of an all-zero row finite and is
/// far below the squared norm of any non-degenerate embedding.
const NORM_FLOOR_SQ: f64 = 1e-24;

/// Unit-normalizes along the last dim.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + NORM_FLOOR_SQ)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Projected patch embeddings of one encoder layer.
#[derive(Debug, Clone)]
pub struct LayerFeatures {
    pub layer: usize,
    /// Flattened spatial indices (row-major) of the sampled patches.
    pub locations: Vec<usize>,
    /// Spatial extent `S_l` of the layer.
    pub spatial: (usize, usize),
    /// `(B, P, K)` embeddings.
    pub embeddings: Tensor,
}

#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub layers: Vec<LayerFeatures>,
}

/// Deterministic sample of `count` distinct locations out of `extent`.
pub fn sample_locations(extent: usize, count: usize, seed: u64, layer: usize) -> Result<Vec<usize>> {
    if count > extent {
        return Err(Error::InvalidInput(format!(
            "cannot sample {count} patches from layer {layer} with only {extent} locations"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ layer as u64);
    Ok(rand::seq::index::sample(&mut rng, extent, count).into_vec())
}

/// Flattens a `(B, C, H, W)` map to `(B, H*W, C)`.
pub fn flatten_locations(map: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = map.dims4()?;
    Ok(map.permute((0, 2, 3, 1))?.reshape((b, h * w, c))?)
}

/// Encodes `images`, samples `patches_per_image` locations per tapped layer and
/// projects them. Identical seeds give identical locations, so an input and
/// its translation are compared patch for patch.
pub fn encode_features(
    encoder: &dyn PatchEncoder,
    heads: &ProjectionHeads,
    images: &Tensor,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<FeatureStack> {
    let maps = encoder.encode_layers(images, &cfg.layer_indices)?;
    let mut layers = Vec::with_capacity(maps.len());
    for (&layer, map) in cfg.layer_indices.iter().zip(&maps) {
        let (b, _c, h, w) = map.dims4()?;
        let locations = sample_locations(h * w, cfg.patches_per_image, seed, layer)?;
        let ids = Tensor::from_vec(
            locations.iter().map(|&l| l as u32).collect::<Vec<_>>(),
            locations.len(),
            map.device(),
        )?;
        let picked = flatten_locations(map)?.index_select(&ids, 1)?;
        let projected = heads.project(layer, &picked)?;
        debug_assert_eq!(projected.dims(), &[b, locations.len(), heads.embed_dim()]);
        layers.push(LayerFeatures {
            layer,
            locations,
            spatial: (h, w),
            embeddings: projected,
        });
    }
    Ok(FeatureStack { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use crate::nn::refiner::Refiner;
    use candle_core::{DType, Device};

    fn setup(cfg: &ContrastiveConfig) -> (ParamStore, Refiner, ProjectionHeads) {
        let mut store = ParamStore::new(11, DType::F32);
        let r = Refiner::new(&mut store.root().pp("refiner"), 3, 4, 2).unwrap();
        let h = ProjectionHeads::new(&mut store.root().pp("heads"), &r, cfg).unwrap();
        (store, r, h)
    }

    #[test]
    fn locations_are_distinct_and_deterministic() {
        let a = sample_locations(100, 40, 5, 2).unwrap();
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 40);
        assert_eq!(a, sample_locations(100, 40, 5, 2).unwrap());
        assert_ne!(a, sample_locations(100, 40, 6, 2).unwrap());
        assert!(sample_locations(10, 11, 0, 0).is_err());
    }

    #[test]
    fn single_patch_embeddings_have_unit_norm() {
        let cfg = ContrastiveConfig {
            patches_per_image: 1,
            negatives_per_anchor: 1,
            embed_dim: 8,
            layer_indices: vec![0, 4, 8],
            ..Default::default()
        };
        let (_s, r, h) = setup(&cfg);
        let x = Tensor::randn(0f32, 1., (2, 3, 16, 16), &Device::Cpu).unwrap();
        let stack = encode_features(&r, &h, &x, &cfg, 1).unwrap();
        assert_eq!(stack.layers.len(), 3);
        for layer in &stack.layers {
            assert_eq!(layer.embeddings.dims(), &[2, 1, 8]);
            let norms = layer
                .embeddings
                .sqr()
                .unwrap()
                .sum(D::Minus1)
                .unwrap()
                .sqrt()
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            assert!(norms.iter().all(|n| (n - 1.0).abs() < 1e-5));
        }
    }

    #[test]
    fn repeated_encoding_is_bit_identical() {
        let cfg = ContrastiveConfig {
            patches_per_image: 16,
            negatives_per_anchor: 15,
            embed_dim: 8,
            layer_indices: vec![0, 4, 8, 11],
            ..Default::default()
        };
        let (_s, r, h) = setup(&cfg);
        let x = Tensor::randn(0f32, 1., (1, 3, 16, 16), &Device::Cpu).unwrap();
        let a = encode_features(&r, &h, &x, &cfg, 42).unwrap();
        let b = encode_features(&r, &h, &x, &cfg, 42).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.locations, lb.locations);
            let va = la.embeddings.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let vb = lb.embeddings.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn too_many_patches_is_an_error() {
        let cfg = ContrastiveConfig {
            patches_per_image: 17,
            negatives_per_anchor: 16,
            embed_dim: 4,
            layer_indices: vec![8],
            ..Default::default()
        };
        let (_s, r, h) = setup(&cfg);
        let x = Tensor::randn(0f32, 1., (1, 3, 16, 16), &Device::Cpu).unwrap();
        // layer 8 is 4x4 = 16 locations
        assert!(encode_features(&r, &h, &x, &cfg, 0).is_err());
    }
}
