//! Feature-map and kernel mosaics of autoencoder layers.

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::nn::CapturedLayer;
use crate::tensor::ImageTensor;

/// Gap between tiles, in pixels.
pub const TILE_GAP: usize = 1;
/// Kernels are upscaled to at least this many pixels per side.
pub const MIN_KERNEL_TILE: usize = 12;

/// `(rows, cols)` of a near-square grid for `n` tiles: `ceil(sqrt(n))` columns.
pub fn grid_layout(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut cols = (n as f64).sqrt() as usize;
    while cols * cols < n {
        cols += 1;
    }
    (n.div_ceil(cols), cols)
}

/// Min-max scales one tile to [-1, 1]; a flat tile becomes mid-grey.
fn normalize_tile(tile: &[f32]) -> Vec<f32> {
    let lo = tile.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = tile.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![0.0; tile.len()];
    }
    tile.iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
}

/// Lays out equally sized single-channel tiles on a grey mosaic. Each tile is
/// normalized on its own and enlarged `scale` times (nearest neighbour).
pub fn mosaic(tiles: &[Vec<f32>], height: usize, width: usize, scale: usize) -> Result<ImageTensor> {
    if tiles.is_empty() || height == 0 || width == 0 || scale == 0 {
        return Err(Error::InvalidInput("nothing to tile".into()));
    }
    if let Some(t) = tiles.iter().find(|t| t.len() != height * width) {
        return Err(Error::Shape(format!("tile of {} values, expected {height}x{width}", t.len())));
    }
    let (rows, cols) = grid_layout(tiles.len());
    let (th, tw) = (height * scale, width * scale);
    let out_h = rows * th + (rows + 1) * TILE_GAP;
    let out_w = cols * tw + (cols + 1) * TILE_GAP;
    let mut data = vec![0.0f32; out_h * out_w];
    for (i, tile) in tiles.iter().enumerate() {
        let tile = normalize_tile(tile);
        let (r, c) = (i / cols, i % cols);
        let (y0, x0) = (TILE_GAP + r * (th + TILE_GAP), TILE_GAP + c * (tw + TILE_GAP));
        for y in 0..th {
            for x in 0..tw {
                data[(y0 + y) * out_w + x0 + x] = tile[(y / scale) * width + x / scale];
            }
        }
    }
    ImageTensor::new(1, out_h, out_w, data)
}

/// One tile per channel of a `(C, H, W)` activation.
pub fn activation_mosaic(activation: &Tensor) -> Result<ImageTensor> {
    let (c, h, w) = activation.dims3()?;
    let flat = activation.to_dtype(DType::F32)?.reshape((c, h * w))?.to_vec2::<f32>()?;
    mosaic(&flat, h, w, 1)
}

/// One tile per output filter of an `(O, I, K, K)` kernel, averaged over its
/// input channels.
pub fn kernel_mosaic(weights: &Tensor) -> Result<ImageTensor> {
    let (o, _, kh, kw) = weights.dims4()?;
    let mean = weights.to_dtype(DType::F32)?.mean(1)?;
    let flat = mean.reshape((o, kh * kw))?.to_vec2::<f32>()?;
    let scale = MIN_KERNEL_TILE.div_ceil(kh.max(kw)).max(1);
    mosaic(&flat, kh, kw, scale)
}

/// File names of the two mosaics of a layer.
pub fn file_names(layer: usize) -> (String, String) {
    (format!("layer_{layer:03}_activations.png"), format!("layer_{layer:03}_weights.png"))
}

/// Both mosaics of a captured layer.
pub fn render(layer: &CapturedLayer) -> Result<(ImageTensor, ImageTensor)> {
    Ok((activation_mosaic(&layer.activation)?, kernel_mosaic(&layer.weights)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn layouts() {
        assert_eq!(grid_layout(64), (8, 8));
        assert_eq!(grid_layout(1), (1, 1));
        assert_eq!(grid_layout(3), (2, 2));
        assert_eq!(grid_layout(5), (2, 3));
        assert_eq!(grid_layout(16), (4, 4));
        assert_eq!(grid_layout(17), (4, 5));
        for n in 1..300 {
            let (r, c) = grid_layout(n);
            assert!(r * c >= n && (r - 1) * c < n && c * c >= n && (c - 1) * (c - 1) < n, "n={n}");
        }
    }

    #[test]
    fn sixty_four_filters_make_an_eight_by_eight_mosaic() {
        let act = Tensor::arange(0f32, (64 * 4 * 4) as f32, &Device::Cpu).unwrap().reshape((64, 4, 4)).unwrap();
        let img = activation_mosaic(&act).unwrap();
        let side = 8 * 4 + 9 * TILE_GAP;
        assert_eq!(img.shape(), (1, side, side));
        // every tile is normalized on its own
        let d = img.data();
        assert_eq!(d[TILE_GAP * side + TILE_GAP], -1.0);
        assert_eq!(d[(TILE_GAP + 3) * side + TILE_GAP + 3], 1.0);
        let last = (side - TILE_GAP - 1) * side + side - TILE_GAP - 1;
        assert_eq!(d[last], 1.0);
    }

    #[test]
    fn kernels_are_upscaled() {
        let w = Tensor::ones((5, 3, 3, 3), DType::F32, &Device::Cpu).unwrap();
        let img = kernel_mosaic(&w).unwrap();
        let (rows, cols) = grid_layout(5);
        assert_eq!(img.shape(), (1, rows * 12 + rows + 1, cols * 12 + cols + 1));
    }
}
