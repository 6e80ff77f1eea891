//! InfoNCE and the multilayer patchwise contrastive loss.

use candle_core::{DType, Device, Tensor, D};

use super::LossValue;
use crate::config::ContrastiveConfig;
use crate::error::{Error, Result};
use crate::nn::{encode_features, FeatureStack, PatchEncoder, ProjectionHeads};

/// Additive logit for excluded negatives; exp underflows to exactly 0.
const MASKED: f64 = -1e9;

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Row-wise `logsumexp(logits) - logits[.., 0]` over the last dim, with the
/// row maximum subtracted first.
fn cross_entropy_first(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let first = shifted.narrow(D::Minus1, 0, 1)?;
    Ok((lse - first)?.squeeze(D::Minus1)?)
}

/// Cross-entropy of picking `z_pos` for anchor `z` among `z_pos` and the rows
/// of `z_negs`, with dot-product similarities divided by `temperature`.
pub fn info_nce(z: &Tensor, z_pos: &Tensor, z_negs: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let k = z.dim(0)?;
    if z.rank() != 1 || z_pos.dims() != [k] {
        return Err(Error::Shape(format!(
            "anchor {:?} and positive {:?} must be equal-length vectors",
            z.dims(),
            z_pos.dims()
        )));
    }
    let (n, kn) = z_negs.dims2()?;
    if n == 0 {
        return Err(Error::InvalidInput("InfoNCE needs at least one negative".into()));
    }
    if kn != k {
        return Err(Error::Shape(format!("negatives have dim {kn}, anchor has {k}")));
    }
    let pos = (z * z_pos)?.sum_keepdim(0)?;
    let neg = z_negs.matmul(&z.unsqueeze(1)?)?.squeeze(1)?;
    let logits = (Tensor::cat(&[&pos, &neg], 0)? / temperature)?;
    Ok(cross_entropy_first(&logits.unsqueeze(0)?)?.squeeze(0)?)
}

/// Which of the `P` sampled locations act as negatives for each anchor.
/// With `n == P - 1` every other location is used; otherwise the `n`
/// locations that follow the anchor cyclically.
fn negative_mask(p: usize, n: usize, dtype: DType, device: &Device) -> Result<Option<Tensor>> {
    if n + 1 >= p {
        return Ok(None);
    }
    let mut m = vec![MASKED; p * p];
    for s in 0..p {
        for j in 0..=n {
            m[s * p + (s + j) % p] = 0.0;
        }
    }
    Ok(Some(Tensor::from_vec(m, (p, p), device)?.to_dtype(dtype)?))
}

/// Per-anchor InfoNCE for one layer: `queries` come from the output image,
/// `keys` from the input, both `(B, P, K)`. Anchor `s` is scored against key
/// `s` (positive) and the other keys of the same image (negatives).
/// Returns `(B, P)` losses.
pub fn patch_nce_layer(queries: &Tensor, keys: &Tensor, negatives: usize, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let (b, p, k) = queries.dims3()?;
    if keys.dims() != [b, p, k] {
        return Err(Error::Shape(format!(
            "query features {:?} and key features {:?} differ",
            queries.dims(),
            keys.dims()
        )));
    }
    if negatives == 0 || negatives >= p {
        return Err(Error::InvalidInput(format!(
            "{negatives} negatives requested from {p} sampled patches"
        )));
    }
    let sim = (queries.matmul(&keys.transpose(1, 2)?.contiguous()?)? / temperature)?;
    let sim = match negative_mask(p, negatives, sim.dtype(), sim.device())? {
        Some(mask) => sim.broadcast_add(&mask)?,
        None => sim,
    };
    // The positive (the diagonal) goes to column 0 of each row.
    let pos = ((queries * keys)?.sum_keepdim(2)? / temperature)?;
    let eye = Tensor::eye(p, sim.dtype(), sim.device())?;
    let off_diag = sim.broadcast_add(&(eye * MASKED)?)?;
    let logits = Tensor::cat(&[&pos, &off_diag], 2)?;
    cross_entropy_first(&logits)
}

/// Mean PatchNCE over layers, locations and batch from pre-computed features.
/// Keys are detached, matching the reference formulation.
pub fn patch_nce_from_features(
    queries: &FeatureStack,
    keys: &FeatureStack,
    negatives: usize,
    temperature: f64,
) -> Result<Tensor> {
    if queries.layers.len() != keys.layers.len() || queries.layers.is_empty() {
        return Err(Error::Shape("query and key feature stacks differ in layers".into()));
    }
    let mut per_layer = Vec::with_capacity(queries.layers.len());
    for (q, k) in queries.layers.iter().zip(&keys.layers) {
        if q.layer != k.layer || q.locations != k.locations {
            return Err(Error::InvalidInput(format!(
                "layer {} was sampled at different locations for input and output",
                q.layer
            )));
        }
        let losses = patch_nce_layer(&q.embeddings, &k.embeddings.detach(), negatives, temperature)?;
        per_layer.push(losses.mean_all()?);
    }
    Ok(Tensor::stack(&per_layer, 0)?.mean_all()?)
}

/// Brings `output` to the encoder's channel count by appending the trailing
/// channels of `input` (the depth plane for a 4-channel refiner).
pub fn match_encoder_channels(input: &Tensor, output: &Tensor, channels: usize) -> Result<Tensor> {
    let ci = input.dim(1)?;
    let co = output.dim(1)?;
    if co == channels {
        return Ok(output.clone());
    }
    if co > channels || ci != channels {
        return Err(Error::Shape(format!(
            "cannot encode a {co}-channel output with a {channels}-channel encoder (input has {ci})"
        )));
    }
    Ok(Tensor::cat(&[output, &input.narrow(1, co, channels - co)?], 1)?)
}

/// PatchNCE between an input batch and its translation.
pub fn patch_nce(
    encoder: &dyn PatchEncoder,
    heads: &ProjectionHeads,
    input: &Tensor,
    output: &Tensor,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    let (bi, _, hi, wi) = input.dims4()?;
    let (bo, _, ho, wo) = output.dims4()?;
    if (bi, hi, wi) != (bo, ho, wo) {
        return Err(Error::Shape(format!(
            "input {:?} and output {:?} are not spatially aligned",
            input.dims(),
            output.dims()
        )));
    }
    let output = match_encoder_channels(input, output, encoder.in_channels())?;
    let q = encode_features(encoder, heads, &output, cfg, seed)?;
    let k = encode_features(encoder, heads, input, cfg, seed)?;
    patch_nce_from_features(&q, &k, cfg.negatives_per_anchor, cfg.temperature)
}

/// [`patch_nce`] wrapped as a single-component loss named `name`.
pub fn patch_nce_loss(
    name: &str,
    encoder: &dyn PatchEncoder,
    heads: &ProjectionHeads,
    input: &Tensor,
    output: &Tensor,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<LossValue> {
    LossValue::single(name, patch_nce(encoder, heads, input, output, cfg, seed)?)
}
