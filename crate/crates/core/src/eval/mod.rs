//! Image-quality evaluation: SSIM, FID and the method-by-subset report.

pub mod features;
pub mod gaussian;
pub mod report;
pub mod ssim;

use std::path::Path;

use candle_core::Device;

use crate::config::Method;
use crate::data::TestExample;
use crate::error::{Error, Result};
use crate::nn::Translator;
use crate::tensor::ImageTensor;
use crate::train::load_checkpoint;

pub use features::{ConvTrunk, FeatureExtractor, RandomProjection};
pub use gaussian::{fit_gaussian, frechet_distance, GaussianStats};
pub use report::{MetricsReport, ReportRow, REPORT_HEADER};
pub use ssim::{ssim, SsimParams};

/// Images translated per forward pass.
pub const TRANSLATE_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FidScore {
    pub value: f64,
    pub warnings: Vec<String>,
}

pub fn fid(set_a: &[ImageTensor], set_b: &[ImageTensor], extractor: &dyn FeatureExtractor) -> Result<FidScore> {
    for (name, set) in [("first", set_a), ("second", set_b)] {
        if set.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "FID needs at least 2 images per set; the {name} set has {}",
                set.len()
            )));
        }
    }
    let ga = fit_gaussian(&extractor.extract_all(set_a)?)?;
    let gb = fit_gaussian(&extractor.extract_all(set_b)?)?;
    let warnings = [ga.singular_warning.clone(), gb.singular_warning.clone()]
        .into_iter()
        .flatten()
        .collect();
    Ok(FidScore {
        value: frechet_distance(&ga, &gb)?,
        warnings,
    })
}

/// Runs `translator` over `inputs` in batches. Four-channel inputs feed an
/// RGB translator through their RGB part; outputs are clamped to [-1, 1].
pub fn translate_images(translator: &dyn Translator, inputs: &[&ImageTensor]) -> Result<Vec<ImageTensor>> {
    let want = translator.in_channels();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(TRANSLATE_BATCH) {
        let fitted: Vec<ImageTensor> = chunk
            .iter()
            .map(|img| match (img.channels(), want) {
                (c, w) if c == w => Ok((*img).clone()),
                (4, 3) => img.rgb(),
                (c, w) => Err(Error::Checkpoint(format!(
                    "channel mismatch: the model takes {w}-channel input but the image has {c} channels{}",
                    if w == 4 { "; supply depth maps alongside the RGB inputs" } else { "" }
                ))),
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageTensor> = fitted.iter().collect();
        let x = ImageTensor::stack(&refs, &Device::Cpu)?;
        let y = translator.translate(&x)?.clamp(-1f32, 1f32)?;
        out.extend(ImageTensor::unstack(&y)?);
    }
    Ok(out)
}

/// Named selection of test scene ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub name: String,
    pub ids: Vec<String>,
}

impl Subset {
    pub fn new(name: impl Into<String>, ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name: name.into(),
            ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    /// Every example of `test`.
    pub fn all(name: impl Into<String>, test: &[TestExample]) -> Self {
        Self::new(name, test.iter().map(|e| e.scene_id.clone()))
    }
}

fn select<'a>(test: &'a [TestExample], subset: &Subset) -> Result<Vec<&'a TestExample>> {
    if subset.ids.is_empty() {
        return Err(Error::InvalidInput(format!("subset `{}` is empty", subset.name)));
    }
    subset
        .ids
        .iter()
        .map(|id| {
            test.iter()
                .find(|e| &e.scene_id == id)
                .ok_or_else(|| Error::Data(format!("subset `{}`: no test image `{id}`", subset.name)))
        })
        .collect()
}

/// Translates each subset once and scores it: mean per-image SSIM against
/// the ground truth (absent unless every image has one) and FID between
/// the generated images and the available ground truth.
pub fn evaluate_translator(
    translator: &dyn Translator,
    method: &str,
    label: &str,
    test: &[TestExample],
    subsets: &[Subset],
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let chosen = select(test, subset)?;
        let inputs: Vec<&ImageTensor> = chosen.iter().map(|e| &e.x).collect();
        let generated = translate_images(translator, &inputs)?;
        let truths: Vec<ImageTensor> = chosen.iter().filter_map(|e| e.y.clone()).collect();
        let mut notes = Vec::new();
        let ssim_value = if truths.len() == chosen.len() {
            let mut total = 0.0;
            for (g, t) in generated.iter().zip(&truths) {
                total += ssim(g, t)?;
            }
            Some(total / truths.len() as f64)
        } else {
            notes.push(format!(
                "SSIM absent: {} of {} images lack ground truth",
                chosen.len() - truths.len(),
                chosen.len()
            ));
            None
        };
        let fid_value = if truths.len() >= 2 && generated.len() >= 2 {
            let score = fid(&generated, &truths, extractor)?;
            if !score.warnings.is_empty() {
                notes.push("singular covariance".into());
            }
            Some(score.value)
        } else {
            notes.push("FID absent: fewer than 2 images".into());
            None
        };
        rows.push(ReportRow {
            method: method.to_string(),
            checkpoint: label.to_string(),
            subset: subset.name.clone(),
            images: chosen.len(),
            ssim: ssim_value,
            fid: fid_value,
            note: notes.join("; "),
            failed: false,
        });
    }
    Ok(rows)
}

/// Short name of a checkpoint directory; run-internal names such as `last`
/// are prefixed with the run directory (skipping a `checkpoints` folder).
pub fn checkpoint_label(dir: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let own = name(dir);
    if own == "last" || own == "best" || own.starts_with("epoch_") {
        let mut parent = dir.parent();
        if parent.map(name).as_deref() == Some("checkpoints") {
            parent = parent.and_then(Path::parent);
        }
        if let Some(run) = parent.map(name).filter(|p| !p.is_empty()) {
            return format!("{run}/{own}");
        }
    }
    own
}

pub fn evaluate_checkpoint(
    checkpoint: &Path,
    test: &[TestExample],
    subsets: &[Subset],
    extractor: &dyn FeatureExtractor,
) -> Result<MetricsReport> {
    let state = load_checkpoint(checkpoint, None)?;
    let method: Method = state.config.method;
    let rows = evaluate_translator(
        state.translator(),
        method.display_name(),
        &checkpoint_label(checkpoint),
        test,
        subsets,
        extractor,
    )?;
    Ok(MetricsReport {
        extractor: extractor.name().to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::Scene;
    use crate::nn::Identity;

    fn set(ids: std::ops::Range<u64>, size: usize) -> Vec<ImageTensor> {
        ids.map(|i| Scene::generate(i, size, 9).underwater_image().unwrap()).collect()
    }

    fn test_set(n: u64, with_truth: bool) -> Vec<TestExample> {
        (0..n)
            .map(|i| {
                let s = Scene::generate(i, 16, 4);
                TestExample {
                    scene_id: format!("{i:04}"),
                    x: s.uniform_image().unwrap(),
                    y: with_truth.then(|| s.underwater_image().unwrap()),
                }
            })
            .collect()
    }

    #[test]
    fn fid_of_a_set_with_itself_is_zero() {
        let a = set(0..12, 16);
        let score = fid(&a, &a, &RandomProjection::default()).unwrap();
        assert!(score.value.abs() < 1e-5, "{}", score.value);
        assert!(!score.warnings.is_empty());
    }

    #[test]
    fn fid_is_permutation_invariant() {
        let ex = RandomProjection::default();
        let (a, b) = (set(0..10, 16), set(10..20, 16));
        let base = fid(&a, &b, &ex).unwrap().value;
        let (mut ra, mut rb) = (a.clone(), b.clone());
        ra.reverse();
        rb.rotate_left(3);
        assert!((fid(&ra, &rb, &ex).unwrap().value - base).abs() < 1e-8 * (1.0 + base));
        assert!(base > 0.0);
    }

    #[test]
    fn fid_between_halves_shrinks_with_sample_size() {
        let ex = RandomProjection::default();
        let pool = set(0..50, 32);
        let values: Vec<f64> = [10usize, 25, 50]
            .iter()
            .map(|&n| fid(&pool[..n / 2], &pool[n / 2..n], &ex).unwrap().value)
            .collect();
        assert!(values.iter().all(|&v| v > 0.0), "{values:?}");
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    }

    #[test]
    fn fid_needs_two_images() {
        let a = set(0..1, 16);
        assert!(fid(&a, &set(0..3, 16), &RandomProjection::default()).is_err());
    }

    #[test]
    fn identity_baseline_row() {
        let test = test_set(6, true);
        let subsets = [Subset::new("six", ["0000", "0001", "0002"]), Subset::all("full", &test)];
        let rows = evaluate_translator(&Identity, "identity", "", &test, &subsets, &RandomProjection::default()).unwrap();
        assert_eq!(rows.len(), 2);
        let expected: f64 = test[..3].iter().map(|e| ssim(&e.x, e.y.as_ref().unwrap()).unwrap()).sum::<f64>() / 3.0;
        assert!((rows[0].ssim.unwrap() - expected).abs() < 1e-12);
        assert_eq!(rows[1].images, 6);
        assert!(rows[1].fid.unwrap() > 0.0);
    }

    #[test]
    fn missing_ground_truth_drops_ssim_only() {
        let mut test = test_set(4, true);
        test[1].y = None;
        let rows = evaluate_translator(&Identity, "identity", "", &test, &[Subset::all("all", &test)], &RandomProjection::default()).unwrap();
        assert!(rows[0].ssim.is_none());
        assert!(rows[0].fid.is_some());
        assert!(rows[0].note.contains("SSIM absent"));
    }

    #[test]
    fn empty_or_unknown_subsets_fail() {
        let test = test_set(2, true);
        let ex = RandomProjection::default();
        let empty = Subset::new("none", Vec::<String>::new());
        assert!(matches!(evaluate_translator(&Identity, "i", "", &test, &[empty], &ex), Err(Error::InvalidInput(_))));
        let unknown = Subset::new("x", ["9999"]);
        assert!(matches!(evaluate_translator(&Identity, "i", "", &test, &[unknown], &ex), Err(Error::Data(_))));
    }

    #[test]
    fn labels() {
        assert_eq!(checkpoint_label(Path::new("/runs/cut/last")), "cut/last");
        assert_eq!(checkpoint_label(Path::new("/runs/cut/checkpoints/epoch_0004")), "cut/epoch_0004");
        assert_eq!(checkpoint_label(Path::new("/ckpt/pix2pix")), "pix2pix");
    }
}
