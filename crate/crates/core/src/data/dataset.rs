use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::io::{is_image_file, load_depth, load_rgb};
use super::manifest::{DatasetManifest, Matching};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// One aligned training pair: uniform-lighting input (optionally with depth)
/// and its underwater rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub x: ImageTensor,
    pub y: ImageTensor,
    pub scene_id: String,
}

/// Uniform-lighting sources and underwater targets with no correspondence.
#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub source: Vec<ImageTensor>,
    pub target: Vec<ImageTensor>,
    pub source_ids: Vec<u64>,
    pub target_ids: Vec<u64>,
    /// Set when the requested ranges overlap, which breaks the unpaired premise.
    pub overlapping_ranges: bool,
}

impl UnpairedDataset {
    pub fn target_has_depth(&self) -> bool {
        self.target.first().map(|t| t.has_depth()).unwrap_or(false)
    }
}

/// Trailing run of ASCII digits in a file stem.
pub fn numeric_suffix(stem: &str) -> Option<u64> {
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

/// Image files directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot read folder {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!("folder {} contains no images", dir.display())));
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Maps matching keys to files of `dir`; duplicate keys are an error.
fn index_folder(dir: &Path, matching: Matching) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in list_images(dir)? {
        let s = stem(&path);
        let key = match matching {
            Matching::Exact => s.clone(),
            Matching::NumericSuffix => match numeric_suffix(&s) {
                Some(n) => n.to_string(),
                None => {
                    return Err(Error::Data(format!(
                        "{} has no numeric suffix to match on",
                        path.display()
                    )))
                }
            },
        };
        if let Some(prev) = map.insert(key.clone(), path.clone()) {
            return Err(Error::Data(format!(
                "{} and {} both match key `{key}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Maps numeric sequence ids to files of `dir`.
fn index_sequence(dir: &Path) -> Result<BTreeMap<u64, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in list_images(dir)? {
        let id = numeric_suffix(&stem(&path))
            .ok_or_else(|| Error::Data(format!("{} has no sequence number", path.display())))?;
        if let Some(prev) = map.insert(id, path.clone()) {
            return Err(Error::Data(format!(
                "{} and {} share sequence id {id}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(map)
}

fn require_dir(dir: &Path, role: &str) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{role} folder {} does not exist", dir.display())));
    }
    Ok(())
}

/// Adds a depth plane as channel 3.
pub fn assemble_rgbd(rgb: &ImageTensor, depth: &ImageTensor) -> Result<ImageTensor> {
    if rgb.channels() != 3 || depth.channels() != 1 {
        return Err(Error::Shape(format!(
            "RGBD assembly needs 3 + 1 channels, got {} + {}",
            rgb.channels(),
            depth.channels()
        )));
    }
    if (rgb.height(), rgb.width()) != (depth.height(), depth.width()) {
        return Err(Error::Shape(format!(
            "rgb is {}x{} but depth is {}x{}",
            rgb.height(),
            rgb.width(),
            depth.height(),
            depth.width()
        )));
    }
    let mut data = rgb.data().to_vec();
    data.extend_from_slice(depth.data());
    ImageTensor::new(4, rgb.height(), rgb.width(), data)
}

fn load_with_depth(manifest: &DatasetManifest, rgb: &Path, depth: Option<&Path>) -> Result<ImageTensor> {
    let img = load_rgb(rgb, manifest.image_size)?;
    match depth {
        None => Ok(img),
        Some(d) => {
            let depth = load_depth(d, manifest.depth_range, manifest.image_size)?;
            assemble_rgbd(&img, &depth).map_err(|e| Error::Data(format!("{}: {e}", rgb.display())))
        }
    }
}

/// Loads every uniform-lighting/underwater pair. With `with_depth` the inputs
/// are 4-channel. Names present in only one folder are a hard error.
pub fn load_paired(manifest: &DatasetManifest, with_depth: bool) -> Result<Vec<PairedExample>> {
    let (xdir, ydir) = (manifest.uniform_dir(), manifest.underwater_dir());
    require_dir(&xdir, "uniform-lighting")?;
    require_dir(&ydir, "underwater")?;
    let xs = index_folder(&xdir, manifest.matching)?;
    let ys = index_folder(&ydir, manifest.matching)?;
    let ds = if with_depth {
        let dir = manifest
            .depth_dir()
            .ok_or_else(|| Error::Data("depth requested but the manifest has no depth folder".into()))?;
        require_dir(&dir, "depth")?;
        Some(index_folder(&dir, manifest.matching)?)
    } else {
        None
    };

    let mut offenders: Vec<String> = Vec::new();
    for (k, p) in &xs {
        if !ys.contains_key(k) {
            offenders.push(format!("{} (no underwater match)", p.display()));
        }
        if let Some(ds) = &ds {
            if !ds.contains_key(k) {
                offenders.push(format!("{} (no depth match)", p.display()));
            }
        }
    }
    for (k, p) in &ys {
        if !xs.contains_key(k) {
            offenders.push(format!("{} (no uniform-lighting match)", p.display()));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Data(format!("unmatched files: {}", offenders.join(", "))));
    }

    let mut out = Vec::with_capacity(xs.len());
    for (key, xp) in &xs {
        let depth = ds.as_ref().map(|d| d[key].as_path());
        let x = load_with_depth(manifest, xp, depth)?;
        let y = load_rgb(&ys[key], manifest.image_size)?;
        if (x.height(), x.width()) != (y.height(), y.width()) {
            return Err(Error::Data(format!(
                "scene {key}: input is {}x{} but ground truth is {}x{}",
                x.height(),
                x.width(),
                y.height(),
                y.width()
            )));
        }
        out.push(PairedExample {
            x,
            y,
            scene_id: key.clone(),
        });
    }
    Ok(out)
}

/// One evaluation input with its ground truth, when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct TestExample {
    pub scene_id: String,
    pub x: ImageTensor,
    pub y: Option<ImageTensor>,
}

/// Every uniform-lighting frame of `manifest`, paired with its underwater
/// counterpart where one exists. Depth, when requested, is required for
/// every input.
pub fn load_test_set(manifest: &DatasetManifest, with_depth: bool) -> Result<Vec<TestExample>> {
    let xdir = manifest.uniform_dir();
    require_dir(&xdir, "uniform-lighting")?;
    let xs = index_folder(&xdir, manifest.matching)?;
    let ydir = manifest.underwater_dir();
    let ys = if ydir.is_dir() { index_folder(&ydir, manifest.matching)? } else { BTreeMap::new() };
    let ds = if with_depth {
        let dir = manifest
            .depth_dir()
            .ok_or_else(|| Error::Data("depth requested but the manifest has no depth folder".into()))?;
        require_dir(&dir, "depth")?;
        Some(index_folder(&dir, manifest.matching)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(xs.len());
    for (key, xp) in &xs {
        let depth = match &ds {
            Some(d) => Some(
                d.get(key)
                    .ok_or_else(|| Error::Data(format!("{} has no depth map", xp.display())))?
                    .as_path(),
            ),
            None => None,
        };
        let x = load_with_depth(manifest, xp, depth)?;
        let y = ys.get(key).map(|p| load_rgb(p, manifest.image_size)).transpose()?;
        out.push(TestExample {
            scene_id: key.clone(),
            x,
            y,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no images in {}", xdir.display())));
    }
    Ok(out)
}

fn ranges_overlap(a: &Range<u64>, b: &Range<u64>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Sources are uniform-lighting frames with ids in `source_range`, targets
/// underwater frames with ids in `target_range`. Depth is attached to the
/// sources when `with_depth`, and to the targets whenever every target frame
/// has a depth map.
pub fn build_unpaired_split(
    manifest: &DatasetManifest,
    source_range: Range<u64>,
    target_range: Range<u64>,
    with_depth: bool,
) -> Result<UnpairedDataset> {
    if source_range.is_empty() || target_range.is_empty() {
        return Err(Error::Data(format!(
            "empty id range (source {source_range:?}, target {target_range:?})"
        )));
    }
    let overlapping = ranges_overlap(&source_range, &target_range);
    if overlapping {
        log::warn!(
            "source ids {source_range:?} and target ids {target_range:?} overlap; the split is not unpaired"
        );
    }
    let (xdir, ydir) = (manifest.uniform_dir(), manifest.underwater_dir());
    require_dir(&xdir, "uniform-lighting")?;
    require_dir(&ydir, "underwater")?;
    let xs = index_sequence(&xdir)?;
    let ys = index_sequence(&ydir)?;
    let depth = match manifest.depth_dir() {
        Some(dir) if dir.is_dir() => Some(index_sequence(&dir)?),
        Some(dir) if with_depth => return Err(Error::Data(format!("depth folder {} does not exist", dir.display()))),
        None if with_depth => return Err(Error::Data("depth requested but the manifest has no depth folder".into())),
        _ => None,
    };

    let source_ids: Vec<u64> = xs.range(source_range.clone()).map(|(&id, _)| id).collect();
    let target_ids: Vec<u64> = ys.range(target_range.clone()).map(|(&id, _)| id).collect();
    if source_ids.is_empty() {
        return Err(Error::Data(format!("no uniform-lighting frames with ids in {source_range:?}")));
    }
    if target_ids.is_empty() {
        return Err(Error::Data(format!("no underwater frames with ids in {target_range:?}")));
    }

    let depth_for = |id: u64, required: bool| -> Result<Option<&Path>> {
        match depth.as_ref().and_then(|d| d.get(&id)) {
            Some(p) => Ok(Some(p.as_path())),
            None if required => Err(Error::Data(format!("frame {id} has no depth map"))),
            None => Ok(None),
        }
    };
    let mut source = Vec::with_capacity(source_ids.len());
    for id in &source_ids {
        let d = if with_depth { depth_for(*id, true)? } else { None };
        source.push(load_with_depth(manifest, &xs[id], d)?);
    }
    let target_depth = with_depth
        && depth
            .as_ref()
            .map(|d| target_ids.iter().all(|id| d.contains_key(id)))
            .unwrap_or(false);
    let mut target = Vec::with_capacity(target_ids.len());
    for id in &target_ids {
        let d = if target_depth { depth_for(*id, true)? } else { None };
        target.push(load_with_depth(manifest, &ys[id], d)?);
    }
    Ok(UnpairedDataset {
        source,
        target,
        source_ids,
        target_ids,
        overlapping_ranges: overlapping,
    })
}

/// Places `x` and `y` next to each other (the paired training format).
pub fn concat_side_by_side(x: &ImageTensor, y: &ImageTensor) -> Result<ImageTensor> {
    if x.channels() != y.channels() || x.height() != y.height() {
        return Err(Error::Shape(format!(
            "side-by-side needs equal height and channels, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (c, h) = (x.channels(), x.height());
    let (wx, wy) = (x.width(), y.width());
    let mut data = Vec::with_capacity(c * h * (wx + wy));
    for ch in 0..c {
        let (px, py) = (x.plane(ch), y.plane(ch));
        for row in 0..h {
            data.extend_from_slice(&px[row * wx..(row + 1) * wx]);
            data.extend_from_slice(&py[row * wy..(row + 1) * wy]);
        }
    }
    ImageTensor::new(c, h, wx + wy, data)
}

/// Inverse of [`concat_side_by_side`] for equal halves.
pub fn split_side_by_side(image: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    let (c, h, w) = image.shape();
    if w % 2 != 0 {
        return Err(Error::Shape(format!("cannot split odd width {w} into halves")));
    }
    let half = w / 2;
    let mut left = Vec::with_capacity(c * h * half);
    let mut right = Vec::with_capacity(c * h * half);
    for ch in 0..c {
        let p = image.plane(ch);
        for row in 0..h {
            left.extend_from_slice(&p[row * w..row * w + half]);
            right.extend_from_slice(&p[row * w + half..(row + 1) * w]);
        }
    }
    Ok((ImageTensor::new(c, h, half, left)?, ImageTensor::new(c, h, half, right)?))
}
