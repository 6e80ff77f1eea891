//! A run configuration file: `[train]` and `[contrastive]` hold the
//! [`TrainConfig`], `[data]` says where the images are.
//!
//! ```toml
//! [train]
//! method = "cut_depth"
//! epochs = 200
//!
//! [data]
//! manifest = "varos.toml"        # or inline: root = "/data/varos"
//! source_range = [1011, 2101]    # unpaired methods only
//! target_range = [0, 1011]
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::config::TrainConfig;
use crate::data::{DatasetManifest, DATA_ROOT_ENV};
use crate::error::{Error, Result};

/// Uniform-lighting sequence ids used as unpaired sources by default.
pub const DEFAULT_SOURCE_RANGE: Range<u64> = 1011..2101;
/// Underwater sequence ids used as unpaired targets by default.
pub const DEFAULT_TARGET_RANGE: Range<u64> = 0..1011;

const SECTIONS: [&str; 3] = ["train", "contrastive", "data"];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    manifest: Option<PathBuf>,
    root: Option<PathBuf>,
    uniform_lighting: Option<String>,
    underwater: Option<String>,
    depth: Option<String>,
    depth_min: Option<f64>,
    depth_max: Option<f64>,
    image_size: Option<usize>,
    matching: Option<String>,
    source_range: Option<[u64; 2]>,
    target_range: Option<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub manifest: DatasetManifest,
    pub source_range: Range<u64>,
    pub target_range: Range<u64>,
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `--set` override. Keys without a section belong to `[train]`.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("`{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let (section, field) = match key.split_once('.') {
        Some((s, f)) if SECTIONS.contains(&s) => (s, f),
        Some((s, _)) => return Err(Error::config(key, format!("unknown section `{s}`"))),
        None => ("train", key),
    };
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| Error::config(section, "expected a table"))?;
    sub.insert(field.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn range(field: &str, v: Option<[u64; 2]>, default: Range<u64>) -> Result<Range<u64>> {
    match v {
        None => Ok(default),
        Some([lo, hi]) if lo < hi => Ok(lo..hi),
        Some([lo, hi]) => Err(Error::config(field, format!("[{lo}, {hi}) is empty"))),
    }
}

impl RunConfig {
    /// Resolves `table` (already carrying any overrides). Relative paths are
    /// taken from `base_dir`.
    pub fn from_table(table: &toml::Table, base_dir: &Path) -> Result<Self> {
        if let Some(bad) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::config(bad.as_str(), "unknown section"));
        }
        let train = TrainConfig::from_table(table)?;
        train.validate()?;
        let data: DataSection = match table.get("data") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::config("data", e.message().to_string()))?,
            None => DataSection::default(),
        };
        let inline = data.root.is_some()
            || data.uniform_lighting.is_some()
            || data.underwater.is_some()
            || data.depth.is_some()
            || data.depth_min.is_some()
            || data.depth_max.is_some()
            || data.image_size.is_some()
            || data.matching.is_some();
        let mut manifest = match (&data.manifest, inline) {
            (Some(_), true) => {
                return Err(Error::config(
                    "data.manifest",
                    "give either a manifest file or inline manifest keys, not both",
                ))
            }
            (Some(path), false) => {
                let path = base_dir.join(path);
                if !path.is_file() {
                    return Err(Error::config(
                        "data.manifest",
                        format!("manifest file {} does not exist", path.display()),
                    ));
                }
                DatasetManifest::load(&path)?
            }
            (None, true) => {
                let mut t = toml::Table::new();
                let put = |t: &mut toml::Table, k: &str, v: Option<toml::Value>| {
                    if let Some(v) = v {
                        t.insert(k.to_string(), v);
                    }
                };
                let s = |v: &Option<String>| v.clone().map(toml::Value::String);
                put(&mut t, "root", data.root.as_ref().map(|r| toml::Value::String(r.to_string_lossy().into_owned())));
                put(&mut t, "uniform_lighting", s(&data.uniform_lighting));
                put(&mut t, "underwater", s(&data.underwater));
                put(&mut t, "depth", s(&data.depth));
                put(&mut t, "depth_min", data.depth_min.map(toml::Value::Float));
                put(&mut t, "depth_max", data.depth_max.map(toml::Value::Float));
                put(&mut t, "image_size", data.image_size.map(|v| toml::Value::Integer(v as i64)));
                put(&mut t, "matching", s(&data.matching));
                DatasetManifest::from_toml_str(&toml::to_string(&t).unwrap_or_default(), base_dir)?
            }
            (None, false) => match std::env::var_os(DATA_ROOT_ENV) {
                Some(root) => DatasetManifest::new(PathBuf::from(root)),
                None => {
                    return Err(Error::config(
                        "data.manifest",
                        format!("no manifest given and ${DATA_ROOT_ENV} is not set"),
                    ))
                }
            },
        };
        match manifest.image_size {
            None => manifest.image_size = Some(train.image_size),
            Some(s) if s != train.image_size => {
                return Err(Error::config(
                    "data.image_size",
                    format!("manifest resizes to {s} but train.image_size is {}", train.image_size),
                ))
            }
            Some(_) => {}
        }
        Ok(Self {
            train,
            manifest,
            source_range: range("data.source_range", data.source_range, DEFAULT_SOURCE_RANGE)?,
            target_range: range("data.target_range", data.target_range, DEFAULT_TARGET_RANGE)?,
        })
    }

    /// Reads `path` (if any), applies `overrides` in order and resolves.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e: toml::de::Error| Error::config("--config", format!("{}: {}", p.display(), e.message())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::from(".")),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(&table, &base)
    }

    /// Complete, self-contained configuration: rerunning from it reproduces the run.
    pub fn to_toml_string(&self) -> String {
        let m = &self.manifest;
        let mut data = toml::Table::new();
        let root = std::path::absolute(&m.root).unwrap_or_else(|_| m.root.clone());
        data.insert("root".into(), toml::Value::String(root.to_string_lossy().into_owned()));
        data.insert("uniform_lighting".into(), m.uniform_lighting.clone().into());
        data.insert("underwater".into(), m.underwater.clone().into());
        if let Some(d) = &m.depth {
            data.insert("depth".into(), d.clone().into());
        }
        if let Some(r) = m.depth_range {
            data.insert("depth_min".into(), r.min.into());
            data.insert("depth_max".into(), r.max.into());
        }
        if let Some(s) = m.image_size {
            data.insert("image_size".into(), (s as i64).into());
        }
        let matching = match m.matching {
            crate::data::Matching::Exact => "exact",
            crate::data::Matching::NumericSuffix => "numeric_suffix",
        };
        data.insert("matching".into(), matching.into());
        let r = |r: &Range<u64>| toml::Value::Array(vec![(r.start as i64).into(), (r.end as i64).into()]);
        data.insert("source_range".into(), r(&self.source_range));
        data.insert("target_range".into(), r(&self.target_range));
        let mut wrapper = toml::Table::new();
        wrapper.insert("data".into(), toml::Value::Table(data));
        format!(
            "{}\n{}",
            self.train.to_toml_string(),
            toml::to_string(&wrapper).unwrap_or_default()
        )
    }
}
