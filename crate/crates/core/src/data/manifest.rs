use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor::ValueRange;

/// Environment variable consulted when a manifest does not name its root.
pub const DATA_ROOT_ENV: &str = "UWT_DATA_ROOT";

/// How files in different folders are matched to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Same file stem (extension ignored).
    #[default]
    Exact,
    /// Same trailing run of digits in the stem, e.g. `img_0042` and `0042`.
    NumericSuffix,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    root: Option<PathBuf>,
    #[serde(default = "default_uniform")]
    uniform_lighting: String,
    #[serde(default = "default_underwater")]
    underwater: String,
    depth: Option<String>,
    depth_min: Option<f64>,
    depth_max: Option<f64>,
    image_size: Option<usize>,
    #[serde(default)]
    matching: Matching,
}

fn default_uniform() -> String {
    "B".into()
}

fn default_underwater() -> String {
    "A".into()
}

/// Where a dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub uniform_lighting: String,
    pub underwater: String,
    pub depth: Option<String>,
    /// Raw depth range mapped onto `[-1, 1]`; `None` uses the file's bit depth.
    pub depth_range: Option<ValueRange>,
    /// Square side every image is resized to; `None` keeps native sizes.
    pub image_size: Option<usize>,
    pub matching: Matching,
}

impl DatasetManifest {
    /// Conventional `root/{A,B,depth}` layout.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            uniform_lighting: default_uniform(),
            underwater: default_underwater(),
            depth: Some("depth".into()),
            depth_range: None,
            image_size: None,
            matching: Matching::Exact,
        }
    }

    /// Parses a manifest. A relative `root` is resolved against `base_dir`;
    /// a missing one falls back to `$UWT_DATA_ROOT`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ManifestFile =
            toml::from_str(text).map_err(|e| Error::config("manifest", e.to_string()))?;
        let root = match file.root {
            Some(r) if r.is_absolute() => r,
            Some(r) => base_dir.join(r),
            None => std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).ok_or_else(|| {
                Error::config("manifest.root", format!("not set and ${DATA_ROOT_ENV} is undefined"))
            })?,
        };
        let depth_range = match (file.depth_min, file.depth_max) {
            (Some(min), Some(max)) => {
                if !(max > min) {
                    return Err(Error::config(
                        "manifest.depth_max",
                        format!("depth range [{min}, {max}] is degenerate"),
                    ));
                }
                Some(ValueRange::new(min, max))
            }
            (None, None) => None,
            _ => {
                return Err(Error::config(
                    "manifest.depth_min",
                    "depth_min and depth_max must be given together",
                ))
            }
        };
        if file.image_size == Some(0) {
            return Err(Error::config("manifest.image_size", "must be positive"));
        }
        Ok(Self {
            root,
            uniform_lighting: file.uniform_lighting,
            underwater: file.underwater,
            depth: file.depth,
            depth_range,
            image_size: file.image_size,
            matching: file.matching,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn uniform_dir(&self) -> PathBuf {
        self.root.join(&self.uniform_lighting)
    }

    pub fn underwater_dir(&self) -> PathBuf {
        self.root.join(&self.underwater)
    }

    pub fn depth_dir(&self) -> Option<PathBuf> {
        self.depth.as_ref().map(|d| self.root.join(d))
    }
}
