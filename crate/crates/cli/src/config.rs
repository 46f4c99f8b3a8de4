//! Run configuration files.
//!
//! The format is TOML restricted to flat keys and two kinds of tables:
//!
//! ```toml
//! image = "enhanced.png"      # paths are relative to this file
//! seg = "soft_seg.png"
//! out = "results"             # optional
//! kernel_cache = "kernels"    # optional
//!
//! [defaults]                  # any ClusterParams field
//! H = 7
//! sigma = 0.05
//! sigma2 = 0.1
//!
//! [patch.3]                   # overrides for patch id 3
//! sigma = 0.02
//! sigma2 = 0.3
//! ```
//!
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use vesselunits::pipeline::{ClusterParams, ParamOverrides, RunParams};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    image: Option<PathBuf>,
    seg: Option<PathBuf>,
    out: Option<PathBuf>,
    kernel_cache: Option<PathBuf>,
    #[serde(default)]
    defaults: ParamOverrides,
    #[serde(default)]
    patch: BTreeMap<String, ParamOverrides>,
}

/// Inputs, outputs and parameters of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub image: Option<PathBuf>,
    pub seg: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub kernel_cache: Option<PathBuf>,
    pub params: RunParams,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut overrides = BTreeMap::new();
        for (key, o) in raw.patch {
            let id: usize = key
                .parse()
                .with_context(|| format!("[patch.{key}]: patch ids are non-negative integers"))?;
            overrides.insert(id, o);
        }
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        Ok(Self {
            image: resolve(raw.image),
            seg: resolve(raw.seg),
            out: resolve(raw.out),
            kernel_cache: resolve(raw.kernel_cache),
            params: RunParams {
                defaults: raw.defaults.apply(&ClusterParams::default()),
                overrides,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Checks parameter ranges for the defaults and every override.
    pub fn validate(&self) -> Result<()> {
        self.params.defaults.validate().context("[defaults]")?;
        for (id, o) in &self.params.overrides {
            o.apply(&self.params.defaults)
                .validate()
                .with_context(|| format!("[patch.{id}]"))?;
        }
        Ok(())
    }

    /// Input paths, which must name existing files.
    pub fn inputs(&self) -> Result<(&Path, &Path)> {
        let (Some(image), Some(seg)) = (&self.image, &self.seg) else {
            bail!("both an enhanced image and a soft segmentation are required");
        };
        for p in [image, seg] {
            if !p.is_file() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok((image, seg))
    }
}

/// TOML fragment holding one patch's overrides, as pasted into a config.
pub fn override_fragment(id: usize, o: &ParamOverrides) -> String {
    let table = toml::Table::try_from(o).expect("overrides serialize");
    format!("[patch.{id}]\n{table}")
}
