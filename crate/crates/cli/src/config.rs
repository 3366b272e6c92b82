//! Pipeline configuration file: one JSON object with a section per command.
//! Every field is optional; command-line flags override file values.

use std::path::{Path, PathBuf};

use fieldct::calibration::CalibrationConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub simulate: SimulateSection,
    pub preprocess: PreprocessSection,
    /// Falls back to the run's scenario settings, then to library defaults.
    pub calibration: Option<CalibrationConfig>,
    pub reconstruct: ReconstructSection,
}

/// Relative paths resolve against the directory of the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Run directory; every other path defaults to a location inside it.
    pub output_dir: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    /// Raw stack with dark and flat frames.
    pub raw_dir: Option<PathBuf>,
    /// Preprocessed line-integral stack.
    pub stack_dir: Option<PathBuf>,
    pub phantom: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub noise_off: bool,
    /// Overrides the scenario's stuck-pixel count.
    pub defects: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub defect_map: bool,
    pub inpaint: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            defect_map: true,
            inpaint: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub block_dims: [usize; 3],
    /// Gray-value window `[low, high]` of the slice image; the slice's own
    /// range when absent.
    pub window: Option<[f32; 2]>,
    pub ideal_trajectory: bool,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            dims: [128; 3],
            spacing_mm: [0.4; 3],
            block_dims: [64; 3],
            window: None,
            ideal_trajectory: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Makes relative paths absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.output_dir,
            &mut p.scenario,
            &mut p.raw_dir,
            &mut p.stack_dir,
            &mut p.phantom,
            &mut p.calibration,
            &mut p.truth,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }
}
