//! Reproducible simulation setups stored as JSON.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnalyticPhantom, Ellipsoid, NoiseConfig, TrajectoryConfig};
use crate::calibration::CalibrationConfig;
use crate::detection::DetectParams;
use crate::phantom::{generate_phantom, PhantomDesign, PhantomModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub trajectory: TrajectoryConfig,
    pub phantom: PhantomDesign,
    pub specimen: Vec<Ellipsoid>,
    /// Attenuation of the marker beads, 1/mm.
    pub bead_density: f64,
    pub noise: NoiseConfig,
    pub defect_count: usize,
    pub defect_seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryConfig::default().resampled(512, 512),
            phantom: PhantomDesign::default(),
            specimen: default_specimen(),
            bead_density: 0.15,
            noise: NoiseConfig::default(),
            defect_count: 0,
            defect_seed: 17,
        }
    }
}

/// Bead search band per side for scenario renders, as a fraction of the
/// image height.
pub const SCENARIO_BAND_FRACTION: f64 = 0.45;

/// Soft-tissue-like body with a denser inclusion and a cavity, kept between
/// the two marker rings.
pub fn default_specimen() -> Vec<Ellipsoid> {
    let mut body = Ellipsoid::sphere(Vector3::zeros(), 1.0, 0.02);
    body.semi_axes_mm = [18.0, 13.0, 10.0];
    let mut inclusion = Ellipsoid::sphere(Vector3::new(6.0, 3.0, 2.0), 4.0, 0.015);
    inclusion.semi_axes_mm = [4.0, 3.0, 5.0];
    let cavity = Ellipsoid::sphere(Vector3::new(-7.0, -2.0, -3.0), 3.0, -0.01);
    vec![body, inclusion, cavity]
}

fn merge(base: &mut Value, given: Value) {
    match (base, given) {
        (Value::Object(b), Value::Object(g)) => {
            for (k, v) in g {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl Scenario {
    /// Fields missing at any depth take the values of [`Scenario::default`],
    /// so a partial `trajectory` keeps the scenario detector rather than the
    /// trajectory defaults.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let format = |e: serde_json::Error| Error::Format {
            path: path.to_owned(),
            reason: e.to_string(),
        };
        let given: Value = serde_json::from_str(text).map_err(format)?;
        let mut merged = serde_json::to_value(Scenario::default())?;
        merge(&mut merged, given);
        let s: Scenario = serde_json::from_value(merged).map_err(format)?;
        s.trajectory.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn phantom_model(&self) -> Result<PhantomModel> {
        generate_phantom(&self.phantom)
    }

    pub fn analytic_phantom(&self, model: &PhantomModel) -> Result<AnalyticPhantom> {
        AnalyticPhantom::new(self.specimen.clone(), Some(model), self.bead_density)
    }

    /// Calibration settings suited to this scenario's renders: the marker
    /// rings reach further into the image than the default search bands,
    /// and the match tolerance follows the phantom's descriptor margin.
    pub fn calibration_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            detection: DetectParams {
                roi_band_fraction: Some(SCENARIO_BAND_FRACTION),
                ..Default::default()
            },
            match_tol: self.phantom.cr_margin / 3.0,
            ..Default::default()
        }
    }
}
