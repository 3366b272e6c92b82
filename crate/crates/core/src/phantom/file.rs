//! Phantom file: UTF-8 JSON with measured bead positions.
//!
//! ```json
//! {"version":1,"elements":[{"id":0,"beads":[{"center_mm":[x,y,z],"radius_mm":r}, ...]}],"frame_note":"..."}
//! ```
//!
//! Floats are written in shortest round-trip form (at most 17 significant
//! digits), so reading a written file reproduces every value bit for bit.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CalibrationElement, PhantomModel};
use crate::rawio::write_atomic;
use crate::{Error, Result};

pub const PHANTOM_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PhantomFile {
    version: u32,
    elements: Vec<ElementRecord>,
    frame_note: String,
}

#[derive(Serialize, Deserialize)]
struct ElementRecord {
    id: u32,
    beads: Vec<BeadRecord>,
}

#[derive(Serialize, Deserialize)]
struct BeadRecord {
    center_mm: [f64; 3],
    radius_mm: f64,
}

pub fn phantom_to_json(model: &PhantomModel) -> String {
    let file = PhantomFile {
        version: PHANTOM_FILE_VERSION,
        elements: model
            .elements()
            .iter()
            .map(|e| ElementRecord {
                id: e.id,
                beads: e
                    .bead_centers
                    .iter()
                    .zip(e.bead_radii)
                    .map(|(c, r)| BeadRecord {
                        center_mm: [c.x, c.y, c.z],
                        radius_mm: r,
                    })
                    .collect(),
            })
            .collect(),
        frame_note: model.frame_note.clone(),
    };
    serde_json::to_string_pretty(&file).expect("phantom serializes")
}

pub fn phantom_from_json(text: &str, path: &Path) -> Result<PhantomModel> {
    let file: PhantomFile = serde_json::from_str(text)?;
    let bad = |reason: String| Error::Format {
        path: path.to_owned(),
        reason,
    };
    if file.version != PHANTOM_FILE_VERSION {
        return Err(bad(format!("unsupported phantom version {}", file.version)));
    }
    let elements = file
        .elements
        .into_iter()
        .map(|rec| {
            let beads: [BeadRecord; 4] = rec
                .beads
                .try_into()
                .map_err(|_| bad(format!("element {} must have exactly 4 beads", rec.id)))?;
            Ok(CalibrationElement {
                id: rec.id,
                bead_centers: beads.each_ref().map(|b| Vector3::from(b.center_mm)),
                bead_radii: beads.each_ref().map(|b| b.radius_mm),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PhantomModel::new(elements, file.frame_note)
}

pub fn write_phantom(path: &Path, model: &PhantomModel) -> Result<()> {
    write_atomic(path, phantom_to_json(model).as_bytes())
}

pub fn read_phantom(path: &Path) -> Result<PhantomModel> {
    let text = std::fs::read_to_string(path)?;
    phantom_from_json(&text, path)
}
