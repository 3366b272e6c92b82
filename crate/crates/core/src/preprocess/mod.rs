//! Raw detector frames to line-integral projections.

mod defects;
mod stack;

pub use defects::{build_defect_map, inpaint_defects, DefectMap, DEAD_COUNT_TOL, MAX_DEFECT_EXTENT};
pub use stack::{read_reference_frames, write_reference_frames, ProjectionStack, StackKind};

use crate::{par, Error, Image, Result};

/// Lower clamp for normalized transmittance; keeps the logarithm finite.
pub const EPSILON: f32 = 1e-6;

/// Informational acquisition settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Exposure {
    pub kv: f64,
    pub ma: f64,
    pub ms: f64,
}

/// Detector counts of one exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub pixels: Image,
    pub exposure: Exposure,
}

impl RawFrame {
    pub fn new(pixels: Image) -> Result<Self> {
        if !pixels.data().iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidInput("raw frame has negative or non-finite counts".into()));
        }
        Ok(Self {
            pixels,
            exposure: Exposure::default(),
        })
    }

    /// Pixelwise mean of several frames.
    pub fn average(frames: &[RawFrame]) -> Result<RawFrame> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("no frames to average".into()))?;
        let (w, h) = first.pixels.dims();
        if frames.iter().any(|f| f.pixels.dims() != (w, h)) {
            return Err(Error::InvalidInput("frames differ in size".into()));
        }
        let mut acc = vec![0f64; w * h];
        for f in frames {
            for (a, v) in acc.iter_mut().zip(f.pixels.data()) {
                *a += *v as f64;
            }
        }
        let n = frames.len() as f64;
        Ok(RawFrame {
            pixels: Image::from_vec(w, h, acc.into_iter().map(|a| (a / n) as f32).collect()),
            exposure: first.exposure,
        })
    }
}

/// `(I - dark) / (I0 - dark)` clamped to `[EPSILON, 1]`.
///
/// Pixels flagged in `defects` are exempt from the flat-field check; where
/// their denominator is not positive they read 1.
pub fn normalize(i: &RawFrame, i0: &RawFrame, dark: &RawFrame, defects: Option<&DefectMap>) -> Result<Image> {
    let (w, h) = i.pixels.dims();
    if i0.pixels.dims() != (w, h) || dark.pixels.dims() != (w, h) {
        return Err(Error::InvalidInput("frame, flat and dark differ in size".into()));
    }
    if let Some(d) = defects {
        if d.dims() != (w, h) {
            return Err(Error::InvalidInput("defect map does not match detector size".into()));
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for idx in 0..w * h {
        let (v, f, d) = (
            i.pixels.data()[idx] as f64,
            i0.pixels.data()[idx] as f64,
            dark.pixels.data()[idx] as f64,
        );
        let denom = f - d;
        let defective = defects.is_some_and(|m| m.mask()[idx]);
        if !(denom > 0.0) {
            if defective {
                out.push(1.0);
                continue;
            }
            return Err(Error::FlatFieldInvalid { x: idx % w, y: idx / w });
        }
        out.push((((v - d) / denom) as f32).clamp(EPSILON, 1.0));
    }
    Ok(Image::from_vec(w, h, out))
}

/// Pixelwise `-ln(f)`.
pub fn to_line_integrals(f: &Image) -> Image {
    f.map(|v| -(v.clamp(EPSILON, 1.0) as f64).ln() as f32)
}

/// Normalizes, optionally inpaints, and log-transforms every raw view.
pub fn preprocess_stack(
    raw: &ProjectionStack,
    darks: &[RawFrame],
    flats: &[RawFrame],
    defects: Option<&DefectMap>,
    inpaint: bool,
) -> Result<ProjectionStack> {
    let dark = RawFrame::average(darks)?;
    let flat = RawFrame::average(flats)?;
    let views = par::map_slice(&raw.views, |v| -> Result<Image> {
        let frame = RawFrame {
            pixels: v.clone(),
            exposure: Exposure::default(),
        };
        let mut f = normalize(&frame, &flat, &dark, defects)?;
        if inpaint {
            if let Some(d) = defects {
                f = inpaint_defects(&f, d)?;
            }
        }
        Ok(to_line_integrals(&f))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    ProjectionStack::new(views, raw.pixel_pitch_mm, StackKind::LineIntegral)
}
