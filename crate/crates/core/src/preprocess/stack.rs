//! On-disk projection stacks: `view_%04d.raw` frames plus `stack.meta`.

use std::path::{Path, PathBuf};

use super::RawFrame;
use crate::rawio::{read_f32_le, write_f32_le, Header};
use crate::{Error, Image, Result};

pub const META_FILE: &str = "stack.meta";

/// What the stored pixel values represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    /// Detector counts.
    Raw,
    /// Normalized transmittance in `(0, 1]`.
    Transmittance,
    /// `-ln` of transmittance.
    LineIntegral,
}

impl StackKind {
    fn as_str(self) -> &'static str {
        match self {
            StackKind::Raw => "raw",
            StackKind::Transmittance => "transmittance",
            StackKind::LineIntegral => "line_integral",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(StackKind::Raw),
            "transmittance" => Some(StackKind::Transmittance),
            "line_integral" => Some(StackKind::LineIntegral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_mm: f64,
    pub kind: StackKind,
    pub views: Vec<Image>,
}

fn view_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("view_{i:04}.raw"))
}

impl ProjectionStack {
    pub fn new(views: Vec<Image>, pixel_pitch_mm: f64, kind: StackKind) -> Result<Self> {
        let (width, height) = views
            .first()
            .map(|v| v.dims())
            .ok_or_else(|| Error::InvalidInput("empty projection stack".into()))?;
        if views.iter().any(|v| v.dims() != (width, height)) {
            return Err(Error::InvalidInput("projections differ in size".into()));
        }
        if !(pixel_pitch_mm > 0.0) {
            return Err(Error::InvalidInput("pixel pitch must be positive".into()));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch_mm,
            kind,
            views,
        })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, v) in self.views.iter().enumerate() {
            write_f32_le(&view_path(dir, i), v.data())?;
        }
        self.meta().write(&dir.join(META_FILE))
    }

    fn meta(&self) -> Header {
        let mut h = Header::new();
        h.set("width", self.width)
            .set("height", self.height)
            .set("n_views", self.views.len())
            .set("pixel_pitch_mm", self.pixel_pitch_mm)
            .set("kind", self.kind.as_str());
        h
    }

    /// Reads `stack.meta` and every view it announces.
    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let h = Header::read(&meta_path)?;
        let width: usize = h.get_value("width", &meta_path)?;
        let height: usize = h.get_value("height", &meta_path)?;
        let n: usize = h.get_value("n_views", &meta_path)?;
        let pitch: f64 = h.get_value("pixel_pitch_mm", &meta_path)?;
        let kind = match h.get("kind") {
            None => StackKind::Raw,
            Some(k) => StackKind::parse(k).ok_or_else(|| Error::Format {
                path: meta_path.clone(),
                reason: format!("unknown stack kind {k:?}"),
            })?,
        };
        let views = (0..n)
            .map(|i| Ok(Image::from_vec(width, height, read_f32_le(&view_path(dir, i), width * height)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views, pitch, kind)
    }
}

/// Writes `dark_%02d.raw` and `flat_%02d.raw`.
pub fn write_reference_frames(dir: &Path, darks: &[RawFrame], flats: &[RawFrame]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in darks.iter().enumerate() {
        write_f32_le(&dir.join(format!("dark_{i:02}.raw")), f.pixels.data())?;
    }
    for (i, f) in flats.iter().enumerate() {
        write_f32_le(&dir.join(format!("flat_{i:02}.raw")), f.pixels.data())?;
    }
    Ok(())
}

/// Reads consecutively numbered dark and flat frames of the given size.
pub fn read_reference_frames(dir: &Path, width: usize, height: usize) -> Result<(Vec<RawFrame>, Vec<RawFrame>)> {
    let read_series = |prefix: &str| -> Result<Vec<RawFrame>> {
        let mut out = Vec::new();
        loop {
            let p = dir.join(format!("{prefix}_{:02}.raw", out.len()));
            if !p.exists() {
                return Ok(out);
            }
            out.push(RawFrame::new(Image::from_vec(width, height, read_f32_le(&p, width * height)?))?);
        }
    };
    Ok((read_series("dark")?, read_series("flat")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_round_trip() {
        let views: Vec<Image> = (0..3)
            .map(|k| Image::from_fn(5, 4, |x, y| (x + 10 * y + 100 * k) as f32 * 0.25))
            .collect();
        let s = ProjectionStack::new(views, 0.8, StackKind::LineIntegral).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path()).unwrap();
        assert!(dir.path().join("view_0002.raw").exists());
        let meta = std::fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        assert!(meta.contains("n_views=3"));
        assert_eq!(ProjectionStack::read(dir.path()).unwrap(), s);
    }

    #[test]
    fn reference_frames_round_trip() {
        let f = |v: f32| RawFrame::new(Image::filled(4, 4, v)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_reference_frames(dir.path(), &[f(1.0), f(2.0)], &[f(5.0), f(6.0), f(7.0)]).unwrap();
        let (d, fl) = read_reference_frames(dir.path(), 4, 4).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(fl.len(), 3);
        assert_eq!(fl[2].pixels.get(0, 0), 7.0);
    }
}
