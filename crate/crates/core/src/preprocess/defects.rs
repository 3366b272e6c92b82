//! Defective detector pixels: detection from reference frames and inpainting.

use std::path::Path;

use super::RawFrame;
use crate::rawio::{sidecar_path, write_atomic, Header};
use crate::{Error, Image, Result};

/// A flat-field reading at or below this count marks a dead pixel.
pub const DEAD_COUNT_TOL: f32 = 0.5;

/// Largest bounding-box extent (pixels) of a defect cluster that can be
/// inpainted.
pub const MAX_DEFECT_EXTENT: usize = 5;

const INPAINT_TOL: f64 = 1e-9;
const INPAINT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefectMap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl DefectMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::InvalidInput("defect mask does not match its dimensions".into()));
        }
        Ok(Self { width, height, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.mask[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Writes one byte per pixel (1 = defective) and a sidecar header with
    /// `width`, `height` and `count`.
    pub fn write(&self, raw: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.mask.iter().map(|&m| m as u8).collect();
        write_atomic(raw, &bytes)?;
        let mut h = Header::new();
        h.set("width", self.width).set("height", self.height).set("count", self.count());
        h.write(&sidecar_path(raw))
    }

    pub fn read(raw: &Path) -> Result<Self> {
        let hp = sidecar_path(raw);
        let h = Header::read(&hp)?;
        let width: usize = h.get_value("width", &hp)?;
        let height: usize = h.get_value("height", &hp)?;
        let count: usize = h.get_value("count", &hp)?;
        let bytes = std::fs::read(raw)?;
        if bytes.len() != width * height {
            return Err(Error::Format {
                path: raw.to_owned(),
                reason: format!("expected {} bytes, found {}", width * height, bytes.len()),
            });
        }
        let map = Self::from_mask(width, height, bytes.iter().map(|&b| b != 0).collect())?;
        if map.count() != count {
            return Err(Error::Format {
                path: hp,
                reason: format!("header count {count} but mask has {}", map.count()),
            });
        }
        Ok(map)
    }
}

/// Flags pixels that are saturated in every frame, dead in every flat, or
/// constant over all frames while some 8-neighbor varies.
pub fn build_defect_map(darks: &[RawFrame], flats: &[RawFrame], saturation: f32) -> Result<DefectMap> {
    if darks.len() < 3 || flats.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "defect detection needs at least 3 darks and 3 flats, got {} and {}",
            darks.len(),
            flats.len()
        )));
    }
    let (w, h) = darks[0].pixels.dims();
    if darks.iter().chain(flats).any(|f| f.pixels.dims() != (w, h)) {
        return Err(Error::InvalidInput("reference frames differ in size".into()));
    }
    let all: Vec<&[f32]> = darks.iter().chain(flats).map(|f| f.pixels.data()).collect();
    let constant: Vec<bool> = (0..w * h)
        .map(|i| all.iter().all(|f| f[i] == all[0][i]))
        .collect();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let saturated = all.iter().all(|f| f[i] >= saturation);
            let dead = flats.iter().all(|f| f.pixels.data()[i] <= DEAD_COUNT_TOL);
            let stuck = constant[i] && {
                let mut neighbor_varies = false;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        neighbor_varies |= (nx, ny) != (x, y) && !constant[ny * w + nx];
                    }
                }
                neighbor_varies
            };
            mask[i] = saturated || dead || stuck;
        }
    }
    DefectMap::from_mask(w, h, mask)
}

/// 8-connected defect components as pixel index lists.
fn components(map: &DefectMap) -> Vec<Vec<usize>> {
    let (w, h) = map.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !map.mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let n = ny * w + nx;
                    if map.mask[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Replaces defective pixels by the discrete harmonic interpolant of their
/// surroundings (Gauss-Seidel on the 4-neighbor mean). Other pixels are
/// copied unchanged.
pub fn inpaint_defects(img: &Image, map: &DefectMap) -> Result<Image> {
    let (w, h) = img.dims();
    if map.dims() != (w, h) {
        return Err(Error::InvalidInput("defect map does not match image size".into()));
    }
    let mut out = img.clone();
    for comp in components(map) {
        let xs = comp.iter().map(|i| i % w);
        let ys = comp.iter().map(|i| i / w);
        let extent = (xs.clone().max().unwrap() - xs.min().unwrap() + 1)
            .max(ys.clone().max().unwrap() - ys.min().unwrap() + 1);
        if extent > MAX_DEFECT_EXTENT {
            return Err(Error::DefectClusterTooLarge {
                extent,
                limit: MAX_DEFECT_EXTENT,
            });
        }
        if comp.len() == w * h {
            return Err(Error::InvalidInput("every pixel is defective".into()));
        }
        inpaint_component(&mut out, map, &comp);
    }
    Ok(out)
}

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

fn inpaint_component(img: &mut Image, map: &DefectMap, comp: &[usize]) {
    let (w, h) = img.dims();
    let mut vals: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    // start from the mean of the live border
    let border: Vec<f64> = comp
        .iter()
        .flat_map(|&i| neighbors(i, w, h))
        .filter(|&n| !map.mask[n])
        .map(|n| vals[n])
        .collect();
    let init = if border.is_empty() {
        0.0
    } else {
        border.iter().sum::<f64>() / border.len() as f64
    };
    for &i in comp {
        vals[i] = init;
    }
    let scale = border.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    for _ in 0..INPAINT_MAX_ITER {
        let mut change = 0.0f64;
        for &i in comp {
            let (mut s, mut n) = (0.0, 0);
            for j in neighbors(i, w, h) {
                s += vals[j];
                n += 1;
            }
            let v = s / n as f64;
            change = change.max((v - vals[i]).abs());
            vals[i] = v;
        }
        if change <= INPAINT_TOL * scale {
            break;
        }
    }
    let data = img.data_mut();
    for &i in comp {
        data[i] = vals[i] as f32;
    }
}
