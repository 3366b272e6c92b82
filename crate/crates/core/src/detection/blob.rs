//! Multi-scale Laplacian-of-Gaussian blob detection.

use nalgebra::Vector2;

use super::{BeadDetection, DetectParams, Polarity, ProjectionImage};
use crate::{Error, Image, Result};

/// Ratio between consecutive scales.
const SCALE_STEP: f64 = 1.189_207_115_002_721; // 2^(1/4)

/// Peak of the scale-normalized LoG response of a disk of unit contrast,
/// reached at sigma = radius / sqrt(2).
const DISK_PEAK: f64 = 2.0 / std::f64::consts::E;

const MAX_REFINE_ITER: usize = 20;

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let (w, h) = img.dims();
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() / 2;
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &g) in kernel.iter().enumerate() {
                let xx = (x + k).saturating_sub(r).min(w - 1);
                acc += g * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (k, &g) in kernel.iter().enumerate() {
            let yy = (y + k).saturating_sub(r).min(h - 1);
            let src = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += g * s;
            }
        }
    }
    Image::from_vec(w, h, out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (4.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

/// Scale-normalized negative Laplacian of the blurred image.
fn log_response(img: &Image, sigma: f64) -> Image {
    let b = gaussian_blur(img, sigma);
    let (w, h) = b.dims();
    let s2 = (sigma * sigma) as f32;
    Image::from_fn(w, h, |x, y| {
        let c = b.get(x, y);
        let l = b.get(x.saturating_sub(1), y)
            + b.get((x + 1).min(w - 1), y)
            + b.get(x, y.saturating_sub(1))
            + b.get(x, (y + 1).min(h - 1))
            - 4.0 * c;
        -s2 * l
    })
}

struct Peak {
    x: usize,
    y: usize,
    radius: f64,
    score: f64,
}

/// Finds beads as scale-space maxima of the LoG response, then refines each
/// to a background-subtracted intensity-weighted centroid.
///
/// `score` is the contrast implied by the response peak; for an ideal disk
/// it equals the disk contrast.
pub fn detect_beads(img: &ProjectionImage, params: &DetectParams) -> Result<Vec<BeadDetection>> {
    if !(params.min_radius >= 1.0) || !(params.max_radius >= params.min_radius) {
        return Err(Error::InvalidInput(format!(
            "bead radius range [{}, {}] invalid; minimum must be at least 1 px",
            params.min_radius, params.max_radius
        )));
    }
    let sign = match params.polarity {
        Polarity::Dark => -1.0f32,
        Polarity::Bright => 1.0,
    };
    let work = img.image.map(|v| sign * v);
    let (w, h) = work.dims();

    let mut sigmas = vec![params.min_radius / 2f64.sqrt() / SCALE_STEP];
    while *sigmas.last().unwrap() < params.max_radius / 2f64.sqrt() * SCALE_STEP {
        sigmas.push(sigmas.last().unwrap() * SCALE_STEP);
    }
    let margin = (4.0 * sigmas.last().unwrap()).ceil() as usize + 2;

    let mut peaks = Vec::new();
    for (y0, y1) in search_bands(h, params.roi_band_fraction) {
        let c0 = y0.saturating_sub(margin);
        let c1 = (y1 + margin).min(h);
        let crop = Image::from_vec(w, c1 - c0, work.data()[c0 * w..c1 * w].to_vec());
        let stack: Vec<Image> = sigmas.iter().map(|&s| log_response(&crop, s)).collect();
        find_peaks(&stack, &sigmas, params, y0.max(1) - c0, y1.min(h - 1) - c0, &mut |mut p| {
            p.y += c0;
            peaks.push(p)
        });
    }

    peaks.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<BeadDetection> = Vec::new();
    for p in peaks {
        let Some(center) = refine_centroid(&work, p.x as f64, p.y as f64, p.radius) else {
            continue;
        };
        if out
            .iter()
            .any(|d| (d.center - center).norm() < d.radius.max(p.radius))
        {
            continue;
        }
        out.push(BeadDetection::new(center, p.radius, p.score));
    }
    Ok(out)
}

/// Row ranges to search.
fn search_bands(h: usize, fraction: Option<f64>) -> Vec<(usize, usize)> {
    match fraction {
        Some(f) if f < 0.5 => {
            let band = ((f.max(0.0) * h as f64).ceil() as usize).min(h);
            vec![(0, band), (h - band, h)]
        }
        _ => vec![(0, h)],
    }
}

fn find_peaks(
    stack: &[Image],
    sigmas: &[f64],
    params: &DetectParams,
    y_lo: usize,
    y_hi: usize,
    emit: &mut impl FnMut(Peak),
) {
    let threshold = (params.contrast_threshold * DISK_PEAK) as f32;
    let (w, _) = stack[0].dims();
    let r_lo = params.min_radius / 2f64.sqrt();
    let r_hi = params.max_radius / 2f64.sqrt();
    for k in 1..stack.len() - 1 {
        let layer = &stack[k];
        for y in y_lo..y_hi {
            for x in 1..w - 1 {
                let v = layer.get(x, y);
                if v <= threshold {
                    continue;
                }
                let is_max = (k - 1..=k + 1).all(|kk| {
                    (y - 1..=y + 1).all(|yy| {
                        (x - 1..=x + 1).all(|xx| {
                            // ties go to the neighbor later in scan order
                            let n = stack[kk].get(xx, yy);
                            match (kk, yy, xx).cmp(&(k, y, x)) {
                                std::cmp::Ordering::Less => n <= v,
                                std::cmp::Ordering::Equal => true,
                                std::cmp::Ordering::Greater => n < v,
                            }
                        })
                    })
                });
                if !is_max {
                    continue;
                }
                let (rm, rp) = (stack[k - 1].get(x, y) as f64, stack[k + 1].get(x, y) as f64);
                let denom = rm - 2.0 * v as f64 + rp;
                let delta = if denom < 0.0 {
                    (0.5 * (rm - rp) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                let sigma = sigmas[k] * SCALE_STEP.powf(delta);
                if sigma < r_lo / SCALE_STEP.sqrt() || sigma > r_hi * SCALE_STEP.sqrt() {
                    continue;
                }
                emit(Peak {
                    x,
                    y,
                    radius: sigma * 2f64.sqrt(),
                    score: v as f64 / DISK_PEAK,
                });
            }
        }
    }
}

/// Iterated intensity-weighted centroid over a disk around the current
/// estimate, with the median of a surrounding annulus as background.
fn refine_centroid(img: &Image, x0: f64, y0: f64, radius: f64) -> Option<Vector2<f64>> {
    let (w, h) = img.dims();
    let win = 1.5 * radius + 2.0;
    let outer = win + 3.0;
    let start = Vector2::new(x0, y0);
    let mut c = start;
    let mut bg_samples = Vec::new();
    for _ in 0..MAX_REFINE_ITER {
        let xa = (c.x - outer).floor().max(0.0) as usize;
        let xb = ((c.x + outer).ceil() as usize).min(w - 1);
        let ya = (c.y - outer).floor().max(0.0) as usize;
        let yb = ((c.y + outer).ceil() as usize).min(h - 1);
        bg_samples.clear();
        for y in ya..=yb {
            for x in xa..=xb {
                let d = ((x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2)).sqrt();
                if d > win && d <= outer {
                    bg_samples.push(img.get(x, y));
                }
            }
        }
        if bg_samples.is_empty() {
            return None;
        }
        let mid = bg_samples.len() / 2;
        let bg = *bg_samples.select_nth_unstable_by(mid, f32::total_cmp).1 as f64;
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in ya..=yb {
            for x in xa..=xb {
                let (dx, dy) = (x as f64 - c.x, y as f64 - c.y);
                if dx * dx + dy * dy <= win * win {
                    let v = img.get(x, y) as f64 - bg;
                    if v > 0.0 {
                        sw += v;
                        sx += v * x as f64;
                        sy += v * y as f64;
                    }
                }
            }
        }
        if sw <= 0.0 {
            return None;
        }
        let next = Vector2::new(sx / sw, sy / sw);
        let step = (next - c).norm();
        c = next;
        if step < 1e-6 {
            break;
        }
    }
    let inside = c.x >= 0.0 && c.y >= 0.0 && c.x <= (w - 1) as f64 && c.y <= (h - 1) as f64;
    ((c - start).norm() <= radius && inside).then_some(c)
}
