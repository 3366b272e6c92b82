//! Voxel-driven backprojection and blocked volume assembly.

use std::sync::mpsc::sync_channel;

use super::{Block, BlockSink, FilteredProjection, VolumeGrid};
use crate::{par, Error, Result};

/// Value range and count of a reconstructed volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconSummary {
    pub n_blocks: usize,
    pub min: f32,
    pub max: f32,
    pub mean: f64,
    pub bytes_written: u64,
}

const ROWS_PER_TASK: usize = 8;

/// Bilinear sample with pixel centers at integer coordinates; `None` outside
/// the hull of pixel centers.
#[inline]
fn sample(data: &[f32], w: usize, h: usize, u: f64, v: f64) -> Option<f64> {
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    // truncation is floor here and avoids a libm call on baseline x86-64
    let x0 = (u as usize).min(w.saturating_sub(2));
    let y0 = (v as usize).min(h.saturating_sub(2));
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let a = data[y0 * w + x0] as f64;
    let b = data[y0 * w + x1] as f64;
    let c = data[y1 * w + x0] as f64;
    let d = data[y1 * w + x1] as f64;
    Some((a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy)
}

/// Reconstructs one block: for every voxel center and view, the filtered
/// projection is sampled bilinearly where the voxel projects and weighted by
/// the view weight over the squared depth. Views are summed in input order,
/// so a voxel's value does not depend on the blocking.
pub fn backproject(filtered: &[FilteredProjection], grid: &VolumeGrid, block_index: [usize; 3]) -> Result<Block> {
    let (start, dims) = grid.block_extent(block_index)?;
    let [bx, by, _] = dims;
    let mut data = vec![0f32; dims.iter().product()];
    // a few rows per task, views outermost, so each view's pixels stay
    // cached while they are reused by neighbouring rows
    par::for_each_chunk_mut(&mut data, bx * ROWS_PER_TASK, |chunk, out| {
        let rows = out.len() / bx;
        let mut acc = vec![0f64; out.len()];
        for fp in filtered {
            let m = fp.matrix.matrix();
            let (w, h) = fp.pixels.dims();
            let px = fp.pixels.data();
            let step = [0, 1, 2].map(|row| m[(row, 0)] * grid.spacing_mm[0]);
            for rr in 0..rows {
                let r = chunk * ROWS_PER_TASK + rr;
                let j = start[1] + r % by;
                let k = start[2] + r / by;
                let y = grid.origin_mm[1] + grid.spacing_mm[1] * j as f64;
                let z = grid.origin_mm[2] + grid.spacing_mm[2] * k as f64;
                // homogeneous image of voxel column 0 and the per-voxel step in x
                let base = [0, 1, 2].map(|row| {
                    m[(row, 0)] * grid.origin_mm[0] + m[(row, 1)] * y + m[(row, 2)] * z + m[(row, 3)]
                });
                for (a, acc_v) in acc[rr * bx..(rr + 1) * bx].iter_mut().enumerate() {
                    let gi = (start[0] + a) as f64;
                    let s = base[2] + step[2] * gi;
                    if s <= 0.0 {
                        continue;
                    }
                    let inv = 1.0 / s;
                    let u = (base[0] + step[0] * gi) * inv;
                    let v = (base[1] + step[1] * gi) * inv;
                    if let Some(val) = sample(px, w, h, u, v) {
                        *acc_v += fp.weight * val * inv * inv;
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Ok(Block {
        index: block_index,
        start,
        dims,
        data,
    })
}

/// Whole grid in one pass; x-fastest.
pub fn reconstruct_volume(filtered: &[FilteredProjection], grid: &VolumeGrid) -> Result<Vec<f32>> {
    Ok(backproject(filtered, &grid.monolithic(), [0, 0, 0])?.data)
}

/// Reconstructs blocks in z-major order and hands each to `sink` on a writer
/// thread, so the next block is computed while the previous one is stored.
/// At most one finished block waits between the two stages.
pub fn reconstruct_blocked(
    filtered: &[FilteredProjection],
    grid: &VolumeGrid,
    sink: &mut (dyn BlockSink + Send),
) -> Result<ReconSummary> {
    let order = grid.block_order();
    let n_total = order.len();
    let (tx, rx) = sync_channel::<(usize, Block)>(1);
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    let mut sum = 0.0f64;
    let mut computed = 0usize;
    let (compute, written) = std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> std::result::Result<u64, (usize, std::io::Error)> {
            let mut bytes = 0u64;
            for (n, block) in rx {
                sink.write_block(grid, &block).map_err(|e| (n, e))?;
                bytes += block.data.len() as u64 * 4;
            }
            sink.finish().map_err(|e| (n_total, e))?;
            Ok(bytes)
        });
        let compute = (|| -> Result<()> {
            for (n, &idx) in order.iter().enumerate() {
                let block = backproject(filtered, grid, idx)?;
                for &v in &block.data {
                    min = min.min(v);
                    max = max.max(v);
                    sum += v as f64;
                }
                computed += 1;
                if tx.send((n, block)).is_err() {
                    break;
                }
            }
            Ok(())
        })();
        drop(tx);
        (compute, writer.join().expect("writer thread panicked"))
    });
    let bytes_written = written.map_err(|(block, source)| Error::SinkFailure { block, source })?;
    compute?;
    Ok(ReconSummary {
        n_blocks: computed,
        min,
        max,
        mean: sum / grid.voxel_count() as f64,
        bytes_written,
    })
}
