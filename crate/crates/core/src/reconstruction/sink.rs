//! Destinations for reconstructed blocks and slice export.

use std::fs::File;
use std::io::{self, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{Block, VolumeGrid};
use crate::rawio::{partial_path, sidecar_path};

/// Receives blocks in the order they are reconstructed.
pub trait BlockSink {
    fn write_block(&mut self, grid: &VolumeGrid, block: &Block) -> io::Result<()>;

    /// Called once after the last block.
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Assembles the full volume in memory.
#[derive(Debug, Clone)]
pub struct MemorySink {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl MemorySink {
    pub fn new(grid: &VolumeGrid) -> Self {
        Self {
            dims: grid.dims,
            data: vec![0.0; grid.voxel_count()],
        }
    }

    pub fn volume(&self) -> &[f32] {
        &self.data
    }

    pub fn into_volume(self) -> Vec<f32> {
        self.data
    }
}

/// Calls `f(offset_in_volume, row)` for every x-row of a block.
fn for_each_row(dims: [usize; 3], block: &Block, mut f: impl FnMut(usize, &[f32]) -> io::Result<()>) -> io::Result<()> {
    let [bx, by, bz] = block.dims;
    for k in 0..bz {
        for j in 0..by {
            let gz = block.start[2] + k;
            let gy = block.start[1] + j;
            let offset = (gz * dims[1] + gy) * dims[0] + block.start[0];
            let r = (k * by + j) * bx;
            f(offset, &block.data[r..r + bx])?;
        }
    }
    Ok(())
}

impl BlockSink for MemorySink {
    fn write_block(&mut self, _: &VolumeGrid, block: &Block) -> io::Result<()> {
        let dims = self.dims;
        let data = &mut self.data;
        for_each_row(dims, block, |off, row| {
            data[off..off + row.len()].copy_from_slice(row);
            Ok(())
        })
    }
}

/// Writes blocks into one preallocated raw file (x-fastest over the whole
/// volume) and its `.hdr` sidecar. The file lives under a `.partial` name
/// until [`BlockSink::finish`].
pub struct FileSink {
    path: PathBuf,
    dims: [usize; 3],
    file: Option<File>,
    grid: VolumeGrid,
    buf: Vec<u8>,
}

impl FileSink {
    pub fn create(path: &Path, grid: &VolumeGrid) -> io::Result<Self> {
        let file = File::create(partial_path(path))?;
        file.set_len(grid.storage_plan().bytes)?;
        Ok(Self {
            path: path.to_owned(),
            dims: grid.dims,
            file: Some(file),
            grid: *grid,
            buf: Vec::new(),
        })
    }
}

impl BlockSink for FileSink {
    fn write_block(&mut self, _: &VolumeGrid, block: &Block) -> io::Result<()> {
        let file = self
            .file
            .as_mut()
            .ok_or_else(|| io::Error::other("volume file already finished"))?;
        let buf = &mut self.buf;
        for_each_row(self.dims, block, |off, row| {
            buf.clear();
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            file.seek(SeekFrom::Start(off as u64 * 4))?;
            file.write_all(buf)
        })
    }

    fn finish(&mut self) -> io::Result<()> {
        if let Some(mut f) = self.file.take() {
            f.flush()?;
            f.sync_all()?;
            drop(f);
            std::fs::rename(partial_path(&self.path), &self.path)?;
            self.grid
                .header()
                .to_header()
                .write(&sidecar_path(&self.path))
                .map_err(io::Error::other)?;
        }
        Ok(())
    }
}

/// Central axial slice as a 16-bit binary PGM. Values map linearly from
/// `window = (low, high)` to 0..65535 with clamping; without a window the
/// slice's own range is used.
pub fn central_slice_pgm(volume: &[f32], dims: [usize; 3], window: Option<(f32, f32)>) -> Vec<u8> {
    let [nx, ny, nz] = dims;
    let k = nz / 2;
    let slice = &volume[k * nx * ny..(k + 1) * nx * ny];
    let (lo, hi) = window.unwrap_or_else(|| {
        slice
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { (hi - lo) as f64 } else { 1.0 };
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    for &v in slice {
        let g = (((v - lo) as f64 / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&g.to_be_bytes());
    }
    out
}
