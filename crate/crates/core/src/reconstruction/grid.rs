//! Volume grid and its partition into blocks.

use nalgebra::Vector3;

use crate::rawio::VolumeHeader;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGrid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Center of voxel (0, 0, 0).
    pub origin_mm: [f64; 3],
    pub block_dims: [usize; 3],
}

/// A reconstructed sub-volume; `data` is x-fastest over `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: [usize; 3],
    pub start: [usize; 3],
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

/// Block count and byte size of a float volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoragePlan {
    pub n_blocks: usize,
    pub bytes: u64,
}

impl StoragePlan {
    /// Decimal gigabytes.
    pub fn gigabytes(&self) -> f64 {
        self.bytes as f64 / 1e9
    }
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], block_dims: [usize; 3]) -> Result<Self> {
        if dims.contains(&0) || block_dims.contains(&0) {
            return Err(Error::InvalidInput("grid and block dims must be at least 1".into()));
        }
        if !spacing_mm.iter().all(|&s| s > 0.0 && s.is_finite()) || !origin_mm.iter().all(|o| o.is_finite()) {
            return Err(Error::InvalidInput("grid spacing must be positive and origin finite".into()));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            block_dims,
        })
    }

    /// Grid centered on the world origin.
    pub fn centered(dims: [usize; 3], spacing_mm: [f64; 3], block_dims: [usize; 3]) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing_mm[a]);
        Self::new(dims, spacing_mm, origin, block_dims)
    }

    /// The same grid as a single block.
    pub fn monolithic(&self) -> Self {
        Self {
            block_dims: self.dims,
            ..*self
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin_mm[0] + self.spacing_mm[0] * i as f64,
            self.origin_mm[1] + self.spacing_mm[1] * j as f64,
            self.origin_mm[2] + self.spacing_mm[2] * k as f64,
        )
    }

    pub fn blocks_per_axis(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.dims[a].div_ceil(self.block_dims[a]))
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks_per_axis().iter().product()
    }

    /// Start and size of a block; edge blocks are truncated.
    pub fn block_extent(&self, index: [usize; 3]) -> Result<([usize; 3], [usize; 3])> {
        let blocks = self.blocks_per_axis();
        if (0..3).any(|a| index[a] >= blocks[a]) {
            return Err(Error::BlockOutOfRange { index, blocks });
        }
        let start = [0, 1, 2].map(|a| index[a] * self.block_dims[a]);
        let size = [0, 1, 2].map(|a| self.block_dims[a].min(self.dims[a] - start[a]));
        Ok((start, size))
    }

    /// Block indices with x varying fastest and z slowest.
    pub fn block_order(&self) -> Vec<[usize; 3]> {
        let [bx, by, bz] = self.blocks_per_axis();
        let mut out = Vec::with_capacity(bx * by * bz);
        for k in 0..bz {
            for j in 0..by {
                for i in 0..bx {
                    out.push([i, j, k]);
                }
            }
        }
        out
    }

    pub fn storage_plan(&self) -> StoragePlan {
        StoragePlan {
            n_blocks: self.n_blocks(),
            bytes: self.dims.iter().map(|&d| d as u64).product::<u64>() * 4,
        }
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
        }
    }
}
