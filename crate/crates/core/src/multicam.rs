//! Panoramic stitching of camera canvases, the sentinel-camera coordinate
//! shift, padding masks and channel aggregation across cameras.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{dim_mismatch, Error, Result};
use crate::tensor::{Real, Tensor};

/// Columns of one camera that survive stitching, and where they land.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptRange {
    /// First kept column in the camera's own canvas.
    pub crop_left: usize,
    pub width: usize,
    /// First column of the range in the stitched canvas.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchLayout {
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub overlap: f64,
    pub kept: Vec<KeptRange>,
    pub stitched_width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftDirection {
    ToGlobal,
    ToLocal,
}

/// Cameras are ordered left to right; with three cameras the front view is
/// index 1 and keeps its full width, while each side view drops
/// `floor(overlap * width)` columns on the edge facing the front camera.
pub fn make_layout(cameras: usize, width: usize, height: usize, overlap: f64) -> Result<StitchLayout> {
    if !(cameras == 1 || cameras == 3) {
        return Err(Error::BadConfig(format!("camera count {cameras} not in {{1, 3}}")));
    }
    if !(0.0..0.5).contains(&overlap) {
        return Err(Error::BadConfig(format!("overlap {overlap} outside [0, 0.5)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::BadConfig(format!("empty canvas {width}x{height}")));
    }
    let kept = if cameras == 1 {
        alloc::vec![KeptRange {
            crop_left: 0,
            width,
            offset: 0
        }]
    } else {
        let cut = num_traits::Float::floor(overlap * width as f64) as usize;
        let side = width - cut;
        alloc::vec![
            KeptRange {
                crop_left: 0,
                width: side,
                offset: 0
            },
            KeptRange {
                crop_left: 0,
                width,
                offset: side
            },
            KeptRange {
                crop_left: cut,
                width: side,
                offset: side + width
            },
        ]
    };
    let stitched_width = kept.iter().map(|k| k.width).sum();
    Ok(StitchLayout {
        cameras,
        width,
        height,
        overlap,
        kept,
        stitched_width,
    })
}

impl StitchLayout {
    pub fn front(&self) -> usize {
        self.cameras / 2
    }

    /// Camera whose kept range covers global column `x`.
    pub fn camera_at(&self, x: f64) -> Option<usize> {
        self.kept
            .iter()
            .position(|k| x >= k.offset as f64 && x < (k.offset + k.width) as f64)
    }

    /// Global column at which camera `cam`'s canvas starts, including the
    /// dropped columns.
    pub fn window_start(&self, cam: usize) -> isize {
        let k = self.kept[cam];
        k.offset as isize - k.crop_left as isize
    }

    fn range(&self, cam: usize) -> Result<KeptRange> {
        self.kept.get(cam).copied().ok_or(Error::BadIndex {
            index: cam,
            count: self.cameras,
        })
    }
}

/// Copies every camera's kept columns into one canvas. Maps are `[C, H, W]`.
pub fn stitch<T: Real>(maps: &[Tensor<T>], layout: &StitchLayout) -> Result<Tensor<T>> {
    if maps.len() != layout.cameras {
        return Err(dim_mismatch("stitch", &[maps.len()], &[layout.cameras]));
    }
    let want = [
        maps[0].dims().first().copied().unwrap_or(0),
        layout.height,
        layout.width,
    ];
    for m in maps {
        if m.dims() != want {
            return Err(dim_mismatch("stitch", m.dims(), &want));
        }
    }
    let (channels, h, w) = (want[0], layout.height, layout.width);
    let sw = layout.stitched_width;
    let mut out = Tensor::zeros(&[channels, h, sw]);
    for (map, k) in maps.iter().zip(&layout.kept) {
        for c in 0..channels {
            for y in 0..h {
                let src = &map.data()[(c * h + y) * w + k.crop_left..][..k.width];
                let dst = (c * h + y) * sw + k.offset;
                out.data_mut()[dst..dst + k.width].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Moves an x coordinate between camera `cam`'s canvas and the stitched
/// canvas. The y coordinate is shared by all cameras.
pub fn shift_x(x: f64, cam: usize, layout: &StitchLayout, dir: ShiftDirection) -> Result<f64> {
    let k = layout.range(cam)?;
    let (lo, delta) = match dir {
        ShiftDirection::ToGlobal => (k.crop_left as f64, k.offset as f64 - k.crop_left as f64),
        ShiftDirection::ToLocal => (k.offset as f64, k.crop_left as f64 - k.offset as f64),
    };
    if !(x >= lo && x <= lo + k.width as f64) {
        return Err(Error::OutOfKeptRange { camera: cam, x });
    }
    Ok(x + delta)
}

/// Shifts both x coordinates of an `[x1, y1, x2, y2]` box.
pub fn shift_bbox(b: [f64; 4], cam: usize, layout: &StitchLayout, dir: ShiftDirection) -> Result<[f64; 4]> {
    Ok([
        shift_x(b[0], cam, layout, dir)?,
        b[1],
        shift_x(b[2], cam, layout, dir)?,
        b[3],
    ])
}

/// One-hot camera indicator: channel `sentinel` is ones, the rest zeros.
pub fn padding_mask<T: Real>(cameras: usize, sentinel: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    padding_mask_seq(cameras, sentinel, &[h, w])
}

/// Padding mask with arbitrary trailing extents, `[c, extents...]`.
pub fn padding_mask_seq<T: Real>(cameras: usize, sentinel: usize, extents: &[usize]) -> Result<Tensor<T>> {
    if sentinel >= cameras {
        return Err(Error::BadIndex {
            index: sentinel,
            count: cameras,
        });
    }
    let plane: usize = extents.iter().product();
    let mut dims = Vec::with_capacity(extents.len() + 1);
    dims.push(cameras);
    dims.extend_from_slice(extents);
    let mut t = Tensor::zeros(&dims);
    t.data_mut()[sentinel * plane..(sentinel + 1) * plane].fill(T::one());
    Ok(t)
}

/// Concatenates per-camera feature channels with the mask channels and fuses
/// them pixelwise. `features` is `[c*C, ...]`, `mask` `[c, ...]`, and
/// `weights` `[C_out, c*C + c]`.
pub fn aggregate<T: Real>(g: &mut Graph<T>, features: Var, mask: Var, weights: Var) -> Result<Var> {
    let joined = g.concat(&[features, mask], 0)?;
    g.pointwise_conv(joined, weights)
}

#[cfg(test)]
mod tests;
