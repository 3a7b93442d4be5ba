//! Face-connected (6-neighbour) binary dilation, erosion and the lesion boundary band.

use serde::{Deserialize, Serialize};

use super::{Dims, LabelMask};
use crate::error::Result;

/// Inward/outward extent of the boundary band around a lesion surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    pub inward: u32,
    pub outward: u32,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            inward: 4,
            outward: 4,
        }
    }
}

impl BandSpec {
    pub fn new(inward: u32, outward: u32) -> Self {
        Self { inward, outward }
    }

    /// Total band thickness in voxels, surface included.
    pub fn width(&self) -> u32 {
        self.inward + self.outward + 1
    }
}

/// One pass over the grid. `grow` selects dilation (any face neighbour set)
/// versus erosion (all face neighbours set, out-of-volume counts as unset).
/// Returns whether anything changed.
fn sweep(dims: Dims, src: &[u8], dst: &mut [u8], grow: bool) -> bool {
    let [nx, ny, nz] = dims;
    let sx = ny * nz;
    let sy = nz;
    let mut changed = false;
    for x in 0..nx {
        for y in 0..ny {
            let row = x * sx + y * sy;
            for z in 0..nz {
                let i = row + z;
                let here = src[i];
                let out = if grow {
                    if here != 0 {
                        1
                    } else {
                        let hit = (x > 0 && src[i - sx] != 0)
                            || (x + 1 < nx && src[i + sx] != 0)
                            || (y > 0 && src[i - sy] != 0)
                            || (y + 1 < ny && src[i + sy] != 0)
                            || (z > 0 && src[i - 1] != 0)
                            || (z + 1 < nz && src[i + 1] != 0);
                        u8::from(hit)
                    }
                } else if here == 0 {
                    0
                } else {
                    let keep = x > 0
                        && src[i - sx] != 0
                        && x + 1 < nx
                        && src[i + sx] != 0
                        && y > 0
                        && src[i - sy] != 0
                        && y + 1 < ny
                        && src[i + sy] != 0
                        && z > 0
                        && src[i - 1] != 0
                        && z + 1 < nz
                        && src[i + 1] != 0;
                    u8::from(keep)
                };
                changed |= out != here;
                dst[i] = out;
            }
        }
    }
    changed
}

fn iterate(mask: &LabelMask, steps: u32, grow: bool) -> LabelMask {
    let dims = mask.dims();
    let mut cur = mask.data().to_vec();
    let mut next = vec![0u8; cur.len()];
    for _ in 0..steps {
        if !sweep(dims, &cur, &mut next, grow) {
            break;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    LabelMask::from_raw_unchecked(dims, cur)
}

/// Iterated face-neighbour dilation, clipped at the volume boundary.
pub fn dilate(mask: &LabelMask, steps: u32) -> LabelMask {
    iterate(mask, steps, true)
}

/// Iterated face-neighbour erosion; voxels outside the volume are background.
pub fn erode(mask: &LabelMask, steps: u32) -> LabelMask {
    iterate(mask, steps, false)
}

/// `dilate(gt, outward) \ erode(gt, inward)`. The surface layer lies on the dilated side.
pub fn boundary_band(gt: &LabelMask, spec: BandSpec) -> Result<LabelMask> {
    dilate(gt, spec.outward).difference(&erode(gt, spec.inward))
}
