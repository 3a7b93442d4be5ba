use serde::{Deserialize, Serialize};

use super::{linear_index, Dims, LabelMask};

/// Voxel adjacency used for component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component label per voxel (0 = background, components numbered from 1
/// in order of their first voxel in C order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
}

pub fn connected_components(mask: &LabelMask, connectivity: Connectivity) -> ComponentLabels {
    let dims = mask.dims();
    let data = mask.data();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; data.len()];
    let mut stack: Vec<[usize; 3]> = Vec::new();
    let mut count = 0u32;

    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let i = linear_index(dims, x, y, z);
                if data[i] == 0 || labels[i] != 0 {
                    continue;
                }
                count += 1;
                labels[i] = count;
                stack.push([x, y, z]);
                while let Some(p) = stack.pop() {
                    for off in &offsets {
                        let Some(q) = neighbour(dims, p, *off) else {
                            continue;
                        };
                        let j = linear_index(dims, q[0], q[1], q[2]);
                        if data[j] != 0 && labels[j] == 0 {
                            labels[j] = count;
                            stack.push(q);
                        }
                    }
                }
            }
        }
    }

    ComponentLabels {
        dims,
        labels,
        count: count as usize,
    }
}

#[inline]
fn neighbour(dims: Dims, p: [usize; 3], off: [isize; 3]) -> Option<[usize; 3]> {
    let mut q = [0usize; 3];
    for a in 0..3 {
        let v = p[a].checked_add_signed(off[a])?;
        if v >= dims[a] {
            return None;
        }
        q[a] = v;
    }
    Some(q)
}
