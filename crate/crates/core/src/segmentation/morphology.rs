//! Binary morphology with cubic structuring elements and 26-connected
//! component labelling.

use crate::volume::VoxelSet;

#[derive(Clone, Copy)]
enum Reduce {
    Any,
    All,
}

/// One separable pass along `axis`; windows are clipped at the grid edge.
fn pass(members: &[bool], dims: [usize; 3], axis: usize, radius: usize, reduce: Reduce) -> Vec<bool> {
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let len = dims[axis];
    let mut out = vec![false; members.len()];
    // Running count of members inside the window keeps each line O(len).
    for start in 0..members.len() {
        let pos = (start / stride) % len;
        if pos != 0 {
            continue;
        }
        let mut count = 0usize;
        let hi0 = radius.min(len - 1);
        for k in 0..=hi0 {
            count += members[start + k * stride] as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(len - 1);
            let width = hi - lo + 1;
            out[start + i * stride] = match reduce {
                Reduce::Any => count > 0,
                Reduce::All => count == width,
            };
            // slide to i + 1
            if i + radius < len - 1 {
                count += members[start + (i + radius + 1) * stride] as usize;
            }
            if i >= radius {
                count -= members[start + (i - radius) * stride] as usize;
            }
        }
    }
    out
}

fn separable(set: &VoxelSet, radius: usize, reduce: Reduce) -> VoxelSet {
    let dims = set.dims();
    let mut m = set.members().to_vec();
    for axis in 0..3 {
        m = pass(&m, dims, axis, radius, reduce);
    }
    VoxelSet::from_members(dims, m)
}

pub fn dilate(set: &VoxelSet, radius: usize) -> VoxelSet {
    if radius == 0 {
        return set.clone();
    }
    separable(set, radius, Reduce::Any)
}

pub fn erode(set: &VoxelSet, radius: usize) -> VoxelSet {
    if radius == 0 {
        return set.clone();
    }
    separable(set, radius, Reduce::All)
}

/// Dilation followed by erosion.
pub fn closing(set: &VoxelSet, radius: usize) -> VoxelSet {
    erode(&dilate(set, radius), radius)
}

/// 26-connected components. Returns per-voxel labels (0 = not in set,
/// components numbered from 1 in order of their first voxel) and the size of
/// each component (index 0 unused).
pub fn connected_components(set: &VoxelSet) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = set.dims();
    let mut labels = vec![0u32; set.members().len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for seed in set.iter() {
        if labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0usize;
        labels[seed] = label;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            size += 1;
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            for dz in -1i64..=1 {
                let zz = z as i64 + dz;
                if zz < 0 || zz >= nz as i64 {
                    continue;
                }
                for dy in -1i64..=1 {
                    let yy = y as i64 + dy;
                    if yy < 0 || yy >= ny as i64 {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        let xx = x as i64 + dx;
                        if xx < 0 || xx >= nx as i64 {
                            continue;
                        }
                        let j = xx as usize + nx * (yy as usize + ny * zz as usize);
                        if set.contains(j) && labels[j] == 0 {
                            labels[j] = label;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// The largest 26-connected component; ties go to the component whose first
/// voxel comes first in storage order.
pub fn largest_component(set: &VoxelSet) -> Option<VoxelSet> {
    let (labels, sizes) = connected_components(set);
    let (best, _) = sizes
        .iter()
        .enumerate()
        .skip(1)
        .fold((0usize, 0usize), |(bi, bs), (i, &s)| if s > bs { (i, s) } else { (bi, bs) });
    if best == 0 {
        return None;
    }
    let best = best as u32;
    Some(VoxelSet::from_predicate(set.dims(), |i| labels[i] == best))
}
