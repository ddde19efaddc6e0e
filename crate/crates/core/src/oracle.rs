//! Brute-force reference implementations, used by tests only.
//!
//! Two independent routes to the same answer: a literal evaluation of the
//! sparse convolution sum with hash-set membership, and a textbook strided
//! convolution over the densified grid. Both are sequential; the literal
//! route fixes the reference accumulation order (ascending offset index,
//! each contribution a complete dot product).

use std::collections::HashMap;

use crate::coords::VoxelCoord;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, WeightTensor};
use crate::kmap::WeightOffset;

pub const DEFAULT_MEM_CAP: usize = 1 << 30;

/// Literal evaluation: for every output coordinate and weight offset, look
/// the query up in a hash set of input coordinates and accumulate.
pub fn eval_eq2_direct(
    inputs: &[VoxelCoord],
    outputs: &[VoxelCoord],
    offsets: &[WeightOffset],
    f_in: &FeatureMatrix,
    w: &WeightTensor,
) -> Result<FeatureMatrix> {
    if f_in.rows != inputs.len() || f_in.channels != w.c_in || w.k_total != offsets.len() {
        return Err(Error::ShapeMismatch(
            "oracle operands disagree on dimensions".into(),
        ));
    }
    let lookup: HashMap<VoxelCoord, usize> =
        inputs.iter().enumerate().map(|(j, v)| (*v, j)).collect();
    let mut out = FeatureMatrix::zeros(outputs.len(), w.c_out);
    let c_out = w.c_out;
    for (i, q) in outputs.iter().enumerate() {
        for o in offsets {
            if let Some(&j) = lookup.get(&q.offset_by(o.delta)) {
                let f = f_in.row(j);
                let w_k = w.offset(o.index);
                let acc = out.row_mut(i);
                for co in 0..c_out {
                    let mut s = 0.0f32;
                    for (ci, &fv) in f.iter().enumerate() {
                        s += fv * w_k[ci * c_out + co];
                    }
                    acc[co] += s;
                }
            }
        }
    }
    Ok(out)
}

/// Materialized bounding-box grid with zero-filled empty cells.
pub struct DenseGrid {
    pub origin: [i64; 3],
    pub extent: [usize; 3],
    pub channels: usize,
    pub data: Vec<f32>,
}

impl DenseGrid {
    pub fn from_sparse(
        coords: &[VoxelCoord],
        features: &FeatureMatrix,
        mem_cap: usize,
    ) -> Result<Self> {
        assert_eq!(coords.len(), features.rows);
        let mut min = [i64::MAX; 3];
        let mut max = [i64::MIN; 3];
        for v in coords {
            for a in 0..3 {
                min[a] = min[a].min(v.component(a) as i64);
                max[a] = max[a].max(v.component(a) as i64);
            }
        }
        if coords.is_empty() {
            min = [0; 3];
            max = [-1; 3];
        }
        let extent = [
            (max[0] - min[0] + 1).max(0) as usize,
            (max[1] - min[1] + 1).max(0) as usize,
            (max[2] - min[2] + 1).max(0) as usize,
        ];
        let cells = extent[0]
            .checked_mul(extent[1])
            .and_then(|v| v.checked_mul(extent[2]))
            .ok_or(Error::MemoryCap {
                needed: usize::MAX,
                cap: mem_cap,
            })?;
        let needed = cells.saturating_mul(features.channels).saturating_mul(4);
        if needed > mem_cap {
            return Err(Error::MemoryCap {
                needed,
                cap: mem_cap,
            });
        }
        let mut data = vec![0.0f32; cells * features.channels];
        for (row, v) in coords.iter().enumerate() {
            let idx = Self::cell_index(v, &min, &extent);
            data[idx * features.channels..(idx + 1) * features.channels]
                .copy_from_slice(features.row(row));
        }
        Ok(Self {
            origin: min,
            extent,
            channels: features.channels,
            data,
        })
    }

    fn cell_index(v: &VoxelCoord, origin: &[i64; 3], extent: &[usize; 3]) -> usize {
        let x = (v.x as i64 - origin[0]) as usize;
        let y = (v.y as i64 - origin[1]) as usize;
        let z = (v.z as i64 - origin[2]) as usize;
        (x * extent[1] + y) * extent[2] + z
    }

    /// Feature vector at an absolute coordinate; zeros outside the box.
    pub fn at(&self, v: &VoxelCoord) -> Option<&[f32]> {
        for a in 0..3 {
            let rel = v.component(a) as i64 - self.origin[a];
            if rel < 0 || rel >= self.extent[a] as i64 {
                return None;
            }
        }
        let idx = Self::cell_index(v, &self.origin, &self.extent);
        Some(&self.data[idx * self.channels..(idx + 1) * self.channels])
    }
}

/// Textbook strided convolution over the densified grid.
///
/// Output sites follow sparse-convolution semantics, not dense-convolution
/// semantics: a submanifold layer (`s_l == 1`) emits exactly the input
/// sites, and a strided layer emits the distinct `floor(v / s_q) * s_q`
/// images of the inputs — not every site that happens to receive a
/// contribution.
pub fn eval_dense_grid(
    inputs: &[VoxelCoord],
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    offsets: &[WeightOffset],
    s_p: u32,
    s_l: u32,
    mem_cap: usize,
) -> Result<(Vec<VoxelCoord>, FeatureMatrix)> {
    let grid = DenseGrid::from_sparse(inputs, f_in, mem_cap)?;
    let outputs: Vec<VoxelCoord> = if s_l == 1 {
        inputs.to_vec()
    } else {
        let s_q = (s_p * s_l) as i32;
        let mut sites: Vec<VoxelCoord> = inputs
            .iter()
            .map(|v| {
                VoxelCoord::new(
                    v.x.div_euclid(s_q) * s_q,
                    v.y.div_euclid(s_q) * s_q,
                    v.z.div_euclid(s_q) * s_q,
                )
            })
            .collect();
        sites.sort();
        sites.dedup();
        sites
    };
    let c_out = w.c_out;
    let mut out = FeatureMatrix::zeros(outputs.len(), c_out);
    for (i, q) in outputs.iter().enumerate() {
        for o in offsets {
            // dense semantics: read the grid, multiply even when the cell
            // is a zero vector
            if let Some(f) = grid.at(&q.offset_by(o.delta)) {
                let w_k = w.offset(o.index);
                let acc = out.row_mut(i);
                for co in 0..c_out {
                    let mut s = 0.0f32;
                    for (ci, &fv) in f.iter().enumerate() {
                        s += fv * w_k[ci * c_out + co];
                    }
                    acc[co] += s;
                }
            }
        }
    }
    Ok((outputs, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DataflowPlan;
    use crate::kmap::enumerate_offsets;

    fn coords(list: &[(i32, i32, i32)]) -> Vec<VoxelCoord> {
        list.iter()
            .map(|&(x, y, z)| VoxelCoord::new(x, y, z))
            .collect()
    }

    #[test]
    fn identity_kernel_returns_input() {
        let offsets = enumerate_offsets(1, 1).unwrap();
        let inputs = coords(&[(0, 0, 0), (3, 1, 2)]);
        let f = FeatureMatrix::seeded(2, 4, 1);
        let w = WeightTensor::identity_at(1, 4, 0);
        let out = eval_eq2_direct(&inputs, &inputs, &offsets, &f, &w).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn two_voxel_direct_expansion() {
        let offsets = enumerate_offsets(3, 1).unwrap();
        let inputs = coords(&[(0, 0, 0), (0, 0, 1)]);
        let outputs = coords(&[(0, 0, 0)]);
        let f = FeatureMatrix::seeded(2, 4, 2);
        let w = WeightTensor::seeded(27, 4, 4, 3);
        let out = eval_eq2_direct(&inputs, &outputs, &offsets, &f, &w).unwrap();
        // expected: f0 * W_center + f1 * W_(0,0,1)
        let center = 13;
        let above = 14;
        let mut expect = vec![0.0f32; 4];
        for (co, e) in expect.iter_mut().enumerate() {
            let mut s = 0.0;
            for ci in 0..4 {
                s += f.row(0)[ci] * w.offset(center)[ci * 4 + co];
            }
            *e += s;
            let mut s = 0.0;
            for ci in 0..4 {
                s += f.row(1)[ci] * w.offset(above)[ci * 4 + co];
            }
            *e += s;
        }
        assert_eq!(out.data, expect);
        assert_eq!(offsets[above].delta, [0, 0, 1]);
    }

    #[test]
    fn dense_grid_agrees_with_direct_eval() {
        let offsets = enumerate_offsets(3, 1).unwrap();
        let mut state = 55u64;
        let mut next = move |bound: i32| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as i32).rem_euclid(bound)
        };
        let mut set = std::collections::BTreeSet::new();
        while set.len() < 200 {
            set.insert(VoxelCoord::new(next(16), next(16), next(16)));
        }
        let inputs: Vec<VoxelCoord> = set.into_iter().collect();
        let f = FeatureMatrix::seeded(inputs.len(), 8, 5);
        let w = WeightTensor::seeded(27, 8, 8, 6);
        for s_l in [1u32, 2] {
            let (dense_out, dense_f) =
                eval_dense_grid(&inputs, &f, &w, &offsets, 1, s_l, DEFAULT_MEM_CAP).unwrap();
            let direct = eval_eq2_direct(&inputs, &dense_out, &offsets, &f, &w).unwrap();
            assert_eq!(dense_f.rows, direct.rows);
            for (a, b) in dense_f.data.iter().zip(&direct.data) {
                let tol = 1e-5 * a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn submanifold_on_full_grid_equals_plain_dense_convolution() {
        // a completely dense 5x5x5 block: sparsity plays no role
        let mut inputs = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    inputs.push(VoxelCoord::new(x, y, z));
                }
            }
        }
        let f = FeatureMatrix::seeded(inputs.len(), 4, 7);
        let w = WeightTensor::seeded(27, 4, 4, 8);
        let offsets = enumerate_offsets(3, 1).unwrap();
        let (sites, out) =
            eval_dense_grid(&inputs, &f, &w, &offsets, 1, 1, DEFAULT_MEM_CAP).unwrap();
        // reference: plain zero-padded dense convolution loop
        let at = |x: i32, y: i32, z: i32| -> Option<usize> {
            if (0..5).contains(&x) && (0..5).contains(&y) && (0..5).contains(&z) {
                Some(((x * 5 + y) * 5 + z) as usize)
            } else {
                None
            }
        };
        for (i, q) in sites.iter().enumerate() {
            let mut expect = vec![0.0f32; 4];
            for o in &offsets {
                if let Some(j) = at(q.x + o.delta[0], q.y + o.delta[1], q.z + o.delta[2]) {
                    for (co, e) in expect.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for ci in 0..4 {
                            s += f.row(j)[ci] * w.offset(o.index)[ci * 4 + co];
                        }
                        *e += s;
                    }
                }
            }
            for (a, b) in out.row(i).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_voxel_submanifold_site() {
        let offsets = enumerate_offsets(3, 1).unwrap();
        let inputs = coords(&[(7, 7, 7)]);
        let f = FeatureMatrix::seeded(1, 4, 9);
        let w = WeightTensor::seeded(27, 4, 4, 10);
        let (sites, _) = eval_dense_grid(&inputs, &f, &w, &offsets, 1, 1, DEFAULT_MEM_CAP).unwrap();
        assert_eq!(sites, inputs);
    }

    #[test]
    fn memory_cap_refuses_large_instances() {
        let offsets = enumerate_offsets(3, 1).unwrap();
        let inputs = coords(&[(0, 0, 0), (1000, 1000, 1000)]);
        let f = FeatureMatrix::seeded(2, 4, 11);
        let w = WeightTensor::seeded(27, 4, 4, 12);
        let err = eval_dense_grid(&inputs, &f, &w, &offsets, 1, 1, 1 << 20).unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
        let _ = DataflowPlan::candidates(3, 1);
    }
}
