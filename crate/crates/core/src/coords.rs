//! Voxel coordinate domain: quantization, normalization and bounded-range
//! bit packing.
//!
//! A packed coordinate stores the triple `(x, y, z)` in one unsigned word,
//! `x` in the most significant field, `z` in the least. The map is linear,
//! so lexicographic order of triples equals unsigned order of packed words,
//! and adding a packed offset equals packing the offset triple sum — as long
//! as every component stays inside its field. [`PackSpec::margin`] reserves
//! room at both field ends so query arithmetic never carries across fields.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Voxelization parameters: meters per voxel and spatial range per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub grid_size: [f32; 3],
    pub range: [f32; 3],
}

impl GridSpec {
    pub fn new(grid_size: [f32; 3], range: [f32; 3]) -> Result<Self> {
        for (name, v) in [("grid_size", grid_size), ("range", range)] {
            if v.iter().any(|c| !c.is_finite() || *c <= 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "{name} components must be finite and positive, got {v:?}"
                )));
            }
        }
        Ok(Self { grid_size, range })
    }

    /// Uniform grid over a cubic range; handy default for synthetic data.
    pub fn uniform(grid_size: f32, range: f32) -> Result<Self> {
        Self::new([grid_size; 3], [range; 3])
    }

    /// Per-axis voxel extent `floor(range / grid_size)`.
    pub fn axis_extents(&self) -> [u64; 3] {
        std::array::from_fn(|a| (self.range[a] / self.grid_size[a]).floor() as u64)
    }
}

/// Integer voxel indices. Ordered lexicographically by (x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn component(&self, axis: usize) -> i32 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn offset_by(&self, delta: [i32; 3]) -> Self {
        Self::new(self.x + delta[0], self.y + delta[1], self.z + delta[2])
    }
}

const AXIS_NAMES: [char; 3] = ['x', 'y', 'z'];

/// Bit-field layout for packed coordinates.
///
/// `bits = [b_x, b_y, b_z]` with `x` occupying the most significant field.
/// `margin` is the number of voxel units reserved at both ends of every
/// field; normalized coordinates stay `margin`-interior, so adding any
/// offset with components bounded by `margin` never leaves a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackSpec {
    pub bits: [u32; 3],
    pub word_width: u32,
    pub margin: u32,
}

impl PackSpec {
    pub fn new(bits: [u32; 3], word_width: u32, margin: u32) -> Result<Self> {
        if word_width != 32 && word_width != 64 {
            return Err(Error::InvalidPackSpec(format!(
                "word width must be 32 or 64, got {word_width}"
            )));
        }
        if bits.iter().any(|&b| b == 0 || b > 31) {
            return Err(Error::InvalidPackSpec(format!(
                "per-axis bits must be in 1..=31, got {bits:?}"
            )));
        }
        let total: u32 = bits.iter().sum();
        if total > word_width {
            return Err(Error::InvalidPackSpec(format!(
                "bit fields {bits:?} sum to {total} > word width {word_width}"
            )));
        }
        for (a, &b) in bits.iter().enumerate() {
            if (2 * margin as u64) >= (1u64 << b) {
                return Err(Error::InvalidPackSpec(format!(
                    "margin {margin} leaves no room in {b}-bit {} field",
                    AXIS_NAMES[a]
                )));
            }
        }
        Ok(Self {
            bits,
            word_width,
            margin,
        })
    }

    /// The evaluation default: 12/12/8 bits in a 32-bit word.
    pub fn default_32(margin: u32) -> Result<Self> {
        Self::new([12, 12, 8], 32, margin)
    }

    pub fn shift(&self, axis: usize) -> u32 {
        match axis {
            0 => self.bits[1] + self.bits[2],
            1 => self.bits[2],
            _ => 0,
        }
    }

    /// Largest storable component value on `axis`.
    pub fn field_max(&self, axis: usize) -> u64 {
        (1u64 << self.bits[axis]) - 1
    }

    /// Per-axis coordinate capacity once both margins are reserved.
    pub fn capacity(&self, axis: usize) -> u64 {
        (1u64 << self.bits[axis]).saturating_sub(2 * self.margin as u64)
    }

    pub fn min_bits(&self) -> u32 {
        *self.bits.iter().min().unwrap()
    }

    /// Check that the grid's derived axis extents fit the bit fields.
    pub fn validate_grid(&self, grid: &GridSpec) -> Result<()> {
        for (a, extent) in grid.axis_extents().into_iter().enumerate() {
            if extent > (1u64 << self.bits[a]) {
                return Err(Error::InvalidPackSpec(format!(
                    "grid extent {extent} on axis {} exceeds the {}-bit field",
                    AXIS_NAMES[a], self.bits[a]
                )));
            }
        }
        Ok(())
    }
}

/// A coordinate triple packed into one unsigned word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackedCoord(pub u64);

/// The linear packing map applied to a signed offset triple.
///
/// For any margin-interior `q`: `pack(q).0 + PackedOffset = pack(q + δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedOffset(pub i64);

impl PackedCoord {
    /// Packed-native query generation; caller guarantees the result stays
    /// field-interior (see [`PackSpec::margin`]).
    #[inline]
    pub fn offset(self, delta: PackedOffset) -> PackedCoord {
        PackedCoord(self.0.wrapping_add_signed(delta.0))
    }
}

/// Result of [`quantize`]: deduplicated voxels plus the raw-point index map.
#[derive(Debug, Clone)]
pub struct Quantized {
    /// Unique voxels in first-occurrence order.
    pub coords: Vec<VoxelCoord>,
    /// For each raw point, the index of its voxel in `coords`.
    pub point_to_voxel: Vec<u32>,
}

/// Floor-quantize raw points to voxel indices and merge duplicates.
///
/// Uses floor toward negative infinity, so `-0.6` quantizes to `-1`.
/// Features of merged points are averaged by the caller via the returned
/// index map.
pub fn quantize(points: &[[f32; 3]], grid: &GridSpec) -> Result<Quantized> {
    let mut coords = Vec::new();
    let mut point_to_voxel = Vec::with_capacity(points.len());
    let mut seen: HashMap<VoxelCoord, u32> = HashMap::new();
    for (index, p) in points.iter().enumerate() {
        if let Some(&value) = p.iter().find(|c| !c.is_finite()) {
            return Err(Error::NonFinitePoint { index, value });
        }
        let v = VoxelCoord::new(
            (p[0] / grid.grid_size[0]).floor() as i32,
            (p[1] / grid.grid_size[1]).floor() as i32,
            (p[2] / grid.grid_size[2]).floor() as i32,
        );
        let next = coords.len() as u32;
        let idx = *seen.entry(v).or_insert_with(|| {
            coords.push(v);
            next
        });
        point_to_voxel.push(idx);
    }
    Ok(Quantized {
        coords,
        point_to_voxel,
    })
}

/// Translate coordinates so every axis starts at `margin`.
///
/// Returns the translated coordinates and the origin needed to invert:
/// `original = normalized + origin`. Fails if an axis extent cannot fit in
/// its bit field once both margins are reserved.
pub fn normalize_coords(
    coords: &[VoxelCoord],
    spec: &PackSpec,
) -> Result<(Vec<VoxelCoord>, VoxelCoord)> {
    if coords.is_empty() {
        return Ok((Vec::new(), VoxelCoord::new(0, 0, 0)));
    }
    let mut min = [i64::MAX; 3];
    let mut max = [i64::MIN; 3];
    for v in coords {
        for a in 0..3 {
            let c = v.component(a) as i64;
            min[a] = min[a].min(c);
            max[a] = max[a].max(c);
        }
    }
    let margin = spec.margin as i64;
    for a in 0..3 {
        let extent = (max[a] - min[a] + 1) as u64;
        let capacity = spec.capacity(a);
        if extent > capacity {
            let needed = extent + 2 * spec.margin as u64;
            return Err(Error::AxisOverflow {
                axis: AXIS_NAMES[a],
                extent,
                bits: spec.bits[a],
                margin: spec.margin,
                capacity,
                required_bits: needed.next_power_of_two().trailing_zeros(),
            });
        }
    }
    let normalized = coords
        .iter()
        .map(|v| {
            VoxelCoord::new(
                (v.x as i64 - min[0] + margin) as i32,
                (v.y as i64 - min[1] + margin) as i32,
                (v.z as i64 - min[2] + margin) as i32,
            )
        })
        .collect();
    let origin = VoxelCoord::new(
        (min[0] - margin) as i32,
        (min[1] - margin) as i32,
        (min[2] - margin) as i32,
    );
    Ok((normalized, origin))
}

/// Pack a normalized coordinate. Out-of-range components are an error,
/// never a silent truncation.
pub fn pack(v: &VoxelCoord, spec: &PackSpec) -> Result<PackedCoord> {
    let mut word = 0u64;
    for (a, &axis) in AXIS_NAMES.iter().enumerate() {
        let c = v.component(a);
        let max = spec.field_max(a);
        if c < 0 || c as u64 > max {
            return Err(Error::OutOfRange {
                axis,
                value: c as i64,
                max,
            });
        }
        word |= (c as u64) << spec.shift(a);
    }
    Ok(PackedCoord(word))
}

pub fn unpack(p: PackedCoord, spec: &PackSpec) -> VoxelCoord {
    let field = |a: usize| ((p.0 >> spec.shift(a)) & spec.field_max(a)) as i32;
    VoxelCoord::new(field(0), field(1), field(2))
}

/// Pack a signed offset triple. Components must be bounded by the margin so
/// that packed addition can never cross a field boundary.
pub fn pack_offset(delta: [i32; 3], spec: &PackSpec) -> Result<PackedOffset> {
    let mut word = 0i64;
    for (a, &d) in delta.iter().enumerate() {
        if d.unsigned_abs() > spec.margin {
            return Err(Error::OffsetExceedsMargin {
                axis: AXIS_NAMES[a],
                value: d,
                margin: spec.margin,
            });
        }
        word += (d as i64) << spec.shift(a);
    }
    Ok(PackedOffset(word))
}

/// Bit mask realizing `floor(v / 2^m) * 2^m` per axis on packed words: the
/// low `m` bits of every field are cleared by a single AND.
pub fn downsample_mask(spec: &PackSpec, m: u32) -> Result<u64> {
    if m >= spec.min_bits() {
        return Err(Error::MaskDepthTooLarge {
            depth: m,
            min_bits: spec.min_bits(),
        });
    }
    let mut mask = 0u64;
    for a in 0..3 {
        let ones = (spec.field_max(a) >> m) << m;
        mask |= ones << spec.shift(a);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec_12_12_8(margin: u32) -> PackSpec {
        PackSpec::new([12, 12, 8], 32, margin).unwrap()
    }

    #[test]
    fn quantize_floors_toward_negative_infinity() {
        let grid = GridSpec::uniform(0.5, 100.0).unwrap();
        let q = quantize(&[[1.25, -0.30, 0.999]], &grid).unwrap();
        assert_eq!(q.coords, vec![VoxelCoord::new(2, -1, 1)]);
    }

    #[test]
    fn quantize_origin_is_identity() {
        let grid = GridSpec::uniform(0.37, 10.0).unwrap();
        let q = quantize(&[[0.0, 0.0, 0.0]], &grid).unwrap();
        assert_eq!(q.coords, vec![VoxelCoord::new(0, 0, 0)]);
    }

    #[test]
    fn quantize_rejects_non_finite_points() {
        let grid = GridSpec::uniform(0.5, 10.0).unwrap();
        let err = quantize(&[[0.0; 3], [1.0, f32::NAN, 0.0]], &grid).unwrap_err();
        match err {
            Error::NonFinitePoint { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn quantize_matches_set_oracle_on_random_cloud() {
        // Independent oracle: flooring into a hash set.
        let grid = GridSpec::uniform(0.1, 10.0).unwrap();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f32 / (1u64 << 53) as f32 * 10.0
        };
        let points: Vec<[f32; 3]> = (0..1000).map(|_| [next(), next(), next()]).collect();
        let oracle: HashSet<(i32, i32, i32)> = points
            .iter()
            .map(|p| {
                (
                    (p[0] / 0.1).floor() as i32,
                    (p[1] / 0.1).floor() as i32,
                    (p[2] / 0.1).floor() as i32,
                )
            })
            .collect();
        let q = quantize(&points, &grid).unwrap();
        assert_eq!(q.coords.len(), oracle.len());
        assert_eq!(q.point_to_voxel.len(), points.len());
        for (p, &vi) in points.iter().zip(&q.point_to_voxel) {
            let v = q.coords[vi as usize];
            assert!(oracle.contains(&(v.x, v.y, v.z)));
            assert_eq!(v.x, (p[0] / 0.1).floor() as i32);
        }
    }

    #[test]
    fn normalize_translates_min_to_margin() {
        let spec = spec_12_12_8(2);
        let coords = vec![VoxelCoord::new(-5, 0, 0), VoxelCoord::new(3, 0, 0)];
        let (out, origin) = normalize_coords(&coords, &spec).unwrap();
        assert_eq!(out[0].x, 2);
        assert_eq!(out[1].x, 10);
        // origin inverts the translation
        for (n, o) in out.iter().zip(&coords) {
            assert_eq!(n.x + origin.x, o.x);
            assert_eq!(n.y + origin.y, o.y);
            assert_eq!(n.z + origin.z, o.z);
        }
    }

    #[test]
    fn normalize_zero_margin_in_range_is_unchanged() {
        let spec = spec_12_12_8(0);
        let coords = vec![VoxelCoord::new(0, 0, 0), VoxelCoord::new(5, 9, 11)];
        let (out, origin) = normalize_coords(&coords, &spec).unwrap();
        assert_eq!(out, coords);
        // origin compensates only the (zero) margin shift
        assert_eq!(origin, VoxelCoord::new(0, 0, 0));
    }

    #[test]
    fn normalize_rejects_oversized_extent() {
        let spec = spec_12_12_8(2);
        // extent 4095 > 4096 - 2*2
        let coords = vec![VoxelCoord::new(0, 0, 0), VoxelCoord::new(4094, 0, 0)];
        let err = normalize_coords(&coords, &spec).unwrap_err();
        match err {
            Error::AxisOverflow {
                axis,
                extent,
                required_bits,
                ..
            } => {
                assert_eq!(axis, 'x');
                assert_eq!(extent, 4095);
                assert_eq!(required_bits, 13);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn pack_field_positions() {
        let spec = spec_12_12_8(0);
        let p = |x, y, z| pack(&VoxelCoord::new(x, y, z), &spec).unwrap().0;
        assert_eq!(p(0, 0, 0), 0);
        assert_eq!(p(1, 0, 0), 1 << 20);
        assert_eq!(p(0, 1, 0), 1 << 8);
        assert_eq!(p(0, 0, 1), 1);
    }

    #[test]
    fn pack_rejects_out_of_range() {
        let spec = spec_12_12_8(0);
        assert!(pack(&VoxelCoord::new(0, 0, 256), &spec).is_err());
        assert!(pack(&VoxelCoord::new(-1, 0, 0), &spec).is_err());
        assert!(pack(&VoxelCoord::new(4096, 0, 0), &spec).is_err());
    }

    #[test]
    fn packed_sort_equals_lexicographic_sort() {
        let spec = spec_12_12_8(0);
        let mut state = 42u64;
        let mut next = move |bound: u64| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) % bound) as i32
        };
        let triples: Vec<VoxelCoord> = (0..10_000)
            .map(|_| VoxelCoord::new(next(4096), next(4096), next(256)))
            .collect();
        let mut by_packed: Vec<VoxelCoord> = triples.clone();
        by_packed.sort_by_key(|v| pack(v, &spec).unwrap());
        let mut by_lex = triples;
        by_lex.sort();
        assert_eq!(by_packed, by_lex);
    }

    #[test]
    fn pack_offset_linearity() {
        let spec = spec_12_12_8(2);
        assert_eq!(pack_offset([0, 0, 0], &spec).unwrap().0, 0);
        assert_eq!(
            pack_offset([-1, -1, -1], &spec).unwrap().0,
            -((1 << 20) + (1 << 8) + 1)
        );
        assert!(pack_offset([3, 0, 0], &spec).is_err());
    }

    #[test]
    fn packed_addition_identity_exhaustive_16_cube() {
        let spec = spec_12_12_8(2);
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    let q = VoxelCoord::new(x + 2, y + 2, z + 2);
                    let pq = pack(&q, &spec).unwrap();
                    for dx in -2i32..=2 {
                        for dy in -2i32..=2 {
                            for dz in -2i32..=2 {
                                let off = pack_offset([dx, dy, dz], &spec).unwrap();
                                let direct = pack(&q.offset_by([dx, dy, dz]), &spec).unwrap();
                                assert_eq!(pq.offset(off), direct);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mask_zero_depth_covers_occupied_bits() {
        let spec = spec_12_12_8(0);
        assert_eq!(downsample_mask(&spec, 0).unwrap(), u32::MAX as u64);
    }

    #[test]
    fn mask_depth_one_clears_field_low_bits() {
        let spec = spec_12_12_8(0);
        let mask = downsample_mask(&spec, 1).unwrap();
        let cleared = !mask & (u32::MAX as u64);
        assert_eq!(cleared, (1 << 0) | (1 << 8) | (1 << 20));
    }

    #[test]
    fn mask_equals_unpacked_rounding_oracle() {
        let spec = spec_12_12_8(0);
        let mut state = 7u64;
        let mut next = move |bound: u64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) % bound) as i32
        };
        for _ in 0..2000 {
            let v = VoxelCoord::new(next(4096), next(4096), next(256));
            let packed = pack(&v, &spec).unwrap();
            for m in 1..=3u32 {
                let mask = downsample_mask(&spec, m).unwrap();
                let rounded = VoxelCoord::new((v.x >> m) << m, (v.y >> m) << m, (v.z >> m) << m);
                assert_eq!(PackedCoord(packed.0 & mask), pack(&rounded, &spec).unwrap());
            }
        }
    }

    #[test]
    fn mask_rejects_excess_depth() {
        let spec = spec_12_12_8(0);
        assert!(downsample_mask(&spec, 8).is_err());
    }

    #[test]
    fn unpack_roundtrip_randomized() {
        let spec = PackSpec::new([20, 20, 20], 64, 4).unwrap();
        let mut state = 99u64;
        let mut next = move |bound: u64| {
            state = state
                .wrapping_mul(2862933555777941757)
                .wrapping_add(3037000493);
            ((state >> 33) % bound) as i32
        };
        for _ in 0..10_000 {
            let v = VoxelCoord::new(next(1 << 20), next(1 << 20), next(1 << 20));
            let p = pack(&v, &spec).unwrap();
            assert_eq!(unpack(p, &spec), v);
        }
    }
}
