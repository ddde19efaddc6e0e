//! Kernel-map construction over sorted packed coordinates.
//!
//! A kernel map relates every (output coordinate, weight offset) pair to the
//! matching input coordinate index, or a `-1` sentinel. Builders work
//! directly on packed words: queries are generated by packed addition and
//! resolved against the sorted input array, either with one binary search
//! per query or with the grouped one-shot search that amortizes a single
//! binary search across a whole z-column of offsets.

mod build;
mod halve;
mod map;
mod offsets;

pub use build::{
    build_kmap_bruteforce, build_kmap_bsearch, build_kmap_zdelta, sort_packed, SearchStats,
};
pub use halve::{halve_symmetric, HalfKernelMap};
pub use map::{post_process, KernelMap, MapLayout};
pub use offsets::{enumerate_offsets, group_offsets, l1_norm_max, OffsetGroup, WeightOffset};

use crate::coords::{downsample_mask, PackSpec, PackedCoord};
use crate::error::Result;

/// Round a packed coordinate list down to the `2^m` lattice and drop
/// duplicates. Operates entirely in packed form: one AND per word, then a
/// sort and an adjacent-duplicate sweep. The sort is required — per-field
/// flooring can reorder words whose leading fields collapse to the same
/// value — and it is what makes every layer's output coordinates sorted.
pub fn downsample(coords: &[PackedCoord], spec: &PackSpec, m: u32) -> Result<Vec<PackedCoord>> {
    let mask = downsample_mask(spec, m)?;
    let mut out: Vec<PackedCoord> = coords.iter().map(|c| PackedCoord(c.0 & mask)).collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
