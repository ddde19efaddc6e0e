use std::collections::HashMap;

use rayon::prelude::*;

use crate::coords::{unpack, PackSpec, PackedCoord, VoxelCoord};
use crate::error::{Error, Result};
use crate::features::DataflowPlan;

use super::map::{ChunkPairs, KernelMap, SENTINEL};
use super::offsets::{l1_norm_max, OffsetGroup, WeightOffset};

/// Instrumented lookup counters for one kernel-map build.
///
/// `binary_search_count` is the number of binary searches issued (one per
/// anchor query for the grouped search, one per query for the simple
/// search). `probe_count` is the total number of cursor advances performed
/// by localized scans. `global_comparison_count` totals every packed-key
/// comparison, binary searches included. `max_unit_probes` tracks the
/// worst localized scan over any single (output, group) unit.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SearchStats {
    pub binary_search_count: u64,
    pub probe_count: u64,
    pub global_comparison_count: u64,
    pub max_unit_probes: u64,
}

impl SearchStats {
    fn merge(mut self, other: SearchStats) -> SearchStats {
        self.binary_search_count += other.binary_search_count;
        self.probe_count += other.probe_count;
        self.global_comparison_count += other.global_comparison_count;
        self.max_unit_probes = self.max_unit_probes.max(other.max_unit_probes);
        self
    }
}

/// Sort packed coordinates ascending, returning the permutation that maps
/// each sorted position to its original row (stable for equal keys).
pub fn sort_packed(coords: &[PackedCoord]) -> (Vec<PackedCoord>, Vec<u32>) {
    let mut perm: Vec<u32> = (0..coords.len() as u32).collect();
    perm.sort_by_key(|&i| coords[i as usize]);
    let sorted = perm.iter().map(|&i| coords[i as usize]).collect();
    (sorted, perm)
}

/// Leftmost position whose key is >= `query` (lower bound).
#[inline]
fn lower_bound(keys: &[PackedCoord], query: u64, comparisons: &mut u64) -> usize {
    let mut lo = 0usize;
    let mut hi = keys.len();
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        *comparisons += 1;
        if keys[mid].0 < query {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Clone, Copy)]
enum SearchKind {
    ZDelta,
    Simple,
}

/// Pointer wrapper for the offset-major staging buffer: work units own
/// disjoint (offset row, output) cells, so unsynchronized writes are sound.
struct SharedCells(*mut i32);
unsafe impl Send for SharedCells {}
unsafe impl Sync for SharedCells {}

impl SharedCells {
    #[inline]
    unsafe fn write(&self, idx: usize, v: i32) {
        *self.0.add(idx) = v;
    }
}

fn kernel_size_of(offsets: &[WeightOffset]) -> u32 {
    let mut k = 1u32;
    while ((k * k * k) as usize) < offsets.len() {
        k += 2;
    }
    debug_assert_eq!((k * k * k) as usize, offsets.len());
    k
}

fn stride_of(offsets: &[WeightOffset]) -> u32 {
    if offsets.len() < 2 {
        return 1;
    }
    (offsets[1].delta[2] - offsets[0].delta[2]) as u32
}

fn check_sorted_unique(list: &[PackedCoord]) -> Result<()> {
    if cfg!(debug_assertions) {
        for (i, w) in list.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(Error::UnsortedInput { position: i + 1 });
            }
        }
    }
    Ok(())
}

/// Debug-build precondition behind the bounded localized scan: inputs with
/// equal (x, y) fields must have z values at least `s_p` apart.
fn debug_check_alignment(inputs: &[PackedCoord], spec: &PackSpec, s_p: u32) {
    if cfg!(debug_assertions) {
        let z_mask = spec.field_max(2);
        for w in inputs.windows(2) {
            if w[0].0 >> spec.bits[2] == w[1].0 >> spec.bits[2] {
                let gap = (w[1].0 & z_mask) - (w[0].0 & z_mask);
                debug_assert!(
                    gap >= s_p as u64,
                    "inputs not on the s_p={} lattice: z gap {}",
                    s_p,
                    gap
                );
            }
        }
    }
}

/// Resolve all of one group's queries for one output coordinate.
///
/// The grouped search issues a single binary search for the anchor query
/// (smallest z), then walks forward: queries ascend by `s_p` in the packed
/// word, and on lattice-aligned inputs no key can fall strictly between two
/// consecutive queries, so each remaining query is decided at the current
/// cursor with at most one advance after a match.
#[inline]
#[allow(clippy::too_many_arguments)]
fn resolve_group(
    kind: SearchKind,
    inputs: &[PackedCoord],
    out_packed: u64,
    members: std::ops::Range<usize>,
    packed_offsets: &[i64],
    s_p: u64,
    stats: &mut SearchStats,
    emit: &mut impl FnMut(usize, i32),
) {
    let n = inputs.len();
    match kind {
        SearchKind::ZDelta => {
            let anchor_query = out_packed.wrapping_add_signed(packed_offsets[members.start]);
            stats.binary_search_count += 1;
            let mut cur = lower_bound(inputs, anchor_query, &mut stats.global_comparison_count);
            let mut unit_probes = 0u64;
            for (j, k_idx) in members.enumerate() {
                let query = anchor_query.wrapping_add(j as u64 * s_p);
                if j > 0 {
                    while cur < n && inputs[cur].0 < query {
                        cur += 1;
                        unit_probes += 1;
                        stats.global_comparison_count += 1;
                    }
                }
                if cur < n {
                    stats.global_comparison_count += 1;
                    if inputs[cur].0 == query {
                        emit(k_idx, cur as i32);
                    }
                }
            }
            stats.probe_count += unit_probes;
            stats.max_unit_probes = stats.max_unit_probes.max(unit_probes);
        }
        SearchKind::Simple => {
            for k_idx in members {
                let query = out_packed.wrapping_add_signed(packed_offsets[k_idx]);
                stats.binary_search_count += 1;
                let pos = lower_bound(inputs, query, &mut stats.global_comparison_count);
                if pos < n {
                    stats.global_comparison_count += 1;
                    if inputs[pos].0 == query {
                        emit(k_idx, pos as i32);
                    }
                }
            }
        }
    }
}

fn build_kmap(
    kind: SearchKind,
    inputs: &[PackedCoord],
    outputs: &[PackedCoord],
    offsets: &[WeightOffset],
    groups: &[OffsetGroup],
    spec: &PackSpec,
    plan: &DataflowPlan,
) -> Result<(KernelMap, SearchStats)> {
    if plan.k_total() != offsets.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} offsets, kernel has {}",
            plan.k_total(),
            offsets.len()
        )));
    }
    assert!(
        inputs.len() < i32::MAX as usize,
        "input count exceeds index type"
    );
    check_sorted_unique(inputs)?;
    check_sorted_unique(outputs)?;
    let k = kernel_size_of(offsets);
    let s_p = stride_of(offsets);
    debug_check_alignment(inputs, spec, s_p);

    let packed_offsets: Vec<i64> = offsets
        .iter()
        .map(|o| crate::coords::pack_offset(o.delta, spec).map(|p| p.0))
        .collect::<Result<_>>()?;

    let n_out = outputs.len();
    let k_total = offsets.len();
    let mut map = KernelMap::new_for_plan(n_out, inputs.len(), k, plan);

    // Accumulate per-offset counters worker-locally and merge afterwards so
    // totals stay deterministic.
    type Acc = (Vec<u64>, SearchStats);
    let zero = || (vec![0u64; k_total], SearchStats::default());
    let join = |mut a: Acc, b: Acc| {
        for (x, y) in a.0.iter_mut().zip(&b.0) {
            *x += y;
        }
        a.1 = a.1.merge(b.1);
        a
    };

    let (counts, stats) = if plan.is_full_output_stationary() {
        // Full output-stationary: each output row is written contiguously by
        // exactly one worker.
        map.os_entries
            .par_chunks_mut(k_total)
            .enumerate()
            .fold(zero, |(mut counts, mut stats), (i, row)| {
                let out_packed = outputs[i].0;
                for g in groups {
                    resolve_group(
                        kind,
                        inputs,
                        out_packed,
                        g.members.clone(),
                        &packed_offsets,
                        s_p as u64,
                        &mut stats,
                        &mut |k_idx, entry| {
                            row[k_idx] = entry;
                            counts[k_idx] += 1;
                        },
                    );
                }
                (counts, stats)
            })
            .reduce(zero, join)
    } else {
        // Dense offsets go to offset-major staging (workers own disjoint
        // output ranges, so per offset their writes land in disjoint column
        // spans); sparse offsets go to worker-local pair buckets and never
        // materialize sentinels.
        #[derive(Clone, Copy)]
        enum Role {
            Dense(usize),
            Sparse(usize),
        }
        let mut role = vec![Role::Sparse(0); k_total];
        for (r, &k_idx) in plan.dense_offsets.iter().enumerate() {
            role[k_idx] = Role::Dense(r);
        }
        for (s, &k_idx) in plan.sparse_offsets.iter().enumerate() {
            role[k_idx] = Role::Sparse(s);
        }
        let k_sparse = plan.k_sparse();
        let cells = map
            .dense_staging
            .as_mut()
            .map(|s| SharedCells(s.as_mut_ptr()));
        let chunk = 1024usize;
        let ranges: Vec<std::ops::Range<usize>> = (0..n_out)
            .step_by(chunk.max(1))
            .map(|s| s..(s + chunk).min(n_out))
            .collect();
        let cells_ref = &cells;
        // chunk results collected in output order so pair lists stay sorted
        let per_chunk: Vec<(Acc, ChunkPairs)> = ranges
            .into_par_iter()
            .map(|range| {
                let mut acc = zero();
                let mut pairs = ChunkPairs {
                    per_slot: vec![Vec::new(); k_sparse],
                };
                for i in range {
                    let out_packed = outputs[i].0;
                    for g in groups {
                        resolve_group(
                            kind,
                            inputs,
                            out_packed,
                            g.members.clone(),
                            &packed_offsets,
                            s_p as u64,
                            &mut acc.1,
                            &mut |k_idx, entry| {
                                match role[k_idx] {
                                    Role::Dense(r) => {
                                        // each (offset row, output) cell has
                                        // exactly one writer
                                        unsafe {
                                            cells_ref.as_ref().unwrap().write(r * n_out + i, entry)
                                        };
                                    }
                                    Role::Sparse(s) => {
                                        pairs.per_slot[s].push((entry, i as i32));
                                    }
                                }
                                acc.0[k_idx] += 1;
                            },
                        );
                    }
                }
                (acc, pairs)
            })
            .collect();
        let mut total = zero();
        let mut pending = Vec::with_capacity(per_chunk.len());
        for (acc, pairs) in per_chunk {
            total = join(total, acc);
            pending.push(pairs);
        }
        map.pending = pending;
        total
    };
    map.counts = counts;
    Ok((map, stats))
}

/// Grouped one-shot search: one binary search per (output, offset group)
/// anchor, localized forward scans for the rest. `|V_q| * K^2` binary
/// searches total.
pub fn build_kmap_zdelta(
    inputs: &[PackedCoord],
    outputs: &[PackedCoord],
    offsets: &[WeightOffset],
    groups: &[OffsetGroup],
    spec: &PackSpec,
    plan: &DataflowPlan,
) -> Result<(KernelMap, SearchStats)> {
    debug_assert_eq!(
        groups.len() * groups.first().map_or(1, |g| g.members.len()),
        offsets.len()
    );
    build_kmap(
        SearchKind::ZDelta,
        inputs,
        outputs,
        offsets,
        groups,
        spec,
        plan,
    )
}

/// One full binary search per query: `|V_q| * K^3` searches. Produces a
/// kernel map identical to the grouped search.
pub fn build_kmap_bsearch(
    inputs: &[PackedCoord],
    outputs: &[PackedCoord],
    offsets: &[WeightOffset],
    spec: &PackSpec,
    plan: &DataflowPlan,
) -> Result<(KernelMap, SearchStats)> {
    let k = kernel_size_of(offsets);
    let groups = super::offsets::group_offsets(offsets, k);
    build_kmap(
        SearchKind::Simple,
        inputs,
        outputs,
        offsets,
        &groups,
        spec,
        plan,
    )
}

/// Ground-truth builder: hash-set membership over unpacked triples.
/// Test oracle only; sequential and layout-agnostic.
pub fn build_kmap_bruteforce(
    inputs: &[PackedCoord],
    outputs: &[PackedCoord],
    offsets: &[WeightOffset],
    spec: &PackSpec,
) -> Result<KernelMap> {
    let k = kernel_size_of(offsets);
    let k_total = offsets.len();
    let s_p = stride_of(offsets);
    let lookup: HashMap<VoxelCoord, i32> = inputs
        .iter()
        .enumerate()
        .map(|(j, p)| (unpack(*p, spec), j as i32))
        .collect();
    let mut rows = vec![SENTINEL; outputs.len() * k_total];
    for (i, out) in outputs.iter().enumerate() {
        let q = unpack(*out, spec);
        for o in offsets {
            if let Some(&j) = lookup.get(&q.offset_by(o.delta)) {
                rows[i * k_total + o.index] = j;
            }
        }
    }
    let t_full_os = l1_norm_max(k, s_p) + 1;
    Ok(KernelMap::from_dense_rows(
        rows,
        outputs.len(),
        inputs.len(),
        k,
        &DataflowPlan::from_threshold(offsets, s_p, t_full_os)?,
    ))
}
