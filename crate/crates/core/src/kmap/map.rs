use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::DataflowPlan;

use super::offsets::WeightOffset;

pub const SENTINEL: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapLayout {
    OutputStationary,
    WeightStationary,
    Hybrid,
}

impl MapLayout {
    pub fn tag(&self) -> &'static str {
        match self {
            MapLayout::OutputStationary => "os",
            MapLayout::WeightStationary => "ws",
            MapLayout::Hybrid => "hybrid",
        }
    }
}

/// Worker-local valid pairs for the sparse offsets of one output chunk:
/// `per_slot[slot]` holds `(input, output)` pairs with outputs ascending.
/// Chunks are kept in output order until post-processing concatenates them,
/// so sparse entries never materialize sentinels.
#[derive(Debug, Clone, Default)]
pub(crate) struct ChunkPairs {
    pub per_slot: Vec<Vec<(i32, i32)>>,
}

/// The mapping table between output coordinates, weight offsets and input
/// coordinate indices.
///
/// Offsets classified dense by the dataflow plan end up in an output-major
/// `n_out x k_dense` table carrying `-1` sentinels; offsets classified
/// sparse end up in per-offset contiguous `(input, output)` pair lists with
/// no sentinels. Between build and [`post_process`], a hybrid map keeps its
/// dense entries in an offset-major staging buffer (the layout the build
/// writes) and its sparse entries as per-chunk pair buckets.
#[derive(Debug, Clone)]
pub struct KernelMap {
    pub layout: MapLayout,
    pub n_out: usize,
    pub n_in: usize,
    /// Kernel size K.
    pub k: u32,
    /// K^3.
    pub k_total: usize,
    /// Dataflow threshold the map was built for.
    pub t: u32,
    /// Per-offset valid-entry counts, indexed by offset index.
    pub counts: Vec<u64>,
    /// Offset indices handled output-stationary (ascending).
    pub dense_offsets: Vec<usize>,
    /// Offset indices handled weight-stationary (ascending).
    pub sparse_offsets: Vec<usize>,
    pub(crate) os_entries: Vec<i32>,
    /// Offset-major `k_dense x n_out` staging, present only on un-finalized
    /// maps with a dense part that is not already output-major.
    pub(crate) dense_staging: Option<Vec<i32>>,
    /// Un-merged sparse pair buckets, present only before post-processing.
    pub(crate) pending: Vec<ChunkPairs>,
    pub(crate) ws_in: Vec<i32>,
    pub(crate) ws_out: Vec<i32>,
    pub(crate) ws_bounds: Vec<usize>,
    pub(crate) finalized: bool,
}

impl KernelMap {
    pub(crate) fn new_for_plan(n_out: usize, n_in: usize, k: u32, plan: &DataflowPlan) -> Self {
        let k_total = plan.k_total();
        let full_os = plan.is_full_output_stationary();
        let os_entries = if full_os {
            vec![SENTINEL; n_out * k_total]
        } else {
            Vec::new()
        };
        let dense_staging = if full_os || plan.k_dense() == 0 {
            None
        } else {
            Some(vec![SENTINEL; plan.k_dense() * n_out])
        };
        Self {
            layout: plan.layout(),
            n_out,
            n_in,
            k,
            k_total,
            t: plan.t,
            counts: vec![0; k_total],
            dense_offsets: plan.dense_offsets.clone(),
            sparse_offsets: plan.sparse_offsets.clone(),
            os_entries,
            dense_staging,
            pending: Vec::new(),
            ws_in: Vec::new(),
            ws_out: Vec::new(),
            ws_bounds: Vec::new(),
            finalized: full_os,
        }
    }

    pub(crate) fn from_dense_rows(
        rows: Vec<i32>,
        n_out: usize,
        n_in: usize,
        k: u32,
        plan: &DataflowPlan,
    ) -> Self {
        let k_total = plan.k_total();
        debug_assert_eq!(rows.len(), n_out * k_total);
        let mut counts = vec![0u64; k_total];
        for row in rows.chunks_exact(k_total.max(1)) {
            for (kk, &e) in row.iter().enumerate() {
                if e >= 0 {
                    counts[kk] += 1;
                }
            }
        }
        Self {
            layout: MapLayout::OutputStationary,
            n_out,
            n_in,
            k,
            k_total,
            t: plan.t,
            counts,
            dense_offsets: (0..k_total).collect(),
            sparse_offsets: Vec::new(),
            os_entries: rows,
            dense_staging: None,
            pending: Vec::new(),
            ws_in: Vec::new(),
            ws_out: Vec::new(),
            ws_bounds: Vec::new(),
            finalized: true,
        }
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn k_dense(&self) -> usize {
        self.dense_offsets.len()
    }

    pub fn k_sparse(&self) -> usize {
        self.sparse_offsets.len()
    }

    /// Output-stationary table, `n_out x k_dense` row-major.
    pub fn os_entries(&self) -> &[i32] {
        &self.os_entries
    }

    /// Valid `(input, output)` pairs of the sparse offset at `slot`
    /// (position within `sparse_offsets`), sorted by output index.
    pub fn ws_pairs(&self, slot: usize) -> (&[i32], &[i32]) {
        let range = self.ws_bounds[slot]..self.ws_bounds[slot + 1];
        (&self.ws_in[range.clone()], &self.ws_out[range])
    }

    /// Expand to the full `n_out x K^3` sentinel table regardless of layout
    /// or finalization state. Used for cross-builder comparison, dumping
    /// and checksums.
    pub fn canonical_rows(&self) -> Vec<i32> {
        let mut rows = vec![SENTINEL; self.n_out * self.k_total];
        if !self.os_entries.is_empty() {
            let kd = self.k_dense();
            for (i, chunk) in self.os_entries.chunks_exact(kd.max(1)).enumerate() {
                for (c, &e) in chunk.iter().enumerate() {
                    rows[i * self.k_total + self.dense_offsets[c]] = e;
                }
            }
        } else if let Some(staging) = &self.dense_staging {
            for (r, &k_idx) in self.dense_offsets.iter().enumerate() {
                for (i, &e) in staging[r * self.n_out..(r + 1) * self.n_out]
                    .iter()
                    .enumerate()
                {
                    rows[i * self.k_total + k_idx] = e;
                }
            }
        }
        if self.finalized {
            for (slot, &k_idx) in self.sparse_offsets.iter().enumerate() {
                let (ins, outs) = self.ws_pairs(slot);
                for (&j, &i) in ins.iter().zip(outs) {
                    rows[i as usize * self.k_total + k_idx] = j;
                }
            }
        } else {
            for chunk in &self.pending {
                for (slot, pairs) in chunk.per_slot.iter().enumerate() {
                    let k_idx = self.sparse_offsets[slot];
                    for &(j, i) in pairs {
                        rows[i as usize * self.k_total + k_idx] = j;
                    }
                }
            }
        }
        rows
    }

    /// True when both maps encode the same mappings, layouts aside.
    pub fn same_mappings(&self, other: &KernelMap) -> bool {
        self.n_out == other.n_out
            && self.n_in == other.n_in
            && self.k_total == other.k_total
            && self.canonical_rows() == other.canonical_rows()
    }

    /// FNV-1a over dimensions and canonical entries.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.n_out as u64);
        eat(self.n_in as u64);
        eat(self.k_total as u64);
        for e in self.canonical_rows() {
            eat(e as u32 as u64);
        }
        h
    }

    /// Bytes held by the map's index storage.
    pub fn heap_bytes(&self) -> usize {
        let staged = self.dense_staging.as_ref().map_or(0, |s| s.len() * 4);
        let pending: usize = self
            .pending
            .iter()
            .flat_map(|c| c.per_slot.iter())
            .map(|p| p.len() * 8)
            .sum();
        self.os_entries.len() * 4
            + staged
            + pending
            + (self.ws_in.len() + self.ws_out.len()) * 4
            + self.ws_bounds.len() * std::mem::size_of::<usize>()
            + self.counts.len() * 8
    }

    /// Text dump: header, then per-offset count lines followed by valid
    /// `(input, output)` pair lines in ascending output order.
    pub fn dump(&self, offsets: &[WeightOffset]) -> String {
        let rows = self.canonical_rows();
        let mut out = String::new();
        writeln!(
            out,
            "kmap v1 n_out={} K={} layout={}",
            self.n_out,
            self.k,
            self.layout.tag()
        )
        .unwrap();
        for k_idx in 0..self.k_total {
            writeln!(
                out,
                "k={} l1={} count={}",
                k_idx, offsets[k_idx].l1, self.counts[k_idx]
            )
            .unwrap();
            for i in 0..self.n_out {
                let e = rows[i * self.k_total + k_idx];
                if e >= 0 {
                    writeln!(out, "{} {}", e, i).unwrap();
                }
            }
        }
        out
    }
}

/// Finalize a built map into the layout its plan demands.
///
/// Full output-stationary maps were written in place by the build and pass
/// through untouched. A hybrid dense part is transposed from its
/// offset-major staging into the output-major table. Sparse parts are
/// compacted into contiguous per-offset pair lists: the build-time counters
/// size each list exactly, then the worker buckets are concatenated in
/// output order.
pub fn post_process(mut map: KernelMap, plan: &DataflowPlan) -> Result<KernelMap> {
    if map.t != plan.t
        || map.dense_offsets != plan.dense_offsets
        || map.sparse_offsets != plan.sparse_offsets
    {
        return Err(Error::PlanMismatch(format!(
            "map built for t={}, post-processing requested t={}",
            map.t, plan.t
        )));
    }
    if map.finalized {
        return Ok(map);
    }
    let n_out = map.n_out;
    let kd = map.k_dense();
    let ks = map.k_sparse();

    if let Some(staging) = map.dense_staging.take() {
        let mut os = vec![SENTINEL; n_out * kd];
        os.par_chunks_mut(kd).enumerate().for_each(|(i, row)| {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = staging[c * n_out + i];
            }
        });
        map.os_entries = os;
    }

    let mut bounds = Vec::with_capacity(ks + 1);
    bounds.push(0usize);
    for &k_idx in &map.sparse_offsets {
        bounds.push(bounds.last().unwrap() + map.counts[k_idx] as usize);
    }
    let total = *bounds.last().unwrap();
    let mut ws_in = vec![0i32; total];
    let mut ws_out = vec![0i32; total];
    {
        let mut write_at = bounds[..ks].to_vec();
        for chunk in &map.pending {
            for (slot, pairs) in chunk.per_slot.iter().enumerate() {
                let at = write_at[slot];
                for (off, &(j, i)) in pairs.iter().enumerate() {
                    ws_in[at + off] = j;
                    ws_out[at + off] = i;
                }
                write_at[slot] += pairs.len();
            }
        }
        debug_assert!(
            write_at.iter().zip(&bounds[1..]).all(|(w, b)| w == b),
            "counters disagree with buckets"
        );
    }
    map.pending = Vec::new();
    map.ws_in = ws_in;
    map.ws_out = ws_out;
    map.ws_bounds = bounds;
    map.finalized = true;
    Ok(map)
}
