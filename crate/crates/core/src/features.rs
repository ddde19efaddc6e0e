//! Feature computation over a finalized kernel map.
//!
//! Three executions of the same sum: output-stationary (each worker owns
//! output rows and tolerates sentinel entries), weight-stationary (workers
//! own weight offsets and accumulate partial sums into shared output rows)
//! and hybrid (per-offset choice driven by an L1-norm threshold).
//!
//! Accumulation order matters for bit-exact comparisons. In deterministic
//! mode every path adds per-offset contributions to an output element in
//! ascending offset order, each contribution computed as a complete dot
//! product — the same order the reference evaluation uses. Non-deterministic
//! mode trades that for the contended-accumulation behavior of a real
//! weight-stationary pass: lock-free CAS adds on shared scalars.

use std::sync::atomic::{AtomicU32, Ordering};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kmap::{KernelMap, MapLayout, WeightOffset};

/// Row-major `rows x channels` feature storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, channels: usize) -> Self {
        Self {
            rows,
            channels,
            data: vec![0.0; rows * channels],
        }
    }

    pub fn from_vec(rows: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {rows}x{channels} = {} values, got {}",
                rows * channels,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            channels,
            data,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Reorder rows: `perm[new] = old`, as returned by `sort_packed`.
    pub fn permuted(&self, perm: &[u32]) -> Self {
        assert_eq!(perm.len(), self.rows);
        let mut out = Self::zeros(self.rows, self.channels);
        for (new, &old) in perm.iter().enumerate() {
            out.row_mut(new).copy_from_slice(self.row(old as usize));
        }
        out
    }

    /// Mean-reduce rows sharing a group id (voxelization feature merge).
    pub fn average_by_groups(&self, groups: &[u32], n_groups: usize) -> Self {
        assert_eq!(groups.len(), self.rows);
        let mut out = Self::zeros(n_groups, self.channels);
        let mut hits = vec![0u32; n_groups];
        for (row, &g) in groups.iter().enumerate() {
            hits[g as usize] += 1;
            let src = self.row(row);
            let dst = out.row_mut(g as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for (g, &h) in hits.iter().enumerate() {
            if h > 1 {
                let inv = 1.0 / h as f32;
                for v in out.row_mut(g) {
                    *v *= inv;
                }
            }
        }
        out
    }

    /// Deterministic pseudo-random features: ChaCha8 stream mapped to
    /// uniform [-0.5, 0.5) via the top 24 bits of each draw.
    pub fn seeded(rows: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * channels).map(|_| unit_draw(&mut rng)).collect();
        Self {
            rows,
            channels,
            data,
        }
    }
}

#[inline]
fn unit_draw(rng: &mut ChaCha8Rng) -> f32 {
    (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32 - 0.5
}

/// `K^3` weight matrices of shape `c_in x c_out`, indexed by offset.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub k_total: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn from_vec(k_total: usize, c_in: usize, c_out: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != k_total * c_in * c_out {
            return Err(Error::ShapeMismatch(format!(
                "weight tensor needs {} values, got {}",
                k_total * c_in * c_out,
                data.len()
            )));
        }
        Ok(Self {
            k_total,
            c_in,
            c_out,
            data,
        })
    }

    /// Deterministic seeded initialization (same scheme as
    /// [`FeatureMatrix::seeded`]), drawn offset-major.
    pub fn seeded(k_total: usize, c_in: usize, c_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..k_total * c_in * c_out)
            .map(|_| unit_draw(&mut rng))
            .collect();
        Self {
            k_total,
            c_in,
            c_out,
            data,
        }
    }

    /// Identity matrix on the given offset, zeros elsewhere.
    pub fn identity_at(k_total: usize, c: usize, k_idx: usize) -> Self {
        let mut w = Self {
            k_total,
            c_in: c,
            c_out: c,
            data: vec![0.0; k_total * c * c],
        };
        for ci in 0..c {
            w.data[k_idx * c * c + ci * c + ci] = 1.0;
        }
        w
    }

    #[inline]
    pub fn offset(&self, k_idx: usize) -> &[f32] {
        let size = self.c_in * self.c_out;
        &self.data[k_idx * size..(k_idx + 1) * size]
    }
}

/// Per-offset dense/sparse classification from the L1-norm threshold `t`:
/// offsets with `l1 < t` run output-stationary, the rest weight-stationary.
/// `t = 0` degenerates to full weight-stationary, `t = L1NormMax + 1` to
/// full output-stationary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataflowPlan {
    pub t: u32,
    pub l1_norm_max: u32,
    pub dense_offsets: Vec<usize>,
    pub sparse_offsets: Vec<usize>,
}

impl DataflowPlan {
    pub fn from_threshold(offsets: &[WeightOffset], s_p: u32, t: u32) -> Result<Self> {
        let l1_norm_max = offsets.iter().map(|o| o.l1).max().unwrap_or(0);
        let valid =
            t == 0 || t == l1_norm_max + 1 || (t <= l1_norm_max && t.is_multiple_of(s_p) && t > 0);
        if !valid {
            return Err(Error::InvalidThreshold {
                t,
                reason: format!(
                    "must be 0, a positive multiple of {s_p} up to {l1_norm_max}, or {}",
                    l1_norm_max + 1
                ),
            });
        }
        let (dense, sparse): (Vec<&WeightOffset>, Vec<&WeightOffset>) =
            offsets.iter().partition(|o| o.l1 < t);
        Ok(Self {
            t,
            l1_norm_max,
            dense_offsets: dense.iter().map(|o| o.index).collect(),
            sparse_offsets: sparse.iter().map(|o| o.index).collect(),
        })
    }

    pub fn full_output_stationary(offsets: &[WeightOffset], s_p: u32) -> Result<Self> {
        let max = offsets.iter().map(|o| o.l1).max().unwrap_or(0);
        Self::from_threshold(offsets, s_p, max + 1)
    }

    pub fn full_weight_stationary(offsets: &[WeightOffset], s_p: u32) -> Result<Self> {
        Self::from_threshold(offsets, s_p, 0)
    }

    pub fn k_total(&self) -> usize {
        self.dense_offsets.len() + self.sparse_offsets.len()
    }

    pub fn k_dense(&self) -> usize {
        self.dense_offsets.len()
    }

    pub fn k_sparse(&self) -> usize {
        self.sparse_offsets.len()
    }

    pub fn is_full_output_stationary(&self) -> bool {
        self.sparse_offsets.is_empty()
    }

    pub fn is_full_weight_stationary(&self) -> bool {
        self.dense_offsets.is_empty()
    }

    pub fn layout(&self) -> MapLayout {
        if self.is_full_output_stationary() {
            MapLayout::OutputStationary
        } else if self.is_full_weight_stationary() {
            MapLayout::WeightStationary
        } else {
            MapLayout::Hybrid
        }
    }

    /// Candidate thresholds for tuning: `{0} ∪ {s_p, 2 s_p, .., max} ∪ {max+1}`.
    pub fn candidates(k: u32, s_p: u32) -> Vec<u32> {
        let max = crate::kmap::l1_norm_max(k, s_p);
        let mut c = vec![0];
        c.extend((1..=max / s_p.max(1)).map(|i| i * s_p));
        c.push(max + 1);
        c
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ComputeOptions {
    /// Partition shared accumulation by output-row ranges so results are
    /// reproducible; turn off to get lock-free scalar accumulation instead.
    pub deterministic: bool,
    /// Perform the multiply for sentinel entries against a zero row instead
    /// of skipping it, to model the wasted work of an unfiltered map.
    pub multiply_sentinel_rows: bool,
}

impl Default for ComputeOptions {
    fn default() -> Self {
        Self {
            deterministic: true,
            multiply_sentinel_rows: false,
        }
    }
}

impl ComputeOptions {
    pub fn benchmark() -> Self {
        Self {
            deterministic: false,
            multiply_sentinel_rows: false,
        }
    }
}

/// Blocked matrix product `a (n x k) * b (k x m)`.
///
/// Accumulation over `k` is ascending for every output element regardless
/// of row parallelism or blocking, so results are bit-stable.
pub fn gemm(a: &[f32], n: usize, k: usize, b: &[f32], m: usize) -> Vec<f32> {
    assert_eq!(a.len(), n * k, "lhs shape");
    assert_eq!(b.len(), k * m, "rhs shape");
    let mut c = vec![0.0f32; n * m];
    gemm_acc(a, n, k, b, m, &mut c);
    c
}

const GEMM_KB: usize = 64;

/// `c += a * b` with the same deterministic accumulation order as [`gemm`].
fn gemm_acc(a: &[f32], n: usize, k: usize, b: &[f32], m: usize, c: &mut [f32]) {
    debug_assert_eq!(c.len(), n * m);
    let body = |i: usize, c_row: &mut [f32]| {
        let a_row = &a[i * k..(i + 1) * k];
        for kb in (0..k).step_by(GEMM_KB) {
            let kend = (kb + GEMM_KB).min(k);
            for kk in kb..kend {
                let aik = a_row[kk];
                let b_row = &b[kk * m..(kk + 1) * m];
                for (cv, bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aik * bv;
                }
            }
        }
    };
    if n >= 64 {
        c.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in c.chunks_mut(m).enumerate() {
            body(i, row);
        }
    }
}

fn check_dims(map: &KernelMap, f_in: &FeatureMatrix, w: &WeightTensor) -> Result<()> {
    if f_in.channels != w.c_in {
        return Err(Error::ShapeMismatch(format!(
            "input channels {} != weight c_in {}",
            f_in.channels, w.c_in
        )));
    }
    if map.k_total != w.k_total {
        return Err(Error::ShapeMismatch(format!(
            "map has {} offsets, weights {}",
            map.k_total, w.k_total
        )));
    }
    if map.n_in != f_in.rows {
        return Err(Error::ShapeMismatch(format!(
            "map expects {} input rows, features have {}",
            map.n_in, f_in.rows
        )));
    }
    if !map.is_finalized() {
        return Err(Error::LayoutMismatch(
            "kernel map must be post-processed before feature computation".into(),
        ));
    }
    Ok(())
}

/// Dot `f_row * w_col_block`: one complete per-offset contribution added to
/// the accumulator row. Shared by every path so accumulation math is
/// identical across dataflows.
#[inline]
fn add_contribution(acc: &mut [f32], f_row: &[f32], w_k: &[f32], c_out: usize) {
    let mut tmp = [0.0f32; 64];
    if c_out <= 64 {
        let tmp = &mut tmp[..c_out];
        for (ci, &fv) in f_row.iter().enumerate() {
            let w_row = &w_k[ci * c_out..(ci + 1) * c_out];
            for (t, wv) in tmp.iter_mut().zip(w_row) {
                *t += fv * wv;
            }
        }
        for (a, t) in acc.iter_mut().zip(tmp.iter()) {
            *a += t;
        }
    } else {
        let mut tmp = vec![0.0f32; c_out];
        for (ci, &fv) in f_row.iter().enumerate() {
            let w_row = &w_k[ci * c_out..(ci + 1) * c_out];
            for (t, wv) in tmp.iter_mut().zip(w_row) {
                *t += fv * wv;
            }
        }
        for (a, t) in acc.iter_mut().zip(tmp.iter()) {
            *a += t;
        }
    }
}

/// Output-stationary pass over the map's dense table into `out`.
fn os_pass(
    map: &KernelMap,
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    opts: &ComputeOptions,
    out: &mut FeatureMatrix,
) {
    let kd = map.k_dense();
    if kd == 0 || map.n_out == 0 {
        return;
    }
    let c_out = w.c_out;
    let os = map.os_entries();
    let zero_row = vec![0.0f32; f_in.channels];
    out.data
        .par_chunks_mut(c_out)
        .enumerate()
        .for_each(|(i, acc)| {
            let row = &os[i * kd..(i + 1) * kd];
            for (c, &entry) in row.iter().enumerate() {
                let k_idx = map.dense_offsets[c];
                if entry >= 0 {
                    add_contribution(acc, f_in.row(entry as usize), w.offset(k_idx), c_out);
                } else if opts.multiply_sentinel_rows {
                    add_contribution(acc, &zero_row, w.offset(k_idx), c_out);
                }
            }
        });
}

/// Weight-stationary pass over the map's sparse pair lists into `out`.
///
/// Deterministic mode partitions output rows across workers; every row then
/// receives its per-offset contributions in ascending offset order, exactly
/// like the sequential sum. Benchmark mode runs gather-GEMM-scatter per
/// offset with lock-free CAS accumulation into shared rows.
fn ws_pass(
    map: &KernelMap,
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    opts: &ComputeOptions,
    out: &mut FeatureMatrix,
) {
    if map.k_sparse() == 0 || map.n_out == 0 {
        return;
    }
    let c_out = w.c_out;
    if opts.deterministic {
        let workers = rayon::current_num_threads().max(1);
        let rows_per = map.n_out.div_ceil(workers);
        let mut chunks: Vec<(usize, &mut [f32])> = Vec::new();
        let mut rest = out.data.as_mut_slice();
        let mut lo = 0usize;
        while lo < map.n_out {
            let hi = (lo + rows_per).min(map.n_out);
            let (head, tail) = rest.split_at_mut((hi - lo) * c_out);
            chunks.push((lo, head));
            rest = tail;
            lo = hi;
        }
        chunks.into_par_iter().for_each(|(lo, block)| {
            let hi = lo + block.len() / c_out;
            for slot in 0..map.k_sparse() {
                let k_idx = map.sparse_offsets[slot];
                let w_k = w.offset(k_idx);
                let (ins, outs) = map.ws_pairs(slot);
                // pairs are sorted by output; narrow to this row range
                let start = outs.partition_point(|&o| (o as usize) < lo);
                let end = outs.partition_point(|&o| (o as usize) < hi);
                for p in start..end {
                    let i = outs[p] as usize;
                    let acc = &mut block[(i - lo) * c_out..(i - lo + 1) * c_out];
                    add_contribution(acc, f_in.row(ins[p] as usize), w_k, c_out);
                }
            }
        });
    } else {
        let shared: Vec<AtomicU32> = out
            .data
            .iter()
            .map(|v| AtomicU32::new(v.to_bits()))
            .collect();
        (0..map.k_sparse()).into_par_iter().for_each(|slot| {
            let k_idx = map.sparse_offsets[slot];
            let w_k = w.offset(k_idx);
            let (ins, outs) = map.ws_pairs(slot);
            const CHUNK: usize = 4096;
            for base in (0..ins.len()).step_by(CHUNK) {
                let len = CHUNK.min(ins.len() - base);
                // gather
                let mut gathered = vec![0.0f32; len * f_in.channels];
                for (r, &j) in ins[base..base + len].iter().enumerate() {
                    gathered[r * f_in.channels..(r + 1) * f_in.channels]
                        .copy_from_slice(f_in.row(j as usize));
                }
                // per-offset GEMM
                let partial = gemm(&gathered, len, f_in.channels, w_k, c_out);
                // scatter with linearizable per-scalar adds
                for (r, &i) in outs[base..base + len].iter().enumerate() {
                    let dst = &shared[i as usize * c_out..(i as usize + 1) * c_out];
                    for (slot, &v) in dst.iter().zip(&partial[r * c_out..(r + 1) * c_out]) {
                        atomic_add_f32(slot, v);
                    }
                }
            }
        });
        for (v, a) in out.data.iter_mut().zip(&shared) {
            *v = f32::from_bits(a.load(Ordering::Relaxed));
        }
    }
}

#[inline]
fn atomic_add_f32(slot: &AtomicU32, v: f32) {
    let mut cur = slot.load(Ordering::Relaxed);
    loop {
        let next = (f32::from_bits(cur) + v).to_bits();
        match slot.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

/// Output-stationary feature computation over a full-OS map.
pub fn compute_output_stationary(
    map: &KernelMap,
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    opts: &ComputeOptions,
) -> Result<FeatureMatrix> {
    check_dims(map, f_in, w)?;
    if map.layout != MapLayout::OutputStationary {
        return Err(Error::LayoutMismatch(format!(
            "output-stationary compute needs an os map, got {}",
            map.layout.tag()
        )));
    }
    let mut out = FeatureMatrix::zeros(map.n_out, w.c_out);
    os_pass(map, f_in, w, opts, &mut out);
    Ok(out)
}

/// Weight-stationary feature computation over a full-WS map.
pub fn compute_weight_stationary(
    map: &KernelMap,
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    opts: &ComputeOptions,
) -> Result<FeatureMatrix> {
    check_dims(map, f_in, w)?;
    if map.layout != MapLayout::WeightStationary {
        return Err(Error::LayoutMismatch(format!(
            "weight-stationary compute needs a ws map, got {}",
            map.layout.tag()
        )));
    }
    let mut out = FeatureMatrix::zeros(map.n_out, w.c_out);
    ws_pass(map, f_in, w, opts, &mut out);
    Ok(out)
}

/// Hybrid dual-dataflow: output-stationary over the dense submatrix plus
/// weight-stationary over the sparse pair lists, into one output buffer.
pub fn compute_hybrid(
    map: &KernelMap,
    plan: &DataflowPlan,
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    opts: &ComputeOptions,
) -> Result<FeatureMatrix> {
    check_dims(map, f_in, w)?;
    if map.t != plan.t
        || map.dense_offsets != plan.dense_offsets
        || map.sparse_offsets != plan.sparse_offsets
    {
        return Err(Error::PlanMismatch(format!(
            "map built for t={}, hybrid compute requested t={}",
            map.t, plan.t
        )));
    }
    let mut out = FeatureMatrix::zeros(map.n_out, w.c_out);
    os_pass(map, f_in, w, opts, &mut out);
    ws_pass(map, f_in, w, opts, &mut out);
    Ok(out)
}

/// Dispatch on the map's own plan.
pub fn compute(
    map: &KernelMap,
    f_in: &FeatureMatrix,
    w: &WeightTensor,
    opts: &ComputeOptions,
) -> Result<FeatureMatrix> {
    match map.layout {
        MapLayout::OutputStationary => compute_output_stationary(map, f_in, w, opts),
        MapLayout::WeightStationary => compute_weight_stationary(map, f_in, w, opts),
        MapLayout::Hybrid => {
            check_dims(map, f_in, w)?;
            let mut out = FeatureMatrix::zeros(map.n_out, w.c_out);
            os_pass(map, f_in, w, opts, &mut out);
            ws_pass(map, f_in, w, opts, &mut out);
            Ok(out)
        }
    }
}
