use crate::error::{Error, Result};

use super::map::{KernelMap, MapLayout};

/// Half of a submanifold weight-stationary kernel map.
///
/// In a submanifold layer the offsets `d` and `-d` are symmetric: if output
/// `i` reaches input `j` through `d`, then output `j` reaches input `i`
/// through `-d`. Since the canonical enumeration reverses under negation
/// (`mirror(k) = K^3 - 1 - k`), storing the first half plus the
/// self-symmetric center is enough to reconstruct the whole map.
#[derive(Debug, Clone)]
pub struct HalfKernelMap {
    pub n: usize,
    pub k: u32,
    pub k_total: usize,
    pub t: u32,
    /// Offset indices kept: `0 .. ceil(K^3 / 2)`, center included last.
    pub stored_offsets: Vec<usize>,
    pub(crate) ws_in: Vec<i32>,
    pub(crate) ws_out: Vec<i32>,
    pub(crate) ws_bounds: Vec<usize>,
}

/// Keep only the first half of the offsets of a finalized weight-stationary
/// submanifold map; mirrored offsets are recovered by swapping pair roles.
pub fn halve_symmetric(map: &KernelMap, submanifold: bool) -> Result<HalfKernelMap> {
    if !submanifold || map.n_out != map.n_in {
        return Err(Error::NotSubmanifold);
    }
    if map.layout != MapLayout::WeightStationary || !map.is_finalized() {
        return Err(Error::LayoutMismatch(
            "symmetric halving needs a finalized weight-stationary map".into(),
        ));
    }
    let center = (map.k_total - 1) / 2;
    let stored_offsets: Vec<usize> = (0..=center).collect();
    let mut ws_in = Vec::new();
    let mut ws_out = Vec::new();
    let mut bounds = vec![0usize];
    for &k_idx in &stored_offsets {
        // full-WS maps list every offset as sparse, slot == offset index
        let (ins, outs) = map.ws_pairs(k_idx);
        ws_in.extend_from_slice(ins);
        ws_out.extend_from_slice(outs);
        bounds.push(ws_in.len());
    }
    Ok(HalfKernelMap {
        n: map.n_out,
        k: map.k,
        k_total: map.k_total,
        t: map.t,
        stored_offsets,
        ws_in,
        ws_out,
        ws_bounds: bounds,
    })
}

impl HalfKernelMap {
    pub fn stored_pairs(&self, slot: usize) -> (&[i32], &[i32]) {
        let r = self.ws_bounds[slot]..self.ws_bounds[slot + 1];
        (&self.ws_in[r.clone()], &self.ws_out[r])
    }

    /// Bytes held by the halved pair lists.
    pub fn heap_bytes(&self) -> usize {
        (self.ws_in.len() + self.ws_out.len()) * 4
            + self.ws_bounds.len() * std::mem::size_of::<usize>()
    }

    /// Rebuild the full weight-stationary map. For a mirrored offset
    /// `n = K^3 - 1 - l`, each stored pair `(in=j, out=i)` of `l` becomes
    /// `(in=i, out=j)` of `n`.
    pub fn reconstruct(&self) -> KernelMap {
        let center = (self.k_total - 1) / 2;
        let mut ws_in = Vec::new();
        let mut ws_out = Vec::new();
        let mut bounds = vec![0usize];
        let mut counts = vec![0u64; self.k_total];
        let mut pair_buf: Vec<(i32, i32)> = Vec::new();
        for (k_idx, count) in counts.iter_mut().enumerate() {
            if k_idx <= center {
                let (ins, outs) = self.stored_pairs(k_idx);
                ws_in.extend_from_slice(ins);
                ws_out.extend_from_slice(outs);
                *count = ins.len() as u64;
            } else {
                let mirror = self.k_total - 1 - k_idx;
                let (ins, outs) = self.stored_pairs(mirror);
                pair_buf.clear();
                pair_buf.extend(outs.iter().zip(ins).map(|(&i, &j)| (i, j)));
                // keep per-offset lists sorted by output index
                pair_buf.sort_unstable_by_key(|&(_, out)| out);
                ws_in.extend(pair_buf.iter().map(|&(j, _)| j));
                ws_out.extend(pair_buf.iter().map(|&(_, i)| i));
                *count = pair_buf.len() as u64;
            }
            bounds.push(ws_in.len());
        }
        KernelMap {
            layout: MapLayout::WeightStationary,
            n_out: self.n,
            n_in: self.n,
            k: self.k,
            k_total: self.k_total,
            t: self.t,
            counts,
            dense_offsets: Vec::new(),
            sparse_offsets: (0..self.k_total).collect(),
            os_entries: Vec::new(),
            dense_staging: None,
            pending: Vec::new(),
            ws_in,
            ws_out,
            ws_bounds: bounds,
            finalized: true,
        }
    }
}
