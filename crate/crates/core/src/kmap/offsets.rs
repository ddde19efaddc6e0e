use crate::error::{Error, Result};

/// One weight offset of the kernel: a displacement triple, its L1 norm and
/// its index in the canonical lexicographic enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightOffset {
    pub delta: [i32; 3],
    pub l1: u32,
    pub index: usize,
}

/// Largest L1 norm in the offset set: `3*(K-1)/2 * s_p`.
pub fn l1_norm_max(k: u32, s_p: u32) -> u32 {
    3 * (k - 1) / 2 * s_p
}

/// Enumerate the `K^3` weight offsets of kernel size `k` and input stride
/// `s_p` in lexicographic `(dx, dy, dz)` order. Components run over
/// `{-(K-1)/2 .. (K-1)/2} * s_p`.
pub fn enumerate_offsets(k: u32, s_p: u32) -> Result<Vec<WeightOffset>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::InvalidKernelSize { k });
    }
    assert!(s_p >= 1, "input stride must be positive");
    let half = (k as i32 - 1) / 2;
    let step = s_p as i32;
    let mut out = Vec::with_capacity((k * k * k) as usize);
    for dx in -half..=half {
        for dy in -half..=half {
            for dz in -half..=half {
                let delta = [dx * step, dy * step, dz * step];
                let l1 = delta.iter().map(|d| d.unsigned_abs()).sum();
                out.push(WeightOffset {
                    delta,
                    l1,
                    index: out.len(),
                });
            }
        }
    }
    Ok(out)
}

/// A run of `K` offsets sharing `(dx, dy)` with `dz` ascending by `s_p`.
/// The anchor is the member with the smallest `dz`.
#[derive(Debug, Clone)]
pub struct OffsetGroup {
    pub id: usize,
    pub anchor: usize,
    pub members: std::ops::Range<usize>,
}

/// Partition the canonical offset enumeration into its `K^2` z-columns.
pub fn group_offsets(offsets: &[WeightOffset], k: u32) -> Vec<OffsetGroup> {
    let k = k as usize;
    debug_assert_eq!(offsets.len(), k * k * k);
    (0..k * k)
        .map(|id| {
            let members = id * k..(id + 1) * k;
            OffsetGroup {
                id,
                anchor: members.start,
                members,
            }
        })
        .collect()
}
