//! Layer graphs, network-wide voxel indexing, the column-density analyzer
//! and the one-time dataflow threshold tuner.
//!
//! Voxel indexing for a layer depends only on the initial coordinates: the
//! floor-rounding chain collapses, so every level's coordinate set comes
//! straight from `V_0` with one mask-and-dedup pass. That makes per-layer
//! indexing tasks independent of each other, and the network-wide mode runs
//! them all concurrently in two phases (coordinate sets, then kernel maps)
//! before any feature computation starts.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::coords::{PackSpec, PackedCoord};
use crate::error::{Error, Result};
use crate::features::{compute, ComputeOptions, DataflowPlan, FeatureMatrix, WeightTensor};
use crate::kmap::{
    build_kmap_zdelta, downsample, enumerate_offsets, group_offsets, l1_norm_max, post_process,
    KernelMap, SearchStats,
};
use crate::timing;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataflowPolicy {
    OutputStationary,
    WeightStationary,
    Hybrid(u32),
    Auto,
}

/// One sparse-convolution layer: kernel size, layer stride, channels and
/// the dataflow policy. The input stride is derived from the layer's
/// position in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub k: u32,
    pub s_l: u32,
    pub c_in: usize,
    pub c_out: usize,
    pub policy: DataflowPolicy,
}

impl LayerSpec {
    pub fn submanifold(k: u32, c_in: usize, c_out: usize, policy: DataflowPolicy) -> Self {
        Self {
            k,
            s_l: 1,
            c_in,
            c_out,
            policy,
        }
    }

    pub fn downsampling(k: u32, c_in: usize, c_out: usize, policy: DataflowPolicy) -> Self {
        Self {
            k,
            s_l: 2,
            c_in,
            c_out,
            policy,
        }
    }
}

/// A layer placed in its network: coordinate-generation index `m` (number
/// of preceding downsamplings) and the derived input/output strides.
#[derive(Debug, Clone, Copy)]
pub struct NetworkLayer {
    pub spec: LayerSpec,
    pub layer_id: usize,
    /// Number of downsamplings before this layer; inputs live on `V_m`.
    pub m: u32,
    pub s_p: u32,
    pub s_q: u32,
}

impl NetworkLayer {
    pub fn is_submanifold(&self) -> bool {
        self.spec.s_l == 1
    }

    /// Level index of the output coordinate set.
    pub fn m_out(&self) -> u32 {
        self.m + (self.spec.s_l > 1) as u32
    }

    /// Margin this layer needs so every query stays field-interior: output
    /// coordinates sit on the `s_q` lattice, so the lower guard must round
    /// up to a full output-lattice step.
    pub fn required_margin(&self) -> u32 {
        let reach = (self.spec.k - 1) / 2 * self.s_p;
        if self.spec.s_l == 1 {
            reach
        } else {
            reach.div_ceil(self.s_q) * self.s_q
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub layers: Vec<NetworkLayer>,
}

impl NetworkSpec {
    /// Derive strides and coordinate levels from the ordered layer list.
    pub fn from_layers(specs: Vec<LayerSpec>) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut m = 0u32;
        for (layer_id, spec) in specs.into_iter().enumerate() {
            if spec.k == 0 || spec.k.is_multiple_of(2) {
                return Err(Error::InvalidKernelSize { k: spec.k });
            }
            if spec.s_l != 1 && spec.s_l != 2 {
                return Err(Error::InvalidLayerStride { s_l: spec.s_l });
            }
            if layer_id > 0 {
                let prev: &NetworkLayer = &layers[layer_id - 1];
                if prev.spec.c_out != spec.c_in {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {layer_id} expects {} input channels, layer {} emits {}",
                        spec.c_in,
                        layer_id - 1,
                        prev.spec.c_out
                    )));
                }
            }
            let s_p = 1u32 << m;
            layers.push(NetworkLayer {
                spec,
                layer_id,
                m,
                s_p,
                s_q: s_p * spec.s_l,
            });
            if spec.s_l > 1 {
                m += 1;
            }
        }
        Ok(Self { layers })
    }

    /// Deepest coordinate level any layer touches.
    pub fn max_level(&self) -> u32 {
        self.layers.iter().map(|l| l.m_out()).max().unwrap_or(0)
    }

    pub fn required_margin(&self) -> u32 {
        self.layers
            .iter()
            .map(|l| l.required_margin())
            .max()
            .unwrap_or(0)
    }

    fn validate_against(&self, spec: &PackSpec) -> Result<()> {
        let required = self.required_margin();
        if spec.margin < required {
            return Err(Error::MarginTooSmall {
                margin: spec.margin,
                required,
            });
        }
        let depth = self.max_level();
        if depth >= spec.min_bits() {
            return Err(Error::MaskDepthTooLarge {
                depth,
                min_bits: spec.min_bits(),
            });
        }
        Ok(())
    }
}

/// Downsampled coordinates at `depth` straight from the initial set: one
/// mask-and-dedup pass, no recursion through intermediate levels.
pub fn closed_form_coords(
    v0: &[PackedCoord],
    depth: u32,
    spec: &PackSpec,
) -> Result<Vec<PackedCoord>> {
    if depth == 0 {
        return Ok(v0.to_vec());
    }
    downsample(v0, spec, depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexingMode {
    Sequential,
    NetworkWide,
}

impl IndexingMode {
    pub fn tag(&self) -> &'static str {
        match self {
            IndexingMode::Sequential => "sequential",
            IndexingMode::NetworkWide => "network_wide",
        }
    }
}

/// Per-layer product of the voxel indexing step.
#[derive(Debug)]
pub struct LayerIndex {
    pub map: KernelMap,
    pub stats: SearchStats,
    pub build_ns: u64,
    pub post_ns: u64,
}

/// All kernel maps of a network plus the coordinate sets they were built
/// from, keyed by level.
#[derive(Debug)]
pub struct IndexedNetwork {
    pub levels: Vec<Vec<PackedCoord>>,
    pub layers: Vec<LayerIndex>,
    pub wall_ns: u64,
    pub total_map_bytes: usize,
}

fn index_one_layer(
    layer: &NetworkLayer,
    inputs: &[PackedCoord],
    outputs: &[PackedCoord],
    spec: &PackSpec,
    plan: &DataflowPlan,
) -> Result<LayerIndex> {
    let offsets = enumerate_offsets(layer.spec.k, layer.s_p)?;
    let groups = group_offsets(&offsets, layer.spec.k);
    let (built, build_ns) =
        timing::time_once(|| build_kmap_zdelta(inputs, outputs, &offsets, &groups, spec, plan));
    let (map, stats) = built?;
    let (map, post_ns) = timing::time_once(|| post_process(map, plan));
    Ok(LayerIndex {
        map: map?,
        stats,
        build_ns,
        post_ns,
    })
}

/// Build every layer's coordinate sets and kernel maps.
///
/// Sequential mode walks the layers in order, deriving each level from the
/// previous one the way a layer-by-layer engine would. Network-wide mode
/// runs two concurrent phases: first all distinct coordinate levels from
/// `V_0` via [`closed_form_coords`], then all kernel maps. Phase-2 tasks
/// read only phase-1 outputs, never each other's.
pub fn index_network(
    net: &NetworkSpec,
    v0: &[PackedCoord],
    spec: &PackSpec,
    plans: &[DataflowPlan],
    mode: IndexingMode,
) -> Result<IndexedNetwork> {
    assert_eq!(plans.len(), net.layers.len(), "one plan per layer");
    net.validate_against(spec)?;
    let start = Instant::now();
    let max_level = net.max_level() as usize;

    let (levels, layers) = match mode {
        IndexingMode::Sequential => {
            let mut levels: Vec<Vec<PackedCoord>> = Vec::with_capacity(max_level + 1);
            levels.push(v0.to_vec());
            for depth in 1..=max_level {
                let prev = &levels[depth - 1];
                levels.push(downsample(prev, spec, depth as u32)?);
            }
            let mut layers = Vec::with_capacity(net.layers.len());
            for (layer, plan) in net.layers.iter().zip(plans) {
                layers.push(index_one_layer(
                    layer,
                    &levels[layer.m as usize],
                    &levels[layer.m_out() as usize],
                    spec,
                    plan,
                )?);
            }
            (levels, layers)
        }
        IndexingMode::NetworkWide => {
            // Phase 1: every coordinate level is independent given V_0.
            let levels: Vec<Vec<PackedCoord>> = (0..=max_level)
                .into_par_iter()
                .map(|depth| closed_form_coords(v0, depth as u32, spec))
                .collect::<Result<_>>()?;
            // Structural dependency audit: each phase-2 task reads only
            // published phase-1 levels.
            for layer in &net.layers {
                assert!(layer.m_out() as usize <= max_level);
            }
            // Phase 2: all mapping tasks run concurrently.
            let layers: Vec<LayerIndex> = net
                .layers
                .par_iter()
                .zip(plans)
                .map(|(layer, plan)| {
                    index_one_layer(
                        layer,
                        &levels[layer.m as usize],
                        &levels[layer.m_out() as usize],
                        spec,
                        plan,
                    )
                })
                .collect::<Result<_>>()?;
            (levels, layers)
        }
    };
    let total_map_bytes = layers.iter().map(|l| l.map.heap_bytes()).sum();
    Ok(IndexedNetwork {
        levels,
        layers,
        wall_ns: start.elapsed().as_nanos() as u64,
        total_map_bytes,
    })
}

/// Mean kernel-map column density grouped by offset L1 norm.
#[derive(Debug, Clone, Serialize)]
pub struct DensityProfile {
    pub n_out: usize,
    pub per_offset: Vec<u64>,
    pub by_l1: Vec<L1Density>,
}

#[derive(Debug, Clone, Serialize)]
pub struct L1Density {
    pub l1: u32,
    pub offsets: usize,
    pub density: f64,
}

/// Group per-offset match counts by L1 norm; density is the mean fraction
/// of outputs matched across the group's columns.
pub fn analyze_density(counts: &[u64], k: u32, s_p: u32, n_out: usize) -> Result<DensityProfile> {
    let offsets = enumerate_offsets(k, s_p)?;
    assert_eq!(offsets.len(), counts.len());
    let max = l1_norm_max(k, s_p);
    let mut by_l1 = Vec::new();
    let mut l1 = 0;
    while l1 <= max {
        let group: Vec<usize> = offsets
            .iter()
            .filter(|o| o.l1 == l1)
            .map(|o| o.index)
            .collect();
        if !group.is_empty() {
            let total: u64 = group.iter().map(|&i| counts[i]).sum();
            let density = if n_out == 0 {
                0.0
            } else {
                total as f64 / (n_out as f64 * group.len() as f64)
            };
            by_l1.push(L1Density {
                l1,
                offsets: group.len(),
                density,
            });
        }
        l1 += s_p.max(1);
    }
    Ok(DensityProfile {
        n_out,
        per_offset: counts.to_vec(),
        by_l1,
    })
}

/// One-time threshold tuning: measure build + post-process + feature time
/// for every candidate `t` over the sample clouds and keep the argmin,
/// breaking ties toward larger `t`. Samples must already lie on the
/// layer's `s_p` lattice.
#[allow(clippy::too_many_arguments)]
pub fn tune_threshold(
    k: u32,
    s_p: u32,
    s_l: u32,
    c_in: usize,
    c_out: usize,
    samples: &[Vec<PackedCoord>],
    spec: &PackSpec,
    seed: u64,
) -> Result<u32> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let offsets = enumerate_offsets(k, s_p)?;
    let groups = group_offsets(&offsets, k);
    let weights = WeightTensor::seeded(offsets.len(), c_in, c_out, seed);
    let opts = ComputeOptions::benchmark();
    let out_depth = s_p.trailing_zeros() + 1;
    let mut best: Option<(u32, std::time::Duration)> = None;
    for &t in &DataflowPlan::candidates(k, s_p) {
        let plan = DataflowPlan::from_threshold(&offsets, s_p, t)?;
        let mut total = std::time::Duration::ZERO;
        for coords in samples {
            let outputs = if s_l == 1 {
                coords.clone()
            } else {
                downsample(coords, spec, out_depth)?
            };
            let f_in = FeatureMatrix::seeded(coords.len(), c_in, seed ^ 0x5eed);
            total += timing::median_timed(|| {
                let (map, _) =
                    build_kmap_zdelta(coords, &outputs, &offsets, &groups, spec, &plan).unwrap();
                let map = post_process(map, &plan).unwrap();
                let _ = compute(&map, &f_in, &weights, &opts).unwrap();
            });
        }
        // `<=` so exact ties fall toward the larger threshold
        if best.is_none_or(|(_, d)| total <= d) {
            best = Some((t, total));
        }
    }
    Ok(best.unwrap().0)
}

/// Caches tuned thresholds per layer shape.
#[derive(Default)]
pub struct Tuner {
    cache: HashMap<(u32, u32, u32, usize, usize), u32>,
}

impl Tuner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn threshold_for(
        &mut self,
        layer: &NetworkLayer,
        samples: &[Vec<PackedCoord>],
        spec: &PackSpec,
        seed: u64,
    ) -> Result<u32> {
        let key = (
            layer.spec.k,
            layer.s_p,
            layer.spec.s_l,
            layer.spec.c_in,
            layer.spec.c_out,
        );
        if let Some(&t) = self.cache.get(&key) {
            return Ok(t);
        }
        let t = tune_threshold(
            layer.spec.k,
            layer.s_p,
            layer.spec.s_l,
            layer.spec.c_in,
            layer.spec.c_out,
            samples,
            spec,
            seed,
        )?;
        self.cache.insert(key, t);
        Ok(t)
    }
}

/// Resolve a layer's dataflow policy to a concrete threshold.
pub fn resolve_threshold(
    layer: &NetworkLayer,
    tuner: &mut Tuner,
    tuning_samples: &[Vec<PackedCoord>],
    spec: &PackSpec,
    seed: u64,
) -> Result<u32> {
    let max = l1_norm_max(layer.spec.k, layer.s_p);
    Ok(match layer.spec.policy {
        DataflowPolicy::OutputStationary => max + 1,
        DataflowPolicy::WeightStationary => 0,
        DataflowPolicy::Hybrid(t) => t,
        DataflowPolicy::Auto => tuner.threshold_for(layer, tuning_samples, spec, seed)?,
    })
}

/// Per-layer timing and counter row of a run report. Field names are part
/// of the report schema.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub layer_id: usize,
    pub map_build_ns: u64,
    pub post_ns: u64,
    pub feature_ns: u64,
    pub bsearch_count: u64,
    pub probe_count: u64,
    pub t_selected: u32,
    pub kdense: usize,
    pub ksparse: usize,
    pub map_checksum: String,
    pub map_bytes: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: String,
    pub layers: Vec<LayerReport>,
    pub indexing_wall_ns: u64,
    pub feature_total_ns: u64,
    pub total_map_bytes: usize,
    pub output_rows: usize,
    pub output_channels: usize,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub mode: IndexingMode,
    pub compute: ComputeOptions,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: IndexingMode::NetworkWide,
            compute: ComputeOptions::default(),
            seed: 0,
        }
    }
}

/// Resolve plans for every layer, running the tuner for `Auto` policies
/// with the cloud itself as the sample — downsampled to each layer's own
/// coordinate level, since tuning measurements need inputs on the layer's
/// lattice.
pub fn plan_network(
    net: &NetworkSpec,
    v0: &[PackedCoord],
    spec: &PackSpec,
    seed: u64,
) -> Result<Vec<DataflowPlan>> {
    let mut tuner = Tuner::new();
    let mut levels: HashMap<u32, Vec<Vec<PackedCoord>>> = HashMap::new();
    let mut plans = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let samples: &[Vec<PackedCoord>] = if matches!(layer.spec.policy, DataflowPolicy::Auto) {
            if let std::collections::hash_map::Entry::Vacant(slot) = levels.entry(layer.m) {
                slot.insert(vec![closed_form_coords(v0, layer.m, spec)?]);
            }
            &levels[&layer.m]
        } else {
            &[]
        };
        let t = resolve_threshold(layer, &mut tuner, samples, spec, seed)?;
        let offsets = enumerate_offsets(layer.spec.k, layer.s_p)?;
        plans.push(DataflowPlan::from_threshold(&offsets, layer.s_p, t)?);
    }
    Ok(plans)
}

/// Execute a network end to end: voxel indexing per `opts.mode`, then the
/// feature steps in layer order. Non-convolution operators of the source
/// networks are identity pass-throughs and do not appear. Kernel maps are
/// dropped as soon as their feature step finishes.
pub fn run_network(
    net: &NetworkSpec,
    v0: &[PackedCoord],
    f0: &FeatureMatrix,
    weights: &[WeightTensor],
    spec: &PackSpec,
    plans: &[DataflowPlan],
    opts: &RunOptions,
) -> Result<(FeatureMatrix, RunReport)> {
    if net.layers.is_empty() {
        return Err(Error::ShapeMismatch("network has no layers".into()));
    }
    if weights.len() != net.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weight tensors for {} layers",
            weights.len(),
            net.layers.len()
        )));
    }
    if f0.rows != v0.len() || f0.channels != net.layers[0].spec.c_in {
        return Err(Error::ShapeMismatch(format!(
            "initial features {}x{} do not fit cloud of {} voxels with {} input channels",
            f0.rows,
            f0.channels,
            v0.len(),
            net.layers[0].spec.c_in
        )));
    }

    let indexed = index_network(net, v0, spec, plans, opts.mode)?;
    let indexing_wall_ns = indexed.wall_ns;
    let total_map_bytes = indexed.total_map_bytes;

    let mut reports = Vec::with_capacity(net.layers.len());
    let mut cur = f0.clone();
    let mut feature_total_ns = 0u64;
    for (layer, index) in net.layers.iter().zip(indexed.layers) {
        let w = &weights[layer.layer_id];
        let map = index.map;
        let (out, feature_ns) = timing::time_once(|| compute(&map, &cur, w, &opts.compute));
        let out = out?;
        feature_total_ns += feature_ns;
        reports.push(LayerReport {
            layer_id: layer.layer_id,
            map_build_ns: index.build_ns,
            post_ns: index.post_ns,
            feature_ns,
            bsearch_count: index.stats.binary_search_count,
            probe_count: index.stats.probe_count,
            t_selected: map.t,
            kdense: map.k_dense(),
            ksparse: map.k_sparse(),
            map_checksum: format!("{:016x}", map.checksum()),
            map_bytes: map.heap_bytes(),
            n_out: map.n_out,
        });
        cur = out;
        // map dropped here; memory is released before the next layer runs
    }
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: opts.mode.tag().to_string(),
        layers: reports,
        indexing_wall_ns,
        feature_total_ns,
        total_map_bytes,
        output_rows: cur.rows,
        output_channels: cur.channels,
    };
    Ok((cur, report))
}

/// 21-layer residual-backbone profile: a stem conv, then four stages of one
/// downsampling conv followed by four submanifold convs.
pub fn resnet_like_21(in_channels: usize, width: usize, policy: DataflowPolicy) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::submanifold(3, in_channels, width, policy)];
    let mut c = width;
    for stage in 0..4 {
        let c_next = width * (1 << (stage + 1).min(3));
        layers.push(LayerSpec::downsampling(3, c, c_next, policy));
        for _ in 0..4 {
            layers.push(LayerSpec::submanifold(3, c_next, c_next, policy));
        }
        c = c_next;
    }
    layers
}

/// 42-layer encoder/decoder-profile network: two stem convs, four stages of
/// one downsampling conv plus three submanifold convs, then a 24-layer
/// decoder-profile tail of submanifold convs at the deepest stride with the
/// channel widths mirrored back down.
pub fn unet_like_42(in_channels: usize, width: usize, policy: DataflowPolicy) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::submanifold(3, in_channels, width, policy),
        LayerSpec::submanifold(3, width, width, policy),
    ];
    let mut c = width;
    for stage in 0..4 {
        let c_next = width * (1 << (stage + 1).min(3));
        layers.push(LayerSpec::downsampling(3, c, c_next, policy));
        for _ in 0..3 {
            layers.push(LayerSpec::submanifold(3, c_next, c_next, policy));
        }
        c = c_next;
    }
    let mut widths = vec![c];
    for stage in (0..4).rev() {
        widths.push(width * (1 << stage.min(3)));
    }
    // 24 decoder-profile layers: 4 blocks of 6 at mirrored widths
    for block in 0..4 {
        let c_next = widths[block + 1];
        layers.push(LayerSpec::submanifold(3, c, c_next, policy));
        for _ in 0..5 {
            layers.push(LayerSpec::submanifold(3, c_next, c_next, policy));
        }
        c = c_next;
    }
    layers
}
