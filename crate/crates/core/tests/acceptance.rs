//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them on success).
//!
//! Criteria 1, 2, 4, 6 and 7 share one randomized instance suite covering
//! n in {10, 1k, 10k} voxels, K in {1, 3, 5}, layer stride in {1, 2} and
//! channel widths in {4, 16, 32}; it is built once and verified from
//! several angles. Criteria 8 and 9 carry soft performance expectations
//! that are reported, not asserted.

use std::sync::OnceLock;
use std::time::Instant;

use voxelconv::coords::{pack, unpack, PackSpec, PackedCoord, VoxelCoord};
use voxelconv::features::{
    compute_hybrid, compute_output_stationary, compute_weight_stationary, ComputeOptions,
    DataflowPlan, FeatureMatrix, WeightTensor,
};
use voxelconv::kmap::{
    build_kmap_bruteforce, build_kmap_bsearch, build_kmap_zdelta, downsample, enumerate_offsets,
    group_offsets, halve_symmetric, l1_norm_max, post_process,
};
use voxelconv::network::{
    analyze_density, closed_form_coords, index_network, plan_network, unet_like_42, DataflowPolicy,
    IndexingMode, NetworkSpec,
};
use voxelconv::synth;
use voxelconv::timing;

const TOL: f32 = 1e-4;

/// Worst elementwise relative difference, ignoring elements whose absolute
/// difference sits below fp32 accumulation noise (1e-5 of the tensor scale,
/// an order of magnitude tighter than the relative bar at that scale).
/// Reassociated fp32 sums cancel to arbitrarily small values, so a pure
/// elementwise-relative comparison is undefined there.
fn rel_ok(a: &[f32], b: &[f32]) -> f32 {
    let scale = a.iter().chain(b.iter()).fold(0.0f32, |m, v| m.max(v.abs()));
    let floor = 1e-5 * scale.max(1e-3);
    let mut worst = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        if d > floor {
            worst = worst.max(d / x.abs().max(y.abs()));
        }
    }
    worst
}

fn random_unique_coords(n: usize, extent: i32, floor: i32, seed: u64) -> Vec<VoxelCoord> {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    let mut next = move |bound: i32| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) as i32).rem_euclid(bound)
    };
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        set.insert(VoxelCoord::new(
            floor + next(extent),
            floor + next(extent),
            floor + next(extent),
        ));
    }
    set.into_iter().collect()
}

struct InstanceVerdict {
    desc: String,
    k: u32,
    n_out: usize,
    maps_equal: bool,
    zd_searches: [u64; 3],
    bs_searches: u64,
    bs_probes: u64,
    max_unit_probes: u64,
    os_exact: bool,
    ws_exact: bool,
    worst_rel: f32,
    hybrid_vs_os_rel: f32,
    dense_sites_match: bool,
    center_full: Option<bool>,
    halve_ok: Option<(bool, usize)>,
}

struct Suite {
    verdicts: Vec<InstanceVerdict>,
    build_secs: f64,
}

fn box_extent(n: usize) -> i32 {
    match n {
        0..=10 => 8,
        11..=1000 => 16,
        _ => 32,
    }
}

fn hybrid_t(k: u32) -> u32 {
    match k {
        1 => 1,
        3 => 2,
        _ => 3,
    }
}

fn run_instance(n: usize, k: u32, s_l: u32, c: usize, seed: u64) -> InstanceVerdict {
    let reach = (k - 1) / 2;
    let margin = if s_l == 1 {
        reach
    } else {
        reach.div_ceil(2) * 2
    };
    let spec = PackSpec::new([12, 12, 8], 32, margin.max(1)).unwrap();
    let margin = spec.margin as i32;
    let inputs_tri = random_unique_coords(n, box_extent(n), margin, seed);
    let inputs: Vec<PackedCoord> = inputs_tri.iter().map(|v| pack(v, &spec).unwrap()).collect();
    let outputs = if s_l == 1 {
        inputs.clone()
    } else {
        downsample(&inputs, &spec, 1).unwrap()
    };
    let outputs_tri: Vec<VoxelCoord> = outputs.iter().map(|p| unpack(*p, &spec)).collect();

    let offsets = enumerate_offsets(k, 1).unwrap();
    let groups = group_offsets(&offsets, k);
    let max = l1_norm_max(k, 1);
    let plan_os = DataflowPlan::from_threshold(&offsets, 1, max + 1).unwrap();
    let plan_ws = DataflowPlan::from_threshold(&offsets, 1, 0).unwrap();
    let plan_hy = DataflowPlan::from_threshold(&offsets, 1, hybrid_t(k)).unwrap();

    let (map_os, st_os) =
        build_kmap_zdelta(&inputs, &outputs, &offsets, &groups, &spec, &plan_os).unwrap();
    let (map_ws, st_ws) =
        build_kmap_zdelta(&inputs, &outputs, &offsets, &groups, &spec, &plan_ws).unwrap();
    let (map_hy, st_hy) =
        build_kmap_zdelta(&inputs, &outputs, &offsets, &groups, &spec, &plan_hy).unwrap();
    let (map_bs, st_bs) = build_kmap_bsearch(&inputs, &outputs, &offsets, &spec, &plan_os).unwrap();
    let truth = build_kmap_bruteforce(&inputs, &outputs, &offsets, &spec).unwrap();

    let map_os = post_process(map_os, &plan_os).unwrap();
    let map_ws = post_process(map_ws, &plan_ws).unwrap();
    let map_hy = post_process(map_hy, &plan_hy).unwrap();

    let maps_equal = map_os.same_mappings(&truth)
        && map_ws.same_mappings(&truth)
        && map_hy.same_mappings(&truth)
        && map_bs.same_mappings(&truth);

    let f_in = FeatureMatrix::seeded(inputs.len(), c, seed ^ 0xfeed);
    let w = WeightTensor::seeded(offsets.len(), c, c, seed ^ 0x0ff5e7);
    let det = ComputeOptions::default();
    let eq2 =
        voxelconv::oracle::eval_eq2_direct(&inputs_tri, &outputs_tri, &offsets, &f_in, &w).unwrap();
    let os = compute_output_stationary(&map_os, &f_in, &w, &det).unwrap();
    let ws = compute_weight_stationary(&map_ws, &f_in, &w, &det).unwrap();
    let hy = compute_hybrid(&map_hy, &plan_hy, &f_in, &w, &det).unwrap();
    let ws_bench =
        compute_weight_stationary(&map_ws, &f_in, &w, &ComputeOptions::benchmark()).unwrap();

    let (dense_sites, dense_f) = voxelconv::oracle::eval_dense_grid(
        &inputs_tri,
        &f_in,
        &w,
        &offsets,
        1,
        s_l,
        voxelconv::oracle::DEFAULT_MEM_CAP,
    )
    .unwrap();

    let worst_rel = [
        rel_ok(&os.data, &eq2.data),
        rel_ok(&ws.data, &eq2.data),
        rel_ok(&hy.data, &eq2.data),
        rel_ok(&ws_bench.data, &eq2.data),
        rel_ok(&os.data, &dense_f.data),
        rel_ok(&ws.data, &dense_f.data),
        rel_ok(&hy.data, &dense_f.data),
    ]
    .into_iter()
    .fold(0.0f32, f32::max);

    let center = (offsets.len() - 1) / 2;
    let center_full = (s_l == 1).then(|| map_os.counts[center] == outputs.len() as u64);
    let halve_ok = (s_l == 1).then(|| {
        let half = halve_symmetric(&map_ws, true).unwrap();
        let ok = half.reconstruct().same_mappings(&map_ws);
        (ok, half.stored_offsets.len())
    });

    InstanceVerdict {
        desc: format!("n={n} K={k} s_l={s_l} C={c} seed={seed}"),
        k,
        n_out: outputs.len(),
        maps_equal,
        zd_searches: [
            st_os.binary_search_count,
            st_ws.binary_search_count,
            st_hy.binary_search_count,
        ],
        bs_searches: st_bs.binary_search_count,
        bs_probes: st_bs.probe_count,
        max_unit_probes: st_os
            .max_unit_probes
            .max(st_ws.max_unit_probes)
            .max(st_hy.max_unit_probes),
        os_exact: os.data == eq2.data,
        ws_exact: ws.data == eq2.data,
        worst_rel,
        hybrid_vs_os_rel: rel_ok(&hy.data, &os.data),
        dense_sites_match: dense_sites == outputs_tri,
        center_full,
        halve_ok,
    }
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let start = Instant::now();
        let mut verdicts = Vec::new();
        for &n in &[10usize, 1000] {
            for &k in &[1u32, 3, 5] {
                for &s_l in &[1u32, 2] {
                    for &c in &[4usize, 16, 32] {
                        for seed in 1..=5u64 {
                            verdicts.push(run_instance(n, k, s_l, c, seed));
                        }
                    }
                }
            }
        }
        for &k in &[1u32, 3, 5] {
            for &s_l in &[1u32, 2] {
                for &c in &[4usize, 16, 32] {
                    verdicts.push(run_instance(10_000, k, s_l, c, 11));
                }
            }
        }
        for seed in 6..=9u64 {
            verdicts.push(run_instance(10, 5, 2, 4, seed));
        }
        Suite {
            verdicts,
            build_secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_1_oracle_equivalence() {
    let s = suite();
    let total = s.verdicts.len();
    let map_fail: Vec<&str> = s
        .verdicts
        .iter()
        .filter(|v| !v.maps_equal)
        .map(|v| v.desc.as_str())
        .collect();
    let feat_fail: Vec<String> = s
        .verdicts
        .iter()
        .filter(|v| v.worst_rel > TOL || !v.os_exact || !v.ws_exact || !v.dense_sites_match)
        .map(|v| format!("{} rel={:.2e}", v.desc, v.worst_rel))
        .collect();
    let worst = s
        .verdicts
        .iter()
        .map(|v| v.worst_rel)
        .fold(0.0f32, f32::max);
    let pass = total >= 200 && map_fail.is_empty() && feat_fail.is_empty() && s.build_secs < 300.0;
    report(
        1,
        pass,
        &format!(
            "{total} instances: kernel maps zdelta==bsearch==bruteforce, dataflows within \
             {TOL:.0e} of both oracles (worst rel {worst:.2e}, OS/WS bit-exact vs direct \
             evaluation), suite built in {:.1}s (budget 300s)",
            s.build_secs
        ),
    );
    assert!(total >= 200, "suite has only {total} instances");
    assert!(map_fail.is_empty(), "kernel map mismatches: {map_fail:?}");
    assert!(feat_fail.is_empty(), "feature mismatches: {feat_fail:?}");
    assert!(
        s.build_secs < 300.0,
        "suite took {:.1}s, budget is 300s",
        s.build_secs
    );
}

#[test]
fn criterion_2_search_count_laws() {
    let s = suite();
    let mut pass = true;
    for v in &s.verdicts {
        let k = v.k as u64;
        let expect_zd = v.n_out as u64 * k * k;
        let expect_bs = v.n_out as u64 * k * k * k;
        if v.zd_searches != [expect_zd; 3] || v.bs_searches != expect_bs {
            pass = false;
            eprintln!(
                "{}: zdelta {:?} (want {expect_zd}), bsearch {} (want {expect_bs})",
                v.desc, v.zd_searches, v.bs_searches
            );
        }
        if v.max_unit_probes > (v.k - 1) as u64 || v.bs_probes != 0 {
            pass = false;
            eprintln!("{}: probe bound violated ({})", v.desc, v.max_unit_probes);
        }
    }
    report(
        2,
        pass,
        &format!(
            "binary searches exactly |Vq|*K^2 (zdelta) and |Vq|*K^3 (simple) with localized \
             probes <= K-1 per unit on all {} instances",
            s.verdicts.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_packing_laws_exhaustive() {
    let start = Instant::now();
    let spec = PackSpec::new([12, 12, 8], 32, 2).unwrap();
    let mut coords = Vec::with_capacity(4096);
    for x in 0..16 {
        for y in 0..16 {
            for z in 0..16 {
                coords.push(VoxelCoord::new(x + 2, y + 2, z + 2));
            }
        }
    }
    let packed: Vec<PackedCoord> = coords.iter().map(|v| pack(v, &spec).unwrap()).collect();

    let mut failures = 0u64;
    // round trip
    for (v, p) in coords.iter().zip(&packed) {
        if unpack(*p, &spec) != *v {
            failures += 1;
        }
    }
    // order preservation against lexicographic sort
    let mut by_packed: Vec<usize> = (0..coords.len()).collect();
    by_packed.sort_by_key(|&i| packed[i]);
    let mut by_lex: Vec<usize> = (0..coords.len()).collect();
    by_lex.sort_by_key(|&i| coords[i]);
    if by_packed != by_lex {
        failures += 1;
    }
    // packed addition for every offset of Delta(3,1) and Delta(5,1)
    let deltas: Vec<[i32; 3]> = enumerate_offsets(5, 1)
        .unwrap()
        .iter()
        .map(|o| o.delta)
        .collect();
    for (v, p) in coords.iter().zip(&packed) {
        for d in &deltas {
            let off = voxelconv::coords::pack_offset(*d, &spec).unwrap();
            if p.offset(off) != pack(&v.offset_by(*d), &spec).unwrap() {
                failures += 1;
            }
        }
    }
    // mask identity for m in {1,2,3}
    for m in 1..=3u32 {
        let mask = voxelconv::coords::downsample_mask(&spec, m).unwrap();
        for (v, p) in coords.iter().zip(&packed) {
            let rounded = VoxelCoord::new((v.x >> m) << m, (v.y >> m) << m, (v.z >> m) << m);
            if PackedCoord(p.0 & mask) != pack(&rounded, &spec).unwrap() {
                failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures == 0 && secs < 10.0;
    report(
        3,
        pass,
        &format!(
            "16^3 grid, margin 2: round-trip, order preservation, packed addition over \
             Delta(3,1)+Delta(5,1), mask identity m=1..3 — {failures} failures in {secs:.2}s \
             (budget 10s)"
        ),
    );
    assert_eq!(failures, 0);
    assert!(secs < 10.0);
}

#[test]
fn criterion_4_l1_density_property() {
    let s = suite();
    // every submanifold map has a fully dense center column
    let center_bad: Vec<&str> = s
        .verdicts
        .iter()
        .filter(|v| v.center_full == Some(false))
        .map(|v| v.desc.as_str())
        .collect();

    // synthetic surfaces at K=5: density non-increasing in L1 norm, with a
    // >= 3x ratio between the first and last groups
    let spec = PackSpec::new([12, 12, 8], 32, 2).unwrap();
    let grid = voxelconv::coords::GridSpec::uniform(1.0, 1024.0).unwrap();
    let mut surface_ok = true;
    let mut detail = String::new();
    for (name, points) in [
        ("plane", synth::plane(64)),
        ("wall", synth::wall(64)),
        ("sphere", synth::sphere(20.0)),
    ] {
        let q = voxelconv::coords::quantize(&points, &grid).unwrap();
        let (norm, _) = voxelconv::coords::normalize_coords(&q.coords, &spec).unwrap();
        let mut packed: Vec<PackedCoord> = norm.iter().map(|v| pack(v, &spec).unwrap()).collect();
        packed.sort_unstable();
        let offsets = enumerate_offsets(5, 1).unwrap();
        let groups = group_offsets(&offsets, 5);
        let plan = DataflowPlan::full_output_stationary(&offsets, 1).unwrap();
        let (map, _) =
            build_kmap_zdelta(&packed, &packed, &offsets, &groups, &spec, &plan).unwrap();
        let profile = analyze_density(&map.counts, 5, 1, map.n_out).unwrap();
        let d: Vec<f64> = profile.by_l1.iter().map(|g| g.density).collect();
        let monotone = d.windows(2).all(|w| w[0] >= w[1]);
        let ratio_ok = d[1] >= 3.0 * d.last().unwrap();
        surface_ok &= monotone && ratio_ok && d[0] == 1.0;
        detail.push_str(&format!(
            "{name}: d(0)={:.2} d(1)={:.3} d(6)={:.4} monotone={monotone}; ",
            d[0],
            d[1],
            d.last().unwrap()
        ));
    }
    let pass = center_bad.is_empty() && surface_ok;
    report(
        4,
        pass,
        &format!(
            "center column 100% dense on every submanifold map; {detail}(real-scan averages \
             for comparison, not asserted: d(1)~0.394, d(6)~0.054)"
        ),
    );
    assert!(
        center_bad.is_empty(),
        "center column not full: {center_bad:?}"
    );
    assert!(surface_ok, "{detail}");
}

#[test]
fn criterion_5_closed_form_downsampling() {
    let spec = PackSpec::new([12, 12, 8], 32, 0).unwrap();
    let start = Instant::now();
    let mut cases = 0u64;
    let mut failures = 0u64;
    let mut check = |v0: &[PackedCoord]| {
        let mut recursive = v0.to_vec();
        for depth in 1..=3u32 {
            recursive = downsample(&recursive, &spec, depth).unwrap();
            let direct = closed_form_coords(v0, depth, &spec).unwrap();
            cases += 1;
            if recursive != direct {
                failures += 1;
            }
        }
    };
    // exhaustive: the full 32^3 grid as V_0
    let mut full = Vec::with_capacity(32 * 32 * 32);
    for x in 0..32 {
        for y in 0..32 {
            for z in 0..32 {
                full.push(pack(&VoxelCoord::new(x, y, z), &spec).unwrap());
            }
        }
    }
    check(&full);
    // plus 50 random clouds
    for seed in 0..50u64 {
        let tri = random_unique_coords(800, 32, 0, seed);
        let packed: Vec<PackedCoord> = tri.iter().map(|v| pack(v, &spec).unwrap()).collect();
        check(&packed);
    }
    let pass = failures == 0;
    report(
        5,
        pass,
        &format!(
            "closed-form == recursive downsampling for depths 1..3 on the exhaustive 32^3 \
             grid and 50 random clouds ({cases} comparisons, {failures} failures, {:.2}s)",
            start.elapsed().as_secs_f64()
        ),
    );
    assert_eq!(failures, 0);
}

#[test]
fn criterion_6_hybrid_partition_arithmetic() {
    let offsets = enumerate_offsets(5, 1).unwrap();
    let t3 = DataflowPlan::from_threshold(&offsets, 1, 3).unwrap();
    let partition_ok = t3.k_dense() == 25 && t3.k_sparse() == 100;
    let ws = DataflowPlan::from_threshold(&offsets, 1, 0).unwrap();
    let os = DataflowPlan::from_threshold(&offsets, 1, 7).unwrap();
    let degenerate_ok = ws.is_full_weight_stationary() && os.is_full_output_stationary();

    let s = suite();
    let worst = s
        .verdicts
        .iter()
        .map(|v| v.hybrid_vs_os_rel)
        .fold(0.0f32, f32::max);
    let pass = partition_ok && degenerate_ok && worst <= TOL;
    report(
        6,
        pass,
        &format!(
            "K=5 t=3 -> 25 dense + 100 sparse; t=0 and t=L1NormMax+1 degenerate to pure \
             plans; hybrid output within {TOL:.0e} of pure output-stationary on all {} \
             instances (worst {worst:.2e})",
            s.verdicts.len()
        ),
    );
    assert!(partition_ok);
    assert!(degenerate_ok);
    assert!(worst <= TOL, "hybrid vs OS rel error {worst}");
}

#[test]
fn criterion_7_symmetric_halving() {
    let s = suite();
    let mut pass = true;
    let mut count = 0usize;
    for v in &s.verdicts {
        if let Some((ok, stored)) = v.halve_ok {
            count += 1;
            let expect = (v.k.pow(3) as usize).div_ceil(2);
            if !ok || stored != expect {
                pass = false;
                eprintln!("{}: halve ok={ok} stored={stored} want={expect}", v.desc);
            }
        }
    }
    report(
        7,
        pass,
        &format!(
            "reconstruct(halve(map)) == map exactly on all {count} submanifold instances; \
             stored offsets == ceil(K^3/2)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_network_wide_indexing() {
    let spec = PackSpec::new([12, 12, 8], 32, 16).unwrap();
    let points = synth::random(140_000, 180.0, 77);
    let grid = voxelconv::coords::GridSpec::uniform(1.0, 4096.0).unwrap();
    let q = voxelconv::coords::quantize(&points, &grid).unwrap();
    let (norm, _) = voxelconv::coords::normalize_coords(&q.coords, &spec).unwrap();
    let mut v0: Vec<PackedCoord> = norm.iter().map(|v| pack(v, &spec).unwrap()).collect();
    v0.sort_unstable();

    let net =
        NetworkSpec::from_layers(unet_like_42(4, 8, DataflowPolicy::WeightStationary)).unwrap();
    assert_eq!(net.layers.len(), 42);
    let plans = plan_network(&net, &v0, &spec, 0).unwrap();

    let seq = timing::median_timed_result(|| {
        index_network(&net, &v0, &spec, &plans, IndexingMode::Sequential).unwrap()
    });
    let wide = timing::median_timed_result(|| {
        index_network(&net, &v0, &spec, &plans, IndexingMode::NetworkWide).unwrap()
    });

    let checksums_equal = seq
        .0
        .layers
        .iter()
        .zip(&wide.0.layers)
        .all(|(a, b)| a.map.checksum() == b.map.checksum());
    let threads = rayon::current_num_threads();
    let seq_ms = seq.1.as_secs_f64() * 1e3;
    let wide_ms = wide.1.as_secs_f64() * 1e3;
    report(
        8,
        checksums_equal,
        &format!(
            "42-layer network on {} voxels: all 42 kernel-map checksums identical across \
             modes; [soft, reported] network-wide {wide_ms:.0}ms vs sequential {seq_ms:.0}ms \
             on {threads} threads ({}; >=8 threads expected for a win, not asserted)",
            v0.len(),
            if wide_ms <= seq_ms {
                "faster"
            } else {
                "slower"
            },
        ),
    );
    println!(
        "ACCEPTANCE 8 [soft]: network-wide/sequential indexing ratio {:.2} on {threads} threads",
        wide_ms / seq_ms
    );
    assert!(checksums_equal);
    assert_eq!(seq.0.layers.len(), 42);
}

#[test]
fn criterion_9_zdelta_vs_bsearch_wall_time() {
    let spec = PackSpec::new([12, 12, 8], 32, 2).unwrap();
    let tri = random_unique_coords(100_000, 120, 2, 99);
    let cloud: Vec<PackedCoord> = tri.iter().map(|v| pack(v, &spec).unwrap()).collect();
    let offsets = enumerate_offsets(5, 1).unwrap();
    let groups = group_offsets(&offsets, 5);
    let plan = DataflowPlan::full_output_stationary(&offsets, 1).unwrap();
    let zd = timing::median_timed(|| {
        let _ = build_kmap_zdelta(&cloud, &cloud, &offsets, &groups, &spec, &plan).unwrap();
    });
    let bs = timing::median_timed(|| {
        let _ = build_kmap_bsearch(&cloud, &cloud, &offsets, &spec, &plan).unwrap();
    });
    let zd_ms = zd.as_secs_f64() * 1e3;
    let bs_ms = bs.as_secs_f64() * 1e3;
    let faster = zd_ms < bs_ms;
    // soft criterion: direction reported, magnitude not asserted
    report(
        9,
        true,
        &format!(
            "[soft, reported] 100k voxels, K=5: zdelta mapping {zd_ms:.0}ms vs simple \
             binary search {bs_ms:.0}ms ({}, speedup {:.2}x)",
            if faster { "faster" } else { "slower" },
            bs_ms / zd_ms
        ),
    );
}
