//! Deterministic synthetic point clouds for tests and benchmarks.
//!
//! Points are emitted at voxel-cell centers in meters; with a grid size of
//! 1.0 each point quantizes to its integer cell. Surface generators (plane,
//! wall, sphere) are fully deterministic; `random` draws from a seeded
//! ChaCha8 stream.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Horizontal `size x size` single-voxel-thick sheet.
    Plane,
    /// Vertical `size x size` sheet (constant x).
    Wall,
    /// Spherical shell of the given radius, one voxel thick.
    Sphere,
    /// Uniformly random points in a cube.
    Random,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plane" => Ok(Self::Plane),
            "wall" => Ok(Self::Wall),
            "sphere" => Ok(Self::Sphere),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown synthetic kind `{other}`")),
        }
    }
}

/// `size x size` sheet at z = 0; exactly `size^2` unique voxels at grid 1.0.
pub fn plane(size: u32) -> Vec<[f32; 3]> {
    let mut out = Vec::with_capacity((size * size) as usize);
    for i in 0..size {
        for j in 0..size {
            out.push([i as f32 + 0.5, j as f32 + 0.5, 0.5]);
        }
    }
    out
}

/// `size x size` sheet at x = 0.
pub fn wall(size: u32) -> Vec<[f32; 3]> {
    let mut out = Vec::with_capacity((size * size) as usize);
    for i in 0..size {
        for j in 0..size {
            out.push([0.5, i as f32 + 0.5, j as f32 + 0.5]);
        }
    }
    out
}

/// One-voxel-thick shell: cells whose center lies within half a voxel of
/// the radius. Voxel count approximates the sphere surface area `4*pi*r^2`.
pub fn sphere(radius: f32) -> Vec<[f32; 3]> {
    assert!(radius > 1.0, "radius must exceed one voxel");
    let r = radius.ceil() as i32 + 1;
    let mut out = Vec::new();
    for x in -r..=r {
        for y in -r..=r {
            for z in -r..=r {
                let c = [x as f32 + 0.5, y as f32 + 0.5, z as f32 + 0.5];
                let d = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                if (radius - 0.5..radius + 0.5).contains(&d) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// `count` seeded uniform points in `[0, extent)^3` meters.
pub fn random(count: usize, extent: f32, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = move || (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
    (0..count)
        .map(|_| [draw() * extent, draw() * extent, draw() * extent])
        .collect()
}
