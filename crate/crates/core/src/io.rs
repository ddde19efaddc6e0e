//! File formats.
//!
//! Point clouds (versioned, documented in the README):
//! - text: one point per line, `x y z [f_1 .. f_C]`, whitespace separated,
//!   `#` starts a comment; the channel count must be consistent.
//! - binary: magic `SPC1`, little-endian u32 point count, u32 channel
//!   count, then `(3 + C)` little-endian f32 values per point.
//!
//! Engine configuration is a `key = value` file (`grid_size`, `range`,
//! `bits`, `word`, `margin`); network specs list one layer per line as
//! `K s_l c_in c_out policy` with policy one of `os`, `ws`, `hybrid:<t>`,
//! `auto`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::coords::GridSpec;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, WeightTensor};
use crate::network::{DataflowPolicy, LayerSpec};

pub const CLOUD_MAGIC: &[u8; 4] = b"SPC1";

#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    /// Per-point features; `channels == 0` when the file carries none.
    pub features: FeatureMatrix,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, features: FeatureMatrix) -> Result<Self> {
        if features.rows != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} feature rows",
                points.len(),
                features.rows
            )));
        }
        Ok(Self { points, features })
    }

    pub fn without_features(points: Vec<[f32; 3]>) -> Self {
        let features = FeatureMatrix::zeros(points.len(), 0);
        Self { points, features }
    }
}

fn file_err(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Read a cloud file, sniffing the binary magic and falling back to text.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    if bytes.len() >= 4 && &bytes[..4] == CLOUD_MAGIC {
        read_cloud_binary_bytes(&bytes, path)
    } else {
        read_cloud_text_str(
            std::str::from_utf8(&bytes)
                .map_err(|_| parse_err(path, 1, "file is neither SPC1 binary nor utf-8 text"))?,
            path,
        )
    }
}

fn read_cloud_text_str(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut data = Vec::new();
    let mut channels: Option<usize> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(parse_err(path, ln + 1, "expected at least `x y z`"));
        }
        let mut vals = Vec::with_capacity(fields.len());
        for f in &fields {
            vals.push(
                f.parse::<f32>().map_err(|_| {
                    parse_err(path, ln + 1, format!("`{f}` is not a decimal number"))
                })?,
            );
        }
        let c = vals.len() - 3;
        match channels {
            None => channels = Some(c),
            Some(expect) if expect != c => {
                return Err(parse_err(
                    path,
                    ln + 1,
                    format!("{c} feature channels, earlier lines had {expect}"),
                ));
            }
            _ => {}
        }
        points.push([vals[0], vals[1], vals[2]]);
        data.extend_from_slice(&vals[3..]);
    }
    let channels = channels.unwrap_or(0);
    let features = FeatureMatrix::from_vec(points.len(), channels, data)?;
    PointCloud::new(points, features)
}

fn read_cloud_binary_bytes(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let mut cur = &bytes[4..];
    let mut read_u32 = |what: &str| -> Result<u32> {
        if cur.len() < 4 {
            return Err(parse_err(path, 0, format!("truncated header: {what}")));
        }
        let v = u32::from_le_bytes(cur[..4].try_into().unwrap());
        cur = &cur[4..];
        Ok(v)
    };
    let count = read_u32("point count")? as usize;
    let channels = read_u32("channel count")? as usize;
    let need = count * (3 + channels) * 4;
    if cur.len() != need {
        return Err(parse_err(
            path,
            0,
            format!("payload is {} bytes, header implies {need}", cur.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * channels);
    let mut vals = cur
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for _ in 0..count {
        let p = [
            vals.next().unwrap(),
            vals.next().unwrap(),
            vals.next().unwrap(),
        ];
        points.push(p);
        for _ in 0..channels {
            data.push(vals.next().unwrap());
        }
    }
    let features = FeatureMatrix::from_vec(count, channels, data)?;
    PointCloud::new(points, features)
}

pub fn write_cloud_text(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        out.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        for f in cloud.features.row(i) {
            out.push_str(&format!(" {f}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

pub fn write_cloud_binary(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| file_err(path, e))?;
    let mut buf = Vec::with_capacity(12 + cloud.points.len() * (3 + cloud.features.channels) * 4);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&(cloud.points.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(cloud.features.channels as u32).to_le_bytes());
    for (i, p) in cloud.points.iter().enumerate() {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in cloud.features.row(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| file_err(path, e))
}

/// Weight container: the SPC1 layout with `count = K^3 * c_in` and
/// `channels = c_out`, rows stored offset-major.
pub fn write_weights(w: &WeightTensor, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + w.data.len() * 4);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&((w.k_total * w.c_in) as u32).to_le_bytes());
    buf.extend_from_slice(&(w.c_out as u32).to_le_bytes());
    for v in &w.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| file_err(path, e))
}

pub fn read_weights(path: &Path, k_total: usize) -> Result<WeightTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| file_err(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != CLOUD_MAGIC {
        return Err(parse_err(path, 0, "missing SPC1 magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let c_out = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if !rows.is_multiple_of(k_total) {
        return Err(parse_err(
            path,
            0,
            format!("{rows} rows not divisible by {k_total} offsets"),
        ));
    }
    let c_in = rows / k_total;
    let need = rows * c_out * 4;
    if bytes.len() - 12 != need {
        return Err(parse_err(path, 0, "weight payload size mismatch"));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    WeightTensor::from_vec(k_total, c_in, c_out, data)
}

/// Engine configuration: voxelization grid plus the packing layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub grid: GridSpec,
    pub bits: [u32; 3],
    pub word_width: u32,
    /// Explicit margin override; when absent the engine uses the margin the
    /// layer or network under test requires.
    pub margin: Option<u32>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::new([1.0; 3], [4095.0, 4095.0, 255.0]).unwrap(),
            bits: [12, 12, 8],
            word_width: 32,
            margin: None,
        }
    }
}

impl EngineConfig {
    pub fn pack_spec(&self, required_margin: u32) -> Result<crate::coords::PackSpec> {
        let margin = self.margin.unwrap_or(0).max(required_margin);
        let spec = crate::coords::PackSpec::new(self.bits, self.word_width, margin)?;
        spec.validate_grid(&self.grid)?;
        Ok(spec)
    }
}

fn parse_f32_list(path: &Path, ln: usize, value: &str, n: usize) -> Result<Vec<f32>> {
    let vals: Vec<f32> = value
        .split_whitespace()
        .map(|v| v.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, ln, format!("`{value}` is not a list of numbers")))?;
    if vals.len() != n {
        return Err(parse_err(path, ln, format!("expected {n} values")));
    }
    Ok(vals)
}

pub fn read_engine_config(path: &Path) -> Result<EngineConfig> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut cfg = EngineConfig::default();
    let mut grid_size = cfg.grid.grid_size;
    let mut range = cfg.grid.range;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ln = ln + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, ln, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "grid_size" => {
                let v = parse_f32_list(path, ln, value, 3)?;
                grid_size = [v[0], v[1], v[2]];
            }
            "range" => {
                let v = parse_f32_list(path, ln, value, 3)?;
                range = [v[0], v[1], v[2]];
            }
            "bits" => {
                let v: Vec<u32> = value
                    .split_whitespace()
                    .map(|x| x.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(path, ln, "bits must be three integers"))?;
                if v.len() != 3 {
                    return Err(parse_err(path, ln, "bits must be three integers"));
                }
                cfg.bits = [v[0], v[1], v[2]];
            }
            "word" => {
                cfg.word_width = value
                    .parse()
                    .map_err(|_| parse_err(path, ln, "word must be 32 or 64"))?;
            }
            "margin" => {
                cfg.margin = Some(
                    value
                        .parse()
                        .map_err(|_| parse_err(path, ln, "margin must be an integer"))?,
                );
            }
            other => {
                return Err(parse_err(path, ln, format!("unknown key `{other}`")));
            }
        }
    }
    cfg.grid = GridSpec::new(grid_size, range).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(cfg)
}

/// One layer per line: `K s_l c_in c_out policy`.
pub fn parse_network_spec(text: &str, path: &Path) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ln = ln + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(parse_err(path, ln, "expected `K s_l c_in c_out policy`"));
        }
        let num = |s: &str, what: &str| -> Result<u32> {
            s.parse()
                .map_err(|_| parse_err(path, ln, format!("{what} `{s}` is not an integer")))
        };
        let policy = match fields[4] {
            "os" => DataflowPolicy::OutputStationary,
            "ws" => DataflowPolicy::WeightStationary,
            "auto" => DataflowPolicy::Auto,
            other => {
                let t = other
                    .strip_prefix("hybrid:")
                    .and_then(|t| t.parse::<u32>().ok())
                    .ok_or_else(|| {
                        parse_err(
                            path,
                            ln,
                            format!("policy `{other}` is not os/ws/hybrid:<t>/auto"),
                        )
                    })?;
                DataflowPolicy::Hybrid(t)
            }
        };
        layers.push(LayerSpec {
            k: num(fields[0], "kernel size")?,
            s_l: num(fields[1], "layer stride")?,
            c_in: num(fields[2], "input channels")? as usize,
            c_out: num(fields[3], "output channels")? as usize,
            policy,
        });
    }
    Ok(layers)
}

pub fn read_network_spec(path: &Path) -> Result<Vec<LayerSpec>> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    parse_network_spec(&text, path)
}
