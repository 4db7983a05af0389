//! Synthetic OCT-like volumes with known terrain surfaces.
//!
//! Surface 1 is a smooth sum of sinusoids; each deeper surface sits a
//! clamped, slowly varying separation below the previous one. The
//! "AMD-like" mode adds Gaussian bumps that lift the deepest surface toward
//! the one above it (and drag the upper surfaces along proportionally).
//! Voxels take the mean intensity of the layer they fall in plus Gaussian
//! noise.

use std::f64::consts::PI;
use std::path::Path;

use crate::binio::{dims_product, read_file, write_atomic, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::rng::RngState;

pub const VOLUME_MAGIC: &[u8; 4] = b"LCV1";
pub const SURFACE_MAGIC: &[u8; 4] = b"LCS1";
pub const FORMAT_VERSION: u32 = 1;

/// Sub-voxel quantum for generated surfaces; exact in f32, so separations
/// survive the round trip through the surface file unchanged.
const SURFACE_QUANTUM: f64 = 1.0 / 256.0;

/// Intensity volume, indexed `((y * X) + x) * Z + z` so that each voxel
/// column (fixed x, y) is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(x: usize, y: usize, z: usize, voxels: Vec<f32>) -> Result<Self> {
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::Shape(format!("volume dims {x}x{y}x{z} must be positive")));
        }
        if voxels.len() != x * y * z {
            return Err(Error::Shape(format!(
                "volume {x}x{y}x{z} needs {} voxels, got {}",
                x * y * z,
                voxels.len()
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume contains non-finite intensities".into()));
        }
        Ok(Self { x, y, z, voxels })
    }

    pub fn filled(x: usize, y: usize, z: usize, value: f32) -> Self {
        Self {
            x,
            y,
            z,
            voxels: vec![value; x * y * z],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        ((y * self.x) + x) * self.z + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn column(&self, x: usize, y: usize) -> &[f32] {
        let start = self.index(x, y, 0);
        &self.voxels[start..start + self.z]
    }

    /// The B-scan at slice `y`: `X` contiguous columns of `Z` voxels.
    pub fn slice(&self, y: usize) -> &[f32] {
        let start = self.index(0, y, 0);
        &self.voxels[start..start + self.x * self.z]
    }
}

/// `lambda` surfaces, stored surface-major with x fastest within a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    pub lambda: usize,
    pub x: usize,
    pub y: usize,
    pub positions: Vec<f32>,
}

impl SurfaceSet {
    pub fn zeros(lambda: usize, x: usize, y: usize) -> Self {
        Self {
            lambda,
            x,
            y,
            positions: vec![0.0; lambda * x * y],
        }
    }

    pub fn new(lambda: usize, x: usize, y: usize, positions: Vec<f32>) -> Result<Self> {
        if positions.len() != lambda * x * y {
            return Err(Error::Shape(format!(
                "surface set {lambda}x{x}x{y} needs {} positions, got {}",
                lambda * x * y,
                positions.len()
            )));
        }
        Ok(Self {
            lambda,
            x,
            y,
            positions,
        })
    }

    #[inline]
    pub fn index(&self, surface: usize, x: usize, y: usize) -> usize {
        (surface * self.y + y) * self.x + x
    }

    #[inline]
    pub fn get(&self, surface: usize, x: usize, y: usize) -> f64 {
        self.positions[self.index(surface, x, y)] as f64
    }

    pub fn set(&mut self, surface: usize, x: usize, y: usize, value: f64) {
        let i = self.index(surface, x, y);
        self.positions[i] = value as f32;
    }

    /// Positions of one surface along slice `y`.
    pub fn row(&self, surface: usize, y: usize) -> &[f32] {
        let start = self.index(surface, 0, y);
        &self.positions[start..start + self.x]
    }

    pub fn row_mut(&mut self, surface: usize, y: usize) -> &mut [f32] {
        let start = self.index(surface, 0, y);
        &mut self.positions[start..start + self.x]
    }

    /// Bounds `0 <= S <= Z - 1` for every position.
    pub fn check_bounds(&self, z: usize) -> Result<()> {
        let hi = (z - 1) as f32;
        match self.positions.iter().position(|p| !(0.0..=hi).contains(p)) {
            Some(i) => Err(Error::Invalid(format!(
                "surface position {} at index {i} outside [0, {hi}]",
                self.positions[i]
            ))),
            None => Ok(()),
        }
    }

    /// Columns where a surface lies less than `min_sep` below its predecessor.
    pub fn ordering_violations(&self, min_sep: f64) -> usize {
        let mut count = 0;
        for i in 1..self.lambda {
            for y in 0..self.y {
                for x in 0..self.x {
                    if self.get(i, x, y) - self.get(i - 1, x, y) < min_sep {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Normal,
    AmdLike,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub lambda: usize,
    pub mode: SynthMode,
    /// Range of the mean depth of surface 1.
    pub base_range: (f64, f64),
    pub sinusoids: usize,
    pub amplitude_range: (f64, f64),
    /// Cycles across the slice width.
    pub frequency_range: (f64, f64),
    /// Maximum phase drift per slice, radians; keeps neighbouring slices similar.
    pub phase_drift: f64,
    pub separation_base: f64,
    pub separation_amplitude: f64,
    pub sep_min: f64,
    pub sep_max: f64,
    /// Mean intensity of each of the `lambda + 1` layers, top to bottom.
    pub layer_means: Vec<f64>,
    pub noise_sigma: f64,
    pub bump_count: usize,
    /// Peak bump height as a fraction of the local separation.
    pub bump_amplitude: f64,
    /// Gaussian width in columns, drawn from this range.
    pub bump_width: (f64, f64),
    /// Fraction of the bump that the upper surfaces follow.
    pub bump_coupling: f64,
    /// +1 lifts the deepest surface toward the surface above, -1 pushes it down.
    pub bump_sign: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            x: 128,
            y: 4,
            z: 64,
            lambda: 2,
            mode: SynthMode::Normal,
            base_range: (18.0, 24.0),
            sinusoids: 2,
            amplitude_range: (1.0, 4.0),
            frequency_range: (0.5, 2.0),
            phase_drift: 0.08,
            separation_base: 14.0,
            separation_amplitude: 3.0,
            sep_min: 6.0,
            sep_max: 20.0,
            layer_means: vec![0.2, 0.8, 0.4],
            noise_sigma: 0.05,
            bump_count: 2,
            bump_amplitude: 0.4,
            bump_width: (5.0, 10.0),
            bump_coupling: 0.3,
            bump_sign: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Worst-case extent check so every surface stays inside `[2, Z - 3]`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.x == 0 || self.y == 0 || self.z < 6 {
            return bad(format!("dims {}x{}x{} too small", self.x, self.y, self.z));
        }
        if self.lambda == 0 {
            return bad("lambda must be at least 1".into());
        }
        if self.sep_min < 1.0 || self.sep_max < self.sep_min {
            return bad(format!(
                "separation bounds [{}, {}] need 1 <= min <= max",
                self.sep_min, self.sep_max
            ));
        }
        if self.layer_means.len() != self.lambda + 1 {
            return bad(format!(
                "{} layer means given, {} layers needed",
                self.layer_means.len(),
                self.lambda + 1
            ));
        }
        if self.base_range.0 > self.base_range.1
            || self.amplitude_range.0 > self.amplitude_range.1
            || self.frequency_range.0 > self.frequency_range.1
            || self.bump_width.0 > self.bump_width.1
        {
            return bad("ranges must be ordered (lo <= hi)".into());
        }
        if self.noise_sigma < 0.0 || self.bump_amplitude < 0.0 || self.amplitude_range.0 < 0.0 {
            return bad("noise, amplitudes must be non-negative".into());
        }
        let swing = self.sinusoids as f64 * self.amplitude_range.1;
        let top = self.base_range.0 - swing;
        let bottom = self.base_range.1 + swing + (self.lambda - 1) as f64 * self.sep_max;
        let (lo, hi) = (2.0, (self.z - 3) as f64);
        if top < lo || bottom > hi {
            return bad(format!(
                "surfaces may span [{top:.2}, {bottom:.2}], outside [{lo}, {hi}]"
            ));
        }
        Ok(())
    }
}

struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
    drift: f64,
}

impl Wave {
    fn draw(cfg: &SynthConfig, amplitude: (f64, f64), rng: &mut RngState) -> Self {
        Self {
            amplitude: rng.uniform(amplitude.0, amplitude.1),
            frequency: rng.uniform(cfg.frequency_range.0, cfg.frequency_range.1),
            phase: rng.uniform(0.0, 2.0 * PI),
            drift: rng.uniform(-cfg.phase_drift, cfg.phase_drift),
        }
    }

    fn eval(&self, x: usize, y: usize, width: usize) -> f64 {
        let t = 2.0 * PI * self.frequency * x as f64 / width as f64;
        self.amplitude * (t + self.phase + self.drift * y as f64).sin()
    }
}

fn quantize(v: f64) -> f64 {
    (v / SURFACE_QUANTUM).round() * SURFACE_QUANTUM
}

/// Generates a volume and its ground-truth surfaces. Same config, same bytes.
pub fn generate(cfg: &SynthConfig) -> Result<(Volume, SurfaceSet)> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let (nx, ny, nz) = (cfg.x, cfg.y, cfg.z);

    let base = rng.uniform(cfg.base_range.0, cfg.base_range.1);
    let waves: Vec<Wave> = (0..cfg.sinusoids)
        .map(|_| Wave::draw(cfg, cfg.amplitude_range, &mut rng))
        .collect();
    let sep_waves: Vec<Vec<Wave>> = (1..cfg.lambda)
        .map(|_| {
            (0..cfg.sinusoids)
                .map(|_| Wave::draw(cfg, (0.0, cfg.separation_amplitude), &mut rng))
                .collect()
        })
        .collect();
    struct Bump {
        cx: f64,
        cy: f64,
        width: f64,
    }
    let bumps: Vec<Bump> = match cfg.mode {
        SynthMode::Normal => Vec::new(),
        SynthMode::AmdLike => (0..cfg.bump_count)
            .map(|_| Bump {
                cx: rng.uniform(0.0, nx as f64),
                cy: rng.uniform(0.0, ny as f64),
                width: rng.uniform(cfg.bump_width.0, cfg.bump_width.1),
            })
            .collect(),
    };

    let lo = 2.0;
    let hi = (nz - 3) as f64;
    let sep_floor = (cfg.sep_min / SURFACE_QUANTUM).ceil() * SURFACE_QUANTUM;
    let mut surfaces = SurfaceSet::zeros(cfg.lambda, nx, ny);
    let mut column = vec![0.0f64; cfg.lambda];
    let mut seps = vec![0.0f64; cfg.lambda];
    for y in 0..ny {
        for x in 0..nx {
            column[0] = base + waves.iter().map(|w| w.eval(x, y, nx)).sum::<f64>();
            for i in 1..cfg.lambda {
                let profile = cfg.separation_base
                    + sep_waves[i - 1].iter().map(|w| w.eval(x, y, nx)).sum::<f64>();
                seps[i] = profile.clamp(cfg.sep_min, cfg.sep_max);
                column[i] = column[i - 1] + seps[i];
            }
            if !bumps.is_empty() && cfg.lambda > 1 {
                let last = cfg.lambda - 1;
                let weight: f64 = bumps
                    .iter()
                    .map(|b| {
                        let dx = x as f64 - b.cx;
                        let dy = (y as f64 - b.cy) * 4.0;
                        (-(dx * dx + dy * dy) / (2.0 * b.width * b.width)).exp()
                    })
                    .sum::<f64>()
                    .min(1.0);
                let lift = cfg.bump_sign * cfg.bump_amplitude * seps[last] * weight;
                column[last] -= lift;
                for v in column.iter_mut().take(last) {
                    *v -= cfg.bump_coupling * lift;
                }
            }
            let mut prev = f64::NEG_INFINITY;
            for (i, v) in column.iter().enumerate() {
                let mut q = quantize(v.clamp(lo, hi));
                if i > 0 {
                    q = q.max(prev + sep_floor);
                }
                surfaces.set(i, x, y, q);
                prev = q;
            }
        }
    }

    let mut voxels = vec![0.0f32; nx * ny * nz];
    let volume_shape = Volume::filled(nx, ny, nz, 0.0);
    for y in 0..ny {
        for x in 0..nx {
            let start = volume_shape.index(x, y, 0);
            for z in 0..nz {
                let layer = layer_of(&surfaces, x, y, z);
                let noise = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * rng.normal()
                } else {
                    0.0
                };
                voxels[start + z] = (cfg.layer_means[layer] + noise) as f32;
            }
        }
    }
    Ok((Volume::new(nx, ny, nz, voxels)?, surfaces))
}

/// Layer index of voxel `z` in column `(x, y)`: 0 above surface 1, `i`
/// between surfaces `i` and `i + 1`, `lambda` below the last.
pub fn layer_of(surfaces: &SurfaceSet, x: usize, y: usize, z: usize) -> usize {
    (0..surfaces.lambda)
        .take_while(|&i| z as f64 >= surfaces.get(i, x, y))
        .count()
}

pub fn volume_to_bytes(v: &Volume) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(VOLUME_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(v.x as u32);
    w.u32(v.y as u32);
    w.u32(v.z as u32);
    w.u8(0);
    w.f32s(&v.voxels);
    w.into_bytes()
}

pub fn volume_from_bytes(bytes: &[u8]) -> std::result::Result<Volume, FormatError> {
    let mut r = Reader::new(bytes);
    r.expect_magic(VOLUME_MAGIC)?;
    r.expect_version(FORMAT_VERSION)?;
    let (x, y, z) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let dtype = r.u8()?;
    if dtype != 0 {
        return Err(FormatError::ShapeInconsistency(format!("unsupported dtype {dtype}")));
    }
    let voxels = r.f32s(dims_product(&[x, y, z])?)?;
    r.finish()?;
    Volume::new(x, y, z, voxels).map_err(|e| FormatError::ShapeInconsistency(e.to_string()))
}

pub fn surfaces_to_bytes(s: &SurfaceSet) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(SURFACE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(s.lambda as u32);
    w.u32(s.x as u32);
    w.u32(s.y as u32);
    w.f32s(&s.positions);
    w.into_bytes()
}

pub fn surfaces_from_bytes(bytes: &[u8]) -> std::result::Result<SurfaceSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.expect_magic(SURFACE_MAGIC)?;
    r.expect_version(FORMAT_VERSION)?;
    let (lambda, x, y) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let positions = r.f32s(dims_product(&[lambda, x, y])?)?;
    r.finish()?;
    Ok(SurfaceSet {
        lambda,
        x,
        y,
        positions,
    })
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    write_atomic(path, &volume_to_bytes(v))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    volume_from_bytes(&read_file(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_surfaces(s: &SurfaceSet, path: &Path) -> Result<()> {
    write_atomic(path, &surfaces_to_bytes(s))
}

pub fn read_surfaces(path: &Path) -> Result<SurfaceSet> {
    surfaces_from_bytes(&read_file(path)?).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_config() -> SynthConfig {
        SynthConfig {
            amplitude_range: (0.0, 0.0),
            separation_amplitude: 0.0,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn flat_noise_free_volume() {
        let cfg = flat_config();
        let (vol, surf) = generate(&cfg).unwrap();
        let s1 = surf.get(0, 0, 0);
        let s2 = surf.get(1, 0, 0);
        assert!(surf.positions[..cfg.x * cfg.y].iter().all(|&p| p as f64 == s1));
        assert!(surf.positions[cfg.x * cfg.y..].iter().all(|&p| p as f64 == s2));
        assert_eq!(s2 - s1, cfg.separation_base);
        for y in 0..cfg.y {
            for x in 0..cfg.x {
                for z in 0..cfg.z {
                    let want = if (z as f64) < s1 {
                        0.2
                    } else if (z as f64) < s2 {
                        0.8
                    } else {
                        0.4
                    };
                    assert_eq!(vol.get(x, y, z), want as f32);
                }
            }
        }
    }

    #[test]
    fn rendering_matches_layer_membership() {
        for mode in [SynthMode::Normal, SynthMode::AmdLike] {
            let cfg = SynthConfig {
                noise_sigma: 0.0,
                mode,
                seed: 17,
                ..SynthConfig::default()
            };
            let (vol, surf) = generate(&cfg).unwrap();
            for y in 0..cfg.y {
                for x in 0..cfg.x {
                    for z in 0..cfg.z {
                        let layer = layer_of(&surf, x, y, z);
                        assert_eq!(vol.get(x, y, z), cfg.layer_means[layer] as f32);
                    }
                }
            }
        }
    }

    #[test]
    fn separation_and_bounds_hold() {
        for seed in 0..20 {
            for mode in [SynthMode::Normal, SynthMode::AmdLike] {
                let cfg = SynthConfig {
                    seed,
                    mode,
                    bump_amplitude: 0.9,
                    ..SynthConfig::default()
                };
                let (_, surf) = generate(&cfg).unwrap();
                surf.check_bounds(cfg.z).unwrap();
                for y in 0..cfg.y {
                    for x in 0..cfg.x {
                        assert!(surf.get(1, x, y) - surf.get(0, x, y) >= cfg.sep_min);
                        assert!(surf.get(0, x, y) >= 2.0);
                        assert!(surf.get(1, x, y) <= (cfg.z - 3) as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn normal_surfaces_are_smooth() {
        for seed in 0..20 {
            let cfg = SynthConfig {
                seed,
                ..SynthConfig::default()
            };
            let (_, surf) = generate(&cfg).unwrap();
            for i in 0..cfg.lambda {
                for y in 0..cfg.y {
                    let row = surf.row(i, y);
                    for w in row.windows(2) {
                        assert!((w[1] - w[0]).abs() <= 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn amd_mode_lifts_the_deep_surface() {
        let normal = SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        };
        let amd = SynthConfig {
            mode: SynthMode::AmdLike,
            ..normal.clone()
        };
        let (_, a) = generate(&normal).unwrap();
        let (_, b) = generate(&amd).unwrap();
        let lifted = (0..normal.x).any(|x| b.get(1, x, 0) < a.get(1, x, 0) - 1.0);
        assert!(lifted);
    }

    #[test]
    fn infeasible_config_rejected() {
        let cfg = SynthConfig {
            z: 24,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            sep_min: 0.5,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            seed: 99,
            mode: SynthMode::AmdLike,
            ..SynthConfig::default()
        };
        let (v1, s1) = generate(&cfg).unwrap();
        let (v2, s2) = generate(&cfg).unwrap();
        assert_eq!(volume_to_bytes(&v1), volume_to_bytes(&v2));
        assert_eq!(surfaces_to_bytes(&s1), surfaces_to_bytes(&s2));
    }

    #[test]
    fn file_round_trips_and_errors() {
        let (vol, surf) = generate(&SynthConfig {
            x: 16,
            y: 2,
            ..flat_config()
        })
        .unwrap();
        let vb = volume_to_bytes(&vol);
        assert_eq!(volume_from_bytes(&vb).unwrap(), vol);
        let sb = surfaces_to_bytes(&surf);
        assert_eq!(surfaces_from_bytes(&sb).unwrap(), surf);

        let mut bad = vb.clone();
        bad[..4].copy_from_slice(b"LCS1");
        assert!(matches!(volume_from_bytes(&bad), Err(FormatError::BadMagic { .. })));
        assert!(matches!(
            volume_from_bytes(&vb[..vb.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(
            surfaces_from_bytes(&sb[..10]),
            Err(FormatError::Truncated { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.lcv");
        write_volume(&vol, &p).unwrap();
        assert_eq!(read_volume(&p).unwrap(), vol);
        let q = dir.path().join("s.lcs");
        write_surfaces(&surf, &q).unwrap();
        assert_eq!(read_surfaces(&q).unwrap(), surf);
    }
}
