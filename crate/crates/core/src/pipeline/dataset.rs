//! Patch datasets and their file format: magic "LCP1", u32 version,
//! u32 count, N, Z, lambda, then per record the patch as f32 with z fastest
//! (column by column) followed by the f32 targets. Little-endian.

use std::path::Path;

use log::info;

use crate::binio::{dims_product, read_file, write_atomic, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::model::Sample;
use crate::numerics::Tensor;
use crate::rng::RngState;
use crate::synthdata::{SurfaceSet, Volume};

use super::augment::{augment, sample_rotation, sample_translation, AugmentSpec, MAX_ROTATION_DEG};
use super::patches::{extract_patches, PatchConfig, PatchSample};

pub const DATASET_MAGIC: &[u8; 4] = b"LCP1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    /// `[1, Z, N]`.
    pub patch: Tensor<f32>,
    /// `lambda * N/2` positions in voxels, surface-major.
    pub target: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub n: usize,
    pub z: usize,
    pub lambda: usize,
    pub records: Vec<PatchRecord>,
}

impl PatchDataset {
    pub fn new(n: usize, z: usize, lambda: usize) -> Self {
        Self {
            n,
            z,
            lambda,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Training samples with targets widened to f64.
    pub fn samples(&self) -> Vec<Sample<f32>> {
        self.records
            .iter()
            .map(|r| Sample {
                patch: r.patch.clone(),
                target: r.target.iter().map(|&v| v as f64).collect(),
            })
            .collect()
    }

    pub fn push(&mut self, sample: &PatchSample) {
        self.records.push(PatchRecord {
            patch: sample.patch.data.clone(),
            target: sample.target.values.clone(),
        });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(self.records.len() as u32);
        w.u32(self.n as u32);
        w.u32(self.z as u32);
        w.u32(self.lambda as u32);
        for r in &self.records {
            let d = r.patch.data();
            for x in 0..self.n {
                for z in 0..self.z {
                    w.f32(d[z * self.n + x]);
                }
            }
            w.f32s(&r.target);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        r.expect_version(DATASET_VERSION)?;
        let count = r.u32()? as usize;
        let (n, z, lambda) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if n % 2 != 0 {
            return Err(FormatError::ShapeInconsistency(format!("odd patch width {n}")));
        }
        let patch_len = dims_product(&[z, n])?;
        let m2 = dims_product(&[lambda, n / 2])?;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let cols = r.f32s(patch_len)?;
            let mut data = vec![0.0f32; patch_len];
            for x in 0..n {
                for zz in 0..z {
                    data[zz * n + x] = cols[x * z + zz];
                }
            }
            let target = r.f32s(m2)?;
            records.push(PatchRecord {
                patch: Tensor::from_vec(&[1, z, n], data).expect("sized above"),
                target,
            });
        }
        r.finish()?;
        Ok(Self {
            n,
            z,
            lambda,
            records,
        })
    }
}

pub fn write_dataset(ds: &PatchDataset, path: &Path) -> Result<()> {
    write_atomic(path, &ds.to_bytes())
}

pub fn read_dataset(path: &Path) -> Result<PatchDataset> {
    PatchDataset::from_bytes(&read_file(path)?).map_err(|e| Error::format(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub patch: PatchConfig,
    pub augment: bool,
    /// Translations are drawn from `[-range, range]` voxels.
    pub translate_range: i64,
    pub max_rotation_deg: f64,
}

impl DatasetConfig {
    /// Translation range defaults to half the patch height.
    pub fn new(n: usize, z: usize, augment: bool) -> Self {
        Self {
            patch: PatchConfig::new(n),
            augment,
            translate_range: (z / 2) as i64,
            max_rotation_deg: MAX_ROTATION_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DatasetStats {
    pub base: usize,
    pub translated: usize,
    pub rotated: usize,
    pub combined: usize,
    pub rejected: usize,
}

impl DatasetStats {
    pub fn total(&self) -> usize {
        self.base + self.translated + self.rotated + self.combined
    }
}

/// Extracts every patch from every (preprocessed volume, surfaces) pair and,
/// with augmentation on, adds a translated, a rotated and a
/// translated-then-rotated copy of each. Records are shuffled with `rng`.
pub fn build_dataset(
    sources: &[(&Volume, &SurfaceSet)],
    cfg: &DatasetConfig,
    rng: &mut RngState,
) -> Result<(PatchDataset, DatasetStats)> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Invalid("no volumes given".into()))?;
    let (z, lambda) = (first.0.z, first.1.lambda);
    let mut ds = PatchDataset::new(cfg.patch.n, z, lambda);
    let mut stats = DatasetStats::default();
    for (vid, (vol, surf)) in sources.iter().enumerate() {
        if vol.z != z || surf.lambda != lambda {
            return Err(Error::Shape(format!(
                "volume {vid} has Z={} lambda={}, expected Z={z} lambda={lambda}",
                vol.z, surf.lambda
            )));
        }
        for sample in extract_patches(vol, surf, vid, &cfg.patch)? {
            ds.push(&sample);
            stats.base += 1;
            if !cfg.augment {
                continue;
            }
            let t = sample_translation(&sample, cfg.translate_range, rng);
            let specs = [
                AugmentSpec::translate(t),
                AugmentSpec::rotate(sample_rotation(cfg.max_rotation_deg, rng)),
                AugmentSpec::both(
                    sample_translation(&sample, cfg.translate_range, rng),
                    sample_rotation(cfg.max_rotation_deg, rng),
                ),
            ];
            for (k, spec) in specs.iter().enumerate() {
                match augment(&sample, spec) {
                    Ok(a) => {
                        ds.push(&a);
                        match k {
                            0 => stats.translated += 1,
                            1 => stats.rotated += 1,
                            _ => stats.combined += 1,
                        }
                    }
                    Err(_) => stats.rejected += 1,
                }
            }
        }
    }
    rng.shuffle(&mut ds.records);
    info!(
        "dataset: {} records ({} base, {} translated, {} rotated, {} both, {} rejected)",
        stats.total(),
        stats.base,
        stats.translated,
        stats.rotated,
        stats.combined,
        stats.rejected
    );
    Ok((ds, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SynthConfig};

    fn source() -> (Volume, SurfaceSet) {
        let cfg = SynthConfig {
            x: 64,
            y: 1,
            amplitude_range: (0.0, 0.5),
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        generate(&cfg).unwrap()
    }

    #[test]
    fn counts_without_augmentation() {
        let (v, s) = source();
        let cfg = DatasetConfig::new(32, 64, false);
        let (ds, stats) = build_dataset(&[(&v, &s)], &cfg, &mut RngState::new(1)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(stats.base, 3);
    }

    #[test]
    fn augmentation_quadruples() {
        let (v, s) = source();
        let cfg = DatasetConfig {
            translate_range: 5,
            max_rotation_deg: 15.0,
            ..DatasetConfig::new(32, 64, true)
        };
        let (ds, stats) = build_dataset(&[(&v, &s)], &cfg, &mut RngState::new(1)).unwrap();
        assert_eq!(stats.rejected, 0);
        assert_eq!(ds.len(), 12);
        assert_eq!((stats.translated, stats.rotated, stats.combined), (3, 3, 3));
        for r in &ds.records {
            assert!(r.target.iter().all(|&t| (0.0..=63.0).contains(&t)));
        }
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let (v, s) = source();
        let cfg = DatasetConfig::new(32, 64, true);
        let (ds, _) = build_dataset(&[(&v, &s)], &cfg, &mut RngState::new(2)).unwrap();
        let bytes = ds.to_bytes();
        let back = PatchDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            PatchDataset::from_bytes(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn file_stores_columns_z_fastest() {
        let mut ds = PatchDataset::new(4, 3, 1);
        let data: Vec<f32> = (0..12).map(|v| v as f32).collect();
        ds.records.push(PatchRecord {
            patch: Tensor::from_vec(&[1, 3, 4], data).unwrap(),
            target: vec![1.0, 2.0],
        });
        let bytes = ds.to_bytes();
        let first: Vec<f32> = bytes[24..24 + 12]
            .chunks(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        // column 0 top to bottom: rows 0, 1, 2 of x = 0
        assert_eq!(first, vec![0.0, 4.0, 8.0]);
    }
}
