//! Full-surface segmentation: each slice is zero padded, tiled into
//! overlapping `N`-column patches at stride `N/2`, and each patch's middle
//! `N/2` predictions are written to their global columns.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{read_surface, SurfaceRegressionNet};
use crate::numerics::{Scalar, Tensor};
use crate::pipeline::PAD_VALUE;
use crate::synthdata::{SurfaceSet, Volume};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingPlan {
    pub n: usize,
    /// Original slice width.
    pub width: usize,
    /// Zero columns prepended to the slice.
    pub pad: usize,
    /// Patch starts in padded coordinates.
    pub starts: Vec<usize>,
    /// Middle-window columns that fall outside the slice and are discarded.
    pub clip: usize,
}

impl TilingPlan {
    /// Original column predicted by middle slot `k` of patch `p`, if any.
    pub fn column(&self, p: usize, k: usize) -> Option<usize> {
        let col = (self.starts[p] + self.n / 4 + k) as isize - self.pad as isize;
        (col >= 0 && (col as usize) < self.width).then_some(col as usize)
    }

    /// First original column claimed by each patch after the first.
    pub fn seams(&self) -> Vec<usize> {
        (1..self.starts.len())
            .filter_map(|p| (0..self.n / 2).find_map(|k| self.column(p, k)))
            .filter(|&c| c > 0)
            .collect()
    }

    pub fn padded_width(&self) -> usize {
        self.width + 2 * self.pad
    }
}

/// Pads `N/4` zero columns on each side and starts a patch every `N/2`
/// columns until the middle windows cover the slice. Slices narrower than
/// `N/2` get a single patch with the slice centred in its middle window.
pub fn plan_tiling(width: usize, n: usize) -> Result<TilingPlan> {
    if n == 0 || n % 4 != 0 {
        return Err(Error::Config(format!("patch width {n} must be a positive multiple of 4")));
    }
    if width == 0 {
        return Err(Error::Config("cannot tile an empty slice".into()));
    }
    let half = n / 2;
    if width < half {
        return Ok(TilingPlan {
            n,
            width,
            pad: (n - width) / 2,
            starts: vec![0],
            clip: half - width,
        });
    }
    let count = width.div_ceil(half);
    Ok(TilingPlan {
        n,
        width,
        pad: n / 4,
        starts: (0..count).map(|p| p * half).collect(),
        clip: count * half - width,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSegmentation {
    /// `lambda` surfaces of `width` positions each, in voxels.
    pub surfaces: Vec<Vec<f64>>,
    pub patches: usize,
    pub clamped: usize,
}

/// Patch `p` of a column-contiguous slice as a `[1, Z, N]` tensor.
pub fn tile_patch<T: Scalar>(slice: &[f32], z: usize, plan: &TilingPlan, p: usize) -> Tensor<T> {
    let n = plan.n;
    let mut data = vec![T::from_f64_lossy(PAD_VALUE as f64); z * n];
    for j in 0..n {
        let col = (plan.starts[p] + j) as isize - plan.pad as isize;
        if col < 0 || col as usize >= plan.width {
            continue;
        }
        let column = &slice[col as usize * z..(col as usize + 1) * z];
        for (zz, v) in column.iter().enumerate() {
            data[zz * n + j] = T::from_f64_lossy(*v as f64);
        }
    }
    Tensor::from_vec(&[1, z, n], data).expect("sized above")
}

/// Segments one slice given as `width` contiguous columns of `Z` voxels.
pub fn segment_slice<T: Scalar>(
    net: &SurfaceRegressionNet<T>,
    slice: &[f32],
    plan: &TilingPlan,
) -> Result<SliceSegmentation> {
    let cfg = &net.config;
    if plan.n != cfg.n {
        return Err(Error::Config(format!(
            "plan uses N={} but the network expects N={}",
            plan.n, cfg.n
        )));
    }
    if slice.len() != plan.width * cfg.z {
        return Err(Error::Shape(format!(
            "slice has {} voxels, expected {} columns of {}",
            slice.len(),
            plan.width,
            cfg.z
        )));
    }
    let m1 = cfg.m1();
    let zmax = (cfg.z - 1) as f64;
    let mut surfaces = vec![vec![f64::NAN; plan.width]; cfg.lambda];
    let mut clamped = 0;
    for p in 0..plan.starts.len() {
        let patch = tile_patch::<T>(slice, cfg.z, plan, p);
        let pred = net.predict_voxels(&patch)?;
        if let Some(bad) = pred.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "patch {p} (start {}) produced a non-finite output at slot {bad}",
                plan.starts[p]
            )));
        }
        for (i, surface) in surfaces.iter_mut().enumerate() {
            for (k, &v) in read_surface(&pred, i, m1).iter().enumerate() {
                if let Some(col) = plan.column(p, k) {
                    let c = v.clamp(0.0, zmax);
                    if c != v {
                        clamped += 1;
                    }
                    surface[col] = c;
                }
            }
        }
    }
    debug_assert!(surfaces.iter().flatten().all(|v| v.is_finite()));
    Ok(SliceSegmentation {
        surfaces,
        patches: plan.starts.len(),
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub surfaces: SurfaceSet,
    pub plan: TilingPlan,
    pub patches: usize,
    pub clamped: usize,
    /// Columns where a surface lies less than one voxel below its predecessor.
    pub ordering_violations: usize,
    pub columns: usize,
    pub elapsed: Duration,
}

/// Segments every slice of `volume` independently and assembles the result.
pub fn segment_volume<T: Scalar>(net: &SurfaceRegressionNet<T>, volume: &Volume) -> Result<InferenceResult> {
    if volume.z != net.config.z {
        return Err(Error::Shape(format!(
            "volume depth {} does not match network Z={}",
            volume.z, net.config.z
        )));
    }
    let t0 = Instant::now();
    let plan = plan_tiling(volume.x, net.config.n)?;
    let mut surfaces = SurfaceSet::zeros(net.config.lambda, volume.x, volume.y);
    let (mut patches, mut clamped) = (0, 0);
    for y in 0..volume.y {
        let seg = segment_slice(net, volume.slice(y), &plan)?;
        patches += seg.patches;
        clamped += seg.clamped;
        for (i, s) in seg.surfaces.iter().enumerate() {
            for (dst, v) in surfaces.row_mut(i, y).iter_mut().zip(s) {
                *dst = *v as f32;
            }
        }
    }
    let ordering_violations = surfaces.ordering_violations(1.0);
    Ok(InferenceResult {
        columns: volume.x * volume.y,
        surfaces,
        plan,
        patches,
        clamped,
        ordering_violations,
        elapsed: t0.elapsed(),
    })
}

/// Peak resident set size in kB, where the platform exposes it.
pub fn peak_memory_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

pub fn inference_report(result: &InferenceResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "patches = {}", result.patches);
    let _ = writeln!(s, "patches_per_slice = {}", result.plan.starts.len());
    let _ = writeln!(s, "pad = {}", result.plan.pad);
    let _ = writeln!(s, "clip = {}", result.plan.clip);
    let _ = writeln!(s, "clamped = {}", result.clamped);
    let _ = writeln!(s, "ordering_violations = {}", result.ordering_violations);
    let _ = writeln!(s, "columns = {}", result.columns);
    let _ = writeln!(s, "wall_time_s = {:.3}", result.elapsed.as_secs_f64());
    match peak_memory_kb() {
        Some(kb) => {
            let _ = writeln!(s, "peak_memory_kb = {kb}");
        }
        None => {
            let _ = writeln!(s, "peak_memory_kb = unavailable");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn covered_once(plan: &TilingPlan) {
        let mut hits = vec![0; plan.width];
        for p in 0..plan.starts.len() {
            for k in 0..plan.n / 2 {
                if let Some(c) = plan.column(p, k) {
                    hits[c] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1), "{hits:?}");
    }

    #[test]
    fn wide_slice_plan() {
        let plan = plan_tiling(1000, 32).unwrap();
        assert_eq!(plan.pad, 8);
        assert_eq!(plan.padded_width(), 1016);
        assert_eq!(plan.starts.len(), 63);
        assert_eq!(plan.starts[0], 0);
        assert_eq!(*plan.starts.last().unwrap(), 992);
        assert_eq!(plan.clip, 8);
        covered_once(&plan);
    }

    #[test]
    fn two_patch_plan() {
        let plan = plan_tiling(32, 32).unwrap();
        assert_eq!(plan.pad, 8);
        assert_eq!(plan.starts, vec![0, 16]);
        assert_eq!(plan.clip, 0);
        assert_eq!(plan.seams(), vec![16]);
        covered_once(&plan);
    }

    #[test]
    fn narrow_slice_single_centred_patch() {
        let plan = plan_tiling(10, 32).unwrap();
        assert_eq!(plan.starts, vec![0]);
        assert!(plan.seams().is_empty());
        covered_once(&plan);
    }

    #[test]
    fn coverage_for_many_widths() {
        for n in [4, 8, 16, 32] {
            for width in 1..100 {
                covered_once(&plan_tiling(width, n).unwrap());
            }
        }
    }

    /// A net whose output is a constant `z` for every slot.
    fn constant_net(z_out: f64) -> SurfaceRegressionNet<f64> {
        let cfg = ModelConfig {
            conv_channels: [2, 2, 2],
            fc_hidden: 4,
            ..ModelConfig::new(32, 64, 2)
        };
        let mut net = SurfaceRegressionNet::<f64>::zeroed(cfg).unwrap();
        let unit = cfg.normalize(z_out);
        net.layers.last_mut().unwrap().bias.fill(unit);
        net
    }

    #[test]
    fn flat_net_gives_flat_surfaces() {
        let net = constant_net(20.0);
        let plan = plan_tiling(32, 32).unwrap();
        let slice = vec![0.5f32; 32 * 64];
        let seg = segment_slice(&net, &slice, &plan).unwrap();
        assert_eq!(seg.surfaces.len(), 2);
        for s in &seg.surfaces {
            assert_eq!(s.len(), 32);
            assert!(s.iter().all(|&v| (v - 20.0).abs() < 1e-9));
        }
        assert_eq!(seg.clamped, 0);
    }

    #[test]
    fn out_of_range_outputs_are_clamped_and_counted() {
        let net = constant_net(80.0);
        let plan = plan_tiling(40, 32).unwrap();
        let seg = segment_slice(&net, &vec![0.0f32; 40 * 64], &plan).unwrap();
        assert!(seg.surfaces.iter().flatten().all(|&v| v == 63.0));
        assert_eq!(seg.clamped, 2 * 40);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut net = constant_net(20.0);
        net.layers.last_mut().unwrap().bias.data_mut()[3] = f64::NAN;
        let plan = plan_tiling(32, 32).unwrap();
        let err = segment_slice(&net, &vec![0.0f32; 32 * 64], &plan).unwrap_err();
        assert!(err.to_string().contains("patch 0"));
    }

    #[test]
    fn volume_segmentation_is_slice_wise() {
        let net = constant_net(10.0);
        let vol = Volume::filled(40, 3, 64, 0.1);
        let res = segment_volume(&net, &vol).unwrap();
        assert_eq!(res.surfaces.x, 40);
        assert_eq!(res.surfaces.y, 3);
        assert_eq!(res.patches, 3 * 3);
        // both surfaces at z = 10: every column violates ordering
        assert_eq!(res.ordering_violations, 40 * 3);
        assert!(inference_report(&res).contains("patches = 9"));
    }
}
