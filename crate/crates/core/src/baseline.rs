//! Exact multi-surface segmentation of a slice with convex smoothness
//! priors, by dynamic programming over joint per-column states
//! `(z_1, ..., z_lambda)`.
//!
//! The objective is
//! `sum_i sum_x c_i(x, S_i(x)) + sum_i sum_x w_i |S_i(x+1) - S_i(x)|^p`
//! subject to `|S_i(x+1) - S_i(x)| <= delta_max` and
//! `sep_min <= S_{i+1}(x) - S_i(x) <= sep_max`. Among optimal solutions the
//! lexicographically smallest state sequence is returned.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::synthdata::{SurfaceSet, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub lambda: usize,
    /// Largest allowed shift of a surface between neighbouring columns.
    pub delta_max: usize,
    pub smooth_weight: Vec<f64>,
    /// Exponent `p >= 1` of the smoothness penalty; 2 is quadratic.
    pub smooth_exponent: u32,
    pub sep_min: usize,
    pub sep_max: usize,
    /// +1 for a dark-to-bright transition going down the column, -1 for bright-to-dark.
    pub cost_sign: Vec<f64>,
    /// Upper bound on joint states per column.
    pub max_states: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            lambda: 2,
            delta_max: 3,
            smooth_weight: vec![0.02, 0.02],
            smooth_exponent: 2,
            sep_min: 2,
            sep_max: 40,
            cost_sign: vec![1.0, -1.0],
            max_states: 1 << 20,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::Config("lambda must be at least 1".into()));
        }
        if self.smooth_weight.len() != self.lambda || self.cost_sign.len() != self.lambda {
            return Err(Error::Config(format!(
                "need {} smoothness weights and cost signs, got {} and {}",
                self.lambda,
                self.smooth_weight.len(),
                self.cost_sign.len()
            )));
        }
        if self.smooth_weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("smoothness weights must be finite and non-negative".into()));
        }
        if self.smooth_exponent == 0 {
            return Err(Error::Config("smoothness exponent must be at least 1 (convex)".into()));
        }
        if self.lambda > 1 && (self.sep_min < 1 || self.sep_min > self.sep_max) {
            return Err(Error::Config(format!(
                "separation bounds [{}, {}] need 1 <= min <= max",
                self.sep_min, self.sep_max
            )));
        }
        Ok(())
    }

    pub fn penalty(&self, surface: usize, step: i64) -> f64 {
        self.smooth_weight[surface] * (step.unsigned_abs() as f64).powi(self.smooth_exponent as i32)
    }
}

/// Per-surface node costs for one slice, indexed `(i * X + x) * Z + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolumeSlice {
    pub lambda: usize,
    pub x: usize,
    pub z: usize,
    pub c: Vec<f64>,
}

impl CostVolumeSlice {
    pub fn new(lambda: usize, x: usize, z: usize, c: Vec<f64>) -> Result<Self> {
        if c.len() != lambda * x * z {
            return Err(Error::Shape(format!(
                "cost slice {lambda}x{x}x{z} needs {} values, got {}",
                lambda * x * z,
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost slice".into()));
        }
        Ok(Self { lambda, x, z, c })
    }

    #[inline]
    pub fn get(&self, surface: usize, x: usize, z: usize) -> f64 {
        self.c[(surface * self.x + x) * self.z + z]
    }
}

/// `c_i(x, z) = -sign_i * (I(x, z+1) - I(x, z-1)) / 2` with replicated
/// borders, on a slice stored as `x_len` contiguous columns of `z_len`.
pub fn build_costs(slice: &[f32], x_len: usize, z_len: usize, cfg: &DpConfig) -> Result<CostVolumeSlice> {
    cfg.validate()?;
    if slice.len() != x_len * z_len || z_len == 0 {
        return Err(Error::Shape(format!(
            "slice has {} voxels, expected {x_len}x{z_len}",
            slice.len()
        )));
    }
    let mut c = Vec::with_capacity(cfg.lambda * x_len * z_len);
    for sign in &cfg.cost_sign {
        for x in 0..x_len {
            let col = &slice[x * z_len..(x + 1) * z_len];
            for z in 0..z_len {
                let below = col[(z + 1).min(z_len - 1)] as f64;
                let above = col[z.saturating_sub(1)] as f64;
                c.push(-sign * (below - above) / 2.0);
            }
        }
    }
    CostVolumeSlice::new(cfg.lambda, x_len, z_len, c)
}

/// Joint column states in lexicographic order plus a dense lookup table.
struct StateSpace {
    lambda: usize,
    z: usize,
    /// Flattened `lambda`-tuples.
    tuples: Vec<u32>,
    /// Dense mixed-radix code -> state index, `u32::MAX` when invalid.
    lookup: Vec<u32>,
}

impl StateSpace {
    fn new(lambda: usize, z: usize, cfg: &DpConfig) -> Result<Self> {
        let dense = (z as u128).pow(lambda as u32);
        if dense > cfg.max_states as u128 * 16 || dense > u32::MAX as u128 {
            return Err(Error::Config(format!(
                "state space {z}^{lambda} exceeds the configured budget"
            )));
        }
        let dense = dense as usize;
        let mut lookup = vec![u32::MAX; dense];
        let mut tuples = Vec::new();
        let mut tuple = vec![0usize; lambda];
        for code in 0..dense {
            // most significant digit first, so codes follow lexicographic order
            let mut rest = code;
            for slot in tuple.iter_mut().rev() {
                *slot = rest % z;
                rest /= z;
            }
            let ok = tuple.windows(2).all(|w| {
                w[1] >= w[0] + cfg.sep_min && w[1] - w[0] <= cfg.sep_max
            });
            if ok {
                lookup[code] = (tuples.len() / lambda) as u32;
                tuples.extend(tuple.iter().map(|&v| v as u32));
            }
        }
        let count = tuples.len() / lambda;
        if count > cfg.max_states {
            return Err(Error::Config(format!(
                "{count} joint states exceed the budget of {}",
                cfg.max_states
            )));
        }
        if count == 0 {
            return Err(Error::Infeasible(format!(
                "no placement of {lambda} surfaces with separation [{}, {}] fits in Z={z}",
                cfg.sep_min, cfg.sep_max
            )));
        }
        Ok(Self {
            lambda,
            z,
            tuples,
            lookup,
        })
    }

    fn len(&self) -> usize {
        self.tuples.len() / self.lambda
    }

    fn tuple(&self, s: usize) -> &[u32] {
        &self.tuples[s * self.lambda..(s + 1) * self.lambda]
    }

    /// Calls `f(state, penalty)` for each state reachable from `s` in one
    /// column step, in increasing state order.
    fn for_each_neighbor(&self, s: usize, cfg: &DpConfig, mut f: impl FnMut(usize, f64)) {
        let d = cfg.delta_max as i64;
        let width = (2 * d + 1) as usize;
        let base = self.tuple(s);
        let total = width.pow(self.lambda as u32);
        'offsets: for o in 0..total {
            let mut rest = o;
            let mut code = 0usize;
            let mut penalty = 0.0;
            // digits most significant first so neighbours come out in lex order
            let mut digits = [0i64; 8];
            for slot in (0..self.lambda).rev() {
                digits[slot] = (rest % width) as i64 - d;
                rest /= width;
            }
            for (i, &b) in base.iter().enumerate() {
                let v = b as i64 + digits[i];
                if v < 0 || v >= self.z as i64 {
                    continue 'offsets;
                }
                code = code * self.z + v as usize;
                penalty += cfg.penalty(i, digits[i]);
            }
            let idx = self.lookup[code];
            if idx != u32::MAX {
                f(idx as usize, penalty);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSolution {
    /// `lambda` surfaces of `X` integer positions.
    pub surfaces: Vec<Vec<usize>>,
    pub objective: f64,
}

/// Exact minimiser of the constrained objective for one slice.
pub fn solve_slice(costs: &CostVolumeSlice, cfg: &DpConfig) -> Result<SliceSolution> {
    cfg.validate()?;
    if costs.lambda != cfg.lambda {
        return Err(Error::Config(format!(
            "costs carry {} surfaces, config expects {}",
            costs.lambda, cfg.lambda
        )));
    }
    if cfg.lambda > 8 {
        return Err(Error::Config("at most 8 surfaces are supported".into()));
    }
    let (nx, nz) = (costs.x, costs.z);
    if nx == 0 {
        return Ok(SliceSolution {
            surfaces: vec![Vec::new(); cfg.lambda],
            objective: 0.0,
        });
    }
    let space = StateSpace::new(cfg.lambda, nz, cfg)?;
    let ns = space.len();
    let unary = |x: usize, s: usize| -> f64 {
        space
            .tuple(s)
            .iter()
            .enumerate()
            .map(|(i, &z)| costs.get(i, x, z as usize))
            .sum()
    };

    // cost_to_go[x][s]: optimal cost of columns x.. given state s at x
    let mut cost_to_go = vec![0.0f64; nx * ns];
    for s in 0..ns {
        cost_to_go[(nx - 1) * ns + s] = unary(nx - 1, s);
    }
    for x in (0..nx - 1).rev() {
        let (head, tail) = cost_to_go.split_at_mut((x + 1) * ns);
        let next = &tail[..ns];
        let here = &mut head[x * ns..];
        for (s, slot) in here.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            space.for_each_neighbor(s, cfg, |t, pen| {
                let v = pen + next[t];
                if v < best {
                    best = v;
                }
            });
            *slot = unary(x, s) + best;
        }
    }

    let mut path = Vec::with_capacity(nx);
    let first = &cost_to_go[..ns];
    let mut s = (0..ns)
        .min_by(|&a, &b| first[a].total_cmp(&first[b]))
        .expect("non-empty state space");
    let objective = first[s];
    path.push(s);
    for x in 0..nx - 1 {
        let next = &cost_to_go[(x + 1) * ns..(x + 2) * ns];
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        space.for_each_neighbor(s, cfg, |t, pen| {
            let v = pen + next[t];
            if v < best {
                best = v;
                arg = t;
            }
        });
        s = arg;
        path.push(s);
    }

    let mut surfaces = vec![Vec::with_capacity(nx); cfg.lambda];
    for &s in &path {
        for (i, &z) in space.tuple(s).iter().enumerate() {
            surfaces[i].push(z as usize);
        }
    }
    Ok(SliceSolution {
        surfaces,
        objective,
    })
}

/// Objective of given integer surfaces, or `None` if a hard constraint fails.
pub fn evaluate_objective(costs: &CostVolumeSlice, cfg: &DpConfig, surfaces: &[Vec<usize>]) -> Option<f64> {
    if !satisfies_constraints(cfg, surfaces, costs.z) {
        return None;
    }
    let mut total = 0.0;
    for (i, s) in surfaces.iter().enumerate() {
        for (x, &z) in s.iter().enumerate() {
            total += costs.get(i, x, z);
        }
    }
    for (i, s) in surfaces.iter().enumerate() {
        for w in s.windows(2) {
            total += cfg.penalty(i, w[1] as i64 - w[0] as i64);
        }
    }
    Some(total)
}

pub fn satisfies_constraints(cfg: &DpConfig, surfaces: &[Vec<usize>], z: usize) -> bool {
    if surfaces.len() != cfg.lambda {
        return false;
    }
    let in_range = surfaces.iter().flatten().all(|&v| v < z);
    let smooth = surfaces
        .iter()
        .all(|s| s.windows(2).all(|w| w[0].abs_diff(w[1]) <= cfg.delta_max));
    let separated = surfaces.windows(2).all(|pair| {
        pair[0].iter().zip(&pair[1]).all(|(&a, &b)| {
            b >= a + cfg.sep_min && b - a <= cfg.sep_max
        })
    });
    in_range && smooth && separated
}

#[derive(Debug, Clone)]
pub struct DpResult {
    pub surfaces: SurfaceSet,
    pub objectives: Vec<f64>,
    /// Hard-constraint violations found when re-checking the output.
    pub violations: usize,
}

/// Solves every slice of `volume` independently.
pub fn segment_volume_dp(volume: &Volume, cfg: &DpConfig) -> Result<DpResult> {
    let mut surfaces = SurfaceSet::zeros(cfg.lambda, volume.x, volume.y);
    let mut objectives = Vec::with_capacity(volume.y);
    let mut violations = 0;
    for y in 0..volume.y {
        let costs = build_costs(volume.slice(y), volume.x, volume.z, cfg)?;
        let sol = solve_slice(&costs, cfg)?;
        if !satisfies_constraints(cfg, &sol.surfaces, volume.z) {
            violations += 1;
        }
        for (i, s) in sol.surfaces.iter().enumerate() {
            for (dst, &v) in surfaces.row_mut(i, y).iter_mut().zip(s) {
                *dst = v as f32;
            }
        }
        objectives.push(sol.objective);
    }
    Ok(DpResult {
        surfaces,
        objectives,
        violations,
    })
}

pub fn dp_report(result: &DpResult, cfg: &DpConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "slices = {}", result.objectives.len());
    let _ = writeln!(s, "delta_max = {}", cfg.delta_max);
    let _ = writeln!(s, "separation = [{}, {}]", cfg.sep_min, cfg.sep_max);
    let _ = writeln!(s, "constraint_violations = {}", result.violations);
    for (y, obj) in result.objectives.iter().enumerate() {
        let _ = writeln!(s, "objective[{y}] = {obj}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg1() -> DpConfig {
        DpConfig {
            lambda: 1,
            smooth_weight: vec![1.0],
            cost_sign: vec![1.0],
            ..DpConfig::default()
        }
    }

    #[test]
    fn constant_image_has_zero_costs() {
        let slice = vec![0.3f32; 5 * 7];
        let c = build_costs(&slice, 5, 7, &DpConfig::default()).unwrap();
        assert!(c.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_is_the_cost_minimum() {
        // dark rows 0..=9, bright from row 10 on
        let z = 20;
        let slice: Vec<f32> = (0..3 * z).map(|i| if i % z < 10 { 0.0 } else { 1.0 }).collect();
        let c = build_costs(&slice, 3, z, &cfg1()).unwrap();
        let col: Vec<f64> = (0..z).map(|zz| c.get(0, 1, zz)).collect();
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, -0.5);
        // the step straddles rows 9 and 10; ties resolve to the upper row
        let sol = solve_slice(&c, &cfg1()).unwrap();
        assert_eq!(sol.surfaces[0], vec![9, 9, 9]);
    }

    #[test]
    fn costs_match_direct_differences() {
        let mut rng = crate::rng::RngState::new(3);
        let (x, z) = (4, 9);
        let slice: Vec<f32> = (0..x * z).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let cfg = DpConfig::default();
        let c = build_costs(&slice, x, z, &cfg).unwrap();
        for i in 0..2 {
            for xx in 0..x {
                for zz in 0..z {
                    let up = slice[xx * z + if zz == 0 { 0 } else { zz - 1 }] as f64;
                    let down = slice[xx * z + if zz == z - 1 { z - 1 } else { zz + 1 }] as f64;
                    let want = -cfg.cost_sign[i] * (down - up) / 2.0;
                    assert!((c.get(i, xx, zz) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_column_single_surface() {
        let c = CostVolumeSlice::new(1, 1, 5, vec![3.0, -1.0, 2.0, -1.0, 0.0]).unwrap();
        let sol = solve_slice(&c, &cfg1()).unwrap();
        assert_eq!(sol.surfaces[0], vec![1]);
        assert_eq!(sol.objective, -1.0);
    }

    #[test]
    fn zero_costs_give_flat_lowest_surfaces() {
        let cfg = DpConfig {
            sep_min: 3,
            ..DpConfig::default()
        };
        let c = CostVolumeSlice::new(2, 6, 10, vec![0.0; 2 * 6 * 10]).unwrap();
        let sol = solve_slice(&c, &cfg).unwrap();
        assert_eq!(sol.surfaces[0], vec![0; 6]);
        assert_eq!(sol.surfaces[1], vec![3; 6]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn infeasible_separation_is_reported() {
        let cfg = DpConfig {
            lambda: 3,
            smooth_weight: vec![1.0; 3],
            cost_sign: vec![1.0; 3],
            sep_min: 5,
            sep_max: 6,
            ..DpConfig::default()
        };
        let c = CostVolumeSlice::new(3, 2, 8, vec![0.0; 48]).unwrap();
        assert!(matches!(solve_slice(&c, &cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn adding_a_constant_shifts_objective_only() {
        let mut rng = crate::rng::RngState::new(8);
        let (x, z) = (7, 12);
        let vals: Vec<f64> = (0..2 * x * z).map(|_| rng.int_inclusive(-9, 9) as f64).collect();
        let cfg = DpConfig {
            delta_max: 2,
            smooth_weight: vec![1.0, 2.0],
            sep_min: 1,
            sep_max: 5,
            ..DpConfig::default()
        };
        let a = solve_slice(&CostVolumeSlice::new(2, x, z, vals.clone()).unwrap(), &cfg).unwrap();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 4.0).collect();
        let b = solve_slice(&CostVolumeSlice::new(2, x, z, shifted).unwrap(), &cfg).unwrap();
        assert_eq!(a.surfaces, b.surfaces);
        assert_eq!(b.objective, a.objective + (x * 2) as f64 * 4.0);
    }

    #[test]
    fn output_respects_constraints_and_objective() {
        let mut rng = crate::rng::RngState::new(9);
        let cfg = DpConfig::default();
        let (x, z) = (20, 30);
        let vals: Vec<f64> = (0..2 * x * z).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let c = CostVolumeSlice::new(2, x, z, vals).unwrap();
        let sol = solve_slice(&c, &cfg).unwrap();
        assert!(satisfies_constraints(&cfg, &sol.surfaces, z));
        let e = evaluate_objective(&c, &cfg, &sol.surfaces).unwrap();
        assert!((e - sol.objective).abs() < 1e-9);
    }
}
