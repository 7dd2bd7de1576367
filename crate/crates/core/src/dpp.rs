//! Time-slab dynamic-programming solver built on the mean-value blend.
//!
//! Space is sampled on the lattice `hℤ^{2n} × 2h²ℤ` with `h = ε / k`. That
//! lattice is a subgroup of `H^n`, so `x ∘ o` is again a lattice node for
//! every lattice point `x` and lattice offset `o`. The default scheme reads
//! ball values directly off the lattice; the multilinear scheme evaluates a
//! coarse polar rule between nodes instead.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::ScalarField;
use crate::error::{invalid, Error, Result};
use crate::heis::{compose_into, gauge_of, psi_of, Coords, HPoint};
use crate::mvp::MvpParams;
use crate::quadrature::{build_rule, Resolution};
use crate::sum::pairwise_sum;

/// Tolerance used when comparing gauges against radii.
const RADIUS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Ball offsets are lattice points; no interpolation is needed.
    Lattice,
    /// Weighted means use a coarse polar rule with multilinear interpolation.
    Multilinear,
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Lattice => "lattice",
            Interpolation::Multilinear => "multilinear",
        })
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lattice" => Ok(Interpolation::Lattice),
            "multilinear" => Ok(Interpolation::Multilinear),
            other => Err(Error::Parse(format!(
                "unknown interpolation '{other}' (lattice, multilinear)"
            ))),
        }
    }
}

/// Geometry of the space-time cylinder `(0, T) × B_R(0)` and its collar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub epsilon: f64,
    pub domain_radius: f64,
    /// Width of the strip outside `Ω` that carries lateral data.
    pub collar: f64,
    /// `k = ε / h`.
    pub lattice_ratio: usize,
    pub t_final: f64,
    pub delta_t: f64,
    /// Extra layers of lattice cells around the collar, needed by the
    /// multilinear scheme.
    pub padding: usize,
}

impl GridSpec {
    /// Unit Koranyi ball, `T = 0.2`, collar `ε`, `h = ε/2`, `Δt = ε²/2`.
    pub fn desk(n: usize, epsilon: f64) -> Self {
        Self {
            n,
            epsilon,
            domain_radius: 1.0,
            collar: epsilon,
            lattice_ratio: 2,
            t_final: 0.2,
            delta_t: 0.5 * epsilon * epsilon,
            padding: 0,
        }
    }
}

/// Nodes of the cylinder, their lattice coordinates and the slab times.
#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    pub spec: GridSpec,
    pub h: f64,
    pub vertical_step: f64,
    pub nodes: Vec<HPoint>,
    /// Integer lattice coordinates, `2n+1` per node.
    pub lattice: Vec<i32>,
    pub interior_mask: Vec<bool>,
    /// Indices of interior nodes in ascending order.
    pub interior: Vec<u32>,
    pub times: Vec<f64>,
    bounds: Vec<i32>,
    lookup: HashMap<i64, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub nodes: usize,
    pub interior: usize,
    pub collar: usize,
    pub slabs: usize,
    pub h: f64,
    pub vertical_step: f64,
}

impl SpaceTimeGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let n = spec.n;
        if n == 0 {
            return invalid("group index n must be at least 1");
        }
        let eps = spec.epsilon;
        if !(eps > 0.0) || !eps.is_finite() {
            return invalid(format!("eps must be positive, got {eps}"));
        }
        if !(spec.domain_radius > 0.0) || !spec.domain_radius.is_finite() {
            return invalid(format!("domain radius must be positive, got {}", spec.domain_radius));
        }
        if spec.lattice_ratio == 0 {
            return invalid("lattice_ratio must be at least 1");
        }
        if !(spec.collar >= eps * (1.0 - RADIUS_SLACK)) {
            return Err(Error::InvalidGrid(format!(
                "collar {} is narrower than eps {eps}; the balls of interior nodes would leave the grid",
                spec.collar
            )));
        }
        if !(spec.delta_t > 0.0) || spec.delta_t > eps * eps * (1.0 + RADIUS_SLACK) {
            return Err(Error::InvalidGrid(format!(
                "delta_t must lie in (0, eps^2 = {}], got {}",
                eps * eps,
                spec.delta_t
            )));
        }
        if !(spec.t_final >= 0.0) || !spec.t_final.is_finite() {
            return invalid(format!("T must be nonnegative, got {}", spec.t_final));
        }
        let slabs_f = spec.t_final / spec.delta_t;
        let slabs = slabs_f.round();
        if (slabs - slabs_f).abs() > 1e-9 * slabs_f.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "T = {} is not a whole number of slabs of length {}",
                spec.t_final, spec.delta_t
            )));
        }
        let slabs = slabs as usize;

        let dim = 2 * n + 1;
        let h = eps / spec.lattice_ratio as f64;
        let vstep = 2.0 * h * h;
        let outer = spec.domain_radius + spec.collar;
        let pad = spec.padding as i32;
        let hmax = (outer / h + 1e-9).floor() as i32 + pad;
        let vmax = (outer * outer / vstep + 1e-9).floor() as i32 + pad;
        let mut bounds = vec![hmax; dim];
        bounds[dim - 1] = vmax;
        let box_size: f64 = bounds.iter().map(|&b| (2 * b + 1) as f64).product();
        if box_size > 4e9 {
            return Err(Error::InvalidGrid(format!(
                "lattice box of {box_size:e} points is too large; use a larger eps or smaller lattice_ratio"
            )));
        }

        let to_point = |c: &[i32]| -> Coords {
            let mut x: Coords = c.iter().map(|&v| v as f64 * h).collect();
            x[dim - 1] = c[dim - 1] as f64 * vstep;
            x
        };

        let mut base: Vec<Vec<i32>> = Vec::new();
        let mut idx: Vec<i32> = bounds.iter().map(|b| -b).collect();
        let limit = outer * (1.0 + RADIUS_SLACK);
        loop {
            let x = to_point(&idx);
            if gauge_of(n, &x) <= limit {
                base.push(idx.clone());
            }
            let mut k = dim;
            let mut done = true;
            while k > 0 {
                k -= 1;
                idx[k] += 1;
                if idx[k] <= bounds[k] {
                    done = false;
                    break;
                }
                idx[k] = -bounds[k];
            }
            if done {
                break;
            }
        }

        let mut all: Vec<Vec<i32>> = base.clone();
        if pad > 0 {
            let inside: std::collections::HashSet<Vec<i32>> = base.iter().cloned().collect();
            let mut extra: std::collections::BTreeSet<Vec<i32>> = Default::default();
            let span = (2 * pad + 1) as usize;
            let combos = span.pow(dim as u32);
            for c in &base {
                for m in 0..combos {
                    let mut rem = m;
                    let mut q = c.clone();
                    for v in q.iter_mut() {
                        *v += (rem % span) as i32 - pad;
                        rem /= span;
                    }
                    if q.iter().zip(&bounds).all(|(v, b)| v.abs() <= *b) && !inside.contains(&q) {
                        extra.insert(q);
                    }
                }
            }
            all.extend(extra);
            all.sort();
        }

        let mut grid = SpaceTimeGrid {
            h,
            vertical_step: vstep,
            nodes: Vec::with_capacity(all.len()),
            lattice: Vec::with_capacity(all.len() * dim),
            interior_mask: Vec::with_capacity(all.len()),
            interior: Vec::new(),
            times: (0..=slabs).map(|k| k as f64 * spec.delta_t).collect(),
            bounds,
            lookup: HashMap::with_capacity(all.len()),
            spec,
        };
        let radius = grid.spec.domain_radius * (1.0 - RADIUS_SLACK);
        for (i, c) in all.iter().enumerate() {
            let x = to_point(c);
            let is_interior = gauge_of(n, &x) < radius;
            grid.lookup.insert(grid.key(c).expect("inside bounds"), i as u32);
            grid.lattice.extend_from_slice(c);
            grid.nodes.push(HPoint::from_coords(n, x));
            grid.interior_mask.push(is_interior);
            if is_interior {
                grid.interior.push(i as u32);
            }
        }
        if grid.interior.is_empty() {
            return Err(Error::InvalidGrid("the lattice has no interior nodes".into()));
        }
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn dim(&self) -> usize {
        2 * self.spec.n + 1
    }

    pub fn slab_count(&self) -> usize {
        self.times.len()
    }

    pub fn stats(&self) -> GridStats {
        GridStats {
            nodes: self.nodes.len(),
            interior: self.interior.len(),
            collar: self.nodes.len() - self.interior.len(),
            slabs: self.times.len(),
            h: self.h,
            vertical_step: self.vertical_step,
        }
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(2 * self.spec.n as i32) * self.vertical_step
    }

    pub fn lattice_coords(&self, node: usize) -> &[i32] {
        let d = self.dim();
        &self.lattice[node * d..(node + 1) * d]
    }

    fn key(&self, c: &[i32]) -> Option<i64> {
        let mut key: i64 = 0;
        for (v, b) in c.iter().zip(&self.bounds) {
            if v.abs() > *b {
                return None;
            }
            key = key * (2 * *b as i64 + 1) + (*v + *b) as i64;
        }
        Some(key)
    }

    /// Node index of a lattice point, if the point belongs to the grid.
    pub fn find(&self, c: &[i32]) -> Option<u32> {
        self.key(c).and_then(|k| self.lookup.get(&k).copied())
    }

    /// Lattice product `c ∘ o` in integer coordinates.
    fn compose_lattice(&self, c: &[i32], o: &[i32], out: &mut [i32]) {
        let n = self.spec.n;
        let d = 2 * n;
        let mut twist = 0i32;
        for i in 0..n {
            twist += o[i] * c[n + i] - c[i] * o[n + i];
        }
        for k in 0..d {
            out[k] = c[k] + o[k];
        }
        out[d] = c[d] + o[d] + twist;
    }

    /// Corners and weights of the multilinear interpolant at `x`.
    fn multilinear_stencil(&self, x: &[f64]) -> Option<Vec<(u32, f64)>> {
        let dim = self.dim();
        let mut base = vec![0i32; dim];
        let mut frac = vec![0.0; dim];
        for k in 0..dim {
            let step = if k + 1 == dim { self.vertical_step } else { self.h };
            let s = x[k] / step;
            let mut f = s.floor();
            let mut r = s - f;
            // Snap to the node when within roundoff, so nodes reproduce exactly.
            if r > 1.0 - 1e-12 {
                f += 1.0;
                r = 0.0;
            } else if r < 1e-12 {
                r = 0.0;
            }
            base[k] = f as i32;
            frac[k] = r;
        }
        let mut out = Vec::with_capacity(1 << dim);
        let mut corner = vec![0i32; dim];
        for mask in 0..(1usize << dim) {
            let mut w = 1.0;
            for k in 0..dim {
                let up = (mask >> k) & 1 == 1;
                corner[k] = base[k] + up as i32;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if w == 0.0 {
                continue;
            }
            out.push((self.find(&corner)?, w));
        }
        Some(out)
    }
}

/// Solver settings.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub params: MvpParams,
    pub fp_tolerance: f64,
    pub max_inner_iters: usize,
    pub interpolation: Interpolation,
    /// Polar rule used by the multilinear scheme.
    pub interpolation_resolution: Resolution,
}

impl SolverConfig {
    pub fn new(params: MvpParams) -> Self {
        Self {
            params,
            fp_tolerance: 1e-10,
            max_inner_iters: 500,
            interpolation: Interpolation::Lattice,
            interpolation_resolution: Resolution::new(4, 6, 4),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fp_tolerance > 0.0) {
            return invalid(format!("fp_tolerance must be positive, got {}", self.fp_tolerance));
        }
        if self.max_inner_iters < 1 {
            return invalid("max_inner_iters must be at least 1");
        }
        Ok(())
    }
}

/// Weights `c_j` for lag `j = 0..` of the piecewise-linear-in-time average
/// over `[t_k - window, t_k]`.
pub fn window_weights(window: f64, delta_t: f64) -> Vec<f64> {
    let lambda = window / delta_t;
    let last = lambda.ceil() as usize;
    // ∫ over τ ∈ [a, b] of the hat centered at j.
    let hat = |j: f64, a: f64, b: f64| -> f64 {
        let mut total = 0.0;
        let (l0, l1) = ((j - 1.0).max(a), j.min(b));
        if l1 > l0 {
            // 1 - (j - τ) on the left half.
            total += (l1 - l0) * (1.0 - j + 0.5 * (l0 + l1));
        }
        let (r0, r1) = (j.max(a), (j + 1.0).min(b));
        if r1 > r0 {
            total += (r1 - r0) * (1.0 + j - 0.5 * (r0 + r1));
        }
        total
    };
    (0..=last)
        .map(|j| hat(j as f64, 0.0, lambda) / lambda)
        .collect()
}

/// How the discrete ψ-measure was matched to the second moment `M(n) ε²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub offsets: usize,
    /// Diagonal second moment of the raw lattice ψ-measure, divided by ε².
    pub lattice_moment: f64,
    pub target: f64,
    /// `center` or `shell`: the measure mixed in.
    pub mixed_with: String,
    pub mix_weight: f64,
}

enum MeanStencil {
    /// Weights aligned with the neighbor table; the same for every node.
    Shared(Vec<f64>),
    /// Per-node sparse rows.
    Sparse {
        starts: Vec<usize>,
        idx: Vec<u32>,
        weights: Vec<f64>,
    },
}

/// The discrete update `v ↦ Σ_j c_j (α · midrange + β · mean)(slab_{k-j})` at
/// interior nodes.
pub struct UpdateOperator {
    alpha: f64,
    beta: f64,
    n_interior: usize,
    interior: Vec<u32>,
    n_offsets: usize,
    neighbors: Vec<u32>,
    mean: MeanStencil,
    pub time_weights: Vec<f64>,
    pub calibration: Option<Calibration>,
}

impl fmt::Debug for UpdateOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UpdateOperator")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("n_interior", &self.n_interior)
            .field("n_offsets", &self.n_offsets)
            .field("time_weights", &self.time_weights)
            .field("calibration", &self.calibration)
            .finish()
    }
}

/// Lattice offsets of the closed ball `B̄_ε(0)`: `|a|⁴ + 4 j² ≤ k⁴`.
fn ball_offsets(n: usize, k: usize) -> Vec<Vec<i32>> {
    let k = k as i64;
    let k4 = k.pow(4);
    let dim = 2 * n + 1;
    let mut out = Vec::new();
    let mut idx = vec![-k; dim];
    let vmax = k * k / 2;
    idx[dim - 1] = -vmax;
    loop {
        let r2: i64 = idx[..dim - 1].iter().map(|v| v * v).sum();
        let j = idx[dim - 1];
        if r2 * r2 + 4 * j * j <= k4 {
            out.push(idx.iter().map(|&v| v as i32).collect());
        }
        let mut d = dim;
        let mut done = true;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            let top = if d + 1 == dim { vmax } else { k };
            if idx[d] <= top {
                done = false;
                break;
            }
            idx[d] = if d + 1 == dim { -vmax } else { -k };
        }
        if done {
            break;
        }
    }
    out
}

/// ψ-weights on the lattice ball, mixed with the center or with the shell
/// `±ε e_i` so that the diagonal second moment equals `M(n) ε²`.
fn calibrated_lattice_weights(
    n: usize,
    k: usize,
    offsets: &[Vec<i32>],
    target: f64,
) -> (Vec<f64>, Calibration) {
    let kf = k as f64;
    let mut w: Vec<f64> = offsets
        .iter()
        .map(|o| {
            let x: Vec<f64> = o
                .iter()
                .enumerate()
                .map(|(d, &v)| if d == 2 * n { 2.0 * v as f64 } else { v as f64 })
                .collect();
            psi_of(n, &x)
        })
        .collect();
    let total = pairwise_sum(&w);
    for v in w.iter_mut() {
        *v /= total;
    }
    // Second moment of y_1 in units of ε².
    let moment: f64 = offsets
        .iter()
        .zip(&w)
        .map(|(o, wi)| wi * (o[0] as f64 / kf).powi(2))
        .sum();
    let shell_moment = 1.0 / (2.0 * n as f64);
    let (mixed_with, theta) = if moment > target {
        let theta = 1.0 - target / moment;
        for v in w.iter_mut() {
            *v *= 1.0 - theta;
        }
        let center = offsets.iter().position(|o| o.iter().all(|&v| v == 0)).unwrap();
        w[center] += theta;
        ("center", theta)
    } else {
        let theta = (target - moment) / (shell_moment - moment);
        for v in w.iter_mut() {
            *v *= 1.0 - theta;
        }
        let per = theta / (4 * n) as f64;
        for (o, wi) in offsets.iter().zip(w.iter_mut()) {
            let nonzero: Vec<usize> = (0..o.len()).filter(|&d| o[d] != 0).collect();
            if nonzero.len() == 1 && nonzero[0] < 2 * n && o[nonzero[0]].unsigned_abs() as usize == k {
                *wi += per;
            }
        }
        ("shell", theta)
    };
    let calibration = Calibration {
        offsets: offsets.len(),
        lattice_moment: moment,
        target,
        mixed_with: mixed_with.to_string(),
        mix_weight: theta,
    };
    (w, calibration)
}

impl UpdateOperator {
    pub fn build(grid: &SpaceTimeGrid, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let params = &config.params;
        let n = grid.n();
        if params.n != n {
            return invalid(format!("parameters for H^{}, grid in H^{n}", params.n));
        }
        if (params.epsilon - grid.spec.epsilon).abs() > 1e-12 * grid.spec.epsilon {
            return invalid(format!(
                "parameter eps {} differs from grid eps {}",
                params.epsilon, grid.spec.epsilon
            ));
        }
        let window = params.window_length();
        if grid.spec.delta_t > window * (1.0 + RADIUS_SLACK) {
            return Err(Error::InvalidGrid(format!(
                "delta_t {} exceeds the time window {window}",
                grid.spec.delta_t
            )));
        }
        let dim = grid.dim();
        let offsets = ball_offsets(n, grid.spec.lattice_ratio);
        let n_off = offsets.len();
        let n_interior = grid.interior.len();

        let mut neighbors = vec![0u32; n_interior * n_off];
        let mut missing: Option<usize> = None;
        neighbors
            .par_chunks_mut(n_off)
            .zip(grid.interior.par_iter())
            .for_each(|(row, &node)| {
                let c = grid.lattice_coords(node as usize);
                let mut q = vec![0i32; dim];
                for (slot, o) in row.iter_mut().zip(&offsets) {
                    grid.compose_lattice(c, o, &mut q);
                    *slot = grid.find(&q).unwrap_or(u32::MAX);
                }
            });
        if let Some(pos) = neighbors.iter().position(|&v| v == u32::MAX) {
            missing = Some(grid.interior[pos / n_off] as usize);
        }
        if let Some(node) = missing {
            return Err(Error::InvalidGrid(format!(
                "the eps-ball of interior node {:?} leaves the grid; widen the collar",
                grid.nodes[node].coords()
            )));
        }

        let (mean, calibration) = match config.interpolation {
            Interpolation::Lattice => {
                let (w, cal) =
                    calibrated_lattice_weights(n, grid.spec.lattice_ratio, &offsets, params.m);
                (MeanStencil::Shared(w), Some(cal))
            }
            Interpolation::Multilinear => {
                let rule = build_rule(n, params.epsilon, config.interpolation_resolution.clone())?;
                let norm = rule.weighted_volume();
                let rows: Vec<Option<Vec<(u32, f64)>>> = grid
                    .interior
                    .par_iter()
                    .map(|&node| {
                        let center = grid.nodes[node as usize].coords();
                        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
                        let mut y: Coords = smallvec::smallvec![0.0; dim];
                        for nd in &rule.nodes {
                            let w = nd.weight * nd.psi / norm;
                            if w == 0.0 {
                                continue;
                            }
                            compose_into(n, center, nd.point.coords(), &mut y);
                            for (idx, cw) in grid.multilinear_stencil(&y)? {
                                *acc.entry(idx).or_insert(0.0) += w * cw;
                            }
                        }
                        Some(acc.into_iter().collect())
                    })
                    .collect();
                let mut starts = Vec::with_capacity(n_interior + 1);
                let mut idx = Vec::new();
                let mut weights = Vec::new();
                starts.push(0);
                for (row, &node) in rows.into_iter().zip(&grid.interior) {
                    let row = row.ok_or_else(|| {
                        Error::InvalidGrid(format!(
                            "multilinear stencil of interior node {:?} leaves the grid; raise padding",
                            grid.nodes[node as usize].coords()
                        ))
                    })?;
                    for (i, w) in row {
                        idx.push(i);
                        weights.push(w);
                    }
                    starts.push(idx.len());
                }
                (MeanStencil::Sparse { starts, idx, weights }, None)
            }
        };

        Ok(Self {
            alpha: params.alpha,
            beta: params.beta,
            n_interior,
            interior: grid.interior.clone(),
            n_offsets: n_off,
            neighbors,
            mean,
            time_weights: window_weights(window, grid.spec.delta_t),
            calibration,
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    /// `α · midrange + β · mean` of one slab at interior node `i`.
    ///
    /// Averages are formed as `u_i + Σ w (u_j - u_i)` and the blend as
    /// `mean + α (midrange - mean)`, so constant data come back bit-exactly.
    #[inline]
    fn spatial_at(&self, slab: &[f64], i: usize) -> f64 {
        let row = &self.neighbors[i * self.n_offsets..(i + 1) * self.n_offsets];
        let mid = if self.alpha != 0.0 {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for &j in row {
                let v = slab[j as usize];
                hi = hi.max(v);
                lo = lo.min(v);
            }
            lo + 0.5 * (hi - lo)
        } else {
            0.0
        };
        if self.beta == 0.0 {
            return mid;
        }
        let center = slab[self.interior[i] as usize];
        let spread = match &self.mean {
            MeanStencil::Shared(w) => row
                .iter()
                .zip(w)
                .map(|(&j, wj)| wj * (slab[j as usize] - center))
                .sum::<f64>(),
            MeanStencil::Sparse { starts, idx, weights } => idx[starts[i]..starts[i + 1]]
                .iter()
                .zip(&weights[starts[i]..starts[i + 1]])
                .map(|(&j, wj)| wj * (slab[j as usize] - center))
                .sum::<f64>(),
        };
        let mean = center + spread;
        if self.alpha == 0.0 {
            mean
        } else {
            mean + self.alpha * (mid - mean)
        }
    }

    /// Spatial operator on every interior node of one slab.
    pub fn spatial(&self, slab: &[f64]) -> Vec<f64> {
        (0..self.n_interior)
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| self.spatial_at(slab, i))
            .collect()
    }

    /// Full update at interior nodes; `lags[j]` is the slab at lag `j`. Lags
    /// past the end of the slice reuse its last entry.
    pub fn apply(&self, lags: &[&[f64]]) -> Vec<f64> {
        assert!(!lags.is_empty());
        let per_lag: Vec<Vec<f64>> = (0..self.time_weights.len())
            .map(|j| self.spatial(lags[j.min(lags.len() - 1)]))
            .collect();
        (0..self.n_interior)
            .map(|i| {
                let anchor = per_lag[1][i];
                let mut out = 0.0;
                for (j, c) in self.time_weights.iter().enumerate() {
                    if j != 1 {
                        out += c * (per_lag[j][i] - anchor);
                    }
                }
                anchor + out
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    Lateral,
    Computed,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Initial => "initial",
            Provenance::Lateral => "lateral",
            Provenance::Computed => "computed",
        }
    }
}

/// Inner-iteration record of one slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabDiagnostics {
    pub k: usize,
    pub t: f64,
    pub iterations: usize,
    /// Max-change after each sweep.
    pub history: Vec<f64>,
    pub monotone: bool,
}

/// Solution values on every node of every slab.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    grid: Arc<SpaceTimeGrid>,
    pub values: Vec<Vec<f64>>,
    pub provenance: Vec<Vec<Provenance>>,
    pub diagnostics: Vec<SlabDiagnostics>,
    pub calibration: Option<Calibration>,
}

/// One CSV row of an exported field.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow<'a> {
    pub k: usize,
    pub t: f64,
    pub coords: &'a [f64],
    pub value: f64,
    pub provenance: Provenance,
}

impl DiscreteField {
    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.grid
    }

    /// Values at interior nodes of slab `k`, in the order of `grid.interior`.
    pub fn interior_values(&self, k: usize) -> Vec<f64> {
        self.grid
            .interior
            .iter()
            .map(|&i| self.values[k][i as usize])
            .collect()
    }

    /// Multilinear in space, linear in time.
    pub fn interpolate(&self, t: f64, x: &HPoint) -> Result<f64> {
        let g = &self.grid;
        if x.n() != g.n() {
            return invalid("point and grid live on different groups");
        }
        let last = g.times.len() - 1;
        let t_end = g.times[last];
        if !(t >= -RADIUS_SLACK) || t > t_end * (1.0 + RADIUS_SLACK) + RADIUS_SLACK {
            return Err(Error::Domain(format!("t = {t} is outside [0, {t_end}]")));
        }
        let s = (t / g.spec.delta_t).clamp(0.0, last as f64);
        let mut k0 = s.floor() as usize;
        let mut r = s - k0 as f64;
        if r > 1.0 - 1e-12 {
            k0 += 1;
            r = 0.0;
        }
        let k0 = k0.min(last);
        let stencil = g.multilinear_stencil(x.coords()).ok_or_else(|| {
            Error::Domain(format!("{:?} lies outside the grid", x.coords()))
        })?;
        let at = |k: usize| -> f64 {
            stencil
                .iter()
                .map(|&(i, w)| w * self.values[k][i as usize])
                .sum()
        };
        if r == 0.0 || k0 == last {
            Ok(at(k0))
        } else {
            Ok((1.0 - r) * at(k0) + r * at(k0 + 1))
        }
    }

    /// The interpolant as a field on the grid's cylinder.
    pub fn interpolant(&self, label: impl Into<String>) -> ScalarField {
        let me = self.clone();
        ScalarField::new(self.grid.n(), label, move |t, x| {
            me.interpolate(t, x).unwrap_or(f64::NAN)
        })
    }

    pub fn export_rows(&self) -> impl Iterator<Item = ExportRow<'_>> {
        let g = &self.grid;
        (0..g.times.len()).flat_map(move |k| {
            (0..g.nodes.len()).map(move |i| ExportRow {
                k,
                t: g.times[k],
                coords: g.nodes[i].coords(),
                value: self.values[k][i],
                provenance: self.provenance[k][i],
            })
        })
    }
}

fn data_value(f: &ScalarField, t: f64, x: &HPoint, what: &str) -> Result<f64> {
    f.value(t, x).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("{what} data: {msg}")),
        other => other,
    })
}

/// Marches the slabs `k = 1..K`, solving each implicit slab by Jacobi sweeps.
pub fn solve(
    grid: &Arc<SpaceTimeGrid>,
    config: &SolverConfig,
    initial: &ScalarField,
    lateral: &ScalarField,
) -> Result<DiscreteField> {
    let op = UpdateOperator::build(grid, config)?;
    solve_with(grid, config, &op, initial, lateral)
}

/// [`solve`] with a prebuilt operator.
pub fn solve_with(
    grid: &Arc<SpaceTimeGrid>,
    config: &SolverConfig,
    op: &UpdateOperator,
    initial: &ScalarField,
    lateral: &ScalarField,
) -> Result<DiscreteField> {
    let n = grid.n();
    if initial.n() != n || lateral.n() != n {
        return invalid("data fields and grid live on different groups");
    }
    let n_nodes = grid.nodes.len();
    let n_slabs = grid.times.len();
    let lags = op.time_weights.len();

    let slab0: Vec<f64> = grid
        .nodes
        .par_iter()
        .map(|x| data_value(initial, 0.0, x, "initial"))
        .collect::<Result<_>>()?;
    let mut values = vec![slab0];
    let mut provenance = vec![vec![Provenance::Initial; n_nodes]];
    let mut cache: Vec<Option<Vec<f64>>> = vec![Some(op.spatial(&values[0]))];
    let mut diagnostics = Vec::with_capacity(n_slabs.saturating_sub(1));

    for k in 1..n_slabs {
        let t = grid.times[k];
        let mut slab = vec![0.0; n_nodes];
        let mut prov = vec![Provenance::Lateral; n_nodes];
        let lateral_vals: Vec<(usize, f64)> = (0..n_nodes)
            .into_par_iter()
            .filter(|&i| !grid.interior_mask[i])
            .map(|i| Ok((i, data_value(lateral, t, &grid.nodes[i], "lateral")?)))
            .collect::<Result<_>>()?;
        for (i, v) in lateral_vals {
            slab[i] = v;
        }
        for &node in &grid.interior {
            let node = node as usize;
            let prev = values[k - 1][node];
            slab[node] = if k >= 2 {
                2.0 * prev - values[k - 2][node]
            } else {
                prev
            };
            prov[node] = Provenance::Computed;
        }

        // Lag 1 anchors the time average: u = a + Σ_{j≠1} c_j (S_j - a).
        let anchor = cache[k - 1].as_ref().expect("cached slab operator").clone();
        let mut history_part = vec![0.0; op.n_interior];
        for (j, &c) in op.time_weights.iter().enumerate().skip(2) {
            if c == 0.0 {
                continue;
            }
            let src = k.saturating_sub(j);
            let cached = cache[src].as_ref().expect("cached slab operator");
            for ((h, v), a) in history_part.iter_mut().zip(cached).zip(&anchor) {
                *h += c * (v - a);
            }
        }
        let c0 = op.time_weights[0];

        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..config.max_inner_iters {
            let fresh: Vec<f64> = (0..op.n_interior)
                .into_par_iter()
                .with_min_len(1024)
                .map(|i| anchor[i] + (history_part[i] + c0 * (op.spatial_at(&slab, i) - anchor[i])))
                .collect();
            let mut change: f64 = 0.0;
            for (&node, v) in grid.interior.iter().zip(&fresh) {
                let node = node as usize;
                change = change.max((v - slab[node]).abs());
                slab[node] = *v;
            }
            if !change.is_finite() {
                return Err(Error::Domain(format!("non-finite values at slab {k}")));
            }
            history.push(change);
            if change < config.fp_tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                slab: k,
                time: t,
                iterations: history.len(),
                last_change: *history.last().unwrap_or(&f64::NAN),
                history,
            });
        }
        let monotone = history.windows(2).all(|w| w[1] <= w[0]);
        diagnostics.push(SlabDiagnostics {
            k,
            t,
            iterations: history.len(),
            history,
            monotone,
        });
        cache.push(Some(op.spatial(&slab)));
        if k >= lags {
            let stale = k + 1 - lags;
            if stale >= 1 {
                cache[stale] = None;
            }
        }
        values.push(slab);
        provenance.push(prov);
    }

    Ok(DiscreteField {
        grid: Arc::clone(grid),
        values,
        provenance,
        diagnostics,
        calibration: op.calibration.clone(),
    })
}

/// Node-wise errors against a reference field at one slab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabError {
    pub k: usize,
    pub t: f64,
    pub max_error: f64,
    /// `(Σ e² · cell volume)^{1/2}` over interior nodes.
    pub l2_error: f64,
}

/// Errors over interior nodes, slab by slab.
pub fn error_report(field: &DiscreteField, reference: &ScalarField) -> Result<Vec<SlabError>> {
    let g = field.grid();
    let cell = g.cell_volume();
    (0..g.times.len())
        .map(|k| {
            let t = g.times[k];
            let errs: Vec<f64> = g
                .interior
                .par_iter()
                .map(|&i| {
                    let i = i as usize;
                    Ok((field.values[k][i] - reference.value(t, &g.nodes[i])?).abs())
                })
                .collect::<Result<_>>()?;
            let sq: Vec<f64> = errs.iter().map(|e| e * e * cell).collect();
            Ok(SlabError {
                k,
                t,
                max_error: errs.iter().cloned().fold(0.0, f64::max),
                l2_error: pairwise_sum(&sq).sqrt(),
            })
        })
        .collect()
}

/// Largest `|u_k - update(u)_k|` over interior nodes and slabs `k ≥ 1`.
pub fn update_residual(field: &DiscreteField, op: &UpdateOperator) -> f64 {
    let g = field.grid();
    let mut worst: f64 = 0.0;
    for k in 1..g.times.len() {
        let lags: Vec<&[f64]> = (0..op.time_weights.len())
            .map(|j| field.values[k.saturating_sub(j)].as_slice())
            .collect();
        let updated = op.apply(&lags);
        for (v, &node) in updated.iter().zip(&g.interior) {
            worst = worst.max((v - field.values[k][node as usize]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::PValue;
    use crate::quadrature::m_constant;

    fn small_spec(eps: f64) -> GridSpec {
        GridSpec {
            domain_radius: 0.5,
            t_final: 2.0 * eps * eps,
            ..GridSpec::desk(1, eps)
        }
    }

    #[test]
    fn window_weights_are_trapezoidal() {
        let w = window_weights(0.02, 0.01);
        assert_eq!(w.len(), 3);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15 && (w[2] - 0.25).abs() < 1e-15);
        let w = window_weights(1.0, 0.3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(w.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn ball_offsets_for_ratio_two() {
        let o = ball_offsets(1, 2);
        assert_eq!(o.len(), 33);
        assert!(o.contains(&vec![0, 0, 2]) && o.contains(&vec![0, 0, -2]));
        assert!(!o.contains(&vec![2, 0, 1]));
    }

    #[test]
    fn calibration_matches_second_moment() {
        for (n, k) in [(1, 2), (1, 3), (2, 2)] {
            let offs = ball_offsets(n, k);
            let target = m_constant(n).unwrap();
            let (w, _) = calibrated_lattice_weights(n, k, &offs, target);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for d in 0..2 * n {
                let m: f64 = offs.iter().zip(&w).map(|(o, wi)| wi * (o[d] as f64 / k as f64).powi(2)).sum();
                assert!((m - target).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lattice_is_closed_under_the_group_law() {
        let grid = SpaceTimeGrid::new(small_spec(0.2)).unwrap();
        let c = [3, -2, 5];
        let o = [1, 1, -1];
        let mut q = [0; 3];
        grid.compose_lattice(&c, &o, &mut q);
        let x = HPoint::new(1, &[3.0 * grid.h, -2.0 * grid.h, 5.0 * grid.vertical_step]).unwrap();
        let y = HPoint::new(1, &[grid.h, grid.h, -grid.vertical_step]).unwrap();
        let z = x.compose(&y).unwrap();
        assert!((z.coords()[2] - q[2] as f64 * grid.vertical_step).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        let mut s = small_spec(0.2);
        s.collar = 0.1;
        assert!(matches!(SpaceTimeGrid::new(s), Err(Error::InvalidGrid(_))));
        let mut s = small_spec(0.2);
        s.delta_t = 0.05;
        assert!(matches!(SpaceTimeGrid::new(s), Err(Error::InvalidGrid(_))));
        let mut s = small_spec(0.2);
        s.t_final = 0.03;
        assert!(matches!(SpaceTimeGrid::new(s), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn constants_are_fixed_points() {
        let grid = Arc::new(SpaceTimeGrid::new(small_spec(0.2)).unwrap());
        for p in [PValue::Finite(2.0), PValue::Finite(4.0), PValue::Infinity] {
            let config = SolverConfig::new(MvpParams::new(1, p, 0.2).unwrap());
            let c = ScalarField::constant(1, 0.75);
            let out = solve(&grid, &config, &c, &c).unwrap();
            assert!(out.values.iter().flatten().all(|&v| v == 0.75));
        }
    }

    #[test]
    fn interpolant_reproduces_nodes() {
        let grid = Arc::new(SpaceTimeGrid::new(small_spec(0.2)).unwrap());
        let config = SolverConfig::new(MvpParams::new(1, PValue::Finite(2.0), 0.2).unwrap());
        let data = ScalarField::spatial(1, "lin", |x| x.coords()[0] - 0.5 * x.coords()[2]);
        let out = solve(&grid, &config, &data, &data).unwrap();
        let r = out.interpolant("self");
        for e in error_report(&out, &r).unwrap() {
            assert_eq!(e.max_error, 0.0);
        }
    }

    #[test]
    fn multilinear_scheme_keeps_constants() {
        let mut spec = small_spec(0.2);
        spec.padding = 2;
        let grid = Arc::new(SpaceTimeGrid::new(spec).unwrap());
        let mut config = SolverConfig::new(MvpParams::new(1, PValue::Finite(3.0), 0.2).unwrap());
        config.interpolation = Interpolation::Multilinear;
        let c = ScalarField::constant(1, -1.25);
        let out = solve(&grid, &config, &c, &c).unwrap();
        assert!(out.values.iter().flatten().all(|&v| (v + 1.25).abs() < 1e-13));
    }

    #[test]
    fn too_few_iterations_is_a_convergence_error() {
        let grid = Arc::new(SpaceTimeGrid::new(small_spec(0.2)).unwrap());
        let mut config = SolverConfig::new(MvpParams::new(1, PValue::Finite(2.0), 0.2).unwrap());
        config.max_inner_iters = 1;
        let u = crate::fields::builtin_field(crate::fields::HEAT_REFERENCE, 1).unwrap();
        match solve(&grid, &config, &u, &u) {
            Err(Error::Convergence { slab, history, .. }) => {
                assert_eq!(slab, 1);
                assert_eq!(history.len(), 1);
            }
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }
}
