//! ψ-weighted integration over Koranyi balls in polar coordinates, the
//! second-moment constants `M(n)` and extremum search over closed balls.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{jet, ScalarField};
use crate::error::{invalid, Error, Result};
use crate::heis::{
    compose_into, gauge_of, polar_into, psi_of, sphere_density, Coords, HPoint, PolarCoord,
};
use crate::sum::pairwise_sum;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "need at least one node");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped onto `(a, b)`.
pub fn gauss_legendre_on(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|xi| mid + half * xi).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

/// Node counts of a tensor-product ball rule.
///
/// `n_theta` holds either one count shared by every sphere angle or one count
/// per angle `θ_1..θ_{2n-1}`. The last angle gets a periodic trapezoidal rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub n_rho: usize,
    pub n_phi: usize,
    pub n_theta: Vec<usize>,
}

impl Resolution {
    pub fn new(n_rho: usize, n_phi: usize, n_theta: usize) -> Self {
        Self {
            n_rho,
            n_phi,
            n_theta: vec![n_theta],
        }
    }

    pub fn per_angle(n_rho: usize, n_phi: usize, n_theta: Vec<usize>) -> Self {
        Self {
            n_rho,
            n_phi,
            n_theta,
        }
    }

    /// Defaults that keep the rule below a million nodes. Angles carrying a
    /// higher power of `sin θ` in the Jacobian get more nodes.
    pub fn default_for(n: usize) -> Self {
        match n {
            1 => Self::new(24, 24, 24),
            2 => Self::per_angle(16, 16, vec![14, 12, 12]),
            3 => Self::per_angle(5, 9, vec![11, 9, 8, 7, 4]),
            _ => {
                let mut th: Vec<usize> = (1..2 * n - 1).map(|k| (2 * n + 4 - k).min(8)).collect();
                th.push(4);
                Self::per_angle(5, 6, th)
            }
        }
    }

    /// Count used for angle `k` (0-based) in a group with `n_angles` angles.
    pub fn theta_count(&self, k: usize) -> usize {
        if self.n_theta.len() == 1 {
            self.n_theta[0]
        } else {
            self.n_theta[k]
        }
    }

    fn map(&self, f: impl Fn(usize) -> usize) -> Self {
        Self::per_angle(
            f(self.n_rho),
            f(self.n_phi),
            self.n_theta.iter().map(|&k| f(k)).collect(),
        )
    }

    pub fn doubled(&self) -> Self {
        self.map(|k| 2 * k)
    }

    pub fn halved(&self) -> Self {
        self.map(|k| (k / 2).max(2))
    }

    pub fn node_count(&self, n: usize) -> usize {
        let angles: usize = (0..2 * n - 1).map(|k| self.theta_count(k)).product();
        self.n_rho * self.n_phi * angles
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.n_theta.len() != 1 && self.n_theta.len() != 2 * n - 1 {
            return invalid(format!(
                "expected 1 or {} angle counts, got {}",
                2 * n - 1,
                self.n_theta.len()
            ));
        }
        if self.n_rho < 2 || self.n_phi < 2 || self.n_theta.iter().any(|&k| k < 2) {
            return invalid(format!("every resolution count must be at least 2, got {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RuleNode {
    pub polar: PolarCoord,
    pub point: HPoint,
    /// Quadrature weight times the polar Jacobian.
    pub weight: f64,
    pub psi: f64,
}

/// Tensor-product rule on the ball `B_ε(0)`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub n: usize,
    pub epsilon: f64,
    pub resolution: Resolution,
    pub nodes: Vec<RuleNode>,
    weighted: Vec<f64>,
    normalizer: f64,
}

/// Builds the polar tensor-product rule: Gauss–Legendre in `ρ`, `φ` and
/// `θ_1..θ_{2n-2}`, periodic trapezoid in `θ_{2n-1}`.
pub fn build_rule(n: usize, epsilon: f64, resolution: Resolution) -> Result<QuadratureRule> {
    if n == 0 {
        return invalid("group index n must be at least 1");
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid(format!("ball radius must be positive, got {epsilon}"));
    }
    resolution.validate(n)?;
    let (rho_x, rho_w) = gauss_legendre_on(resolution.n_rho, 0.0, epsilon);
    let (phi_x, phi_w) = gauss_legendre_on(resolution.n_phi, 0.0, PI);
    let n_angles = 2 * n - 1;
    let counts: Vec<usize> = (0..n_angles).map(|k| resolution.theta_count(k)).collect();
    let angle_rules: Vec<(Vec<f64>, Vec<f64>)> = counts
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            if k + 1 == n_angles {
                let x = (0..m).map(|i| 2.0 * PI * i as f64 / m as f64).collect();
                (x, vec![2.0 * PI / m as f64; m])
            } else {
                gauss_legendre_on(m, 0.0, PI)
            }
        })
        .collect();

    // Enumerate angle tuples once; the sphere density does not depend on ρ, φ.
    let mut angle_sets: Vec<(Vec<f64>, f64)> = Vec::with_capacity(counts.iter().product());
    let mut idx = vec![0usize; n_angles];
    loop {
        let mut thetas = Vec::with_capacity(n_angles);
        let mut w = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            thetas.push(angle_rules[k].0[i]);
            w *= angle_rules[k].1[i];
        }
        w *= sphere_density(n, &thetas);
        angle_sets.push((thetas, w));
        let mut k = n_angles;
        let mut done = true;
        while k > 0 {
            k -= 1;
            idx[k] += 1;
            if idx[k] < counts[k] {
                done = false;
                break;
            }
            idx[k] = 0;
        }
        if done {
            break;
        }
    }

    let mut nodes = Vec::with_capacity(resolution.node_count(n));
    for (&rho, &wr) in rho_x.iter().zip(&rho_w) {
        let radial = wr * rho.powi(2 * n as i32 + 1);
        for (&phi, &wp) in phi_x.iter().zip(&phi_w) {
            let w_rp = radial * wp * phi.sin().powi(n as i32 - 1);
            for (thetas, wa) in &angle_sets {
                let mut c: Coords = smallvec::smallvec![0.0; 2 * n + 1];
                polar_into(n, rho, phi, thetas, &mut c);
                let psi = psi_of(n, &c);
                nodes.push(RuleNode {
                    polar: PolarCoord {
                        rho,
                        phi,
                        thetas: thetas.clone(),
                    },
                    point: HPoint::from_coords(n, c),
                    weight: w_rp * wa,
                    psi,
                });
            }
        }
    }
    let weighted: Vec<f64> = nodes.iter().map(|nd| nd.weight * nd.psi).collect();
    let normalizer = pairwise_sum(&weighted);
    Ok(QuadratureRule {
        n,
        epsilon,
        resolution,
        nodes,
        weighted,
        normalizer,
    })
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫_{B_ε} ψ dx`, the normalizer of the weighted mean.
    pub fn weighted_volume(&self) -> f64 {
        self.normalizer
    }

    /// Lebesgue volume of `B_ε`.
    pub fn volume(&self) -> f64 {
        let w: Vec<f64> = self.nodes.iter().map(|nd| nd.weight).collect();
        pairwise_sum(&w)
    }

    /// `∫_{B_ε} ψ dx` with an error estimate from the rule at half resolution.
    pub fn weighted_volume_with_error(&self) -> Result<(f64, f64)> {
        let coarse = build_rule(self.n, self.epsilon, self.resolution.halved())?;
        let v = self.weighted_volume();
        let floor = 64.0 * f64::EPSILON * v.abs();
        Ok((v, (v - coarse.weighted_volume()).abs().max(floor)))
    }

    /// `∫_{B_ε} ψ g dx` for a function of the ball offset.
    pub fn integrate_weighted<F>(&self, g: F) -> f64
    where
        F: Fn(&HPoint) -> f64 + Sync,
    {
        let terms: Vec<f64> = self
            .nodes
            .par_iter()
            .zip(self.weighted.par_iter())
            .with_min_len(512)
            .map(|(nd, w)| w * g(&nd.point))
            .collect();
        pairwise_sum(&terms)
    }
}

/// `⨍_{B_ε(center)} ψ(center⁻¹∘y) f(y) dy` with the weight evaluated at the
/// untranslated node offset.
pub fn weighted_ball_average(
    f: &(dyn Fn(&HPoint) -> f64 + Sync),
    center: &HPoint,
    rule: &QuadratureRule,
) -> Result<f64> {
    if center.n() != rule.n {
        return invalid(format!(
            "rule is for H^{}, center is in H^{}",
            rule.n,
            center.n()
        ));
    }
    let n = rule.n;
    let terms: Vec<f64> = rule
        .nodes
        .par_iter()
        .zip(rule.weighted.par_iter())
        .with_min_len(512)
        .map(|(nd, w)| {
            let mut c: Coords = smallvec::smallvec![0.0; 2 * n + 1];
            compose_into(n, center.coords(), nd.point.coords(), &mut c);
            w * f(&HPoint::from_coords(n, c))
        })
        .collect();
    let total = pairwise_sum(&terms);
    if !total.is_finite() {
        return Err(Error::Domain(format!(
            "integrand is not finite on the ball of radius {} around {:?}",
            rule.epsilon,
            center.coords()
        )));
    }
    Ok(total / rule.normalizer)
}

fn double_factorial(k: i64) -> f64 {
    let mut acc = 1.0;
    let mut j = k;
    while j > 1 {
        acc *= j as f64;
        j -= 2;
    }
    acc
}

/// Normalized ψ-weighted second moment `M(n)` of one horizontal coordinate
/// over the unit ball, in closed form.
pub fn m_constant(n: usize) -> Result<f64> {
    if n < 1 {
        return invalid(format!("M(n) needs n >= 1, got {n}"));
    }
    let k = n as i64;
    let ratio = double_factorial(k).powi(2) / (double_factorial(k + 1) * double_factorial(k - 1));
    let parity = if n % 2 == 1 { PI / 2.0 } else { 2.0 / PI };
    Ok((2.0 * n as f64 + 2.0) / (2.0 * n as f64 + 4.0) * ratio * parity / (2.0 * n as f64))
}

/// Normalized ψ-weighted moments of a ball rule around the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    pub epsilon: f64,
    /// Largest `|⨍ψ y_i| / ε` over `i = 1..2n`.
    pub odd_moments: f64,
    /// `|⨍ψ (y_{2n+1} + twist)| / ε²`; the twist vanishes at the origin.
    pub vertical_moment: f64,
    /// Largest `|⨍ψ y_i y_j| / ε²` over `i ≠ j`.
    pub cross_moments: f64,
    /// `⨍ψ y_i²` for each `i`.
    pub diagonal_moments: Vec<f64>,
    #[serde(rename = "M_estimate")]
    pub m_estimate: f64,
    #[serde(rename = "M_closed_form")]
    pub m_closed_form: f64,
}

impl MomentReport {
    pub fn relative_m_error(&self) -> f64 {
        ((self.m_estimate - self.m_closed_form) / self.m_closed_form).abs()
    }

    pub fn diagonal_spread(&self) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        let lo = self.diagonal_moments.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.diagonal_moments.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / e2
    }

    /// True when every vanishing moment is below `zero_tol` and every diagonal
    /// moment matches `M(n) ε²` to relative `rel_tol`.
    pub fn passes(&self, zero_tol: f64, rel_tol: f64) -> bool {
        let e2 = self.epsilon * self.epsilon;
        self.odd_moments <= zero_tol
            && self.vertical_moment <= zero_tol
            && self.cross_moments <= zero_tol
            && self
                .diagonal_moments
                .iter()
                .all(|d| ((d / e2 - self.m_closed_form) / self.m_closed_form).abs() <= rel_tol)
    }
}

pub fn moment_check(n: usize, epsilon: f64, rule: &QuadratureRule) -> Result<MomentReport> {
    if rule.n != n || (rule.epsilon - epsilon).abs() > 1e-14 * epsilon {
        return invalid(format!(
            "rule was built for (n={}, eps={}), not (n={n}, eps={epsilon})",
            rule.n, rule.epsilon
        ));
    }
    let m = 2 * n;
    let norm = rule.weighted_volume();
    let mean = |g: &(dyn Fn(&[f64]) -> f64 + Sync)| rule.integrate_weighted(|y| g(y.coords())) / norm;
    let e2 = epsilon * epsilon;
    let odd = (0..m)
        .map(|i| mean(&|y| y[i]).abs() / epsilon)
        .fold(0.0, f64::max);
    let vertical = mean(&|y| y[m]).abs() / e2;
    let mut cross: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            cross = cross.max(mean(&|y| y[i] * y[j]).abs() / e2);
        }
    }
    let diagonal: Vec<f64> = (0..m).map(|i| mean(&|y| y[i] * y[i])).collect();
    let m_estimate = diagonal.iter().sum::<f64>() / (m as f64 * e2);
    Ok(MomentReport {
        n,
        epsilon,
        odd_moments: odd,
        vertical_moment: vertical,
        cross_moments: cross,
        diagonal_moments: diagonal,
        m_estimate,
        m_closed_form: m_constant(n)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumMode {
    Max,
    Min,
}

/// Coarse polar scan plus compass refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub rho_steps: usize,
    pub phi_steps: usize,
    pub theta_steps: usize,
    /// Number of best coarse points refined.
    pub starts: usize,
    /// Refinement stops when every step (ρ/ε and angles) is below `tol`.
    pub tol: f64,
    pub max_evals: usize,
}

impl SearchConfig {
    pub fn default_for(n: usize) -> Self {
        match n {
            1 => Self {
                rho_steps: 8,
                phi_steps: 12,
                theta_steps: 24,
                starts: 4,
                tol: 1e-10,
                max_evals: 200_000,
            },
            2 => Self {
                rho_steps: 4,
                phi_steps: 8,
                theta_steps: 8,
                starts: 4,
                tol: 1e-10,
                max_evals: 400_000,
            },
            _ => Self {
                rho_steps: 3,
                phi_steps: 6,
                theta_steps: 6,
                starts: 4,
                tol: 1e-9,
                max_evals: 800_000,
            },
        }
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::default_for(1)
    }
}

/// Search state: `v[0] = ρ/ε ∈ [0,1]`, `v[1] = φ ∈ [0,π]`, then the sphere
/// angles; the last angle is periodic.
struct BallSearch<'a> {
    n: usize,
    center: &'a HPoint,
    epsilon: f64,
    objective: &'a dyn Fn(&HPoint) -> f64,
    evals: usize,
}

impl BallSearch<'_> {
    fn point(&self, v: &[f64]) -> HPoint {
        let n = self.n;
        let mut off: Coords = smallvec::smallvec![0.0; 2 * n + 1];
        polar_into(n, v[0] * self.epsilon, v[1], &v[2..], &mut off);
        let mut c: Coords = smallvec::smallvec![0.0; 2 * n + 1];
        compose_into(n, self.center.coords(), &off, &mut c);
        HPoint::from_coords(n, c)
    }

    fn eval(&mut self, v: &[f64]) -> f64 {
        self.evals += 1;
        (self.objective)(&self.point(v))
    }

    fn clamp(&self, k: usize, x: f64) -> f64 {
        let last = 2 * self.n;
        if k == 0 {
            x.clamp(0.0, 1.0)
        } else if k == last {
            x.rem_euclid(2.0 * PI)
        } else {
            x.clamp(0.0, PI)
        }
    }

    fn refine(&mut self, mut v: Vec<f64>, mut best: f64, cfg: &SearchConfig) -> (Vec<f64>, f64) {
        let dims = v.len();
        let last = dims - 1;
        let mut steps: Vec<f64> = (0..dims)
            .map(|k| match k {
                0 => 1.0 / cfg.rho_steps as f64,
                1 => PI / cfg.phi_steps as f64,
                k if k == last => 2.0 * PI / cfg.theta_steps as f64,
                _ => PI / cfg.theta_steps as f64,
            })
            .collect();
        while steps.iter().cloned().fold(0.0, f64::max) >= cfg.tol {
            if self.evals >= cfg.max_evals {
                break;
            }
            let mut improved = false;
            for k in 0..dims {
                for dir in [1.0, -1.0] {
                    let mut trial = v.clone();
                    trial[k] = self.clamp(k, v[k] + dir * steps[k]);
                    if trial[k] == v[k] {
                        continue;
                    }
                    let val = self.eval(&trial);
                    if val < best {
                        best = val;
                        v = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                for s in steps.iter_mut() {
                    *s *= 0.5;
                }
            }
        }
        (v, best)
    }
}

fn minimize_over_ball(
    objective: &dyn Fn(&HPoint) -> f64,
    center: &HPoint,
    epsilon: f64,
    cfg: &SearchConfig,
) -> (HPoint, f64) {
    let n = center.n();
    let mut search = BallSearch {
        n,
        center,
        epsilon,
        objective,
        evals: 0,
    };
    let n_angles = 2 * n - 1;
    let ts = cfg.theta_steps.max(2);
    let mut angle_grid: Vec<Vec<f64>> = Vec::new();
    let mut idx = vec![0usize; n_angles];
    loop {
        angle_grid.push(
            idx.iter()
                .enumerate()
                .map(|(k, &i)| {
                    if k + 1 == n_angles {
                        2.0 * PI * i as f64 / ts as f64
                    } else {
                        PI * i as f64 / ts as f64
                    }
                })
                .collect(),
        );
        let mut k = n_angles;
        let mut done = true;
        while k > 0 {
            k -= 1;
            let top = if k + 1 == n_angles { ts } else { ts + 1 };
            idx[k] += 1;
            if idx[k] < top {
                done = false;
                break;
            }
            idx[k] = 0;
        }
        if done {
            break;
        }
    }

    // Coarse scan; candidates keep scan order for deterministic tie-breaking.
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut push = |v: Vec<f64>, s: &mut BallSearch| {
        let val = s.eval(&v);
        candidates.push((val, v));
    };
    let zero_angles = vec![0.0; n_angles];
    let mut origin = vec![0.0, PI / 2.0];
    origin.extend_from_slice(&zero_angles);
    push(origin, &mut search);
    for ir in 1..=cfg.rho_steps {
        let r = ir as f64 / cfg.rho_steps as f64;
        for ip in 0..=cfg.phi_steps {
            let phi = PI * ip as f64 / cfg.phi_steps as f64;
            if ip == 0 || ip == cfg.phi_steps {
                let mut v = vec![r, phi];
                v.extend_from_slice(&zero_angles);
                push(v, &mut search);
                continue;
            }
            for angles in &angle_grid {
                let mut v = vec![r, phi];
                v.extend_from_slice(angles);
                push(v, &mut search);
            }
        }
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].0.total_cmp(&candidates[b].0).then(a.cmp(&b)));

    let mut best_v = candidates[order[0]].1.clone();
    let mut best = candidates[order[0]].0;
    for &i in order.iter().take(cfg.starts.max(1)) {
        let (v, val) = search.refine(candidates[i].1.clone(), candidates[i].0, cfg);
        if val < best {
            best = val;
            best_v = v;
        }
    }
    (search.point(&best_v), best)
}

/// Approximate extremizer of `f` over the closed ball `B̄_ε(center)`.
///
/// The maximum is computed as the minimum of `-f`, so
/// `max(f) == -min(-f)` holds exactly.
pub fn ball_extremum(
    f: &dyn Fn(&HPoint) -> f64,
    center: &HPoint,
    epsilon: f64,
    mode: ExtremumMode,
    search: &SearchConfig,
) -> Result<(HPoint, f64)> {
    if !(epsilon > 0.0) {
        return invalid(format!("ball radius must be positive, got {epsilon}"));
    }
    match mode {
        ExtremumMode::Min => Ok(minimize_over_ball(f, center, epsilon, search)),
        ExtremumMode::Max => {
            let neg = |x: &HPoint| -f(x);
            let (x, v) = minimize_over_ball(&neg, center, epsilon, search);
            Ok((x, -v))
        }
    }
}

/// Angle in radians between two nonzero vectors.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na + y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    2.0 * diff.atan2(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub epsilon: f64,
    /// Unit horizontal direction from the center to the minimizer.
    pub direction: Vec<f64>,
    /// Angle to `-∇₀f/|∇₀f|` at the center.
    pub angular_error: f64,
}

/// Direction of the minimizer of `field(t, ·)` over shrinking balls, compared
/// with `-∇₀f/|∇₀f|` at the center.
pub fn extremal_direction_estimate(
    field: &ScalarField,
    t: f64,
    center: &HPoint,
    eps_ladder: &[f64],
    search: &SearchConfig,
) -> Result<Vec<DirectionEstimate>> {
    let j = jet(field, t, center, None)?;
    let norm = j.grad_norm();
    let threshold = j.gradient_threshold();
    if norm <= threshold {
        return Err(Error::DegenerateGradient { norm, threshold });
    }
    let target: Vec<f64> = j.grad0.iter().map(|g| -g / norm).collect();
    let n = center.n();
    let f = |y: &HPoint| field.eval_raw(t, y);
    eps_ladder
        .iter()
        .map(|&eps| {
            let (x, _) = ball_extremum(&f, center, eps, ExtremumMode::Min, search)?;
            let offset: Vec<f64> = (0..2 * n)
                .map(|i| x.coords()[i] - center.coords()[i])
                .collect();
            let len = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len == 0.0 {
                return Err(Error::Domain(format!(
                    "minimizer at eps={eps} sits on the vertical axis through the center"
                )));
            }
            let direction: Vec<f64> = offset.iter().map(|v| v / len).collect();
            let angular_error = angle_between(&direction, &target);
            Ok(DirectionEstimate {
                epsilon: eps,
                direction,
                angular_error,
            })
        })
        .collect()
}

/// Gauge of a point given as raw coordinates.
pub fn offset_gauge(n: usize, c: &[f64]) -> f64 {
    gauge_of(n, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for m in 1..=12 {
            let (x, w) = gauss_legendre(m);
            for deg in 0..(2 * m) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "m={m} deg={deg} got {q}");
            }
        }
    }

    #[test]
    fn gauss_legendre_nodes_are_symmetric() {
        let (x, w) = gauss_legendre(7);
        for i in 0..7 {
            assert_eq!(x[i], -x[6 - i]);
            assert_eq!(w[i], w[6 - i]);
        }
    }

    #[test]
    fn resolution_is_validated() {
        assert!(build_rule(1, 1.0, Resolution::new(1, 4, 4)).is_err());
        assert!(build_rule(1, 0.0, Resolution::new(4, 4, 4)).is_err());
        assert!(build_rule(0, 1.0, Resolution::new(4, 4, 4)).is_err());
    }

    #[test]
    fn weighted_volume_for_h1() {
        for eps in [0.25, 0.5, 1.0] {
            let rule = build_rule(1, eps, Resolution::default_for(1)).unwrap();
            let exact = PI * eps.powi(4);
            assert!(((rule.weighted_volume() - exact) / exact).abs() < 1e-10);
        }
    }

    #[test]
    fn weights_are_nonnegative_and_count_matches() {
        let rule = build_rule(2, 0.7, Resolution::new(3, 4, 4)).unwrap();
        assert_eq!(rule.len(), Resolution::new(3, 4, 4).node_count(2));
        assert!(rule.nodes.iter().all(|nd| nd.weight >= 0.0));
    }

    #[test]
    fn first_moment_vanishes() {
        let rule = build_rule(1, 0.8, Resolution::default_for(1)).unwrap();
        let origin = HPoint::origin(1);
        let avg = weighted_ball_average(&|y: &HPoint| y.coords()[0], &origin, &rule).unwrap();
        assert!(avg.abs() < 1e-12);
    }

    #[test]
    fn averages_of_examples() {
        let eps = 0.6;
        let rule = build_rule(1, eps, Resolution::default_for(1)).unwrap();
        let origin = HPoint::origin(1);
        let c = weighted_ball_average(&|_: &HPoint| 3.25, &origin, &rule).unwrap();
        assert!((c - 3.25).abs() < 1e-14);
        let xy = weighted_ball_average(&|y: &HPoint| y.coords()[0] * y.coords()[1], &origin, &rule)
            .unwrap();
        assert!(xy.abs() < 1e-14);
        let q = weighted_ball_average(&|y: &HPoint| y.coords()[0].powi(4), &origin, &rule).unwrap();
        assert!((q - eps.powi(4) / 8.0).abs() < 1e-13);
    }

    #[test]
    fn non_finite_integrand_is_a_domain_error() {
        let rule = build_rule(1, 0.5, Resolution::new(4, 4, 4)).unwrap();
        let r = weighted_ball_average(&|y: &HPoint| 1.0 / y.coords()[0].signum().max(0.0), &HPoint::origin(1), &rule);
        assert!(matches!(r, Err(Error::Domain(_))));
        assert!(weighted_ball_average(&|_: &HPoint| 1.0, &HPoint::origin(2), &rule).is_err());
    }

    #[test]
    fn m_constant_values() {
        assert!((m_constant(1).unwrap() - PI / 12.0).abs() < 1e-16);
        assert!((m_constant(2).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-16);
        assert!(m_constant(0).is_err());
    }

    #[test]
    fn extremum_of_coordinates() {
        let cfg = SearchConfig::default_for(1);
        let origin = HPoint::origin(1);
        let eps = 0.3;
        let (_, c) = ball_extremum(&|_: &HPoint| 2.0, &origin, eps, ExtremumMode::Max, &cfg).unwrap();
        assert_eq!(c, 2.0);
        let (x, v) =
            ball_extremum(&|y: &HPoint| y.coords()[0], &origin, eps, ExtremumMode::Max, &cfg).unwrap();
        assert!((v - eps).abs() < 1e-12);
        assert!((x.coords()[0] - eps).abs() < 1e-6);
        let (x, v) =
            ball_extremum(&|y: &HPoint| y.coords()[2], &origin, eps, ExtremumMode::Max, &cfg).unwrap();
        assert!((v - eps * eps).abs() < 1e-14);
        assert!(x.horizontal().iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn angle_between_examples() {
        assert!((angle_between(&[1.0, 0.0], &[0.0, 2.0]) - PI / 2.0).abs() < 1e-15);
        assert!(angle_between(&[1.0, 1.0], &[3.0, 3.0]) < 1e-15);
        assert!((angle_between(&[1.0, 0.0], &[-1.0, 0.0]) - PI).abs() < 1e-15);
    }

    #[test]
    fn direction_examples() {
        let search = SearchConfig::default_for(1);
        let o = HPoint::origin(1);
        let x1 = crate::fields::builtin_field("x1", 1).unwrap();
        for e in extremal_direction_estimate(&x1, 0.0, &o, &[0.4, 0.1], &search).unwrap() {
            assert!(angle_between(&e.direction, &[-1.0, 0.0]) < 1e-6);
            assert!((e.direction.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let sum = crate::poly::Polynomial::parse("x1 + x2", 1).unwrap().into_field("x1 + x2");
        let est = extremal_direction_estimate(&sum, 0.0, &o, &[0.1], &search).unwrap();
        let d = std::f64::consts::FRAC_1_SQRT_2;
        assert!(angle_between(&est[0].direction, &[-d, -d]) < 1e-6);
        let flat = crate::fields::builtin_field("x1sq", 1).unwrap();
        assert!(matches!(
            extremal_direction_estimate(&flat, 0.0, &o, &[0.1], &search),
            Err(Error::DegenerateGradient { .. })
        ));
    }
}
