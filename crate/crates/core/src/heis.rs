//! Group law, dilations, the Koranyi gauge and the polar chart on `H^n`.
//!
//! Coordinates are stored as `(x_1..x_n, x_{n+1}..x_{2n}, x_{2n+1})`: the
//! first `n` entries pair with the next `n` in the symplectic twist, the last
//! entry is the vertical (center) coordinate. Index `i` (0-based, `i < n`)
//! pairs with `n + i`; swapping the two halves flips the sign of the twist.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{invalid, Error, Result};

pub(crate) type Coords = SmallVec<[f64; 8]>;

/// A point of the Heisenberg group `H^n`, stored as `2n+1` real coordinates.
#[derive(Clone, PartialEq)]
pub struct HPoint {
    n: usize,
    coords: Coords,
}

impl HPoint {
    pub fn new(n: usize, coords: &[f64]) -> Result<Self> {
        if n == 0 {
            return invalid("group index n must be at least 1");
        }
        if coords.len() != 2 * n + 1 {
            return invalid(format!(
                "H^{n} points need {} coordinates, got {}",
                2 * n + 1,
                coords.len()
            ));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return invalid(format!("non-finite coordinate {bad}"));
        }
        Ok(Self {
            n,
            coords: Coords::from_slice(coords),
        })
    }

    /// Builds a point without validation; callers guarantee the length.
    pub(crate) fn from_coords(n: usize, coords: Coords) -> Self {
        debug_assert_eq!(coords.len(), 2 * n + 1);
        Self { n, coords }
    }

    pub fn origin(n: usize) -> Self {
        assert!(n >= 1, "group index n must be at least 1");
        Self {
            n,
            coords: smallvec::smallvec![0.0; 2 * n + 1],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Topological dimension `2n+1`.
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// The horizontal part `x̄ = (x_1..x_{2n})`.
    pub fn horizontal(&self) -> &[f64] {
        &self.coords[..2 * self.n]
    }

    /// The vertical coordinate `x_{2n+1}`.
    pub fn vertical(&self) -> f64 {
        self.coords[2 * self.n]
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }

    pub fn compose(&self, other: &HPoint) -> Result<HPoint> {
        group_mul(self, other)
    }

    pub fn inverse(&self) -> HPoint {
        group_inv(self)
    }

    pub fn gauge(&self) -> f64 {
        gauge(self)
    }

    pub fn psi(&self) -> f64 {
        psi(self)
    }
}

impl fmt::Debug for HPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HPoint{:?}", self.coords.as_slice())
    }
}

impl Serialize for HPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        if coords.len() % 2 == 0 {
            return Err(serde::de::Error::custom("point must have an odd number of coordinates"));
        }
        let n = (coords.len() - 1) / 2;
        HPoint::new(n, &coords).map_err(serde::de::Error::custom)
    }
}

/// Homogeneous dimension `Q = 2n+2`.
pub fn homogeneous_dimension(n: usize) -> usize {
    2 * n + 2
}

fn check_same_group(a: &HPoint, b: &HPoint) -> Result<()> {
    if a.n != b.n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: H^{} vs H^{}",
            a.n, b.n
        )));
    }
    Ok(())
}

/// Writes `a ∘ b` into `out`. All slices have length `2n+1`.
///
/// `a` plays the role of the left factor `x⁰`: the twist term is
/// `2 Σ (b_i a_{n+i} - a_i b_{n+i})`.
#[inline]
pub fn compose_into(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut twist = 0.0;
    for i in 0..n {
        twist += b[i] * a[n + i] - a[i] * b[n + i];
    }
    for k in 0..2 * n {
        out[k] = a[k] + b[k];
    }
    out[2 * n] = b[2 * n] + a[2 * n] + 2.0 * twist;
}

/// Group product `a ∘ b`.
pub fn group_mul(a: &HPoint, b: &HPoint) -> Result<HPoint> {
    check_same_group(a, b)?;
    let mut out: Coords = smallvec::smallvec![0.0; a.dim()];
    compose_into(a.n, &a.coords, &b.coords, &mut out);
    Ok(HPoint::from_coords(a.n, out))
}

/// Group inverse, which is plain negation.
pub fn group_inv(a: &HPoint) -> HPoint {
    HPoint::from_coords(a.n, a.coords.iter().map(|c| -c).collect())
}

/// Anisotropic dilation `δ_λ`.
pub fn dilate(lambda: f64, a: &HPoint) -> Result<HPoint> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("dilation factor must be positive, got {lambda}"));
    }
    let mut out = a.coords.clone();
    for c in out.iter_mut().take(2 * a.n) {
        *c *= lambda;
    }
    out[2 * a.n] *= lambda * lambda;
    Ok(HPoint::from_coords(a.n, out))
}

#[inline]
pub(crate) fn horizontal_norm_sq(n: usize, x: &[f64]) -> f64 {
    x[..2 * n].iter().map(|c| c * c).sum()
}

#[inline]
pub(crate) fn gauge_of(n: usize, x: &[f64]) -> f64 {
    let r2 = horizontal_norm_sq(n, x);
    let z = x[2 * n];
    (r2 * r2 + z * z).sqrt().sqrt()
}

#[inline]
pub(crate) fn psi_of(n: usize, x: &[f64]) -> f64 {
    let r2 = horizontal_norm_sq(n, x);
    let z = x[2 * n];
    let rho_sq = (r2 * r2 + z * z).sqrt();
    if rho_sq == 0.0 {
        0.0
    } else {
        r2 / rho_sq
    }
}

/// Koranyi gauge `(|x̄|⁴ + x_{2n+1}²)^{1/4}`.
pub fn gauge(a: &HPoint) -> f64 {
    gauge_of(a.n, &a.coords)
}

/// Left-invariant quasi-distance `ρ(a⁻¹ ∘ b)`.
pub fn left_distance(a: &HPoint, b: &HPoint) -> Result<f64> {
    check_same_group(a, b)?;
    let mut out: Coords = smallvec::smallvec![0.0; a.dim()];
    let inv: Coords = a.coords.iter().map(|c| -c).collect();
    compose_into(a.n, &inv, &b.coords, &mut out);
    Ok(gauge_of(a.n, &out))
}

/// Weight `ψ = |x̄|²/ρ²`, with `ψ(0) = 0`.
pub fn psi(a: &HPoint) -> f64 {
    psi_of(a.n, &a.coords)
}

/// Polar coordinates `(ρ, φ, θ_1..θ_{2n-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarCoord {
    pub rho: f64,
    pub phi: f64,
    pub thetas: Vec<f64>,
}

impl PolarCoord {
    /// Validates ranges: `ρ ≥ 0`, `φ ∈ [0, π]`, `θ_k ∈ [0, π]` for `k < 2n-1`
    /// and `θ_{2n-1} ∈ [0, 2π]`. Closed upper ends are accepted so that the
    /// closed ball can be parametrized.
    pub fn new(rho: f64, phi: f64, thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() || thetas.len().is_multiple_of(2) {
            return invalid(format!(
                "expected 2n-1 angles, got {}",
                thetas.len()
            ));
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return invalid(format!("rho must be nonnegative, got {rho}"));
        }
        if !(0.0..=PI).contains(&phi) {
            return invalid(format!("phi must lie in [0, pi], got {phi}"));
        }
        let last = thetas.len() - 1;
        for (k, &th) in thetas.iter().enumerate() {
            let upper = if k == last { 2.0 * PI } else { PI };
            if !(0.0..=upper).contains(&th) {
                return invalid(format!("theta_{} = {th} out of range", k + 1));
            }
        }
        Ok(Self { rho, phi, thetas })
    }

    pub fn n(&self) -> usize {
        self.thetas.len().div_ceil(2)
    }
}

/// Coordinate slot (0-based) receiving `cos θ_k` for `k = 1..2n-2`.
///
/// The peeling order is `x_{2n}, x_n, x_{2n-1}, x_{n-1}, ...`; the last angle
/// feeds the pair `(x_1, x_{n+1})` through `(sin, cos)`.
#[inline]
fn cos_slot(n: usize, k: usize) -> usize {
    if k % 2 == 1 {
        2 * n - 1 - (k - 1) / 2
    } else {
        n - 1 - (k - 2) / 2
    }
}

/// Writes the Cartesian point of polar coordinates into `out`.
pub(crate) fn polar_into(n: usize, rho: f64, phi: f64, thetas: &[f64], out: &mut [f64]) {
    let (sphi, cphi) = phi.sin_cos();
    let r = rho * sphi.max(0.0).sqrt();
    let mut prod = r;
    for k in 1..=2 * n - 2 {
        let (s, c) = thetas[k - 1].sin_cos();
        out[cos_slot(n, k)] = prod * c;
        prod *= s;
    }
    let (s, c) = thetas[2 * n - 2].sin_cos();
    out[0] = prod * s;
    out[n] = prod * c;
    out[2 * n] = rho * rho * cphi;
}

pub fn polar_to_point(p: &PolarCoord, n: usize) -> Result<HPoint> {
    if p.thetas.len() != 2 * n - 1 {
        return invalid(format!(
            "H^{n} polar coordinates need {} angles, got {}",
            2 * n - 1,
            p.thetas.len()
        ));
    }
    let mut out: Coords = smallvec::smallvec![0.0; 2 * n + 1];
    polar_into(n, p.rho, p.phi, &p.thetas, &mut out);
    Ok(HPoint::from_coords(n, out))
}

/// Angular part of the Jacobian: `Π_k sin^{2n-1-k} θ_k`.
pub(crate) fn sphere_density(n: usize, thetas: &[f64]) -> f64 {
    (1..=2 * n - 2)
        .map(|k| thetas[k - 1].sin().powi((2 * n - 1 - k) as i32))
        .product()
}

/// `dx = ρ^{2n+1} (sin φ)^{n-1} Π sin^{2n-1-k} θ_k  dρ dφ dθ`.
pub fn polar_jacobian(p: &PolarCoord, n: usize) -> Result<f64> {
    if p.thetas.len() != 2 * n - 1 {
        return invalid(format!(
            "H^{n} polar coordinates need {} angles, got {}",
            2 * n - 1,
            p.thetas.len()
        ));
    }
    Ok(p.rho.powi(2 * n as i32 + 1)
        * p.phi.sin().max(0.0).powi(n as i32 - 1)
        * sphere_density(n, &p.thetas))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> HPoint {
        HPoint::new((c.len() - 1) / 2, c).unwrap()
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(HPoint::new(1, &[0.0, 0.0]).is_err());
        assert!(HPoint::new(1, &[0.0, f64::NAN, 0.0]).is_err());
        assert!(HPoint::new(0, &[0.0]).is_err());
    }

    #[test]
    fn group_law_examples() {
        let x = pt(&[0.3, -1.2, 2.5]);
        assert_eq!(group_mul(&HPoint::origin(1), &x).unwrap(), x);
        assert!(group_mul(&x, &group_inv(&x)).unwrap().is_origin());
        let a = pt(&[1.0, 0.0, 0.0]);
        let b = pt(&[0.0, 1.0, 0.0]);
        assert_eq!(group_mul(&a, &b).unwrap().coords(), &[1.0, 1.0, -2.0]);
        assert!(group_mul(&a, &HPoint::origin(2)).is_err());
    }

    #[test]
    fn inverse_and_dilation() {
        assert_eq!(group_inv(&pt(&[1.0, 2.0, 3.0])).coords(), &[-1.0, -2.0, -3.0]);
        let x = pt(&[1.0, 0.0, 1.0]);
        assert_eq!(dilate(2.0, &x).unwrap().coords(), &[2.0, 0.0, 4.0]);
        assert_eq!(dilate(1.0, &x).unwrap(), x);
        assert!(dilate(0.0, &x).is_err());
        assert!(dilate(-1.0, &x).is_err());
    }

    #[test]
    fn gauge_and_psi_examples() {
        assert_eq!(gauge(&HPoint::origin(1)), 0.0);
        assert_eq!(gauge(&pt(&[1.0, 0.0, 0.0])), 1.0);
        assert_eq!(gauge(&pt(&[0.0, 0.0, 4.0])), 2.0);
        assert_eq!(psi(&pt(&[0.6, -0.8, 0.0])), 1.0);
        assert_eq!(psi(&pt(&[0.0, 0.0, -3.0])), 0.0);
        assert_eq!(psi(&HPoint::origin(2)), 0.0);
    }

    #[test]
    fn left_distance_examples() {
        let a = pt(&[0.4, 0.1, -0.7]);
        let x = pt(&[1.0, 2.0, 0.5]);
        assert_eq!(left_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(left_distance(&HPoint::origin(1), &x).unwrap(), gauge(&x));
    }

    #[test]
    fn polar_examples() {
        let p = PolarCoord::new(1.0, PI / 2.0, vec![PI / 2.0]).unwrap();
        let x = polar_to_point(&p, 1).unwrap();
        assert!((x.coords()[0] - 1.0).abs() < 1e-15);
        assert!(x.coords()[1].abs() < 1e-15);
        assert!(x.coords()[2].abs() < 1e-15);
        assert!((polar_jacobian(&p, 1).unwrap() - 1.0).abs() < 1e-15);

        let near_axis = PolarCoord::new(0.7, 1e-12, vec![1.0]).unwrap();
        let y = polar_to_point(&near_axis, 1).unwrap();
        assert!(y.horizontal().iter().all(|c| c.abs() < 1e-5));
        assert!((y.vertical() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn polar_psi_is_sin_phi() {
        for n in 1..=3 {
            let thetas: Vec<f64> = (0..2 * n - 1).map(|k| 0.3 + 0.4 * k as f64).collect();
            let p = PolarCoord::new(1.7, 0.9, thetas).unwrap();
            let x = polar_to_point(&p, n).unwrap();
            assert!((psi(&x) - 0.9f64.sin()).abs() < 1e-14);
            assert!((gauge(&x) - 1.7).abs() < 1e-14);
        }
    }

    #[test]
    fn polar_rejects_out_of_range() {
        assert!(PolarCoord::new(-1.0, 0.5, vec![0.0]).is_err());
        assert!(PolarCoord::new(1.0, 4.0, vec![0.0]).is_err());
        assert!(PolarCoord::new(1.0, 0.5, vec![4.0, 0.0, 1.0]).is_err());
        assert!(PolarCoord::new(1.0, 0.5, vec![0.0, 0.0]).is_err());
        let p = PolarCoord::new(1.0, 0.5, vec![0.1]).unwrap();
        assert!(polar_to_point(&p, 2).is_err());
    }

    #[test]
    fn cos_slots_cover_every_coordinate() {
        for n in 1..=4 {
            let mut seen = vec![false; 2 * n];
            seen[0] = true;
            seen[n] = true;
            for k in 1..=2 * n - 2 {
                let s = cos_slot(n, k);
                assert!(!seen[s], "slot {s} reused for n={n}");
                seen[s] = true;
            }
            assert!(seen.iter().all(|&b| b));
        }
    }
}
