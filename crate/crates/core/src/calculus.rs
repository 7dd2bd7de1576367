//! Horizontal frame, jets of scalar fields and the sub-Laplacian family.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::heis::{gauge, Coords, HPoint};

/// Exponent `p ∈ (1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PValue {
    Finite(f64),
    Infinity,
}

impl PValue {
    pub fn finite(p: f64) -> Result<Self> {
        if !(p > 1.0) || p.is_nan() {
            return invalid(format!("p must exceed 1, got {p}"));
        }
        if p.is_infinite() {
            return Ok(PValue::Infinity);
        }
        Ok(PValue::Finite(p))
    }

    pub fn is_two(&self) -> bool {
        matches!(self, PValue::Finite(p) if *p == 2.0)
    }
}

impl fmt::Display for PValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PValue::Finite(p) => write!(f, "{p}"),
            PValue::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for PValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(PValue::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("cannot read p from '{s}'")))?;
                PValue::finite(p)
            }
        }
    }
}

impl Serialize for PValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PValue::Finite(p) => s.serialize_f64(*p),
            PValue::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => PValue::finite(p).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Value, time derivative, horizontal gradient, vertical derivative and the
/// symmetrized horizontal Hessian of a field at a space-time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizontalJet {
    pub value: f64,
    pub dt: f64,
    pub grad0: Vec<f64>,
    pub vert: f64,
    /// Row-major `2n × 2n`.
    pub hess: Vec<f64>,
}

impl HorizontalJet {
    pub fn n(&self) -> usize {
        self.grad0.len() / 2
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.grad0.len() + j]
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn hess_norm(&self) -> f64 {
        self.hess.iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    /// Full gradient `(∇₀u, Tu)`.
    pub fn full_gradient(&self) -> Vec<f64> {
        let mut g = self.grad0.clone();
        g.push(self.vert);
        g
    }

    /// Threshold below which `∇₀u` is treated as zero.
    pub fn gradient_threshold(&self) -> f64 {
        1e-9 * (1.0 + self.hess_norm())
    }
}

pub type Evaluator = dyn Fn(f64, &HPoint) -> f64 + Send + Sync;
pub type JetFn = dyn Fn(f64, &HPoint) -> HorizontalJet + Send + Sync;

/// A scalar space-time field `u(t, x)` on `H^n`.
///
/// Evaluators must be safe to call from several threads at once.
#[derive(Clone)]
pub struct ScalarField {
    n: usize,
    label: String,
    eval: Arc<Evaluator>,
    jet: Option<Arc<JetFn>>,
}

impl ScalarField {
    pub fn new<F>(n: usize, label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64, &HPoint) -> f64 + Send + Sync + 'static,
    {
        Self {
            n,
            label: label.into(),
            eval: Arc::new(eval),
            jet: None,
        }
    }

    /// A field that ignores time.
    pub fn spatial<F>(n: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&HPoint) -> f64 + Send + Sync + 'static,
    {
        Self::new(n, label, move |_, x| f(x))
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut field = Self::new(n, format!("{c}"), move |_, _| c);
        let dim = 2 * n;
        field.jet = Some(Arc::new(move |_, _| HorizontalJet {
            value: c,
            dt: 0.0,
            grad0: vec![0.0; dim],
            vert: 0.0,
            hess: vec![0.0; dim * dim],
        }));
        field
    }

    pub fn with_jet<J>(mut self, jet: J) -> Self
    where
        J: Fn(f64, &HPoint) -> HorizontalJet + Send + Sync + 'static,
    {
        self.jet = Some(Arc::new(jet));
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_analytic_jet(&self) -> bool {
        self.jet.is_some()
    }

    /// Evaluates without checks.
    #[inline]
    pub fn eval_raw(&self, t: f64, x: &HPoint) -> f64 {
        (self.eval)(t, x)
    }

    /// Evaluates, turning non-finite output into a domain error.
    pub fn value(&self, t: f64, x: &HPoint) -> Result<f64> {
        if x.n() != self.n {
            return invalid(format!(
                "field '{}' lives on H^{}, point is in H^{}",
                self.label,
                self.n,
                x.n()
            ));
        }
        let v = (self.eval)(t, x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "field '{}' is not finite at t={t}, x={:?}",
                self.label,
                x.coords()
            )))
        }
    }

    pub fn analytic_jet(&self, t: f64, x: &HPoint) -> Option<HorizontalJet> {
        self.jet.as_ref().map(|j| j(t, x))
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("n", &self.n)
            .field("label", &self.label)
            .field("analytic_jet", &self.jet.is_some())
            .finish()
    }
}

/// Coefficient of `∂/∂x_{2n+1}` in `X_i` (0-based `i < 2n`).
#[inline]
fn vertical_coefficient(n: usize, x: &[f64], i: usize) -> f64 {
    if i < n {
        2.0 * x[n + i]
    } else {
        -2.0 * x[i - n]
    }
}

/// `∂ c_j / ∂ x_i`, the derivative of the vertical coefficient of `X_j`.
#[inline]
fn vertical_coefficient_derivative(n: usize, i: usize, j: usize) -> f64 {
    if j < n {
        if i == n + j {
            2.0
        } else {
            0.0
        }
    } else if i == j - n {
        -2.0
    } else {
        0.0
    }
}

/// Coefficient vector of `X_i` at `x` (1-based: `1..=2n` horizontal,
/// `2n+1` is `T`).
pub fn frame_vector(i: usize, x: &HPoint) -> Result<Vec<f64>> {
    let n = x.n();
    if i == 0 || i > 2 * n + 1 {
        return invalid(format!("frame index {i} outside 1..={}", 2 * n + 1));
    }
    let mut v = vec![0.0; 2 * n + 1];
    if i == 2 * n + 1 {
        v[2 * n] = 1.0;
    } else {
        v[i - 1] = 1.0;
        v[2 * n] = vertical_coefficient(n, x.coords(), i - 1);
    }
    Ok(v)
}

/// Euclidean partial derivatives of a field at a point, in the coordinate
/// order of [`HPoint`].
#[derive(Debug, Clone)]
pub struct EuclideanDerivatives {
    pub value: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
    /// Row-major `(2n+1) × (2n+1)`.
    pub hess: Vec<f64>,
}

/// Unsymmetrized `X_i X_j u` (row `i`, column `j`), row-major `2n × 2n`.
pub fn raw_horizontal_hessian(x: &HPoint, d: &EuclideanDerivatives) -> Vec<f64> {
    let n = x.n();
    let m = 2 * n;
    let e = m + 1;
    let z = m;
    let c = x.coords();
    let uz = d.grad[z];
    let mut raw = vec![0.0; m * m];
    for i in 0..m {
        let ci = vertical_coefficient(n, c, i);
        for j in 0..m {
            let cj = vertical_coefficient(n, c, j);
            raw[i * m + j] = d.hess[i * e + j]
                + cj * d.hess[i * e + z]
                + vertical_coefficient_derivative(n, i, j) * uz
                + ci * d.hess[z * e + j]
                + ci * cj * d.hess[z * e + z];
        }
    }
    raw
}

/// Converts Euclidean partials into a horizontal jet.
pub fn assemble_jet(x: &HPoint, d: &EuclideanDerivatives) -> HorizontalJet {
    let n = x.n();
    let m = 2 * n;
    let c = x.coords();
    let grad0 = (0..m)
        .map(|i| d.grad[i] + vertical_coefficient(n, c, i) * d.grad[m])
        .collect();
    let raw = raw_horizontal_hessian(x, d);
    let mut hess = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            hess[i * m + j] = 0.5 * (raw[i * m + j] + raw[j * m + i]);
        }
    }
    HorizontalJet {
        value: d.value,
        dt: d.dt,
        grad0,
        vert: d.grad[m],
        hess,
    }
}

/// Default finite-difference step `1e-4 (1 + ρ(x))`.
pub fn default_step(x: &HPoint) -> f64 {
    1e-4 * (1.0 + gauge(x))
}

/// Centered second-order finite differences of the Euclidean partials.
pub fn euclidean_derivatives_fd(
    field: &ScalarField,
    t: f64,
    x: &HPoint,
    h: f64,
) -> Result<EuclideanDerivatives> {
    if !(h > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {h}"));
    }
    let n = x.n();
    let e = 2 * n + 1;
    let base = x.coords();
    let at = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut c: Coords = Coords::from_slice(base);
        for &(a, s) in shifts {
            c[a] += s;
        }
        field.value(t, &HPoint::from_coords(n, c))
    };
    let f0 = field.value(t, x)?;
    let dt = (field.value(t + h, x)? - field.value(t - h, x)?) / (2.0 * h);
    let mut grad = vec![0.0; e];
    let mut hess = vec![0.0; e * e];
    let mut plus = vec![0.0; e];
    let mut minus = vec![0.0; e];
    for a in 0..e {
        plus[a] = at(&[(a, h)])?;
        minus[a] = at(&[(a, -h)])?;
        grad[a] = (plus[a] - minus[a]) / (2.0 * h);
        hess[a * e + a] = (plus[a] - 2.0 * f0 + minus[a]) / (h * h);
    }
    for a in 0..e {
        for b in (a + 1)..e {
            let pp = at(&[(a, h), (b, h)])?;
            let pm = at(&[(a, h), (b, -h)])?;
            let mp = at(&[(a, -h), (b, h)])?;
            let mm = at(&[(a, -h), (b, -h)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[a * e + b] = v;
            hess[b * e + a] = v;
        }
    }
    Ok(EuclideanDerivatives {
        value: f0,
        dt,
        grad,
        hess,
    })
}

/// Finite-difference horizontal jet, ignoring any analytic jet.
pub fn jet_fd(field: &ScalarField, t: f64, x: &HPoint, h: f64) -> Result<HorizontalJet> {
    let d = euclidean_derivatives_fd(field, t, x, h)?;
    Ok(assemble_jet(x, &d))
}

/// Horizontal jet of `field` at `(t, x)`: the analytic jet when the field has
/// one, finite differences with step `h` (or [`default_step`]) otherwise.
pub fn jet(field: &ScalarField, t: f64, x: &HPoint, h: Option<f64>) -> Result<HorizontalJet> {
    if x.n() != field.n() {
        return invalid("field and point live on different groups");
    }
    if let Some(j) = field.analytic_jet(t, x) {
        return Ok(j);
    }
    jet_fd(field, t, x, h.unwrap_or_else(|| default_step(x)))
}

/// Sub-Laplacian `Δ_H u`: the trace of the horizontal Hessian.
pub fn delta_h(j: &HorizontalJet) -> f64 {
    let m = j.grad0.len();
    (0..m).map(|i| j.hess[i * m + i]).sum()
}

/// Normalized sub-infinity Laplacian `⟨H ĝ, ĝ⟩` with `ĝ = ∇₀u/|∇₀u|`.
pub fn delta_h_inf(j: &HorizontalJet) -> Result<f64> {
    delta_h_inf_with_threshold(j, j.gradient_threshold())
}

pub fn delta_h_inf_with_threshold(j: &HorizontalJet, threshold: f64) -> Result<f64> {
    let norm = j.grad_norm();
    if norm <= threshold {
        return Err(Error::DegenerateGradient { norm, threshold });
    }
    let m = j.grad0.len();
    let g: Vec<f64> = j.grad0.iter().map(|v| v / norm).collect();
    let mut q = 0.0;
    for a in 0..m {
        let row: f64 = (0..m).map(|b| j.hess[a * m + b] * g[b]).sum();
        q += g[a] * row;
    }
    Ok(q)
}

/// `(p-2) Δ_H^∞ u + Δ_H u`, or `Δ_H^∞ u` for `p = ∞`.
pub fn p_laplacian_normalized(j: &HorizontalJet, p: PValue) -> Result<f64> {
    match p {
        PValue::Infinity => delta_h_inf(j),
        PValue::Finite(pv) => {
            if !(pv > 1.0) {
                return invalid(format!("p must exceed 1, got {pv}"));
            }
            if pv == 2.0 {
                Ok(delta_h(j))
            } else {
                Ok((pv - 2.0) * delta_h_inf(j)? + delta_h(j))
            }
        }
    }
}

/// `X_i X_j u - X_j X_i u` by nested centered differences along the frame
/// vectors (1-based indices, `2n+1` meaning `T`).
///
/// This route differentiates along the vector fields themselves and does not
/// share code with [`jet`], so it serves as an independent check of the
/// bracket relations.
pub fn commutator_fd(
    field: &ScalarField,
    t: f64,
    x: &HPoint,
    i: usize,
    j: usize,
    h: f64,
) -> Result<f64> {
    let n = x.n();
    let shifted = |p: &HPoint, k: usize, s: f64| -> Result<HPoint> {
        let v = frame_vector(k, p)?;
        let c: Coords = p.coords().iter().zip(&v).map(|(a, b)| a + s * b).collect();
        Ok(HPoint::from_coords(n, c))
    };
    let first = |p: &HPoint, k: usize| -> Result<f64> {
        let up = field.value(t, &shifted(p, k, h)?)?;
        let dn = field.value(t, &shifted(p, k, -h)?)?;
        Ok((up - dn) / (2.0 * h))
    };
    let second = |a: usize, b: usize| -> Result<f64> {
        let up = first(&shifted(x, a, h)?, b)?;
        let dn = first(&shifted(x, a, -h)?, b)?;
        Ok((up - dn) / (2.0 * h))
    };
    Ok(second(i, j)? - second(j, i)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1(c: [f64; 3]) -> HPoint {
        HPoint::new(1, &c).unwrap()
    }

    #[test]
    fn frame_examples() {
        assert_eq!(frame_vector(1, &HPoint::origin(1)).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(frame_vector(1, &h1([0.0, 3.0, 0.0])).unwrap(), vec![1.0, 0.0, 6.0]);
        assert_eq!(frame_vector(2, &h1([5.0, 3.0, 0.0])).unwrap(), vec![0.0, 1.0, -10.0]);
        assert_eq!(frame_vector(3, &h1([5.0, 3.0, 0.0])).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(frame_vector(0, &HPoint::origin(1)).is_err());
        assert!(frame_vector(4, &HPoint::origin(1)).is_err());
    }

    #[test]
    fn jet_of_linear_coordinate() {
        let f = ScalarField::spatial(1, "x1", |x| x.coords()[0]);
        let j = jet(&f, 0.3, &h1([0.4, -1.1, 2.0]), None).unwrap();
        assert!((j.grad0[0] - 1.0).abs() < 1e-9);
        assert!(j.grad0[1].abs() < 1e-9);
        assert!(j.vert.abs() < 1e-9);
        assert!(j.hess.iter().all(|h| h.abs() < 1e-5));
    }

    #[test]
    fn jet_of_vertical_coordinate() {
        let f = ScalarField::spatial(1, "x3", |x| x.coords()[2]);
        let (a, b, c) = (0.7, -0.2, 1.3);
        let x = h1([a, b, c]);
        let j = jet(&f, 0.0, &x, None).unwrap();
        assert!((j.grad0[0] - 2.0 * b).abs() < 1e-9);
        assert!((j.grad0[1] + 2.0 * a).abs() < 1e-9);
        assert!((j.vert - 1.0).abs() < 1e-9);
        assert!(j.hess.iter().all(|h| h.abs() < 1e-6));

        let d = euclidean_derivatives_fd(&f, 0.0, &x, 1e-4).unwrap();
        let raw = raw_horizontal_hessian(&x, &d);
        assert!((raw[1] + 2.0).abs() < 1e-9);
        assert!((raw[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn jet_of_quartic_heat_field() {
        let f = ScalarField::new(1, "q", |t, x| {
            let x1 = x.coords()[0];
            12.0 * t * t + 12.0 * x1 * x1 * t + x1.powi(4)
        });
        let j = jet(&f, 1.0, &HPoint::origin(1), Some(1e-3)).unwrap();
        assert!((j.dt - 24.0).abs() < 1e-6);
        assert!(j.grad0.iter().all(|g| g.abs() < 1e-9));
        assert!((j.hess_at(0, 0) - 24.0).abs() < 1e-4);
        assert!(j.hess_at(1, 1).abs() < 1e-6);
        assert!(j.hess_at(0, 1).abs() < 1e-6);
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let f = ScalarField::new(2, "mixed", |t, x| {
            let c = x.coords();
            (c[0] * c[3] + c[1]).sin() + c[4] * c[2] * t
        });
        let x = HPoint::new(2, &[0.1, 0.2, -0.3, 0.4, 0.5]).unwrap();
        let j = jet(&f, 0.7, &x, None).unwrap();
        let m = 4;
        for a in 0..m {
            for b in 0..m {
                assert_eq!(j.hess[a * m + b], j.hess[b * m + a]);
            }
        }
    }

    fn jet_with(grad0: Vec<f64>, hess: Vec<f64>) -> HorizontalJet {
        HorizontalJet {
            value: 0.0,
            dt: 0.0,
            grad0,
            vert: 0.0,
            hess,
        }
    }

    #[test]
    fn sub_laplacian_examples() {
        assert_eq!(delta_h(&jet_with(vec![0.0, 0.0], vec![0.0; 4])), 0.0);
        let r2 = ScalarField::spatial(1, "r2", |x| x.coords()[0].powi(2) + x.coords()[1].powi(2));
        let j = jet(&r2, 0.0, &h1([0.3, 0.2, 0.1]), None).unwrap();
        assert!((delta_h(&j) - 4.0).abs() < 1e-6);
        let xy = ScalarField::spatial(1, "x1x2", |x| x.coords()[0] * x.coords()[1]);
        let j = jet(&xy, 0.0, &h1([0.3, 0.2, 0.1]), None).unwrap();
        assert!(delta_h(&j).abs() < 1e-6);
    }

    #[test]
    fn infinity_laplacian_examples() {
        let id = jet_with(vec![0.3, -2.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!((delta_h_inf(&id).unwrap() - 1.0).abs() < 1e-15);
        let sq = ScalarField::spatial(1, "x1sq", |x| x.coords()[0].powi(2));
        let j = jet(&sq, 0.0, &h1([0.5, 0.1, -0.2]), None).unwrap();
        assert!((delta_h_inf(&j).unwrap() - 2.0).abs() < 1e-6);
        let flat = jet_with(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            delta_h_inf(&flat),
            Err(Error::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn normalized_p_laplacian_examples() {
        let sq = ScalarField::spatial(1, "x1sq", |x| x.coords()[0].powi(2));
        let j = jet(&sq, 0.0, &h1([0.5, 0.1, -0.2]), None).unwrap();
        let p4 = p_laplacian_normalized(&j, PValue::Finite(4.0)).unwrap();
        assert!((p4 - 6.0).abs() < 1e-5);
        assert_eq!(p_laplacian_normalized(&j, PValue::Finite(2.0)).unwrap(), delta_h(&j));
        assert_eq!(
            p_laplacian_normalized(&j, PValue::Infinity).unwrap(),
            delta_h_inf(&j).unwrap()
        );
        let flat = jet_with(vec![0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(p_laplacian_normalized(&flat, PValue::Finite(2.0)).unwrap(), 2.0);
        assert!(p_laplacian_normalized(&flat, PValue::Finite(3.0)).is_err());
    }

    #[test]
    fn commutator_on_vertical_coordinate() {
        let f = ScalarField::spatial(1, "x3", |x| x.coords()[2]);
        let c = commutator_fd(&f, 0.0, &h1([0.2, -0.4, 0.9]), 1, 2, 1e-3).unwrap();
        assert!((c + 4.0).abs() < 1e-8);
    }

    #[test]
    fn p_value_parsing() {
        assert_eq!("inf".parse::<PValue>().unwrap(), PValue::Infinity);
        assert_eq!(" 4 ".parse::<PValue>().unwrap(), PValue::Finite(4.0));
        assert!("1".parse::<PValue>().is_err());
        assert!("abc".parse::<PValue>().is_err());
        assert!(PValue::finite(0.5).is_err());
    }
}
