//! Built-in scalar fields and test suites.

use crate::calculus::ScalarField;
use crate::error::{invalid, Error, Result};
use crate::heis::HPoint;
use crate::poly::Polynomial;
use crate::quadrature::m_constant;

/// `12t² + 12x₁²t + x₁⁴`, a solution of `u_t = Δ_H u`.
pub const QUARTIC_HEAT: &str = "quartic-heat";
/// `u(M(n) t, x)` for the quartic heat field; solves `w_t = M(n) Δ_H w`.
pub const HEAT_REFERENCE: &str = "heat-reference";

/// Identifiers accepted by [`builtin_field`].
pub const BUILTIN_IDS: &[&str] = &[
    QUARTIC_HEAT,
    HEAT_REFERENCE,
    "const",
    "x1",
    "x1sq",
    "vertical",
    "pair",
    "saddle",
    "poly-mixed",
    "trig",
    "exp-mix",
    "rational",
];

fn poly(src: &str, n: usize, label: &str) -> Result<ScalarField> {
    Ok(Polynomial::parse(src, n)?.into_field(label))
}

/// Looks up a built-in field on `H^n`.
pub fn builtin_field(id: &str, n: usize) -> Result<ScalarField> {
    if n == 0 {
        return invalid("group index n must be at least 1");
    }
    let b = n + 1;
    let z = 2 * n + 1;
    match id {
        QUARTIC_HEAT => poly("12*t^2 + 12*x1^2*t + x1^4", n, id),
        HEAT_REFERENCE => {
            let m = m_constant(n)?;
            let src = format!(
                "{:e}*t^2 + {:e}*t*x1^2 + x1^4",
                12.0 * m * m,
                12.0 * m
            );
            poly(&src, n, id)
        }
        "const" => Ok(ScalarField::constant(n, 1.0)),
        "x1" => poly("x1", n, id),
        "x1sq" => poly("x1^2", n, id),
        "vertical" => poly(&format!("x{z}"), n, id),
        "pair" => poly(&format!("x1*x{b}"), n, id),
        "saddle" => poly(&format!("x1^2 - x{b}^2"), n, id),
        "poly-mixed" => poly(
            &format!("x1 + 2*x{b} + t*x1*x{b} + x{z}^2 + x1^3"),
            n,
            id,
        ),
        "trig" => Ok(ScalarField::new(n, id, move |t, x| {
            let c = x.coords();
            (c[0] + 0.5 * c[b - 1]).sin() + t * c[z - 1].cos()
        })),
        "exp-mix" => Ok(ScalarField::new(n, id, move |t, x| {
            let c = x.coords();
            (0.5 * c[0] - c[b - 1] * c[b - 1]).exp() * (1.0 + t) + 0.3 * c[z - 1]
        })),
        "rational" => Ok(ScalarField::new(n, id, move |t, x| {
            let c = x.coords();
            1.0 / (2.0 + c[0] * c[0] + c[b - 1] * c[b - 1] + c[z - 1] * c[z - 1]) + t * c[b - 1]
        })),
        other => Err(Error::InvalidArgument(format!(
            "unknown field '{other}'; known ids: {}",
            BUILTIN_IDS.join(", ")
        ))),
    }
}

/// A built-in id, or failing that a polynomial expression.
pub fn resolve_field(spec: &str, n: usize) -> Result<ScalarField> {
    let spec = spec.trim();
    if BUILTIN_IDS.contains(&spec) {
        return builtin_field(spec, n);
    }
    match Polynomial::parse(spec, n) {
        Ok(p) => Ok(p.into_field(spec)),
        Err(e) => Err(Error::InvalidArgument(format!(
            "'{spec}' is neither a built-in field ({}) nor a polynomial: {e}",
            BUILTIN_IDS.join(", ")
        ))),
    }
}

/// H-harmonic polynomials: every coordinate `x_i`, the vertical coordinate,
/// the products `x_i x_{n+i}` and `x_1² - x_{n+1}²`.
pub fn h_harmonic_set(n: usize) -> Result<Vec<ScalarField>> {
    let mut out = Vec::new();
    for i in 1..=2 * n + 1 {
        out.push(poly(&format!("x{i}"), n, &format!("x{i}"))?);
    }
    for i in 1..=n {
        let src = format!("x{i}*x{}", n + i);
        out.push(poly(&src, n, &src)?);
    }
    let src = format!("x1^2 - x{}^2", n + 1);
    out.push(poly(&src, n, &src)?);
    Ok(out)
}

/// A field, a time and a point with nonvanishing horizontal gradient.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub field: ScalarField,
    pub t: f64,
    pub x: HPoint,
}

fn case(id: &str, n: usize, t: f64, x: &[f64]) -> Result<SuiteCase> {
    Ok(SuiteCase {
        field: builtin_field(id, n)?,
        t,
        x: HPoint::new(n, x)?,
    })
}

/// Smooth fields used for expansion order checks, some non-polynomial.
pub fn smooth_test_suite() -> Result<Vec<SuiteCase>> {
    Ok(vec![
        case("x1sq", 1, 0.0, &[0.5, 0.0, 0.0])?,
        case(QUARTIC_HEAT, 1, 1.0, &[0.3, -0.2, 0.1])?,
        case("poly-mixed", 1, 0.5, &[0.2, 0.1, 0.3])?,
        case("trig", 1, 0.7, &[0.1, -0.3, 0.4])?,
        case("exp-mix", 1, 0.2, &[0.3, 0.2, -0.1])?,
        case("rational", 1, 0.4, &[0.5, -0.4, 0.3])?,
        case("poly-mixed", 2, 0.5, &[0.2, -0.1, 0.1, 0.3, 0.2])?,
    ])
}

/// Quadratic fields with nonzero gradient at the origin.
pub fn quadratic_test_fields() -> Result<Vec<ScalarField>> {
    let specs = [
        (1, "x1 + 0.5*x2 + 0.5*x1^2 + 0.3*x1*x2 - 0.2*x2^2"),
        (1, "x1 + 2*x2 + x1*x2 + 0.2*x1^2 + 0.3*x3"),
        (1, "-2*x1 + x2 + x1^2 - x2^2 + 0.5*x3"),
        (2, "x1 - x3 + x2*x4 + 0.4*x1^2 + x5"),
    ];
    specs
        .iter()
        .map(|(n, s)| Ok(Polynomial::parse(s, *n)?.into_field(*s)))
        .collect()
}
