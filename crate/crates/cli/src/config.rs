//! Flat `key = value` run configuration for `solve`.

use std::collections::BTreeMap;
use std::str::FromStr;

use hmvp::{Error, GridSpec, Interpolation, PValue};

/// Keys accepted in a solver config file.
pub const KEYS: &[&str] = &[
    "n",
    "p",
    "eps",
    "delta_t",
    "domain_radius",
    "collar",
    "T",
    "lattice_ratio",
    "interpolation",
    "initial",
    "lateral",
    "data",
    "reference",
    "fp_tolerance",
    "max_inner_iters",
    "window_scale",
    "output",
];

/// Which slabs of the solution are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionOutput {
    Final,
    All,
    None,
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub grid: GridSpec,
    pub p: PValue,
    pub interpolation: Interpolation,
    pub initial: String,
    pub lateral: String,
    pub reference: Option<String>,
    pub fp_tolerance: Option<f64>,
    pub max_inner_iters: Option<usize>,
    pub window_scale: Option<f64>,
    pub output: SolutionOutput,
    /// Entries exactly as read, for the run manifest.
    pub raw: BTreeMap<String, String>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Splits the text into key/value pairs. Blank lines and `#` comments are
/// skipped; duplicate or unknown keys are rejected.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("line {}: expected key = value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(parse_err(format!(
                "line {}: unknown key '{k}' (known: {})",
                lineno + 1,
                KEYS.join(", ")
            )));
        }
        if v.is_empty() {
            return Err(parse_err(format!("line {}: empty value for '{k}'", lineno + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(parse_err(format!("line {}: duplicate key '{k}'", lineno + 1)));
        }
    }
    Ok(out)
}

fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, Error> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| parse_err(format!("cannot read '{key}' from '{v}'"))),
    }
}

fn require<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, Error> {
    get(map, key)?.ok_or_else(|| parse_err(format!("missing required key '{key}'")))
}

impl SolveConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let map = parse_pairs(text)?;
        let n: usize = require(&map, "n")?;
        let eps: f64 = require(&map, "eps")?;
        let p: PValue = map
            .get("p")
            .ok_or_else(|| parse_err("missing required key 'p'"))?
            .parse()?;
        let domain_radius: f64 = require(&map, "domain_radius")?;
        // The collar is what makes every interior ball lie on the grid.
        let collar: f64 = get(&map, "collar")?.ok_or_else(|| {
            Error::InvalidGrid("no collar given; it must be at least eps wide".into())
        })?;
        let interpolation: Interpolation = match map.get("interpolation") {
            Some(v) => v.parse()?,
            None => Interpolation::Lattice,
        };
        let desk = GridSpec::desk(n, eps);
        let grid = GridSpec {
            n,
            epsilon: eps,
            domain_radius,
            collar,
            lattice_ratio: get(&map, "lattice_ratio")?.unwrap_or(desk.lattice_ratio),
            t_final: get(&map, "T")?.unwrap_or(desk.t_final),
            delta_t: get(&map, "delta_t")?.unwrap_or(desk.delta_t),
            padding: match interpolation {
                Interpolation::Multilinear => 2,
                Interpolation::Lattice => 0,
            },
        };
        let data = map.get("data").cloned();
        let pick = |key: &str| -> Result<String, Error> {
            map.get(key)
                .cloned()
                .or_else(|| data.clone())
                .ok_or_else(|| parse_err(format!("missing '{key}' (or 'data')")))
        };
        let output = match map.get("output").map(String::as_str) {
            None | Some("final") => SolutionOutput::Final,
            Some("all") => SolutionOutput::All,
            Some("none") => SolutionOutput::None,
            Some(other) => {
                return Err(parse_err(format!("output must be final, all or none, got '{other}'")))
            }
        };
        Ok(Self {
            grid,
            p,
            interpolation,
            initial: pick("initial")?,
            lateral: pick("lateral")?,
            reference: map.get("reference").cloned(),
            fp_tolerance: get(&map, "fp_tolerance")?,
            max_inner_iters: get(&map, "max_inner_iters")?,
            window_scale: get(&map, "window_scale")?,
            output,
            raw: map,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "n = 1\np = 2\neps = 0.2\ndomain_radius = 0.5\ncollar = 0.2\ndata = const\n";

    #[test]
    fn parses_a_minimal_config() {
        let c = SolveConfig::parse(BASE).unwrap();
        assert_eq!(c.grid.n, 1);
        assert_eq!(c.initial, "const");
        assert_eq!(c.lateral, "const");
        assert_eq!(c.output, SolutionOutput::Final);
        assert!((c.grid.delta_t - 0.02).abs() < 1e-15);
    }

    #[test]
    fn comments_and_infinity() {
        let text = BASE.replace("p = 2", "p = inf  # midrange only");
        assert_eq!(SolveConfig::parse(&text).unwrap().p, PValue::Infinity);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            SolveConfig::parse(&BASE.replace("collar = 0.2\n", "")),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(SolveConfig::parse(&format!("{BASE}bogus = 1\n")), Err(Error::Parse(_))));
        assert!(matches!(SolveConfig::parse(&format!("{BASE}n = 2\n")), Err(Error::Parse(_))));
        assert!(matches!(SolveConfig::parse("n = one"), Err(Error::Parse(_))));
    }

    #[test]
    fn multilinear_gets_padding() {
        let c = SolveConfig::parse(&format!("{BASE}interpolation = multilinear\n")).unwrap();
        assert_eq!(c.grid.padding, 2);
    }
}
