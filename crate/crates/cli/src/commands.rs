use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use hmvp::dpp::{solve_with, update_residual, GridStats, SlabDiagnostics, SlabError, UpdateOperator};
use hmvp::mvp::{counterexample_report, expansion_study};
use hmvp::{
    alpha_beta, build_rule, error_report, m_constant, moment_check, resolve_field, Error, HPoint,
    MvpParams, PValue, Resolution, SolverConfig, SpaceTimeGrid,
};

use crate::config::{SolutionOutput, SolveConfig};
use crate::output::{sci, Sink};

/// State shared by every command: the artifact sink and the parameters
/// recorded in the manifest.
pub struct Ctx {
    pub sink: Sink,
    pub params: BTreeMap<String, String>,
}

impl Ctx {
    fn record(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_p(s: &str) -> Result<PValue, Error> {
    s.parse()
}

fn ladder(eps: &[f64]) -> Result<(), Error> {
    if eps.iter().any(|e| e.is_nan() || *e <= 0.0 || !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("radii must be positive, got {}", join(eps))));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    /// Group indices.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub n: Vec<i64>,
    /// Exponents; `inf` is accepted.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,inf")]
    pub p: Vec<String>,
}

pub fn constants(args: &ConstantsArgs, ctx: &mut Ctx) -> Result<bool> {
    ctx.record("n", join(&args.n));
    ctx.record("p", args.p.join(","));
    let ps: Vec<PValue> = args.p.iter().map(|s| parse_p(s)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for &n in &args.n {
        if n < 1 {
            return Err(Error::InvalidArgument(format!("group index must be at least 1, got {n}")).into());
        }
        let n = n as usize;
        let m = m_constant(n)?;
        say!("n = {n}: M = {m:.17}");
        for &p in &ps {
            let (a, b) = alpha_beta(p, n)?;
            say!("  p = {p:<6} alpha = {a:<22.17} beta = {b:.17}");
            rows.push(vec![n.to_string(), p.to_string(), sci(m), sci(a), sci(b)]);
        }
    }
    ctx.sink.csv("constants.csv", &["n", "p", "M", "alpha", "beta"], rows)?;
    Ok(true)
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Node counts `n_rho,n_phi,n_theta...` with one theta count or one per
    /// angle; defaults to a rule tuned for `n`.
    #[arg(long, value_delimiter = ',')]
    pub resolution: Option<Vec<usize>>,
    /// Tolerance for moments that must vanish.
    #[arg(long, default_value_t = 1e-12)]
    pub zero_tol: f64,
    /// Relative tolerance for the diagonal moments against `M(n) eps^2`.
    #[arg(long, default_value_t = 1e-5)]
    pub rel_tol: f64,
}

#[derive(Serialize)]
struct MomentsOut<'a> {
    report: &'a hmvp::MomentReport,
    resolution: &'a Resolution,
    nodes: usize,
    weighted_volume: f64,
    weighted_volume_error_estimate: f64,
    volume: f64,
    zero_tol: f64,
    rel_tol: f64,
    passed: bool,
}

pub fn moments(args: &MomentsArgs, ctx: &mut Ctx) -> Result<bool> {
    ctx.record("n", args.n);
    ctx.record("eps", args.eps);
    ctx.record("zero_tol", args.zero_tol);
    ctx.record("rel_tol", args.rel_tol);
    if args.n < 1 {
        return Err(Error::InvalidArgument("group index must be at least 1".into()).into());
    }
    let res = match &args.resolution {
        None => Resolution::default_for(args.n),
        Some(v) if v.len() >= 3 => {
            if v.len() == 3 {
                Resolution::new(v[0], v[1], v[2])
            } else {
                Resolution::per_angle(v[0], v[1], v[2..].to_vec())
            }
        }
        Some(v) => {
            return Err(Error::InvalidArgument(format!(
                "resolution needs at least three counts, got {}",
                join(v)
            ))
            .into())
        }
    };
    ctx.record("resolution", join(&[vec![res.n_rho, res.n_phi], res.n_theta.clone()].concat()));
    let rule = build_rule(args.n, args.eps, res.clone())?;
    let report = moment_check(args.n, args.eps, &rule)?;
    let (wv, wv_err) = rule.weighted_volume_with_error()?;
    let passed = report.passes(args.zero_tol, args.rel_tol);
    say!(
        "n = {}, eps = {}: {} nodes, M estimate {:.12} vs closed form {:.12} (rel {:.2e})",
        args.n,
        args.eps,
        rule.len(),
        report.m_estimate,
        report.m_closed_form,
        report.relative_m_error()
    );
    say!(
        "odd {:.2e}, cross {:.2e}, vertical {:.2e}: {}",
        report.odd_moments,
        report.cross_moments,
        report.vertical_moment,
        if passed { "pass" } else { "FAIL" }
    );
    ctx.sink.json(
        "moments.json",
        &MomentsOut {
            report: &report,
            resolution: &res,
            nodes: rule.len(),
            weighted_volume: wv,
            weighted_volume_error_estimate: wv_err,
            volume: rule.volume(),
            zero_tol: args.zero_tol,
            rel_tol: args.rel_tol,
            passed,
        },
    )?;
    Ok(passed)
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Built-in field id or a polynomial in t, x1, ..., x{2n+1}.
    #[arg(long)]
    pub field: String,
    /// Group index; inferred from `--at` when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value = "2")]
    pub p: String,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    pub eps: Vec<f64>,
    /// Space-time point `t,x1,...,x{2n+1}`; defaults to `t = 0` at the origin.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub at: Option<Vec<f64>>,
    /// Time window length in units of `eps^2`.
    #[arg(long)]
    pub window_scale: Option<f64>,
    /// The run passes when the fitted order exceeds this.
    #[arg(long, default_value_t = 2.2)]
    pub min_order: f64,
}

#[derive(Serialize)]
struct ExpandOut<'a> {
    study: &'a hmvp::mvp::ExpansionStudy,
    params: &'a MvpParams,
    min_order: f64,
    passed: bool,
}

pub fn expand(args: &ExpandArgs, ctx: &mut Ctx) -> Result<bool> {
    let p = parse_p(&args.p)?;
    ladder(&args.eps)?;
    let n = match (&args.at, args.n) {
        (Some(at), n) => {
            if at.len() < 4 || (at.len() - 2) % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "--at needs t followed by 2n+1 coordinates, got {} numbers",
                    at.len()
                ))
                .into());
            }
            let inferred = (at.len() - 2) / 2;
            if let Some(n) = n {
                if n != inferred {
                    return Err(Error::InvalidArgument(format!(
                        "--n {n} does not match a point with {} coordinates",
                        at.len() - 1
                    ))
                    .into());
                }
            }
            inferred
        }
        (None, Some(n)) => n,
        (None, None) => 1,
    };
    let (t, x) = match &args.at {
        Some(at) => (at[0], HPoint::new(n, &at[1..])?),
        None => (0.0, HPoint::origin(n)),
    };
    ctx.record("field", &args.field);
    ctx.record("n", n);
    ctx.record("p", p);
    ctx.record("eps", join(&args.eps));
    ctx.record("at", join(&[vec![t], x.coords().to_vec()].concat()));
    ctx.record("min_order", args.min_order);
    let u = resolve_field(&args.field, n)?;
    let mut base = MvpParams::new(n, p, args.eps[0])?;
    if let Some(s) = args.window_scale {
        base = base.with_window_scale(s)?;
    }
    ctx.record("window_scale", base.time_window_scale);
    let study = expansion_study(&u, t, &x, &base, &args.eps)?;
    let order = study.report.fitted_order;
    let passed = order > args.min_order;
    say!("field {} at t = {t}, x = {:?}, p = {p}", u.label(), x.coords());
    for pt in &study.points {
        say!("  eps = {:<6} residual = {:+.6e}", pt.eps, pt.residual);
    }
    say!("fitted order {order:.4} ({})", if passed { "pass" } else { "FAIL" });
    ctx.sink.json(
        "expand.json",
        &ExpandOut {
            study: &study,
            params: &base,
            min_order: args.min_order,
            passed,
        },
    )?;
    ctx.sink.csv(
        "expand.csv",
        &["eps", "residual", "predicted_term", "operator_value"],
        study.csv_rows().iter().map(|r| r.iter().map(|v| sci(*v)).collect()),
    )?;
    Ok(passed)
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    pub eps: Vec<f64>,
}

pub fn counterexample(args: &CounterexampleArgs, ctx: &mut Ctx) -> Result<bool> {
    ladder(&args.eps)?;
    ctx.record("eps", join(&args.eps));
    let report = counterexample_report(&args.eps)?;
    for e in &report.entries {
        say!(
            "eps = {:<6} value - 12 = {:+.10e}  predicted {:+.10e}  (rel {:.2e})",
            e.eps, e.residual, e.predicted_term, e.residual_rel_error
        );
    }
    say!(
        "fitted order {:.4}; heat identity error {:.1e}: {}",
        report.fit.fitted_order,
        report.heat_identity_max_error,
        if report.passed() { "pass" } else { "FAIL" }
    );
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a hmvp::mvp::CounterexampleReport,
        passed: bool,
    }
    ctx.sink.json(
        "counterexample.json",
        &Out {
            report: &report,
            passed: report.passed(),
        },
    )?;
    ctx.sink.csv(
        "counterexample.csv",
        &["eps", "residual", "predicted_term", "value"],
        report.csv_rows().iter().map(|r| r.iter().map(|v| sci(*v)).collect()),
    )?;
    Ok(report.passed())
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Flat `key = value` configuration file.
    pub config: PathBuf,
}

#[derive(Serialize)]
struct SolveOut<'a> {
    grid: GridStats,
    params: &'a MvpParams,
    interpolation: String,
    calibration: &'a Option<hmvp::dpp::Calibration>,
    time_weights: &'a [f64],
    update_residual: f64,
    slabs: &'a [SlabDiagnostics],
    #[serde(skip_serializing_if = "Option::is_none")]
    errors: Option<&'a [SlabError]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_error: Option<f64>,
}

pub fn solve(args: &SolveArgs, ctx: &mut Ctx) -> Result<bool> {
    ctx.record("config", args.config.display());
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = SolveConfig::parse(&text)?;
    for (k, v) in &cfg.raw {
        ctx.record(&format!("config.{k}"), v);
    }
    let n = cfg.grid.n;
    let grid = Arc::new(SpaceTimeGrid::new(cfg.grid.clone())?);
    let mut params = MvpParams::new(n, cfg.p, cfg.grid.epsilon)?;
    if let Some(s) = cfg.window_scale {
        params = params.with_window_scale(s)?;
    }
    let mut sc = SolverConfig::new(params.clone());
    sc.interpolation = cfg.interpolation;
    if let Some(v) = cfg.fp_tolerance {
        sc.fp_tolerance = v;
    }
    if let Some(v) = cfg.max_inner_iters {
        sc.max_inner_iters = v;
    }
    let initial = resolve_field(&cfg.initial, n)?;
    let lateral = resolve_field(&cfg.lateral, n)?;
    let reference = cfg.reference.as_deref().map(|r| resolve_field(r, n)).transpose()?;

    let stats = grid.stats();
    say!(
        "grid: {} nodes ({} interior), {} slabs, h = {}",
        stats.nodes, stats.interior, stats.slabs, stats.h
    );
    let op = UpdateOperator::build(&grid, &sc)?;
    let field = solve_with(&grid, &sc, &op, &initial, &lateral)?;
    let residual = update_residual(&field, &op);
    let errors = reference.as_ref().map(|r| error_report(&field, r)).transpose()?;
    let max_error = errors
        .as_ref()
        .map(|e| e.iter().map(|s| s.max_error).fold(0.0, f64::max));
    let sweeps: usize = field.diagnostics.iter().map(|d| d.iterations).sum();
    say!("solved in {sweeps} sweeps; update residual {residual:.2e}");
    if let Some(m) = max_error {
        say!("max error against {}: {m:.6e}", cfg.reference.as_deref().unwrap_or(""));
    }

    if cfg.output != SolutionOutput::None {
        let last = grid.times.len() - 1;
        let mut header: Vec<String> = vec!["k".into(), "t".into()];
        header.extend((1..=2 * n + 1).map(|i| format!("x{i}")));
        header.extend(["value".into(), "provenance".into()]);
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        let all = cfg.output == SolutionOutput::All;
        let rows = field.export_rows().filter(|r| all || r.k == last).map(|r| {
            let mut row = vec![r.k.to_string(), sci(r.t)];
            row.extend(r.coords.iter().map(|c| sci(*c)));
            row.push(sci(r.value));
            row.push(r.provenance.as_str().to_string());
            row
        });
        ctx.sink.csv("solution.csv", &header_ref, rows)?;
    }
    if let Some(errs) = &errors {
        ctx.sink.csv(
            "errors.csv",
            &["k", "t", "max_error", "l2_error"],
            errs.iter()
                .map(|e| vec![e.k.to_string(), sci(e.t), sci(e.max_error), sci(e.l2_error)]),
        )?;
    }
    ctx.sink.json(
        "solve.json",
        &SolveOut {
            grid: stats,
            params: &params,
            interpolation: cfg.interpolation.to_string(),
            calibration: &field.calibration,
            time_weights: &op.time_weights,
            update_residual: residual,
            slabs: &field.diagnostics,
            errors: errors.as_deref(),
            max_error,
        },
    )?;
    Ok(true)
}

/// Reads `HMVP_THREADS`, falling back to the flag.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("HMVP_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("HMVP_THREADS must be a positive integer, got '{v}'")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(flag),
    }
}
