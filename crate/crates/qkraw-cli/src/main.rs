//! Command-line front end for the quantum q-Krawtchouk workspace.
//!
//! Subcommands: `eval` (one value), `table` (CSV/JSON grids), `verify`
//! (relation catalog with JSON report), `oracle` (closed-form vs. operator
//! matrix elements). Exit codes: 0 pass, 1 verification failure, 2
//! usage/domain error, 3 I/O error.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use qkraw_core::identities::{self, RelationId, ResidualReport};
use qkraw_core::oscillator::{self, ConjugationId, SectorBasis};
use qkraw_core::polys::{self, MultiIndex, QParamsBi};

#[derive(Parser)]
#[command(name = "qkraw", version, about = "quantum q-Krawtchouk evaluation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    Uni,
    Bi,
    Multi,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ParamArgs {
    /// Base q, 0 < q < 1.
    #[arg(long, default_value_t = 0.7)]
    q: f64,
    /// First rotation angle.
    #[arg(long, default_value_t = 0.15)]
    theta: f64,
    /// Second rotation angle (bivariate and up).
    #[arg(long, default_value_t = 0.2)]
    phi: f64,
    /// Comma-separated angle list for the multivariate family.
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Grid level N.
    #[arg(long = "N", default_value_t = 4)]
    big_n: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Print one polynomial or matrix-element value.
    Eval {
        #[arg(long, value_enum)]
        family: Family,
        #[command(flatten)]
        params: ParamArgs,
        /// Degree (univariate) or comma list of degrees (multivariate).
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<i64>>,
        /// Variable (univariate) or comma list of variables (multivariate).
        #[arg(long, value_delimiter = ',')]
        x: Option<Vec<i64>>,
        #[arg(long)]
        n1: Option<i64>,
        #[arg(long)]
        n2: Option<i64>,
        #[arg(long)]
        x1: Option<i64>,
        #[arg(long)]
        x2: Option<i64>,
        /// Univariate parameter p; defaults to theta^-2 when omitted.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Emit the full admissible grid as CSV or JSON.
    Table {
        #[arg(long, value_enum)]
        family: Family,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the relation catalog and write a JSON report.
    Verify {
        #[command(flatten)]
        params: ParamArgs,
        /// Restrict to a single relation id (e.g. DIFF_1).
        #[arg(long)]
        relation: Option<String>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form matrix elements against the operator model.
    Oracle {
        /// Number of rotation factors (1, 2 or 3).
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Formats with 15 significant digits, trimming trailing zeros so small
/// integers print as themselves.
fn sig15(v: f64) -> String {
    let s = format!("{v:.14e}");
    let (mant, exp) = s.split_once('e').expect("exponential format");
    let mant = mant.trim_end_matches('0').trim_end_matches('.');
    if exp == "0" {
        mant.to_string()
    } else {
        format!("{mant}e{exp}")
    }
}

/// Fixed 15-significant-digit CSV cell.
fn csv_num(v: f64) -> String {
    format!("{v:.14e}")
}

fn emit(out: &Option<PathBuf>, content: &str) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content),
        None => std::io::stdout().write_all(content.as_bytes()),
    }
}

/// (a, b) pairs with a + b <= n, lexicographic.
fn grid(n: i64) -> Vec<(i64, i64)> {
    let mut v = Vec::new();
    for a in 0..=n {
        for b in 0..=(n - a) {
            v.push((a, b));
        }
    }
    v
}

fn usage_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn io_err(e: std::io::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(3)
}

fn multi_thetas(params: &ParamArgs, d: usize) -> Vec<f64> {
    match &params.thetas {
        Some(t) => t.clone(),
        None => {
            let mut t = vec![params.theta, params.phi];
            while t.len() < d {
                let k = t.len();
                t.push(0.5 * (t[k - 1] + t[k - 2]));
            }
            t.truncate(d);
            t
        }
    }
}

fn cmd_eval(
    family: Family,
    params: &ParamArgs,
    n: Option<Vec<i64>>,
    x: Option<Vec<i64>>,
    bi: (Option<i64>, Option<i64>, Option<i64>, Option<i64>),
    p: Option<f64>,
) -> Result<ExitCode, ExitCode> {
    let value = match family {
        Family::Uni => {
            let n = single(n, "--n")?;
            let x = single(x, "--x")?;
            let pv = p.unwrap_or(1.0 / (params.theta * params.theta));
            polys::qkraw_uni(n, x, pv, params.q, params.big_n as i64)
        }
        Family::Bi => {
            let (n1, n2, x1, x2) = (
                bi.0.ok_or_else(|| usage_err("--n1 required for --family bi"))?,
                bi.1.ok_or_else(|| usage_err("--n2 required for --family bi"))?,
                bi.2.ok_or_else(|| usage_err("--x1 required for --family bi"))?,
                bi.3.ok_or_else(|| usage_err("--x2 required for --family bi"))?,
            );
            let pp = QParamsBi::new(params.q, params.theta, params.phi, params.big_n)
                .map_err(usage_err)?;
            polys::qkraw_bi(n1, n2, x1, x2, &pp)
        }
        Family::Multi => {
            let n = n.ok_or_else(|| usage_err("--n list required for --family multi"))?;
            let x = x.ok_or_else(|| usage_err("--x list required for --family multi"))?;
            let d = n.len();
            let thetas = multi_thetas(params, d);
            let to_u32 = |v: &[i64]| -> Result<Vec<u32>, ExitCode> {
                v.iter()
                    .map(|&a| u32::try_from(a).map_err(|_| usage_err("indices must be >= 0")))
                    .collect()
            };
            let ni = MultiIndex::new(to_u32(&n)?, params.big_n).map_err(usage_err)?;
            let xi = MultiIndex::new(to_u32(&x)?, params.big_n).map_err(usage_err)?;
            polys::xi_multi(&ni, &xi, &thetas, params.q).map_err(usage_err)?
        }
    };
    println!("{}", sig15(value));
    Ok(ExitCode::SUCCESS)
}

fn single(v: Option<Vec<i64>>, flag: &str) -> Result<i64, ExitCode> {
    match v.as_deref() {
        Some([one]) => Ok(*one),
        _ => Err(usage_err(format!("{flag} expects exactly one value"))),
    }
}

/// Table row: labelled integer index columns followed by labelled value columns.
type TableRow = (Vec<(&'static str, i64)>, Vec<(&'static str, f64)>);

fn cmd_table(
    family: Family,
    params: &ParamArgs,
    format: Format,
    out: &Option<PathBuf>,
) -> Result<ExitCode, ExitCode> {
    let nn = params.big_n as i64;
    let mut rows: Vec<TableRow> = Vec::new();
    match family {
        Family::Uni => {
            let (q, th) = (params.q, params.theta);
            let pv = 1.0 / (th * th);
            for n in 0..=nn {
                for x in 0..=nn {
                    let k = polys::qkraw_uni(n, x, pv, q, nn);
                    let xi = polys::xi_uni(n, x, nn, th, q).map_err(usage_err)?;
                    let w = polys::omega(x, nn, th, q).map_err(usage_err)?;
                    rows.push((
                        vec![("n", n), ("x", x)],
                        vec![("k", k), ("xi", xi), ("weight", w * w)],
                    ));
                }
            }
        }
        Family::Bi => {
            let pp = QParamsBi::new(params.q, params.theta, params.phi, params.big_n)
                .map_err(usage_err)?;
            for (n1, n2) in grid(nn) {
                for (x1, x2) in grid(nn) {
                    let k = polys::qkraw_bi(n1, n2, x1, x2, &pp);
                    let xi = polys::xi_bi(n1, n2, x1, x2, &pp).map_err(usage_err)?;
                    let w = polys::weight_w(x1, x2, &pp).map_err(usage_err)?;
                    rows.push((
                        vec![("n1", n1), ("n2", n2), ("x1", x1), ("x2", x2)],
                        vec![("K", k), ("Xi", xi), ("Delta", w * w)],
                    ));
                }
            }
        }
        Family::Multi => return Err(usage_err("table supports --family uni|bi")),
    }
    let content = match format {
        Format::Csv => {
            let (ints, floats) = &rows[0];
            let mut header: Vec<&str> = ints.iter().map(|(k, _)| *k).collect();
            header.extend(floats.iter().map(|(k, _)| *k));
            let mut s = header.join(",");
            s.push('\n');
            for (ints, floats) in &rows {
                let mut cells: Vec<String> = ints.iter().map(|(_, v)| v.to_string()).collect();
                cells.extend(floats.iter().map(|(_, v)| csv_num(*v)));
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let arr: Vec<Value> = rows
                .iter()
                .map(|(ints, floats)| {
                    let mut obj = serde_json::Map::new();
                    for (k, v) in ints {
                        obj.insert((*k).into(), json!(v));
                    }
                    for (k, v) in floats {
                        obj.insert((*k).into(), json!(v));
                    }
                    Value::Object(obj)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&arr).expect("serializable");
            s.push('\n');
            s
        }
    };
    emit(out, &content).map_err(io_err)?;
    Ok(ExitCode::SUCCESS)
}

fn report_json(rep: &ResidualReport) -> Value {
    json!({
        "id": rep.relation.name(),
        "level": rep.level.name(),
        "grid_points": rep.grid_points,
        "max_residual": rep.max_residual,
        "mean_residual": rep.mean_residual,
        "tol": rep.tol,
        "pass": rep.pass,
        "suspected_typo": rep.suspected_typo,
    })
}

fn params_json(p: &QParamsBi) -> Value {
    json!({"q": p.q, "theta": p.theta, "phi": p.phi, "N": p.big_n})
}

fn cmd_verify(
    params: &ParamArgs,
    relation: &Option<String>,
    tol: f64,
    out: &Option<PathBuf>,
) -> Result<ExitCode, ExitCode> {
    let pp =
        QParamsBi::new(params.q, params.theta, params.phi, params.big_n).map_err(usage_err)?;
    let reports: Vec<ResidualReport> = match relation {
        Some(name) => {
            let id = RelationId::parse(name).map_err(usage_err)?;
            id.levels()
                .iter()
                .map(|&lv| identities::check_relation(id, lv, &pp, tol))
                .collect::<Result<_, _>>()
                .map_err(usage_err)?
        }
        None => identities::check_all(&pp, tol),
    };
    let pass = reports.iter().all(|r| r.pass);
    let doc = json!({
        "params": params_json(&pp),
        "relations": reports.iter().map(report_json).collect::<Vec<_>>(),
        "pass": pass,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    emit(out, &s).map_err(io_err)?;
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_oracle(
    d: usize,
    params: &ParamArgs,
    tol: f64,
    out: &Option<PathBuf>,
) -> Result<ExitCode, ExitCode> {
    if !(1..=3).contains(&d) {
        return Err(usage_err("--d must be 1, 2 or 3"));
    }
    let (q, nn) = (params.q, params.big_n);
    let thetas = multi_thetas(params, d);
    let basis = SectorBasis::fixed(nn, d).map_err(usage_err)?;
    let u = oscillator::ordered_u_product(&basis, &thetas, q).map_err(usage_err)?;

    // closed-form vs. operator entries
    let mut max_elem = 0.0f64;
    let pp = if d == 2 {
        Some(QParamsBi::new(q, thetas[0], thetas[1], nn).map_err(usage_err)?)
    } else {
        None
    };
    for (i, s) in basis.states.iter().enumerate() {
        for (j, t) in basis.states.iter().enumerate() {
            let m = u.get(i, j);
            let v = match d {
                1 => polys::xi_uni(s[0] as i64, t[0] as i64, nn as i64, thetas[0], q)
                    .map_err(usage_err)?,
                2 => polys::xi_bi(
                    s[0] as i64,
                    s[1] as i64,
                    t[0] as i64,
                    t[1] as i64,
                    pp.as_ref().expect("bivariate params"),
                )
                .map_err(usage_err)?,
                _ => {
                    let ni = MultiIndex::new(s[..d].to_vec(), nn).map_err(usage_err)?;
                    let xm = MultiIndex::new(t[..d].to_vec(), nn).map_err(usage_err)?;
                    polys::xi_multi(&ni, &xm, &thetas, q).map_err(usage_err)?
                }
            };
            max_elem = max_elem.max(qkraw_core::rel_residual(m, v));
        }
    }

    // unitarity of the ordered product
    let unitarity = u
        .dagger()
        .mul(&u)
        .residual_from_identity();

    // operator conjugation catalog (uses the first two angles)
    let mut conj = Vec::new();
    let mut max_conj = 0.0f64;
    for id in ConjugationId::ALL {
        let r = oscillator::conjugation_residual(id, nn, q, thetas[0], *thetas.get(1).unwrap_or(&thetas[0]))
            .map_err(usage_err)?;
        max_conj = max_conj.max(r);
        conj.push(json!({"id": id.name(), "residual": r}));
    }

    let pass = max_elem <= tol && unitarity <= tol && max_conj <= tol;
    let doc = json!({
        "params": {"q": q, "thetas": thetas, "N": nn, "d": d},
        "matrix_elements": {"max_residual": max_elem, "tol": tol},
        "unitarity": {"max_residual": unitarity, "tol": tol},
        "conjugations": conj,
        "pass": pass,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    emit(out, &s).map_err(io_err)?;
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Eval {
            family,
            params,
            n,
            x,
            n1,
            n2,
            x1,
            x2,
            p,
        } => cmd_eval(
            *family,
            params,
            n.clone(),
            x.clone(),
            (*n1, *n2, *x1, *x2),
            *p,
        ),
        Command::Table {
            family,
            params,
            format,
            out,
        } => cmd_table(*family, params, *format, out),
        Command::Verify {
            params,
            relation,
            tol,
            out,
        } => cmd_verify(params, relation, *tol, out),
        Command::Oracle { d, params, tol, out } => cmd_oracle(*d, params, *tol, out),
    };
    match result {
        Ok(code) => code,
        Err(code) => code,
    }
}
