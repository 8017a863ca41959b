//! The four subcommands. Each returns a JSON document, a text report and
//! whether the run succeeded; writing is left to the caller.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use drivest::dataset::{diagnose, Diagnostics};
use drivest::estimands::EstimateReport;
use drivest::simulate::{generate, monte_carlo, oracle_for_pair, verify_restrictions, DgpSpec, McEstimator};
use drivest::{estimate, load_dataset, Dataset, Error};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub struct Outcome {
    pub document: Value,
    pub text: String,
    pub success: bool,
    /// Extra files to write next to the report: (suffix, contents).
    pub extra: Vec<(String, String)>,
}

fn error_json(e: &Error) -> Value {
    json!({ "kind": e.kind(), "message": e.to_string() })
}

fn failed(command: &str, e: &Error) -> Outcome {
    Outcome {
        document: json!({ "command": command, "status": "error", "error": error_json(e) }),
        text: format!("{command} failed: {e}\n"),
        success: false,
        extra: vec![],
    }
}

/// Advisory warnings on grid size and sieve dimension for sample size `n`.
fn tuning_warnings(cfg: &RunConfig, n: usize) -> Vec<String> {
    let mut w = Vec::new();
    let nf = n as f64;
    let l = cfg.estimator.grid_size as f64;
    if l < nf.sqrt() * nf.ln() {
        w.push(format!(
            "grid of {} points is coarse for n = {n}; at least {:.0} keeps grid error below sampling error",
            cfg.estimator.grid_size,
            (nf.sqrt() * nf.ln()).ceil()
        ));
    }
    let j = cfg.estimator.basis.j as f64;
    if j > 1.0 && j * (j * j.ln() / nf).sqrt() > 1.0 {
        w.push(format!("sieve dimension J = {} is large for n = {n}", cfg.estimator.basis.j));
    }
    w
}

fn load(cfg: &RunConfig) -> std::result::Result<Dataset, Error> {
    let path = cfg.data.as_ref().expect("validated");
    let schema = cfg.schema.as_ref().expect("validated");
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_dataset(BufReader::new(f), schema)
}

fn stars(point: f64, se: Option<f64>) -> &'static str {
    let Some(se) = se.filter(|s| *s > 0.0) else { return "" };
    match (point / se).abs() {
        z if z >= 2.576 => "***",
        z if z >= 1.960 => "**",
        z if z >= 1.645 => "*",
        _ => "",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

#[derive(Serialize)]
struct EstimateRow {
    estimand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Value>,
}

pub fn run_estimate(cfg: &RunConfig) -> Result<Outcome> {
    let d = match load(cfg) {
        Ok(d) => d,
        Err(e) => return Ok(failed("estimate", &e)),
    };
    let warnings = tuning_warnings(cfg, d.n());
    let mut rows = Vec::new();
    let mut ok = true;
    for &kind in &cfg.estimands {
        match estimate(&d, kind, &cfg.estimator, cfg.pair, &cfg.inference) {
            Ok(r) => rows.push(EstimateRow { estimand: kind.to_string(), report: Some(r), error: None }),
            Err(e) => {
                ok = false;
                rows.push(EstimateRow { estimand: kind.to_string(), report: None, error: Some(error_json(&e)) });
            }
        }
    }

    let mut t = String::new();
    let labels = d.labels();
    let (a, b) = (cfg.pair.0 as usize, cfg.pair.1 as usize);
    let pair_label = match (labels.get(a), labels.get(b)) {
        (Some(x), Some(y)) => format!("{x} vs {y}"),
        _ => format!("{a} vs {b}"),
    };
    let _ = writeln!(t, "n = {}  instrument values: {}  pair: {pair_label}", d.n(), labels.join(", "));
    let _ = writeln!(
        t,
        "{:<22} {:>10} {:>10} {:>10} {:>23} {:>8}",
        "estimand", "estimate", "se", "boot se", "interval", "trimmed"
    );
    for r in &rows {
        match &r.report {
            Some(rep) => {
                let se = rep.se_plugin.or(rep.se_bootstrap);
                let ci = rep.ci.as_ref().map_or_else(|| "-".into(), |c| format!("[{:.4}, {:.4}]", c.lo, c.hi));
                let _ = writeln!(
                    t,
                    "{:<22} {:>10.4} {:>10} {:>10} {:>23} {:>8.3} {}",
                    r.estimand,
                    rep.point,
                    fmt_opt(rep.se_plugin),
                    fmt_opt(rep.se_bootstrap),
                    ci,
                    rep.trimmed_fraction,
                    stars(rep.point, se)
                );
            }
            None => {
                let msg = r.error.as_ref().and_then(|e| e["message"].as_str()).unwrap_or("");
                let _ = writeln!(t, "{:<22} error: {msg}", r.estimand);
            }
        }
    }
    let _ = writeln!(t, "* p<0.10, ** p<0.05, *** p<0.01 (normal approximation)");
    let all_warnings: Vec<&String> = d
        .warnings()
        .iter()
        .chain(&warnings)
        .chain(rows.iter().flat_map(|r| r.report.iter().flat_map(|rep| rep.warnings.iter())))
        .collect();
    for w in &all_warnings {
        let _ = writeln!(t, "warning: {w}");
    }

    let document = json!({
        "command": "estimate",
        "status": if ok { "ok" } else { "error" },
        "n": d.n(),
        "dropped_rows": d.dropped_rows(),
        "labels": labels,
        "cell_counts": d.cell_counts(),
        "pair": cfg.pair,
        "warnings": d.warnings().iter().chain(&warnings).collect::<Vec<_>>(),
        "results": rows,
    });
    Ok(Outcome { document, text: t, success: ok, extra: vec![] })
}

fn diagnostics_text(d: &Diagnostics) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "n = {}", d.n);
    let _ = writeln!(t, "{:<16} {:>8} {:>12}", "instrument", "count", "mean T");
    for k in 0..d.labels.len() {
        let _ = writeln!(t, "{:<16} {:>8} {:>12.4}", d.labels[k], d.cell_counts[k], d.mean_treatment_by_cell[k]);
    }
    let _ = writeln!(t, "\n{:<12} {:>10} {:>10} {:>10} {:>10} {:>9}", "pair", "gap", "se", "ks", "ks p", "crossing");
    for (i, g) in d.first_stage_mean_gaps.iter().enumerate() {
        let ks = &d.ks_dominance[i];
        let _ = writeln!(
            t,
            "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9}",
            format!("{}-{}", g.pair.0, g.pair.1),
            g.gap,
            g.se,
            ks.statistic,
            ks.p_value,
            if d.quantile_crossing_flags[i] { "yes" } else { "no" }
        );
    }
    for w in &d.warnings {
        let _ = writeln!(t, "warning: {w}");
    }
    t
}

pub fn run_diagnose(cfg: &RunConfig) -> Result<Outcome> {
    let d = match load(cfg) {
        Ok(d) => d,
        Err(e) => return Ok(failed("diagnose", &e)),
    };
    let diag = match diagnose(&d, cfg.estimator.grid_size) {
        Ok(x) => x,
        Err(e) => return Ok(failed("diagnose", &e)),
    };
    let mut text = diagnostics_text(&diag);
    for w in d.warnings() {
        let _ = writeln!(text, "warning: {w}");
    }
    let document = json!({
        "command": "diagnose",
        "status": "ok",
        "dropped_rows": d.dropped_rows(),
        "data_warnings": d.warnings(),
        "diagnostics": diag,
    });
    Ok(Outcome { document, text, success: true, extra: vec![] })
}

pub fn run_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let spec: DgpSpec = cfg.load_spec()?;
    let d = match generate(&spec, cfg.n, cfg.seed) {
        Ok(d) => d,
        Err(e) => return Ok(failed("simulate", &e)),
    };
    let mut csv = Vec::new();
    d.write_csv(&mut csv, &d.default_schema())?;
    let csv = String::from_utf8(csv).context("generated CSV is not UTF-8")?;
    let check = verify_restrictions(&spec, 2000);

    let pair = (cfg.pair.0 as usize, cfg.pair.1 as usize);
    let mut oracles = Vec::new();
    let mut t = String::new();
    let _ = writeln!(t, "design {}  n = {}  seed = {}", spec.name, cfg.n, cfg.seed);
    let _ = writeln!(t, "cell counts: {:?}", d.cell_counts());
    if let Ok(c) = &check {
        let _ = writeln!(
            t,
            "monotone: declared {} observed {}; rank similar: declared {} observed {}",
            spec.restrictions.monotone, c.monotone_holds, spec.restrictions.rank_similar, c.rank_similar_holds
        );
    }
    let _ = writeln!(t, "{:<22} {:>12} {:>12}", "oracle", "value", "error bound");
    for k in &cfg.estimands {
        let id = k.to_string();
        match oracle_for_pair(&spec, &id, pair, cfg.oracle_resolution) {
            Ok(o) => {
                let _ = writeln!(t, "{:<22} {:>12.6} {:>12.2e}", id, o.value, o.error_bound);
                oracles.push(json!({ "estimand": id, "value": o.value, "error_bound": o.error_bound }));
            }
            Err(e) => {
                let _ = writeln!(t, "{:<22} unavailable: {e}", id);
                oracles.push(json!({ "estimand": id, "error": error_json(&e) }));
            }
        }
    }
    let data_file = format!("{}.csv", cfg.output.display());
    let _ = writeln!(t, "data written to {data_file}");
    let document = json!({
        "command": "simulate",
        "status": "ok",
        "spec": spec.name,
        "n": cfg.n,
        "seed": cfg.seed,
        "data": data_file,
        "cell_counts": d.cell_counts(),
        "restrictions_declared": spec.restrictions,
        "restrictions_observed": check.ok(),
        "oracles": oracles,
    });
    Ok(Outcome { document, text: t, success: true, extra: vec![("csv".into(), csv)] })
}

pub fn run_mc(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.load_spec()?;
    let estimators = cfg
        .estimands
        .iter()
        .map(|&k| McEstimator {
            config: cfg.estimator.clone(),
            pair: cfg.pair,
            inference: cfg.inference,
            ..McEstimator::new(&k.to_string(), k)
        })
        .collect::<Vec<_>>();
    // estimands without an oracle on this design are still summarized
    let mut notes = Vec::new();
    let mut estimators = estimators;
    for e in &mut estimators {
        let pair = (cfg.pair.0 as usize, cfg.pair.1 as usize);
        if let Err(err) = oracle_for_pair(&spec, &e.label, pair, cfg.oracle_resolution) {
            notes.push(format!("{}: no oracle ({err})", e.label));
            e.oracle = Some("none".into());
        }
    }
    match monte_carlo(&spec, &estimators, cfg.reps, cfg.n, cfg.seed, cfg.oracle_resolution) {
        Ok(report) => {
            let mut text = report.to_table();
            for n in &notes {
                let _ = writeln!(text, "note: {n}");
            }
            let document = json!({ "command": "mc", "status": "ok", "notes": notes, "report": report });
            Ok(Outcome { document, text, success: true, extra: vec![] })
        }
        Err(e) => Ok(failed("mc", &e)),
    }
}
