//! Observed data model, CSV ingestion, and first-stage diagnostics.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Maps CSV columns to roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    pub instrument: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Raw instrument values in the order they should be coded 0..K. When
    /// absent, raw values are sorted ascending (numerically if they all
    /// parse as numbers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument_order: Option<Vec<String>>,
}

impl Schema {
    pub fn new(outcome: &str, treatment: &str, instrument: &str, covariates: &[&str]) -> Self {
        Schema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            instrument: instrument.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            instrument_order: None,
        }
    }
}

/// An immutable, validated estimation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcome: Vec<f64>,
    treatment: Vec<f64>,
    /// Row-major n x d_x.
    covariates: Vec<f64>,
    instrument: Vec<u32>,
    d_x: usize,
    n_codes: usize,
    labels: Vec<String>,
    covariate_names: Vec<String>,
    dropped_rows: usize,
    warnings: Vec<String>,
}

impl Dataset {
    /// Build a dataset from columns. `covariates` is row-major with `d_x`
    /// columns. Instrument codes must be dense: every code in
    /// `0..=max` must appear.
    pub fn new(
        outcome: Vec<f64>,
        treatment: Vec<f64>,
        covariates: Vec<f64>,
        d_x: usize,
        instrument: Vec<u32>,
    ) -> Result<Self> {
        let k = instrument.iter().copied().max().map_or(0, |m| m as usize + 1);
        let labels = (0..k).map(|c| c.to_string()).collect();
        let names = (1..=d_x).map(|j| format!("x{j}")).collect();
        Self::with_labels(outcome, treatment, covariates, d_x, instrument, labels, names)
    }

    pub fn with_labels(
        outcome: Vec<f64>,
        treatment: Vec<f64>,
        covariates: Vec<f64>,
        d_x: usize,
        instrument: Vec<u32>,
        labels: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        if treatment.len() != n || instrument.len() != n || covariates.len() != n * d_x {
            return Err(Error::Schema("column lengths differ".into()));
        }
        if covariate_names.len() != d_x {
            return Err(Error::Schema("covariate name count differs from d_x".into()));
        }
        for (name, col) in [("outcome", &outcome), ("treatment", &treatment)] {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { column: name.into(), row: i });
            }
        }
        if let Some(p) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                column: covariate_names[p % d_x].clone(),
                row: p / d_x,
            });
        }
        let n_codes = labels.len();
        let mut counts = vec![0usize; n_codes];
        for &z in &instrument {
            let z = z as usize;
            if z >= n_codes {
                return Err(Error::Schema(format!("instrument code {z} has no label")));
            }
            counts[z] += 1;
        }
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyCell { label: labels[c].clone() });
        }
        if n_codes < 2 {
            return Err(Error::SingleInstrumentValue { label: labels.first().cloned().unwrap_or_default() });
        }
        let mut warnings = Vec::new();
        let mut sorted = treatment.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        sorted.dedup();
        if (sorted.len() as f64) < 0.5 * n as f64 {
            warnings.push(format!(
                "treatment is discrete-suspect: {} distinct values among {} rows",
                sorted.len(),
                n
            ));
        }
        Ok(Dataset {
            outcome,
            treatment,
            covariates,
            instrument,
            d_x,
            n_codes,
            labels,
            covariate_names,
            dropped_rows: 0,
            warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }
    pub fn d_x(&self) -> usize {
        self.d_x
    }
    /// Number of instrument values, K + 1.
    pub fn n_codes(&self) -> usize {
        self.n_codes
    }
    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }
    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }
    pub fn instrument(&self) -> &[u32] {
        &self.instrument
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.d_x..(i + 1) * self.d_x]
    }
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_codes];
        for &z in &self.instrument {
            c[z as usize] += 1;
        }
        c
    }

    /// Rows whose instrument code is `code`.
    pub fn cell_rows(&self, code: u32) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.instrument[i] == code).collect()
    }

    /// Copy with a different outcome column (same length).
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::Schema("outcome length differs".into()));
        }
        let mut d = self.clone();
        d.outcome = outcome;
        Ok(d)
    }

    /// Copy with a different treatment column (same length).
    pub fn with_treatment(&self, treatment: Vec<f64>) -> Result<Self> {
        if treatment.len() != self.n() {
            return Err(Error::Schema("treatment length differs".into()));
        }
        let mut d = self.clone();
        d.treatment = treatment;
        Ok(d)
    }

    /// Copy with instrument codes permuted: new code = `perm[old code]`.
    pub fn relabel_instrument(&self, perm: &[u32]) -> Result<Self> {
        if perm.len() != self.n_codes {
            return Err(Error::InvalidArgument("permutation length".into()));
        }
        let mut seen = vec![false; self.n_codes];
        for &p in perm {
            if p as usize >= self.n_codes || seen[p as usize] {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            seen[p as usize] = true;
        }
        let mut d = self.clone();
        d.instrument = self.instrument.iter().map(|&z| perm[z as usize]).collect();
        let mut labels = vec![String::new(); self.n_codes];
        for (old, &new) in perm.iter().enumerate() {
            labels[new as usize] = self.labels[old].clone();
        }
        d.labels = labels;
        Ok(d)
    }

    /// Rows selected by index (with repetition allowed), e.g. a bootstrap
    /// resample. Fails if some instrument cell ends up empty.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let d_x = self.d_x;
        let mut cov = Vec::with_capacity(rows.len() * d_x);
        for &i in rows {
            cov.extend_from_slice(self.x(i));
        }
        let mut d = Dataset::with_labels(
            rows.iter().map(|&i| self.outcome[i]).collect(),
            rows.iter().map(|&i| self.treatment[i]).collect(),
            cov,
            d_x,
            rows.iter().map(|&i| self.instrument[i]).collect(),
            self.labels.clone(),
            self.covariate_names.clone(),
        )?;
        d.warnings.clear();
        Ok(d)
    }

    /// Drop all covariates.
    pub fn without_covariates(&self) -> Self {
        let mut d = self.clone();
        d.covariates.clear();
        d.d_x = 0;
        d.covariate_names.clear();
        d
    }

    /// Write as CSV with columns y, t, covariates, z (instrument labels).
    pub fn write_csv<W: Write>(&self, w: W, schema: &Schema) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec![schema.outcome.clone(), schema.treatment.clone()];
        header.extend(schema.covariates.iter().cloned());
        header.push(schema.instrument.clone());
        if schema.covariates.len() != self.d_x {
            return Err(Error::Schema("schema covariate count differs from dataset".into()));
        }
        wr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = vec![self.outcome[i].to_string(), self.treatment[i].to_string()];
            rec.extend(self.x(i).iter().map(|v| v.to_string()));
            rec.push(self.labels[self.instrument[i] as usize].clone());
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Schema matching the column names this dataset carries.
    pub fn default_schema(&self) -> Schema {
        Schema {
            outcome: "y".into(),
            treatment: "t".into(),
            instrument: "z".into(),
            covariates: self.covariate_names.clone(),
            instrument_order: Some(self.labels.clone()),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

/// Parse a delimited table with a header row into a validated dataset.
/// Rows with any missing field among the schema columns are dropped and
/// counted.
pub fn load_dataset<R: Read>(source: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let iy = find(&schema.outcome)?;
    let it = find(&schema.treatment)?;
    let iz = find(&schema.instrument)?;
    let ix: Vec<usize> = schema.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let d_x = ix.len();

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    let mut zraw: Vec<String> = Vec::new();
    let mut dropped = 0usize;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = r + 1;
        let cols: Vec<usize> = [iy, it, iz].iter().chain(ix.iter()).copied().collect();
        if cols.iter().any(|&c| rec.get(c).map_or(true, is_missing)) {
            dropped += 1;
            continue;
        }
        let num = |c: usize, name: &str| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                column: name.into(),
                message: format!("`{s}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { column: name.into(), row });
            }
            Ok(v)
        };
        y.push(num(iy, &schema.outcome)?);
        t.push(num(it, &schema.treatment)?);
        for (j, &c) in ix.iter().enumerate() {
            x.push(num(c, &schema.covariates[j])?);
        }
        zraw.push(rec.get(iz).unwrap_or("").to_string());
    }

    let labels: Vec<String> = match &schema.instrument_order {
        Some(order) => {
            for z in &zraw {
                if !order.contains(z) {
                    return Err(Error::Schema(format!(
                        "instrument value `{z}` not in declared order"
                    )));
                }
            }
            order.clone()
        }
        None => {
            let mut u: Vec<String> = zraw.clone();
            u.sort();
            u.dedup();
            let numeric: Option<Vec<f64>> = u.iter().map(|s| s.parse::<f64>().ok()).collect();
            if let Some(vals) = numeric {
                let mut pairs: Vec<(f64, String)> = vals.into_iter().zip(u).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                pairs.into_iter().map(|p| p.1).collect()
            } else {
                u
            }
        }
    };
    let index: BTreeMap<&str, u32> =
        labels.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
    let z: Vec<u32> = zraw.iter().map(|s| index[s.as_str()]).collect();
    if y.is_empty() {
        return Err(Error::Schema("no complete rows".into()));
    }
    let mut d = Dataset::with_labels(y, t, x, d_x, z, labels, schema.covariates.clone())?;
    d.dropped_rows = dropped;
    if dropped > 0 {
        d.warnings.push(format!("dropped {dropped} rows with missing fields"));
    }
    Ok(d)
}

/// Mean gap between adjacent instrument cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub pair: (u32, u32),
    pub gap: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub pair: (u32, u32),
    /// sup_t (F_k(t) - F_{k-1}(t)): evidence against cell k dominating k-1.
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub labels: Vec<String>,
    pub cell_counts: Vec<usize>,
    pub mean_treatment_by_cell: Vec<f64>,
    pub first_stage_mean_gaps: Vec<PairGap>,
    pub ks_dominance: Vec<KsResult>,
    pub quantile_crossing_flags: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Advisory first-stage diagnostics for adjacent instrument codes.
pub fn diagnose(d: &Dataset, grid_size: usize) -> Result<Diagnostics> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid_size must be at least 2".into()));
    }
    let k = d.n_codes();
    let cells: Vec<Vec<f64>> = (0..k as u32)
        .map(|c| d.cell_rows(c).into_iter().map(|i| d.treatment()[i]).collect())
        .collect();
    let means: Vec<f64> = cells.iter().map(|c| stats::mean(c)).collect();
    let mut gaps = Vec::new();
    let mut ks = Vec::new();
    let mut crossing = Vec::new();
    for j in 1..k {
        let (a, b) = (&cells[j - 1], &cells[j]);
        let se = (stats::variance(a) / a.len() as f64 + stats::variance(b) / b.len() as f64).sqrt();
        gaps.push(PairGap { pair: (j as u32 - 1, j as u32), gap: means[j] - means[j - 1], se });
        let (stat, p) = stats::ks_one_sided(b, a);
        ks.push(KsResult { pair: (j as u32 - 1, j as u32), statistic: stat, p_value: p });
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(|x, y| x.total_cmp(y));
        sb.sort_by(|x, y| x.total_cmp(y));
        let (mut pos, mut neg) = (false, false);
        for g in 1..=grid_size {
            let u = (g as f64 - 0.5) / grid_size as f64;
            let dq = stats::quantile_sorted(&sb, u) - stats::quantile_sorted(&sa, u);
            pos |= dq > 0.0;
            neg |= dq < 0.0;
        }
        crossing.push(pos && neg);
    }
    Ok(Diagnostics {
        n: d.n(),
        labels: d.labels().to_vec(),
        cell_counts: d.cell_counts(),
        mean_treatment_by_cell: means,
        first_stage_mean_gaps: gaps,
        ks_dominance: ks,
        quantile_crossing_flags: crossing,
        warnings: d.warnings().to_vec(),
    })
}
