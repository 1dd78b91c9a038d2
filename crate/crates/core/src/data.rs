//! Experimental data: outcome, assignment, one-way observed strata indicator
//! and the two covariate blocks used by the score and outcome models.
//!
//! `s` is only observable for treated units. Every constructor enforces that,
//! because all downstream estimating equations rely on it.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Validated experimental dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Vec<bool>,
    s: Vec<Option<bool>>,
    xs: DMatrix<f64>,
    xy: DMatrix<f64>,
    xs_names: Vec<String>,
    xy_names: Vec<String>,
    cluster: Option<Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    ///
    /// `xs` and `xy` are `n × p` matrices; either may have zero columns.
    pub fn new(
        y: Vec<f64>,
        z: Vec<bool>,
        s: Vec<Option<bool>>,
        xs: DMatrix<f64>,
        xy: DMatrix<f64>,
        xs_names: Vec<String>,
        xy_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if z.len() != n || s.len() != n || xs.nrows() != n || xy.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows but z={}, s={}, xs={}, xy={}",
                z.len(),
                s.len(),
                xs.nrows(),
                xy.nrows()
            )));
        }
        if xs_names.len() != xs.ncols() || xy_names.len() != xy.ncols() {
            return Err(Error::Dimension(
                "column name count does not match covariate matrix width".into(),
            ));
        }
        for i in 0..n {
            match (z[i], s[i]) {
                (false, Some(_)) => {
                    return Err(Error::InvalidData(format!(
                        "unit {i}: S observed in control arm"
                    )))
                }
                (true, None) => {
                    return Err(Error::InvalidData(format!(
                        "unit {i}: S missing in treatment arm"
                    )))
                }
                _ => {}
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("unit {i}: non-finite outcome")));
        }
        if xs.iter().chain(xy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate value".into()));
        }
        let n_treated = z.iter().filter(|&&t| t).count();
        if n_treated == 0 {
            return Err(Error::InvalidData("empty treatment arm".into()));
        }
        if n_treated == n {
            return Err(Error::InvalidData("empty control arm".into()));
        }
        let n_s1 = s.iter().filter(|v| **v == Some(true)).count();
        if n_s1 == 0 || n_s1 == n_treated {
            return Err(Error::InvalidData(
                "treatment arm must contain both S=0 and S=1 units".into(),
            ));
        }
        Ok(Dataset {
            y,
            z,
            s,
            xs,
            xy,
            xs_names,
            xy_names,
            cluster: None,
        })
    }

    /// Attaches cluster labels (dense ids) used by the cluster bootstrap.
    pub fn with_clusters(mut self, cluster: Vec<usize>) -> Result<Self> {
        if cluster.len() != self.n() {
            return Err(Error::Dimension(format!(
                "cluster column has {} entries, dataset has {}",
                cluster.len(),
                self.n()
            )));
        }
        self.cluster = Some(cluster);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|&&t| t).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn s(&self) -> &[Option<bool>] {
        &self.s
    }

    /// `s` as 0/1 with control units mapped to 0. Only meaningful under `z`.
    pub fn s_or_zero(&self, i: usize) -> f64 {
        match self.s[i] {
            Some(true) => 1.0,
            _ => 0.0,
        }
    }

    pub fn xs(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn xy(&self) -> &DMatrix<f64> {
        &self.xy
    }

    pub fn xs_names(&self) -> &[String] {
        &self.xs_names
    }

    pub fn xy_names(&self) -> &[String] {
        &self.xy_names
    }

    pub fn cluster(&self) -> Option<&[usize]> {
        self.cluster.as_deref()
    }

    /// Gathers the given rows (repeats allowed) into a new dataset, re-running
    /// validation. Used by resampling.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let z = rows.iter().map(|&i| self.z[i]).collect();
        let s = rows.iter().map(|&i| self.s[i]).collect();
        let xs = DMatrix::from_fn(rows.len(), self.xs.ncols(), |r, c| self.xs[(rows[r], c)]);
        let xy = DMatrix::from_fn(rows.len(), self.xy.ncols(), |r, c| self.xy[(rows[r], c)]);
        let mut out = Dataset::new(
            y,
            z,
            s,
            xs,
            xy,
            self.xs_names.clone(),
            self.xy_names.clone(),
        )?;
        if let Some(cl) = &self.cluster {
            out.cluster = Some(rows.iter().map(|&i| cl[i]).collect());
        }
        Ok(out)
    }

    /// Replaces the covariate blocks, keeping outcome and assignment data.
    pub fn with_covariates(
        &self,
        xs: DMatrix<f64>,
        xs_names: Vec<String>,
        xy: DMatrix<f64>,
        xy_names: Vec<String>,
    ) -> Result<Dataset> {
        let mut out = Dataset::new(
            self.y.clone(),
            self.z.clone(),
            self.s.clone(),
            xs,
            xy,
            xs_names,
            xy_names,
        )?;
        out.cluster = self.cluster.clone();
        Ok(out)
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub outcome: String,
    pub treatment: String,
    pub strata: String,
    pub ps_covars: Vec<String>,
    pub out_covars: Vec<String>,
    pub cluster: Option<String>,
    /// Cell contents treated as missing. Empty cells are always missing.
    pub missing_tokens: Vec<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            outcome: "y".into(),
            treatment: "z".into(),
            strata: "s".into(),
            ps_covars: Vec::new(),
            out_covars: Vec::new(),
            cluster: None,
            missing_tokens: vec!["NA".into()],
        }
    }
}

impl ColumnSpec {
    /// Parses a `key=value` column configuration.
    ///
    /// Recognised keys: `outcome`, `treatment`, `strata`, `ps_covars`,
    /// `out_covars` (comma-separated lists), `cluster`, `missing`
    /// (comma-separated tokens). `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<ColumnSpec> {
        let mut spec = ColumnSpec::default();
        for (line, key, value) in key_values(text)? {
            match key {
                "outcome" => spec.outcome = value.to_string(),
                "treatment" => spec.treatment = value.to_string(),
                "strata" => spec.strata = value.to_string(),
                "ps_covars" => spec.ps_covars = split_list(value),
                "out_covars" => spec.out_covars = split_list(value),
                "cluster" => {
                    spec.cluster = if value.is_empty() {
                        None
                    } else {
                        Some(value.to_string())
                    }
                }
                "missing" => spec.missing_tokens = split_list(value),
                other => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        for (name, v) in [
            ("outcome", &spec.outcome),
            ("treatment", &spec.treatment),
            ("strata", &spec.strata),
        ] {
            if v.is_empty() {
                return Err(Error::Config {
                    line: 0,
                    message: format!("`{name}` must not be empty"),
                });
            }
        }
        Ok(spec)
    }

    pub fn load_config(path: impl AsRef<Path>) -> Result<ColumnSpec> {
        ColumnSpec::parse_config(&std::fs::read_to_string(path)?)
    }
}

/// Iterates `key=value` lines, skipping blanks and `#` comments. Lines are 1-based.
pub(crate) fn key_values(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config {
                line: idx + 1,
                message: format!("expected key=value, got `{line}`"),
            });
        };
        out.push((idx + 1, k.trim(), v.trim()));
    }
    Ok(out)
}

pub(crate) fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// What to do with rows that have a missing outcome, assignment or covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Fail with a row-indexed error.
    #[default]
    Reject,
    /// Drop the row and log how many were dropped.
    Listwise,
}

/// Reads a CSV file into a validated dataset.
pub fn load_csv(
    path: impl AsRef<Path>,
    spec: &ColumnSpec,
    policy: MissingPolicy,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, spec, policy)
}

/// Reads CSV from any reader. The header row names the columns.
pub fn read_csv<R: Read>(reader: R, spec: &ColumnSpec, policy: MissingPolicy) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = index_of(&spec.outcome)?;
    let z_col = index_of(&spec.treatment)?;
    let s_col = index_of(&spec.strata)?;
    let xs_cols = spec
        .ps_covars
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let xy_cols = spec
        .out_covars
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let cl_col = spec.cluster.as_deref().map(index_of).transpose()?;

    let is_missing = |cell: &str| cell.is_empty() || spec.missing_tokens.iter().any(|t| t == cell);

    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut s = Vec::new();
    let mut xs_vals = Vec::new();
    let mut xy_vals = Vec::new();
    let mut cluster_labels: Vec<String> = Vec::new();
    let mut dropped = 0usize;

    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = idx + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let name = |c: usize| headers.get(c).unwrap_or("").to_string();

        let required: Vec<usize> = [y_col, z_col]
            .into_iter()
            .chain(xs_cols.iter().copied())
            .chain(xy_cols.iter().copied())
            .chain(cl_col)
            .collect();
        if let Some(&c) = required.iter().find(|&&c| is_missing(cell(c))) {
            match policy {
                MissingPolicy::Reject => {
                    return Err(Error::Cell {
                        row,
                        column: name(c),
                        message: "missing value".into(),
                    })
                }
                MissingPolicy::Listwise => {
                    dropped += 1;
                    continue;
                }
            }
        }

        let number = |c: usize| -> Result<f64> {
            let raw = cell(c);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::Cell {
                    row,
                    column: name(c),
                    message: format!("non-finite value `{raw}`"),
                }),
                Err(_) => Err(Error::Cell {
                    row,
                    column: name(c),
                    message: format!("non-numeric value `{raw}`"),
                }),
            }
        };
        let binary = |c: usize| -> Result<bool> {
            let v = number(c)?;
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(Error::Cell {
                    row,
                    column: name(c),
                    message: format!("expected 0 or 1, got `{}`", cell(c)),
                })
            }
        };

        let zi = binary(z_col)?;
        let si = if is_missing(cell(s_col)) {
            if zi {
                return Err(Error::Cell {
                    row,
                    column: name(s_col),
                    message: "S missing in treatment arm".into(),
                });
            }
            None
        } else {
            if !zi {
                return Err(Error::Cell {
                    row,
                    column: name(s_col),
                    message: "S observed in control arm".into(),
                });
            }
            Some(binary(s_col)?)
        };
        y.push(number(y_col)?);
        z.push(zi);
        s.push(si);
        for &c in &xs_cols {
            xs_vals.push(number(c)?);
        }
        for &c in &xy_cols {
            xy_vals.push(number(c)?);
        }
        if let Some(c) = cl_col {
            cluster_labels.push(cell(c).to_string());
        }
    }
    if dropped > 0 {
        log::warn!("listwise deletion dropped {dropped} rows with missing values");
    }

    let n = y.len();
    let xs = DMatrix::from_row_slice(n, xs_cols.len(), &xs_vals);
    let xy = DMatrix::from_row_slice(n, xy_cols.len(), &xy_vals);
    let ds = Dataset::new(
        y,
        z,
        s,
        xs,
        xy,
        spec.ps_covars.clone(),
        spec.out_covars.clone(),
    )?;
    if cl_col.is_some() {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let dense = cluster_labels
            .into_iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l).or_insert(next)
            })
            .collect();
        ds.with_clusters(dense)
    } else {
        Ok(ds)
    }
}

/// Writes the dataset as CSV and returns the column spec that reloads it.
///
/// Covariates that appear under the same name in both blocks are written once;
/// they must hold identical values. Floats use shortest round-trip formatting.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<ColumnSpec> {
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (block, block_names) in [(d.xs(), d.xs_names()), (d.xy(), d.xy_names())] {
        for (j, name) in block_names.iter().enumerate() {
            let col: Vec<f64> = block.column(j).iter().copied().collect();
            if let Some(k) = names.iter().position(|m| m == name) {
                if columns[k] != col {
                    return Err(Error::InvalidData(format!(
                        "covariate `{name}` appears in both blocks with different values"
                    )));
                }
            } else {
                names.push(name.clone());
                columns.push(col);
            }
        }
    }
    let mut spec = ColumnSpec {
        ps_covars: d.xs_names().to_vec(),
        out_covars: d.xy_names().to_vec(),
        ..ColumnSpec::default()
    };
    for role in [&mut spec.outcome, &mut spec.treatment, &mut spec.strata] {
        while names.contains(role) {
            role.push('_');
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![spec.outcome.clone(), spec.treatment.clone(), spec.strata.clone()];
    header.extend(names.iter().cloned());
    if d.cluster().is_some() {
        let mut cl = "cluster".to_string();
        while header.contains(&cl) {
            cl.push('_');
        }
        header.push(cl.clone());
        spec.cluster = Some(cl);
    }
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![
            format!("{}", d.y()[i]),
            if d.z()[i] { "1" } else { "0" }.to_string(),
            match d.s()[i] {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => "NA".into(),
            },
        ];
        rec.extend(columns.iter().map(|c| format!("{}", c[i])));
        if let Some(cl) = d.cluster() {
            rec.push(cl[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(spec)
}

/// Whether `r_i` came from the observed indicator or an imputed score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorSource {
    Observed,
    Imputed,
}

/// The regressor `R`: observed `S` for treated units, principal score for controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedRegressor {
    pub r: Vec<f64>,
    pub source: Vec<RegressorSource>,
}

pub fn build_imputed_regressor(d: &Dataset, scores: &[f64]) -> Result<ImputedRegressor> {
    if scores.len() != d.n() {
        return Err(Error::Dimension(format!(
            "{} scores for {} units",
            scores.len(),
            d.n()
        )));
    }
    let mut r = Vec::with_capacity(d.n());
    let mut source = Vec::with_capacity(d.n());
    for i in 0..d.n() {
        if d.z()[i] {
            r.push(d.s_or_zero(i));
            source.push(RegressorSource::Observed);
        } else {
            let e = scores[i];
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidData(format!(
                    "unit {i}: score {e} outside [0, 1]"
                )));
            }
            r.push(e);
            source.push(RegressorSource::Imputed);
        }
    }
    Ok(ImputedRegressor { r, source })
}
