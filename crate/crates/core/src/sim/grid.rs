//! Plain-text grid specs: `key = value[, value…]` lines expanded to the
//! Cartesian product of their levels.
//!
//! ```text
//! preset = coverage        # optional starting point
//! n = 500
//! alpha = 0, 0.2, 0.5
//! errdist = normal, uniform
//! beta1 = 0, 0.3
//! sx_int = no, yes
//! zx_int = no, yes
//! reps = 500
//! seed = 1
//! estimators = all
//! boot_b = 200
//! ```

use crate::data::{key_values, split_list};
use crate::error::{Error, Result};
use crate::sim::cell::{ErrorDist, EstimatorSet, SimCell};

pub const MAX_CELLS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub errdist: Vec<ErrorDist>,
    pub beta1: Vec<f64>,
    pub sx_int: Vec<bool>,
    pub zx_int: Vec<bool>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: EstimatorSet,
    pub boot_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// The reference cell alone.
    Reference,
    /// 48 cells: α ∈ {0, 0.2, 0.5} × both residual laws × β₁ ∈ {0, 0.3} × both interaction flags.
    Coverage,
    /// n = 100, 200, …, 1000 at the reference levels.
    NSweep,
    /// α = 0, 0.2, 0.3, …, 1.0 at the reference levels.
    AlphaSweep,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Preset::Reference),
            "coverage" | "table2" => Ok(Preset::Coverage),
            "n-sweep" => Ok(Preset::NSweep),
            "alpha-sweep" => Ok(Preset::AlphaSweep),
            other => Err(Error::InvalidData(format!("unknown grid preset `{other}`"))),
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::from_cell(&SimCell::default())
    }
}

impl GridSpec {
    pub fn from_cell(c: &SimCell) -> Self {
        GridSpec {
            n: vec![c.n],
            alpha: vec![c.alpha],
            errdist: vec![c.errdist],
            beta1: vec![c.beta1],
            sx_int: vec![c.sz_interaction],
            zx_int: vec![c.zx_interaction],
            reps: c.reps,
            seed: c.seed,
            estimators: c.estimators,
            boot_b: c.boot_b,
        }
    }

    pub fn preset(p: Preset) -> Self {
        let mut g = GridSpec::default();
        match p {
            Preset::Reference => {}
            Preset::Coverage => {
                g.alpha = vec![0.0, 0.2, 0.5];
                g.errdist = vec![ErrorDist::Normal, ErrorDist::Uniform];
                g.beta1 = vec![0.0, 0.3];
                g.sx_int = vec![false, true];
                g.zx_int = vec![false, true];
            }
            Preset::NSweep => g.n = (1..=10).map(|k| 100 * k).collect(),
            Preset::AlphaSweep => {
                g.alpha = std::iter::once(0.0).chain((2..=10).map(|k| k as f64 / 10.0)).collect();
            }
        }
        g
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = key_values(text)?;
        let mut g = match pairs.iter().find(|(_, k, _)| *k == "preset") {
            Some((line, _, v)) => GridSpec::preset(v.parse().map_err(|e: Error| cfg(*line, e.to_string()))?),
            None => GridSpec::default(),
        };
        for (line, key, value) in pairs {
            let items = split_list(value);
            if items.is_empty() {
                return Err(cfg(line, format!("`{key}` has no value")));
            }
            let single = || -> Result<&str> {
                match items.as_slice() {
                    [one] => Ok(one.as_str()),
                    _ => Err(cfg(line, format!("`{key}` takes a single value"))),
                }
            };
            match key {
                "preset" => {}
                "n" => g.n = parse_all(&items, line, key)?,
                "alpha" => g.alpha = parse_all(&items, line, key)?,
                "errdist" => g.errdist = parse_all(&items, line, key)?,
                "beta1" => g.beta1 = parse_all(&items, line, key)?,
                "sx_int" => g.sx_int = parse_flags(&items, line, key)?,
                "zx_int" => g.zx_int = parse_flags(&items, line, key)?,
                "reps" => g.reps = parse_one(single()?, line, key)?,
                "seed" => g.seed = parse_one(single()?, line, key)?,
                "boot_b" => g.boot_b = parse_one(single()?, line, key)?,
                "estimators" => g.estimators = EstimatorSet::parse(value).map_err(|e| cfg(line, e.to_string()))?,
                other => return Err(cfg(line, format!("unknown key `{other}`"))),
            }
        }
        g.cells()?;
        Ok(g)
    }

    /// Expanded cells in a fixed order (n, α, residuals, β₁, X:S, X:Z).
    pub fn cells(&self) -> Result<Vec<SimCell>> {
        let count = [self.n.len(), self.alpha.len(), self.errdist.len(), self.beta1.len(), self.sx_int.len(), self.zx_int.len()]
            .iter()
            .try_fold(1usize, |acc, &k| acc.checked_mul(k))
            .unwrap_or(usize::MAX);
        if count > MAX_CELLS {
            return Err(Error::InvalidData(format!("grid expands to {count} cells (limit {MAX_CELLS})")));
        }
        let mut out = Vec::with_capacity(count);
        for &n in &self.n {
            for &alpha in &self.alpha {
                for &errdist in &self.errdist {
                    for &beta1 in &self.beta1 {
                        for &sz_interaction in &self.sx_int {
                            for &zx_interaction in &self.zx_int {
                                let c = SimCell {
                                    n,
                                    alpha,
                                    errdist,
                                    beta1,
                                    sz_interaction,
                                    zx_interaction,
                                    reps: self.reps,
                                    seed: self.seed,
                                    estimators: self.estimators,
                                    boot_b: self.boot_b,
                                };
                                c.validate()?;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn cfg(line: usize, message: String) -> Error {
    Error::Config { line, message }
}

fn parse_one<T: std::str::FromStr>(s: &str, line: usize, key: &str) -> Result<T> {
    s.parse().map_err(|_| cfg(line, format!("invalid value `{s}` for `{key}`")))
}

fn parse_all<T: std::str::FromStr>(items: &[String], line: usize, key: &str) -> Result<Vec<T>> {
    items.iter().map(|s| parse_one(s, line, key)).collect()
}

pub fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "yes" | "true" | "1" => Some(true),
        "no" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn parse_flags(items: &[String], line: usize, key: &str) -> Result<Vec<bool>> {
    items
        .iter()
        .map(|s| parse_flag(s).ok_or_else(|| cfg(line, format!("invalid flag `{s}` for `{key}`"))))
        .collect()
}
