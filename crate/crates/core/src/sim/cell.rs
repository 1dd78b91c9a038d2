use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    #[default]
    Normal,
    Uniform,
}

impl ErrorDist {
    pub fn name(self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ErrorDist::Normal),
            "uniform" => Ok(ErrorDist::Uniform),
            other => Err(Error::InvalidData(format!("unknown residual distribution `{other}`"))),
        }
    }
}

/// Which estimators a simulation cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub geepers: bool,
    pub psw: bool,
    pub mixture: bool,
}

impl EstimatorSet {
    pub const ALL: EstimatorSet = EstimatorSet { geepers: true, psw: true, mixture: true };
    pub const GEEPERS: EstimatorSet = EstimatorSet { geepers: true, psw: false, mixture: false };

    /// Parses a comma-separated list such as `geepers,psw` or `all`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut set = EstimatorSet { geepers: false, psw: false, mixture: false };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "all" => set = EstimatorSet::ALL,
                "geepers" => set.geepers = true,
                "psw" => set.psw = true,
                "mixture" => set.mixture = true,
                other => return Err(Error::InvalidData(format!("unknown estimator `{other}`"))),
            }
        }
        if set.names().is_empty() {
            return Err(Error::InvalidData("no estimator selected".into()));
        }
        Ok(set)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.geepers {
            out.push("geepers");
        }
        if self.mixture {
            out.push("mixture");
        }
        if self.psw {
            out.push("psw");
        }
        out
    }
}

/// One factor combination of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    /// Units per arm.
    pub n: usize,
    pub alpha: f64,
    pub errdist: ErrorDist,
    pub beta1: f64,
    /// Covariate slope differs by latent stratum.
    pub sz_interaction: bool,
    /// Covariate slope differs by arm.
    pub zx_interaction: bool,
    pub reps: usize,
    pub seed: u64,
    pub estimators: EstimatorSet,
    /// Bootstrap replicates for PSW standard errors.
    pub boot_b: usize,
}

impl Default for SimCell {
    fn default() -> Self {
        SimCell {
            n: 500,
            alpha: 0.5,
            errdist: ErrorDist::Normal,
            beta1: 0.3,
            sz_interaction: false,
            zx_interaction: false,
            reps: 500,
            seed: 20_240_101,
            estimators: EstimatorSet::ALL,
            boot_b: 200,
        }
    }
}

/// Outcome-model coefficients implied by a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub beta1: f64,
    pub beta3: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl SimCell {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidData(format!("invalid simulation cell: {m}")));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and non-negative");
        }
        if !self.beta1.is_finite() {
            return bad("beta1 must be finite");
        }
        if self.reps < 1 {
            return bad("reps must be at least 1");
        }
        if self.estimators.psw && self.boot_b < 2 {
            return bad("boot_b must be at least 2");
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Coefficients {
        let root6 = 6f64.sqrt();
        let (gamma1, gamma2) = if self.sz_interaction {
            (3.0 / (4.0 * root6), 1.0 / (2.0 * root6))
        } else {
            (1.0 / root6, 0.0)
        };
        Coefficients {
            beta1: self.beta1,
            beta3: 0.3 - self.beta1,
            gamma1,
            gamma2,
            gamma3: if self.zx_interaction { 1.0 / (2.0 * root6) } else { 0.0 },
        }
    }

    /// True `(τ⁰, τ¹)`. The arm interaction multiplies `x₁ + x₂`, which is
    /// independent of the score index `x₁ − x₂ + x₃`, so it averages to zero
    /// within each stratum.
    pub fn true_effects(&self) -> (f64, f64) {
        (0.0, self.coefficients().beta3)
    }

    /// Stable identity of the factor levels; seed, reps and estimator choice excluded.
    pub fn id_hash(&self) -> u64 {
        rng::mix(&[
            self.n as u64,
            self.alpha.to_bits(),
            self.errdist as u64,
            self.beta1.to_bits(),
            self.sz_interaction as u64,
            self.zx_interaction as u64,
        ])
    }

    pub fn label(&self) -> String {
        let yn = |b: bool| if b { "yes" } else { "no" };
        format!(
            "n={} alpha={} err={} b1={} sx={} zx={}",
            self.n,
            self.alpha,
            self.errdist.name(),
            self.beta1,
            yn(self.sz_interaction),
            yn(self.zx_interaction)
        )
    }
}
