use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerSettings;
use crate::error::{Error, Result};

/// How the joint set is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Highest refined pictorial-structure posterior across sets.
    Posterior,
    /// Lowest summed energy of the retrieved poses.
    Energy,
    /// Only the full-body set is used.
    AllOnly,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Posterior => "posterior",
            SelectionMode::Energy => "energy",
            SelectionMode::AllOnly => "all-only",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(SelectionMode::Posterior),
            "energy" => Ok(SelectionMode::Energy),
            "all-only" | "all" => Ok(SelectionMode::AllOnly),
            _ => Err(Error::InvalidParameter(format!("unknown mode `{s}`"))),
        }
    }
}

/// Every tunable of the lifting pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub omega_p: f64,
    pub omega_r: f64,
    pub omega_a: f64,
    /// Neighbours retrieved per joint set.
    pub k: usize,
    /// Neighbours kept after image-consistency weighting.
    pub k_w: usize,
    /// When false all `k` neighbours are kept with weight 1.
    pub weighted: bool,
    pub pca_dim: usize,
    pub root_eps: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub mode: SelectionMode,
    pub c_init: usize,
    pub c_refine: usize,
    pub alpha: f64,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            omega_p: 0.55,
            omega_r: 0.35,
            omega_a: 0.065,
            k: 256,
            k_w: 64,
            weighted: true,
            pca_dim: 18,
            root_eps: 1e-12,
            iterations: 2,
            restarts: 4,
            mode: SelectionMode::Posterior,
            c_init: 15,
            c_refine: 5,
            alpha: 0.1,
            seed: 0,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        let ws = [self.omega_p, self.omega_r, self.omega_a];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("energy weights must be finite and >= 0");
        }
        if self.k_w == 0 || self.k < self.k_w {
            return bad("need K >= K_w >= 1");
        }
        if self.pca_dim == 0 {
            return bad("pca_dim must be at least 1");
        }
        if !(self.root_eps > 0.0) {
            return bad("root_eps must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.restarts == 0 || self.restarts > 4 {
            return bad("restarts must be between 1 and 4");
        }
        if self.c_init == 0 || self.c_refine == 0 {
            return bad("mixture component counts must be positive");
        }
        if self.optimizer.max_iterations == 0 {
            return bad("optimizer needs at least one iteration");
        }
        Ok(())
    }

    /// Sets one key of the parameters file format.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| Error::InvalidParameter(format!("{key}: `{v}`: {e}")))
        }
        match key {
            "omega_p" => self.omega_p = num(key, value)?,
            "omega_r" => self.omega_r = num(key, value)?,
            "omega_a" => self.omega_a = num(key, value)?,
            "K" | "k" => self.k = num(key, value)?,
            "K_w" | "k_w" => self.k_w = num(key, value)?,
            "weighted" => self.weighted = num(key, value)?,
            "pca_dim" => self.pca_dim = num(key, value)?,
            "root_eps" => self.root_eps = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "restarts" => self.restarts = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "c_init" => self.c_init = num(key, value)?,
            "c_refine" => self.c_refine = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_iterations" => self.optimizer.max_iterations = num(key, value)?,
            "gradient_tolerance" => self.optimizer.gradient_tolerance = num(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown parameter `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<EnergyParams> {
        let mut p = EnergyParams::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Input {
                path: "params".into(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            p.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        format!(
            "omega_p = {}\nomega_r = {}\nomega_a = {}\nK = {}\nK_w = {}\nweighted = {}\npca_dim = {}\n\
             root_eps = {:e}\niterations = {}\nrestarts = {}\nmode = {}\nc_init = {}\nc_refine = {}\n\
             alpha = {}\nseed = {}\nmax_iterations = {}\ngradient_tolerance = {:e}\n",
            self.omega_p,
            self.omega_r,
            self.omega_a,
            self.k,
            self.k_w,
            self.weighted,
            self.pca_dim,
            self.root_eps,
            self.iterations,
            self.restarts,
            self.mode,
            self.c_init,
            self.c_refine,
            self.alpha,
            self.seed,
            self.optimizer.max_iterations,
            self.optimizer.gradient_tolerance,
        )
    }
}
