//! Strict TOML run configuration. Every table rejects unknown keys; absent
//! keys fall back to the documented defaults.
//!
//! ```toml
//! [params]      # t_c = 1, beta = 2, q = 1, alpha = 0.5
//! [policy]      # eps_conv = 1e-8, delta_end = max(1e-9 t_c, 1e-12),
//!               # rel_tol = 1e-9, abs_tol = 1e-12, sign_eps = 0,
//!               # residual_tol = 1e-7
//! [initial]     # x0 = [1.0], bias = 0
//! [sweep]       # t_c/beta/q/alpha grids, x0_decades = [-6, 6],
//!               # law = "scalar" | "componentwise", dim = 2,
//!               # checks = [...all...], seed = 0
//! [output]      # trajectory, certificate, sweep (file paths)
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use timebarrier::sweep::{Check, Law, ParamGrid};
use timebarrier::{BarrierParams, NumericPolicy, SweepConfig};

pub const DEFAULT_T_C: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_Q: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_X0: f64 = 1.0;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub t_c: Option<f64>,
    pub beta: Option<f64>,
    pub q: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub eps_conv: Option<f64>,
    pub delta_end: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub sign_eps: Option<f64>,
    pub residual_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Option<Vec<f64>>,
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawName {
    Scalar,
    Componentwise,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t_c: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub x0_decades: Option<[i32; 2]>,
    pub law: Option<LawName>,
    pub dim: Option<usize>,
    pub checks: Option<Vec<String>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub trajectory: Option<PathBuf>,
    pub certificate: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("invalid config: {}", e.message()))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Parameters with flag values taking precedence over the file.
    pub fn params(&self, t_c: Option<f64>, beta: Option<f64>, q: Option<f64>, alpha: Option<f64>) -> BarrierParams {
        let s = &self.params;
        BarrierParams::new(
            t_c.or(s.t_c).unwrap_or(DEFAULT_T_C),
            beta.or(s.beta).unwrap_or(DEFAULT_BETA),
            q.or(s.q).unwrap_or(DEFAULT_Q),
            alpha.or(s.alpha).unwrap_or(DEFAULT_ALPHA),
        )
    }

    pub fn policy(&self) -> NumericPolicy {
        let d = NumericPolicy::default();
        let s = &self.policy;
        NumericPolicy {
            eps_conv: s.eps_conv.unwrap_or(d.eps_conv),
            delta_end: s.delta_end.or(d.delta_end),
            rel_tol: s.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: s.abs_tol.unwrap_or(d.abs_tol),
            sign_eps: s.sign_eps.unwrap_or(d.sign_eps),
            residual_tol: s.residual_tol.unwrap_or(d.residual_tol),
        }
    }

    pub fn x0(&self, flag: Option<Vec<f64>>) -> Vec<f64> {
        flag.filter(|v| !v.is_empty())
            .or_else(|| self.initial.x0.clone())
            .unwrap_or_else(|| vec![DEFAULT_X0])
    }

    pub fn sweep(&self) -> Result<SweepConfig, String> {
        let d = SweepConfig::default();
        let s = &self.sweep;
        let grid = ParamGrid {
            t_c: s.t_c.clone().unwrap_or(d.grid.t_c),
            beta: s.beta.clone().unwrap_or(d.grid.beta),
            q: s.q.clone().unwrap_or(d.grid.q),
            alpha: s.alpha.clone().unwrap_or(d.grid.alpha),
        };
        let law = match s.law.unwrap_or(LawName::Scalar) {
            LawName::Scalar => Law::Scalar,
            LawName::Componentwise => Law::Componentwise { dim: s.dim.unwrap_or(2) },
        };
        let checks = match &s.checks {
            None => d.checks,
            Some(names) => names
                .iter()
                .map(|n| Check::parse(n).ok_or_else(|| format!("invalid config: unknown check `{n}` in sweep.checks")))
                .collect::<Result<BTreeSet<_>, _>>()?,
        };
        let cfg = SweepConfig {
            grid,
            x0_decades: s.x0_decades.map_or(d.x0_decades, |[lo, hi]| (lo, hi)),
            law,
            checks,
            seed: s.seed.unwrap_or(d.seed),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.params(None, None, None, None), BarrierParams::new(1.0, 2.0, 1.0, 0.5));
        assert_eq!(cfg.policy(), NumericPolicy::default());
        assert_eq!(cfg.x0(None), vec![1.0]);
        assert_eq!(cfg.sweep().unwrap(), SweepConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let cfg = RunConfig::parse("[params]\nt_c = 3.0\nbeta = 5.0\n[initial]\nx0 = [1.0, -2.0]\n").unwrap();
        let p = cfg.params(None, Some(4.0), None, None);
        assert_eq!((p.t_c(), p.beta(), p.q()), (3.0, 4.0, 1.0));
        assert_eq!(cfg.x0(None), vec![1.0, -2.0]);
        assert_eq!(cfg.x0(Some(vec![5.0])), vec![5.0]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[policy]\nrel_tl = 1e-6\n").unwrap_err();
        assert!(err.contains("rel_tl"), "{err}");
        let err = RunConfig::parse("[extra]\n").unwrap_err();
        assert!(err.contains("extra"), "{err}");
        let err = RunConfig::parse("[sweep]\nchecks = [\"deadline\", \"speed\"]\n").unwrap().sweep().unwrap_err();
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn sweep_section() {
        let cfg = RunConfig::parse(
            "[sweep]\nt_c = [1.0]\nbeta = [2.0, 3.0]\nx0_decades = [0, 2]\nlaw = \"componentwise\"\ndim = 3\nchecks = []\nseed = 9\n",
        )
        .unwrap()
        .sweep()
        .unwrap();
        assert_eq!(cfg.grid.beta, vec![2.0, 3.0]);
        assert_eq!(cfg.x0_decades, (0, 2));
        assert_eq!(cfg.law, Law::Componentwise { dim: 3 });
        assert!(cfg.checks.is_empty());
        assert_eq!(cfg.seed, 9);
        assert!(RunConfig::parse("[sweep]\nx0_decades = [3, 1]\n").unwrap().sweep().is_err());
    }
}
