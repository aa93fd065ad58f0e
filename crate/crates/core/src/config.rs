//! Run configuration files.
//!
//! TOML with one section per concern. Unknown keys are rejected and every
//! omitted key takes its default, so the resolved form written next to the
//! outputs is complete.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{FistaConfig, LbfgsConfig};
use crate::error::{Error, Result};
use crate::io::{from_toml, read_text, to_toml};
use crate::metrics::ReportFormat;
use crate::pipeline::{LayoutChoice, SmoothOnlyConfig, SolverName, SolverSpec};
use crate::relax::RelaxConfig;
use crate::synthetic::ScenarioSpec;

/// Smoothness weight tuned on the built-in synthetic.
pub const SYNTHETIC_GAMMA: f64 = 0.1;
/// Data weight for the penalized solvers tuned on the built-in synthetic.
pub const SYNTHETIC_LAMBDA_FIT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    pub solver: SolverName,
    pub layout: LayoutChoice,
    /// Overrides the budget derived from the observation count.
    pub sigma: Option<f64>,
    /// Singular values kept in reports.
    pub decay_count: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            solver: SolverName::Vr,
            layout: LayoutChoice::Block,
            sigma: None,
            decay_count: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Solvers run on the data when `runs` is empty.
    pub solvers: Vec<SolverName>,
    /// Existing `solve` output directories to tabulate instead.
    pub runs: Vec<PathBuf>,
    /// Fail unless `vr` has the smallest interpolation RMS.
    pub assert_ordering: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            solvers: SolverName::ALL.to_vec(),
            runs: Vec::new(),
            assert_ordering: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvdSection {
    /// `truth`, `observed`, or a tensor CSV path.
    pub inputs: Vec<String>,
    pub count: usize,
    pub layout: LayoutChoice,
}

impl Default for SvdSection {
    fn default() -> Self {
        Self {
            inputs: vec!["truth".into(), "observed".into()],
            count: 64,
            layout: LayoutChoice::Block,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds every random stream of the scenario.
    pub seed: u64,
    /// Directory written by `generate`. Without it the data are generated
    /// from `scenario` and `seed`. Relative paths resolve against the config
    /// file.
    pub data_dir: Option<PathBuf>,
    pub report_format: ReportFormat,
    pub scenario: ScenarioSpec,
    pub solve: SolveSection,
    pub vr: RelaxConfig,
    pub vr_exact: RelaxConfig,
    pub fista: FistaConfig,
    pub lbfgs: LbfgsConfig,
    pub smooth_only: SmoothOnlyConfig,
    pub lowrank_only: RelaxConfig,
    pub compare: CompareSection,
    pub svd: SvdSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vr = RelaxConfig {
            gamma: SYNTHETIC_GAMMA,
            ..RelaxConfig::default()
        };
        Self {
            seed: 1,
            data_dir: None,
            report_format: ReportFormat::Csv,
            scenario: ScenarioSpec::default().seeded(1),
            solve: SolveSection::default(),
            vr_exact: vr.clone(),
            vr,
            fista: FistaConfig {
                gamma: SYNTHETIC_GAMMA,
                lambda_fit: SYNTHETIC_LAMBDA_FIT,
                ..FistaConfig::default()
            },
            lbfgs: LbfgsConfig {
                gamma: SYNTHETIC_GAMMA,
                lambda_fit: SYNTHETIC_LAMBDA_FIT,
                ..LbfgsConfig::default()
            },
            smooth_only: SmoothOnlyConfig::default(),
            lowrank_only: RelaxConfig::lowrank_only(RelaxConfig::default().sigma),
            compare: CompareSection::default(),
            svd: SvdSection::default(),
            base_dir: PathBuf::new(),
        }
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn within(section: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{section}.{key}"),
            message,
        },
        other => other,
    }
}

impl RunConfig {
    /// Keys missing from `text` take the values of [`RunConfig::default`],
    /// including keys inside partially given sections.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        // Strict pass for unknown keys and types, with line numbers.
        let _: RunConfig = from_toml(origin, text)?;
        let user: toml::Table = from_toml(origin, text)?;
        let mut merged =
            toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Numerical(format!("toml encoding: {e}")))?;
        overlay(&mut merged, user);
        let mut c: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(origin, e.to_string()))?;
        c.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        c.set_seed(c.seed);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    /// Sets the master seed and the scenario streams derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scenario = self.scenario.seeded(seed);
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.grid().map_err(|e| within("scenario", e))?;
        if self.scenario.n_sources == 0 {
            return Err(Error::config("scenario.n_sources", "must be at least 1"));
        }
        let sc = &self.scenario;
        sc.field
            .validate(sc.n_sources)
            .map_err(|e| within("scenario.field", e))?;
        sc.mask.validate().map_err(|e| within("scenario.mask", e))?;
        sc.noise.validate().map_err(|e| within("scenario.noise", e))?;
        for (name, c) in [
            ("vr", &self.vr),
            ("vr_exact", &self.vr_exact),
            ("lowrank_only", &self.lowrank_only),
        ] {
            c.validate().map_err(|e| within(name, e))?;
        }
        self.fista.validate().map_err(|e| within("fista", e))?;
        self.lbfgs.validate().map_err(|e| within("lbfgs", e))?;
        self.smooth_only.validate().map_err(|e| within("smooth_only", e))?;
        if let Some(s) = self.solve.sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::config("solve.sigma", format!("must be >= 0, got {s}")));
            }
        }
        if self.solve.decay_count == 0 {
            return Err(Error::config("solve.decay_count", "must be at least 1"));
        }
        if self.svd.count == 0 {
            return Err(Error::config("svd.count", "must be at least 1"));
        }
        if self.compare.runs.is_empty() && self.compare.solvers.is_empty() {
            return Err(Error::config("compare.solvers", "nothing to compare"));
        }
        Ok(())
    }

    pub fn solver_spec(&self, name: SolverName) -> SolverSpec {
        match name {
            SolverName::Vr => SolverSpec::Vr(self.vr.clone()),
            SolverName::VrExact => SolverSpec::VrExact(self.vr_exact.clone()),
            SolverName::Fista => SolverSpec::Fista(self.fista.clone()),
            SolverName::Lbfgs => SolverSpec::Lbfgs(self.lbfgs.clone()),
            SolverName::SmoothOnly => SolverSpec::SmoothOnly(self.smooth_only.clone()),
            SolverName::LowrankOnly => SolverSpec::LowrankOnly(self.lowrank_only.clone()),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// The complete configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        to_toml(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("dir/run.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.scenario.nx, 20);
        assert_eq!(c.scenario.n_sources, 64);
        assert_eq!(c.solve.solver, SolverName::Vr);
        assert_eq!(c.vr.gamma, SYNTHETIC_GAMMA);
        assert_eq!(c.base_dir, Path::new("dir"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse("[vr]\ngama = 1.0\n"), Err(Error::Parse { .. })));
        assert!(parse("sed = 3\n").is_err());
        assert!(parse("[solve]\nsolver = \"vr_noise\"\n").is_err());
    }

    #[test]
    fn validation_names_the_key() {
        match parse("[fista]\nlambda_fit = -1.0\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "fista.lambda_fit"),
            other => panic!("{other:?}"),
        }
        match parse("[scenario]\nn_sources = 3\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "scenario.field.amplitude_rank"),
            other => panic!("{other:?}"),
        }
        match parse("[lowrank_only]\nrho_factor = 0.5\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lowrank_only.rho_factor"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_form_reparses_identically() {
        let c = parse("seed = 9\n[solve]\nsolver = \"fista\"\n[vr]\nrank_k = 12\n").unwrap();
        let text = c.to_toml().unwrap();
        let back = parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.scenario.noise.seed, 9);
        assert!(text.contains("rank_k = 12"));
        assert_eq!(c.vr.gamma, SYNTHETIC_GAMMA);
    }

    #[test]
    fn seed_reaches_every_stream() {
        let mut c = RunConfig::default();
        c.set_seed(42);
        assert_eq!(c.scenario.field.seed, 42);
        assert_eq!(c.scenario.mask.seed, 42);
        assert_eq!(c.scenario.noise.seed, 42);
    }

    #[test]
    fn relative_data_dir_resolves_against_config() {
        let c = parse("data_dir = \"data\"\n").unwrap();
        assert_eq!(c.resolve(c.data_dir.as_ref().unwrap()), Path::new("dir/data"));
    }
}
