use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vinemix::dataio::ScreeningRules;
use vinemix::mixture::{FitConfig, InitMethod};
use vinemix::selection::DEFAULT_CANDIDATES;
use vinemix::vine::VineKind;

use crate::CliError;

/// Settings shared by every subcommand. Values come from `--config`, then
/// command-line flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Column schema; without it the first column is the zone id and all
    /// others are indicators.
    pub schema: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every logical core.
    pub threads: usize,
    pub fit: FitConfig,
    pub candidates: Vec<usize>,
    pub vines: Vec<VineKind>,
    pub inits: Vec<InitMethod>,
    pub screening: ScreeningRules,
    pub tie_tolerance: f64,
    pub model: Option<PathBuf>,
    pub compare: Option<PathBuf>,
    pub domains: Option<PathBuf>,
    pub ksearch: Option<PathBuf>,
    /// Rows per component for `simulate`.
    pub counts: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            schema: None,
            out: PathBuf::from("out"),
            seed: 1,
            threads: 0,
            fit: FitConfig::default(),
            candidates: DEFAULT_CANDIDATES.to_vec(),
            vines: vec![VineKind::Rvine, VineKind::Cvine],
            inits: vec![InitMethod::Kmeans, InitMethod::Gmm],
            screening: ScreeningRules::default(),
            tie_tolerance: 0.0,
            model: None,
            compare: None,
            domains: None,
            ksearch: None,
            counts: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn require_input(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::Usage("an input table is required (--input)".into()))
    }

    pub fn require_model(&self) -> Result<&Path, CliError> {
        self.model.as_deref().ok_or_else(|| CliError::Usage("a fitted model is required (--model)".into()))
    }
}
