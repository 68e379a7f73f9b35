use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slowmix_core::flow::n_kappa_of;
use slowmix_core::profile::ShearProfile;

use crate::error::{FieldError, LabError, LabResult};
use crate::formats::read_profile_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Tdis,
    Mix,
    TwopointDrift,
    TwopointMinorize,
    Bounds,
    Closeness,
    PropCheck,
    RescaledTdis,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Self::Tdis,
        Self::Mix,
        Self::TwopointDrift,
        Self::TwopointMinorize,
        Self::Bounds,
        Self::Closeness,
        Self::PropCheck,
        Self::RescaledTdis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tdis => "tdis",
            Self::Mix => "mix",
            Self::TwopointDrift => "twopoint-drift",
            Self::TwopointMinorize => "twopoint-minorize",
            Self::Bounds => "bounds",
            Self::Closeness => "closeness",
            Self::PropCheck => "prop-check",
            Self::RescaledTdis => "rescaled-tdis",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Tunable knobs and their defaults.
    pub fn default_overrides(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::Tdis => &[("tol", 1e-3), ("s", 0.0), ("power_iters", 20.0)],
            Self::Mix => &[("k_max", 4.0), ("n_max", 14.0), ("s", 0.0)],
            Self::TwopointDrift => &[
                ("p", 1.0 / 16.0),
                ("s_star", 0.5),
                ("samples", 10_000.0),
                ("legs", 1.0),
                ("eta", 0.5),
                ("strata", 12.0),
                ("foster_samples", 24_000.0),
            ],
            Self::TwopointMinorize => &[("samples", 100_000.0), ("bins", 8.0), ("eta", 0.5)],
            Self::Bounds => &[
                ("d", 1.0),
                ("gamma", 1.0),
                ("p_poly", 0.0),
                ("c_delta", 1.0),
                ("delta", 0.1),
                ("grad", f64::NAN),
                ("c0", f64::NAN),
            ],
            Self::Closeness => &[("k_max", 4.0), ("t_max", 6.0)],
            Self::PropCheck => &[("k_max", 4.0), ("n_max", 14.0), ("fit_min", 4.0), ("gamma", f64::NAN), ("d", f64::NAN)],
            Self::RescaledTdis => &[
                ("tol", 1e-3),
                ("power_iters", 20.0),
                ("c_delta", 1.0),
                ("delta", 0.1),
                ("k_max", 4.0),
                ("n_max", 14.0),
                ("fit_min", 4.0),
                ("mix_grid", 256.0),
                ("gamma", f64::NAN),
            ],
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_profile() -> String {
    "cosine_bump".into()
}

fn default_substeps() -> usize {
    slowmix_core::advdiff::DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub kappa_list: Vec<f64>,
    pub amplitude: f64,
    #[serde(default = "default_profile")]
    pub profile_name: String,
    pub grid: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub out_path: String,
    /// Mixed into every worker seed.
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    /// Desk-scale preset: grid 256, 64 substeps, `κ ∈ {1/8, …, 1/64}`,
    /// `A = 50`, eight seeds.
    pub fn preset(experiment: Experiment, out_path: impl Into<String>) -> Self {
        Self {
            experiment,
            kappa_list: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            amplitude: 50.0,
            profile_name: default_profile(),
            grid: 256,
            seeds: (0..8).collect(),
            substeps: default_substeps(),
            out_path: out_path.into(),
            master_seed: 0,
            overrides: BTreeMap::new(),
        }
    }

    pub fn from_json_file(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LabError::config("config", e.to_string()))
    }

    /// Collects every field-level problem rather than stopping at the first.
    pub fn validate(&self) -> LabResult<()> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| errs.push(FieldError { field: field.into(), message });
        if self.kappa_list.is_empty() {
            bad("kappa_list", "must not be empty".into());
        }
        for (i, &k) in self.kappa_list.iter().enumerate() {
            let check = if self.experiment == Experiment::RescaledTdis { k.sqrt() } else { k };
            if let Err(e) = n_kappa_of(check) {
                bad(&format!("kappa_list[{i}]"), e.to_string());
            }
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            bad("amplitude", format!("{} is not a finite non-negative number", self.amplitude));
        }
        if !self.grid.is_power_of_two() || self.grid < 8 {
            bad("grid", format!("{} is not a power of two ≥ 8", self.grid));
        }
        if self.seeds.is_empty() {
            bad("seeds", "must not be empty".into());
        }
        if self.substeps == 0 {
            bad("substeps", "must be positive".into());
        }
        if self.out_path.is_empty() {
            bad("out_path", "must not be empty".into());
        }
        if let Err(e) = self.profile() {
            bad("profile_name", e.to_string());
        }
        let known = self.experiment.default_overrides();
        for (key, value) in &self.overrides {
            if !known.iter().any(|(k, _)| k == key) {
                let names: Vec<_> = known.iter().map(|(k, _)| *k).collect();
                bad(&format!("overrides.{key}"), format!("unknown for {}; expected one of {names:?}", self.experiment));
            } else if !value.is_finite() {
                bad(&format!("overrides.{key}"), "must be finite".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(LabError::ConfigInvalid(errs))
        }
    }

    /// A knob value: the override if present, otherwise the default (NaN
    /// marks "derive it").
    pub fn knob(&self, key: &str) -> f64 {
        self.overrides.get(key).copied().unwrap_or_else(|| {
            self.experiment
                .default_overrides()
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no knob {key} for {}", self.experiment))
        })
    }

    /// Built-in profiles by name; anything ending in `.csv` is read as a table.
    pub fn profile(&self) -> LabResult<ShearProfile> {
        if self.profile_name.ends_with(".csv") {
            read_profile_csv(Path::new(&self.profile_name))
        } else {
            Ok(ShearProfile::by_name(&self.profile_name)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_is_valid_and_round_trips() {
        let c = ExperimentConfig::preset(Experiment::Mix, "out.csv");
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.knob("n_max"), 14.0);
    }

    #[test]
    fn reports_every_bad_field() {
        let mut c = ExperimentConfig::preset(Experiment::Tdis, "");
        c.kappa_list.clear();
        c.grid = 100;
        c.seeds.clear();
        c.overrides.insert("bogus".into(), 1.0);
        match c.validate() {
            Err(LabError::ConfigInvalid(errs)) => {
                let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
                assert_eq!(fields, ["kappa_list", "grid", "seeds", "out_path", "overrides.bogus"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_names_parse() {
        for e in Experiment::ALL {
            assert_eq!(Experiment::from_name(e.name()), Some(e));
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.name()));
        }
    }
}
