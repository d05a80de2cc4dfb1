//! Run configuration files (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::remote::RemoteConfig;
use crate::backend::FineTuneConfig;
use crate::baselines::{ForestParams, SoftmaxParams};
use crate::error::{Error, Result};
use crate::evaluation::CiMethod;
use crate::experiment::GridConfig;
use crate::gles;
use crate::prompt::PromptTemplate;
use crate::synthetic::GeneratorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// Codebook TOML; the built-in GLES codebook when absent.
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    pub responses: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

/// A generator spec file path or an inline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSource {
    File(PathBuf),
    Inline(GeneratorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// `german`, `english`, or a template file.
    pub template: String,
    pub prefix_chars: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            template: "german".into(),
            prefix_chars: crate::backend::extract::DEFAULT_PREFIX_CHARS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmDef {
    pub backend: BackendChoice,
    /// Base model to fine-tune, or the model queried when `zero_shot`.
    pub model: String,
    pub zero_shot: bool,
    pub fine_tune: FineTuneConfig,
    pub remote: RemoteConfig,
    /// Items whose prompt line the mock backend conditions on, by priority.
    pub conditioning: Vec<String>,
}

impl Default for LlmDef {
    fn default() -> Self {
        LlmDef {
            backend: BackendChoice::Mock,
            model: String::new(),
            zero_shot: false,
            fine_tune: FineTuneConfig::default(),
            remote: RemoteConfig::default(),
            conditioning: vec![gles::PARTY_ID.into(), gles::EMPLOYMENT.into()],
        }
    }
}

impl LlmDef {
    pub fn fine_tune_config(&self) -> FineTuneConfig {
        let mut c = self.fine_tune.clone();
        if c.base_model.is_empty() {
            c.base_model = self.model.clone();
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImputerKind {
    Majority,
    Softmax(SoftmaxParams),
    Forest(ForestParams),
    Llm(LlmDef),
    External { dir: PathBuf },
    /// Exact posterior of the synthetic generator.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: ImputerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub experiment: String,
    pub imputer: String,
    pub fold: usize,
    pub repeats: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            experiment: "E1a".into(),
            imputer: String::new(),
            fold: 0,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiConfig {
    pub level: f64,
    pub method: CiMethod,
    /// Resamples for the bootstrap method.
    pub replicates: usize,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            level: 0.95,
            method: CiMethod::StudentT,
            replicates: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub max_workers: usize,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub generator: Option<GeneratorSource>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    pub imputers: Vec<ImputerDef>,
    #[serde(default)]
    pub importance: Option<ImportanceConfig>,
    #[serde(default)]
    pub ci: CiConfig,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn safe_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.')
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Parses a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.out_dir = resolve(base, &self.out_dir);
        if let Some(d) = &mut self.data {
            d.codebook = d.codebook.as_ref().map(|c| resolve(base, c));
            d.responses = resolve(base, &d.responses);
        }
        if let Some(GeneratorSource::File(p)) = &mut self.generator {
            *p = resolve(base, p);
        }
        if !matches!(self.prompt.template.as_str(), "german" | "de" | "english" | "en") {
            self.prompt.template = resolve(base, Path::new(&self.prompt.template))
                .to_string_lossy()
                .into_owned();
        }
        for imp in &mut self.imputers {
            if let ImputerKind::External { dir } = &mut imp.kind {
                *dir = resolve(base, dir);
            }
        }
    }

    pub fn generator_spec(&self) -> Result<Option<GeneratorSpec>> {
        match &self.generator {
            None => Ok(None),
            Some(GeneratorSource::Inline(spec)) => Ok(Some(spec.clone())),
            Some(GeneratorSource::File(p)) => GeneratorSpec::load(p).map(Some),
        }
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        PromptTemplate::resolve(&self.prompt.template).map_err(|e| match e {
            Error::Io { .. } => Error::Config(format!("template {:?}: {e}", self.prompt.template)),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.generator) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [data] or [generator], not both".into())),
            (None, None) => return Err(Error::Config("a run needs [data] or [generator]".into())),
            _ => {}
        }
        if let Some(d) = &self.data {
            for p in d.codebook.iter().chain([&d.responses]) {
                if !p.is_file() {
                    return Err(Error::Config(format!("{} does not exist", p.display())));
                }
            }
            if !d.delimiter.is_ascii() {
                return Err(Error::Config("delimiter must be an ASCII character".into()));
            }
        }
        if let Some(GeneratorSource::File(p)) = &self.generator {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.max_workers == 0 {
            return Err(Error::Config("max_workers must be positive".into()));
        }
        if !(self.ci.level > 0.0 && self.ci.level < 1.0) {
            return Err(Error::Config(format!("ci level {} outside (0, 1)", self.ci.level)));
        }
        if self.ci.method == CiMethod::Bootstrap && self.ci.replicates == 0 {
            return Err(Error::Config("bootstrap needs replicates".into()));
        }
        if self.imputers.is_empty() {
            return Err(Error::Config("no imputers configured".into()));
        }
        let mut names = BTreeSet::new();
        for imp in &self.imputers {
            if !safe_name(&imp.name) {
                return Err(Error::Config(format!(
                    "imputer name {:?} must be non-empty and use only letters, digits, '-', '_' or '.'",
                    imp.name
                )));
            }
            if !names.insert(imp.name.as_str()) {
                return Err(Error::Config(format!("duplicate imputer name {:?}", imp.name)));
            }
            match &imp.kind {
                ImputerKind::External { dir } if !dir.is_dir() => {
                    return Err(Error::Config(format!("{}: {} is not a directory", imp.name, dir.display())));
                }
                ImputerKind::Oracle if self.generator.is_none() => {
                    return Err(Error::Config(format!("{}: the oracle needs a [generator]", imp.name)));
                }
                ImputerKind::Llm(def) => {
                    if def.model.is_empty() && def.fine_tune.base_model.is_empty() {
                        return Err(Error::Config(format!("{}: no model", imp.name)));
                    }
                    if !def.zero_shot {
                        def.fine_tune_config().validate()?;
                    }
                    if def.backend == BackendChoice::Remote {
                        def.remote.validate()?;
                    }
                }
                _ => {}
            }
        }
        if let Some(imp) = &self.importance {
            if !names.contains(imp.imputer.as_str()) {
                return Err(Error::Config(format!("importance imputer {:?} is not configured", imp.imputer)));
            }
            if imp.repeats == 0 {
                return Err(Error::Config("importance repeats must be positive".into()));
            }
            if imp.fold >= self.grid.k {
                return Err(Error::Config(format!("importance fold {} out of range", imp.fold)));
            }
        }
        self.template()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
out_dir = "out"
seed = 3
max_workers = 2

[generator]
n = 200

[grid]
k = 3

[[imputers]]
name = "majority"
kind = "majority"

[[imputers]]
name = "lr"
kind = "softmax"
l2 = 0.5

[[imputers]]
name = "rf"
kind = "forest"
n_trees = 10

[[imputers]]
name = "mock"
kind = "llm"
model = "mock-base"

[importance]
imputer = "lr"
"#;

    #[test]
    fn parses_and_validates() {
        let mut c = RunConfig::from_toml_str(EXAMPLE).unwrap();
        c.resolve_paths(Path::new("/tmp/x"));
        assert_eq!(c.out_dir, Path::new("/tmp/x/out"));
        assert_eq!(c.grid.k, 3);
        assert_eq!(c.grid.filters.len(), 3);
        match &c.imputers[1].kind {
            ImputerKind::Softmax(p) => {
                assert_eq!(p.l2, 0.5);
                assert_eq!(p.max_iter, SoftmaxParams::default().max_iter);
            }
            k => panic!("{k:?}"),
        }
        match &c.imputers[3].kind {
            ImputerKind::Llm(d) => assert_eq!(d.fine_tune_config().base_model, "mock-base"),
            k => panic!("{k:?}"),
        }
        assert!(matches!(c.generator, Some(GeneratorSource::Inline(ref s)) if s.n == 200));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_missing_sources() {
        let mut c = RunConfig::from_toml_str(EXAMPLE).unwrap();
        c.imputers[1].name = "majority".into();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::from_toml_str(EXAMPLE).unwrap();
        c.generator = None;
        assert!(c.validate().is_err());
        c.data = Some(DataSource {
            codebook: None,
            responses: "/nonexistent.csv".into(),
            delimiter: ',',
        });
        assert!(c.validate().is_err());
        let mut c = RunConfig::from_toml_str(EXAMPLE).unwrap();
        c.imputers[0].name = "../up".into();
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml_str("out_dir = 1").is_err());
    }
}
