use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use llmconf_core::generator::BackendRegistry;
use llmconf_core::model::ModelSpec;
use llmconf_core::perfdb::{load_db, PerfDatabase};
use llmconf_core::search::DEFAULT_MAX_CANDIDATES;
use llmconf_core::{Error, Result};

fn default_max_candidates() -> usize {
    DEFAULT_MAX_CANDIDATES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbEntry {
    pub id: String,
    pub path: PathBuf,
}

/// Startup configuration. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub databases: Vec<DbEntry>,
    /// Model descriptor files; each is addressed by its `name`.
    pub models: Vec<PathBuf>,
    /// Extra backend profiles layered over the bundled ones.
    #[serde(default)]
    pub backends_dir: Option<PathBuf>,
    /// Built UI assets served for non-API paths.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
    /// Allowed browser origin; any origin when unset.
    #[serde(default)]
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = serde_yaml::Deserializer::from_str(&text);
        let mut cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Document(format!("{}: {}: {}", path.display(), e.path(), e.inner())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for db in &mut cfg.databases {
            db.path = base.join(&db.path);
        }
        for m in &mut cfg.models {
            *m = base.join(&*m);
        }
        for dir in [&mut cfg.backends_dir, &mut cfg.static_dir].into_iter().flatten() {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }
}

/// Everything a request may reference. Immutable once serving.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub databases: BTreeMap<String, Arc<PerfDatabase>>,
    pub models: BTreeMap<String, ModelSpec>,
    pub backends: BackendRegistry,
    pub max_candidates: usize,
    pub static_dir: Option<PathBuf>,
    pub cors_origin: Option<String>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self {
            databases: BTreeMap::new(),
            models: BTreeMap::new(),
            backends: BackendRegistry::builtin(),
            max_candidates: DEFAULT_MAX_CANDIDATES,
            static_dir: None,
            cors_origin: None,
        }
    }
}

impl Catalog {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self> {
        let mut c = Catalog {
            max_candidates: cfg.max_candidates,
            static_dir: cfg.static_dir.clone(),
            cors_origin: cfg.cors_origin.clone(),
            ..Catalog::default()
        };
        for db in &cfg.databases {
            c.add_db(&db.id, load_db(&db.path)?)?;
        }
        for path in &cfg.models {
            c.add_model(ModelSpec::load(path)?)?;
        }
        if let Some(dir) = &cfg.backends_dir {
            c.backends.load_dir(dir)?;
        }
        Ok(c)
    }

    pub fn add_db(&mut self, id: &str, db: PerfDatabase) -> Result<()> {
        if self.databases.insert(id.to_string(), Arc::new(db)).is_some() {
            return Err(Error::Document(format!("database id {id} listed twice")));
        }
        Ok(())
    }

    pub fn add_model(&mut self, m: ModelSpec) -> Result<()> {
        m.validate()?;
        let name = m.name.clone();
        if self.models.insert(name.clone(), m).is_some() {
            return Err(Error::Document(format!("model {name} listed twice")));
        }
        Ok(())
    }
}
