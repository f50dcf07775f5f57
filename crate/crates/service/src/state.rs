use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use nutrigraph::gat::GatModel;
use nutrigraph::kb::KnowledgeBase;

use crate::error::ApiError;

/// Immutable (model, KB catalog, active KB) triple. Requests clone the
/// `Arc` once and run entirely against it.
#[derive(Debug)]
pub struct Snapshot {
    pub model: Arc<GatModel>,
    pub kbs: Arc<BTreeMap<String, Arc<KnowledgeBase>>>,
    pub active: Option<String>,
}

impl Snapshot {
    pub fn kb(&self) -> Option<&Arc<KnowledgeBase>> {
        self.active.as_ref().and_then(|name| self.kbs.get(name))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{0}")]
    Core(#[from] nutrigraph::Error),
    #[error("knowledge base {name:?} has dimension {got}, the model expects {expected}")]
    KbDimension { name: String, expected: usize, got: usize },
    #[error("knowledge base name {0:?} is registered twice")]
    DuplicateKb(String),
    #[error("unknown knowledge base {0:?}")]
    UnknownKb(String),
    #[error("the model uses retrieval but no knowledge base was given")]
    NoKb,
}

/// Shared service state; empty until [`ServiceState::install`] succeeds.
#[derive(Debug, Default)]
pub struct ServiceState {
    snapshot: RwLock<Option<Arc<Snapshot>>>,
}

impl ServiceState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with(model: GatModel, kbs: Vec<(String, KnowledgeBase)>, active: Option<&str>) -> Result<Self, LoadError> {
        let state = Self::empty();
        state.install(model, kbs, active)?;
        Ok(state)
    }

    /// Validates and atomically installs a model with its KB catalog. The
    /// first registered KB is active unless `active` names another.
    pub fn install(
        &self,
        model: GatModel,
        kbs: Vec<(String, KnowledgeBase)>,
        active: Option<&str>,
    ) -> Result<(), LoadError> {
        let mut catalog = BTreeMap::new();
        let first = kbs.first().map(|(name, _)| name.clone());
        for (name, kb) in kbs {
            if kb.dim() != model.config.in_dim {
                return Err(LoadError::KbDimension {
                    name,
                    expected: model.config.in_dim,
                    got: kb.dim(),
                });
            }
            if catalog.insert(name.clone(), Arc::new(kb)).is_some() {
                return Err(LoadError::DuplicateKb(name));
            }
        }
        let active = match active {
            Some(name) if catalog.contains_key(name) => Some(name.to_string()),
            Some(name) => return Err(LoadError::UnknownKb(name.to_string())),
            None => first,
        };
        if model.retrieval_enabled && active.is_none() {
            return Err(LoadError::NoKb);
        }
        let snapshot = Snapshot {
            model: Arc::new(model),
            kbs: Arc::new(catalog),
            active,
        };
        *self.snapshot.write().expect("state lock") = Some(Arc::new(snapshot));
        Ok(())
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("state lock").clone()
    }

    pub fn require(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.snapshot().ok_or_else(ApiError::not_loaded)
    }

    /// Swaps the active KB. Requests already holding the old snapshot
    /// finish against it.
    pub fn select_kb(&self, name: &str) -> Result<Arc<Snapshot>, ApiError> {
        let mut guard = self.snapshot.write().expect("state lock");
        let current = guard.as_ref().ok_or_else(ApiError::not_loaded)?;
        if !current.kbs.contains_key(name) {
            return Err(ApiError::new(
                axum::http::StatusCode::NOT_FOUND,
                "unknown_kb",
                format!("unknown knowledge base {name:?}"),
            )
            .with_field("name"));
        }
        let next = Arc::new(Snapshot {
            model: Arc::clone(&current.model),
            kbs: Arc::clone(&current.kbs),
            active: Some(name.to_string()),
        });
        *guard = Some(Arc::clone(&next));
        Ok(next)
    }
}

/// Parses a `name=path` KB argument; a bare path is named by its file stem.
pub fn parse_kb_spec(spec: &str) -> (String, &Path) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), Path::new(path)),
        _ => {
            let path = Path::new(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

/// Loads a checkpoint and `name=path` KB files.
pub fn load_files(model: &Path, kb_specs: &[String]) -> Result<(GatModel, Vec<(String, KnowledgeBase)>), LoadError> {
    let model = GatModel::load(model)?;
    let mut kbs = Vec::with_capacity(kb_specs.len());
    for spec in kb_specs {
        let (name, path) = parse_kb_spec(spec);
        kbs.push((name, KnowledgeBase::load(path)?));
    }
    Ok((model, kbs))
}
