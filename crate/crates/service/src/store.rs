//! JSON documents on disk, one file per entity.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Topology,
    Portfolio,
    Run,
}

impl Kind {
    fn dir(self) -> &'static str {
        match self {
            Kind::Topology => "topologies",
            Kind::Portfolio => "portfolios",
            Kind::Run => "runs",
        }
    }
}

pub struct Store {
    root: PathBuf,
    writes: Mutex<()>,
}

fn internal(path: &Path, e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(format!("{}: {e}", path.display()))
}

/// Ids are generated by the service; anything else could escape the data directory.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for kind in [Kind::Topology, Kind::Portfolio, Kind::Run] {
            fs::create_dir_all(root.join(kind.dir()))?;
        }
        Ok(Store { root, writes: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory for auxiliary files of one entity, such as exported CSVs of a run.
    pub fn entity_dir(&self, kind: Kind, id: &str) -> PathBuf {
        self.root.join(kind.dir()).join(id)
    }

    fn path(&self, kind: Kind, id: &str) -> ApiResult<PathBuf> {
        if !valid_id(id) {
            return Err(ApiError::NotFound(format!("no {} with id `{id}`", kind.dir())));
        }
        Ok(self.root.join(kind.dir()).join(format!("{id}.json")))
    }

    pub fn put<T: Serialize>(&self, kind: Kind, id: &str, doc: &T) -> ApiResult<()> {
        let path = self.path(kind, id)?;
        let body = serde_json::to_vec_pretty(doc).map_err(|e| internal(&path, e))?;
        let _guard = self.writes.lock().expect("store lock");
        // Write then rename so readers never observe a partial document.
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|e| internal(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| internal(&path, e))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: Kind, id: &str) -> ApiResult<T> {
        let path = self.path(kind, id)?;
        let body = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ApiError::NotFound(format!("no {} with id `{id}`", kind.dir())))
            }
            Err(e) => return Err(internal(&path, e)),
        };
        serde_json::from_slice(&body).map_err(|e| internal(&path, e))
    }

    pub fn exists(&self, kind: Kind, id: &str) -> bool {
        self.path(kind, id).is_ok_and(|p| p.is_file())
    }

    pub fn ids(&self, kind: Kind) -> ApiResult<Vec<String>> {
        let dir = self.root.join(kind.dir());
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| internal(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_owned)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
