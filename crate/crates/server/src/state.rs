//! Data directory, cached volumes, previews and live sessions.

use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synthtumor_core::generator::{ProvenanceRecord, Synthesis};
use synthtumor_core::volgrid::{load_labels, load_scalar, LabelVolume, ScalarVolume};
use synthtumor_core::{GenConfig, ScanContext, TumorSpec};

use crate::error::{ApiError, ApiResult};
use crate::session::{Session, SessionScan};

/// Default preview cache budget: 512 MiB.
pub const DEFAULT_PREVIEW_BUDGET: usize = 512 << 20;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub preview_budget_bytes: usize,
    pub gen: GenConfig,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            data_dir: data_dir.into(),
            preview_budget_bytes: DEFAULT_PREVIEW_BUDGET,
            gen: GenConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanInfo {
    pub id: String,
    #[serde(skip)]
    pub ct_path: PathBuf,
    #[serde(skip)]
    pub liver_path: Option<PathBuf>,
    pub has_liver: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    pub scan_id: String,
    pub tumors: Vec<TumorSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl PreviewRequest {
    /// Content hash of the canonical request.
    pub fn id(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub struct Preview {
    pub ct: ScalarVolume,
    pub labels: LabelVolume,
    pub provenance: ProvenanceRecord,
}

impl Preview {
    fn bytes(&self) -> usize {
        self.ct.len() * 8 + self.labels.len()
    }
}

/// LRU over previews bounded by total voxel bytes. Requests are kept
/// separately so an evicted preview can be regenerated.
pub struct PreviewCache {
    entries: LruCache<String, Arc<Preview>>,
    requests: HashMap<String, PreviewRequest>,
    bytes: usize,
    budget: usize,
}

impl PreviewCache {
    pub fn new(budget: usize) -> Self {
        PreviewCache { entries: LruCache::unbounded(), requests: HashMap::new(), bytes: 0, budget }
    }

    pub fn get(&mut self, id: &str) -> Option<Arc<Preview>> {
        self.entries.get(id).cloned()
    }

    pub fn request(&self, id: &str) -> Option<PreviewRequest> {
        self.requests.get(id).cloned()
    }

    pub fn insert(&mut self, id: String, req: PreviewRequest, preview: Arc<Preview>) {
        self.requests.insert(id.clone(), req);
        if let Some(old) = self.entries.put(id, preview.clone()) {
            self.bytes -= old.bytes();
        }
        self.bytes += preview.bytes();
        // Keep at least the newest entry even when it alone exceeds the budget.
        while self.bytes > self.budget && self.entries.len() > 1 {
            if let Some((_, old)) = self.entries.pop_lru() {
                self.bytes -= old.bytes();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct AppState {
    pub config: ServerConfig,
    scans: BTreeMap<String, ScanInfo>,
    volumes: Mutex<LruCache<String, Arc<(ScalarVolume, Option<LabelVolume>)>>>,
    contexts: Mutex<HashMap<String, Arc<ScanContext>>>,
    pub previews: Mutex<PreviewCache>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

fn nifti_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")).map(str::to_string)
}

fn list_nifti(dir: &Path) -> ApiResult<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| ApiError::Internal(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| ApiError::Internal(e.to_string()))?.path();
        if let Some(stem) = nifti_stem(&path) {
            out.insert(stem, path);
        }
    }
    Ok(out)
}

impl AppState {
    /// Index `scans/` and `livers/`, create `sessions/` and replay its logs.
    pub fn open(config: ServerConfig) -> ApiResult<AppState> {
        let root = &config.data_dir;
        let livers = list_nifti(&root.join("livers"))?;
        let scans = list_nifti(&root.join("scans"))?
            .into_iter()
            .map(|(id, ct_path)| {
                let liver_path = livers.get(&id).cloned();
                let info = ScanInfo { id: id.clone(), ct_path, has_liver: liver_path.is_some(), liver_path };
                (id, info)
            })
            .collect();
        let session_dir = root.join("sessions");
        std::fs::create_dir_all(&session_dir).map_err(|e| ApiError::Internal(format!("{}: {e}", session_dir.display())))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&session_dir).map_err(|e| ApiError::Internal(e.to_string()))? {
            let path = entry.map_err(|e| ApiError::Internal(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                match Session::load(&path) {
                    Ok(s) => {
                        sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                    }
                    Err(e) => log::warn!("skipping session log: {e}"),
                }
            }
        }
        log::info!("{}: {} sessions restored", config.data_dir.display(), sessions.len());
        Ok(AppState {
            previews: Mutex::new(PreviewCache::new(config.preview_budget_bytes)),
            config,
            scans,
            volumes: Mutex::new(LruCache::new(NonZeroUsize::new(8).unwrap())),
            contexts: Mutex::new(HashMap::new()),
            sessions: Mutex::new(sessions),
        })
    }

    pub fn scans(&self) -> Vec<ScanInfo> {
        self.scans.values().cloned().collect()
    }

    pub fn scan(&self, id: &str) -> ApiResult<&ScanInfo> {
        self.scans.get(id).ok_or_else(|| ApiError::NotFound(format!("unknown scan {id}")))
    }

    /// CT and, when present, liver labels of a scan.
    pub fn volumes(&self, id: &str) -> ApiResult<Arc<(ScalarVolume, Option<LabelVolume>)>> {
        let info = self.scan(id)?;
        if let Some(v) = self.volumes.lock().unwrap().get(id) {
            return Ok(v.clone());
        }
        let ct = load_scalar(&info.ct_path)?;
        let liver = info.liver_path.as_ref().map(load_labels).transpose()?;
        let v = Arc::new((ct, liver));
        self.volumes.lock().unwrap().put(id.to_string(), v.clone());
        Ok(v)
    }

    pub fn context(&self, id: &str) -> ApiResult<Arc<ScanContext>> {
        if let Some(c) = self.contexts.lock().unwrap().get(id) {
            return Ok(c.clone());
        }
        let v = self.volumes(id)?;
        let liver = v.1.clone().ok_or_else(|| ApiError::NotFound(format!("scan {id} has no liver mask")))?;
        let ctx = Arc::new(ScanContext::prepare(v.0.clone(), liver, &self.config.gen)?.with_scan_id(id));
        self.contexts.lock().unwrap().insert(id.to_string(), ctx.clone());
        Ok(ctx)
    }

    /// Cached preview, regenerated from its request after eviction.
    pub fn preview(&self, id: &str) -> ApiResult<Arc<Preview>> {
        if let Some(p) = self.previews.lock().unwrap().get(id) {
            return Ok(p);
        }
        let req = self
            .previews
            .lock()
            .unwrap()
            .request(id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown preview {id}")))?;
        self.run_preview(req).map(|(_, p)| p)
    }

    pub fn run_preview(&self, req: PreviewRequest) -> ApiResult<(String, Arc<Preview>)> {
        let id = req.id();
        if let Some(p) = self.previews.lock().unwrap().get(&id) {
            return Ok((id, p));
        }
        let ctx = self.context(&req.scan_id)?;
        let Synthesis { ct, labels, provenance } = ctx.synthesize_with_spec(&req.tumors, req.seed)?;
        let preview = Arc::new(Preview { ct, labels, provenance });
        self.previews.lock().unwrap().insert(id.clone(), req, preview.clone());
        Ok((id, preview))
    }

    pub fn create_session(&self, scans: Vec<SessionScan>) -> ApiResult<Arc<Mutex<Session>>> {
        for s in &scans {
            self.scan(&s.scan_id)?;
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(&self.config.data_dir.join("sessions"), id.clone(), scans)?;
        let session = Arc::new(Mutex::new(session));
        self.sessions.lock().unwrap().insert(id, session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    /// Truth key written by the export tool under `bundles/<name>.json`.
    pub fn bundle(&self, name: &str) -> ApiResult<Vec<SessionScan>> {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ApiError::BadRequest(format!("invalid bundle name {name:?}")));
        }
        let path = self.config.data_dir.join("bundles").join(format!("{name}.json"));
        let text = std::fs::read_to_string(&path).map_err(|_| ApiError::NotFound(format!("unknown bundle {name}")))?;
        let key: BundleKey = serde_json::from_str(&text).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
        Ok(key.scans)
    }
}

/// Answer key of a reader-study bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleKey {
    pub scans: Vec<SessionScan>,
}
