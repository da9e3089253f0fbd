//! Reader-study sessions with an append-only JSONL log per session.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthtumor_core::metrics::{turing_metrics, TuringCounts, TuringTally};

use crate::error::{ApiError, ApiResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Real,
    Synthetic,
    Unsure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionScan {
    pub scan_id: String,
    pub truth: Truth,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Event {
    Created { session_id: String, scans: Vec<SessionScan> },
    Judged { scan_id: String, judgment: Judgment },
    Closed,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    scans: Vec<SessionScan>,
    judgments: Vec<Option<Judgment>>,
    closed: bool,
    log: PathBuf,
}

/// Client view; never carries truth.
#[derive(Clone, Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub scans: Vec<ScanView>,
    pub answered: usize,
    pub remaining: usize,
    pub complete: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanView {
    pub scan_id: String,
    pub judgment: Option<Judgment>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportScan {
    pub scan_id: String,
    pub truth: Truth,
    pub judgment: Option<Judgment>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub session_id: String,
    pub tally: Option<TuringTally>,
    /// Set when the metrics are undefined, e.g. every answer was unsure.
    pub error: Option<String>,
    pub scans: Vec<ReportScan>,
}

fn append(path: &Path, event: &Event) -> ApiResult<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ApiError::Internal(format!("session log {}: {e}", path.display())))?;
    let mut line = serde_json::to_string(event).expect("event serializes");
    line.push('\n');
    f.write_all(line.as_bytes())
        .and_then(|_| f.sync_data())
        .map_err(|e| ApiError::Internal(format!("session log {}: {e}", path.display())))
}

impl Session {
    pub fn create(dir: &Path, id: String, scans: Vec<SessionScan>) -> ApiResult<Session> {
        if scans.is_empty() {
            return Err(ApiError::BadRequest("a session needs at least one scan".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = scans.iter().find(|s| !seen.insert(&s.scan_id)) {
            return Err(ApiError::BadRequest(format!("scan {} listed twice", dup.scan_id)));
        }
        let log = dir.join(format!("{id}.jsonl"));
        append(&log, &Event::Created { session_id: id.clone(), scans: scans.clone() })?;
        Ok(Session {
            id,
            judgments: vec![None; scans.len()],
            scans,
            closed: false,
            log,
        })
    }

    /// Replay a session log.
    pub fn load(path: &Path) -> ApiResult<Session> {
        let bad = |msg: String| ApiError::Internal(format!("session log {}: {msg}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        // A crash mid-write leaves a torn final line; cut it so later
        // appends start on a fresh line.
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            log::warn!("dropping torn final line of {}", path.display());
            let f = OpenOptions::new().write(true).open(path).map_err(|e| bad(e.to_string()))?;
            f.set_len(keep as u64).map_err(|e| bad(e.to_string()))?;
        }
        let mut session: Option<Session> = None;
        for line in text.split_inclusive('\n').filter(|l| l.ends_with('\n')) {
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            match (event, session.as_mut()) {
                (Event::Created { session_id, scans }, None) => {
                    session = Some(Session {
                        id: session_id,
                        judgments: vec![None; scans.len()],
                        scans,
                        closed: false,
                        log: path.to_path_buf(),
                    })
                }
                (Event::Judged { scan_id, judgment }, Some(s)) => {
                    let i = s.position(&scan_id).map_err(|e| bad(e.to_string()))?;
                    s.judgments[i] = Some(judgment);
                }
                (Event::Closed, Some(s)) => s.closed = true,
                _ => return Err(bad("events out of order".into())),
            }
        }
        session.ok_or_else(|| bad("empty log".into()))
    }

    fn position(&self, scan_id: &str) -> ApiResult<usize> {
        self.scans
            .iter()
            .position(|s| s.scan_id == scan_id)
            .ok_or_else(|| ApiError::NotFound(format!("scan {scan_id} is not part of session {}", self.id)))
    }

    pub fn is_complete(&self) -> bool {
        self.closed || self.judgments.iter().all(Option::is_some)
    }

    pub fn judge(&mut self, scan_id: &str, judgment: Judgment) -> ApiResult<()> {
        let i = self.position(scan_id)?;
        if self.closed {
            return Err(ApiError::Conflict(format!("session {} is closed", self.id)));
        }
        if self.judgments[i].is_some() {
            return Err(ApiError::Conflict(format!("scan {scan_id} already judged")));
        }
        append(&self.log, &Event::Judged { scan_id: scan_id.to_string(), judgment })?;
        self.judgments[i] = Some(judgment);
        Ok(())
    }

    pub fn close(&mut self) -> ApiResult<()> {
        if !self.closed {
            append(&self.log, &Event::Closed)?;
            self.closed = true;
        }
        Ok(())
    }

    pub fn view(&self) -> SessionView {
        let answered = self.judgments.iter().filter(|j| j.is_some()).count();
        SessionView {
            session_id: self.id.clone(),
            scans: self
                .scans
                .iter()
                .zip(&self.judgments)
                .map(|(s, j)| ScanView { scan_id: s.scan_id.clone(), judgment: *j })
                .collect(),
            answered,
            remaining: self.scans.len() - answered,
            complete: self.is_complete(),
        }
    }

    pub fn counts(&self) -> TuringCounts {
        let mut c = TuringCounts::default();
        for (s, j) in self.scans.iter().zip(&self.judgments) {
            let slot = match (s.truth, j) {
                (_, None) => continue,
                (Truth::Real, Some(Judgment::Real)) => &mut c.real_as_real,
                (Truth::Real, Some(Judgment::Synthetic)) => &mut c.real_as_synthetic,
                (Truth::Real, Some(Judgment::Unsure)) => &mut c.real_unsure,
                (Truth::Synthetic, Some(Judgment::Real)) => &mut c.synthetic_as_real,
                (Truth::Synthetic, Some(Judgment::Synthetic)) => &mut c.synthetic_as_synthetic,
                (Truth::Synthetic, Some(Judgment::Unsure)) => &mut c.synthetic_unsure,
            };
            *slot += 1;
        }
        c
    }

    pub fn report(&self) -> ApiResult<Report> {
        if !self.is_complete() {
            return Err(ApiError::Conflict(format!("session {} is not complete", self.id)));
        }
        let (tally, error) = match turing_metrics(self.counts()) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Report {
            session_id: self.id.clone(),
            tally,
            error,
            scans: self
                .scans
                .iter()
                .zip(&self.judgments)
                .map(|(s, j)| ReportScan { scan_id: s.scan_id.clone(), truth: s.truth, judgment: *j })
                .collect(),
        })
    }
}
