use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::kgstore::EventRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EventKind {
    PlanGenerated,
    EpisodeCompleted,
    PipelineConverged,
    PhaseCompleted,
    FeedbackApplied,
    SessionCompleted,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PlanGenerated => "planGenerated",
            EventKind::EpisodeCompleted => "episodeCompleted",
            EventKind::PipelineConverged => "pipelineConverged",
            EventKind::PhaseCompleted => "phaseCompleted",
            EventKind::FeedbackApplied => "feedbackApplied",
            EventKind::SessionCompleted => "sessionCompleted",
            EventKind::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        [
            EventKind::PlanGenerated,
            EventKind::EpisodeCompleted,
            EventKind::PipelineConverged,
            EventKind::PhaseCompleted,
            EventKind::FeedbackApplied,
            EventKind::SessionCompleted,
            EventKind::Error,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    /// Whether no further events can follow.
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::SessionCompleted | EventKind::Error)
    }
}

/// A progress notification; `sequence` is strictly increasing per session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseEvent {
    pub session_id: String,
    pub sequence: u64,
    /// 0 for session-level events outside any phase.
    pub phase: u8,
    pub kind: EventKind,
    pub payload: Value,
    pub timestamp_ms: u64,
}

impl PhaseEvent {
    pub fn from_record(r: &EventRecord) -> Option<PhaseEvent> {
        Some(PhaseEvent {
            session_id: r.session_id.clone(),
            sequence: r.sequence,
            phase: r.phase,
            kind: EventKind::parse(&r.event)?,
            payload: r.payload.clone(),
            timestamp_ms: r.timestamp_ms,
        })
    }
}

pub type Listener = Arc<dyn Fn(&PhaseEvent) + Send + Sync>;

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
