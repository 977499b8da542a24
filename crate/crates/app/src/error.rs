use std::path::{Path, PathBuf};

use qkd_core::cascade::CascadeError;
use qkd_core::extract::ExtractError;
use qkd_core::netlink::NetError;
use qkd_core::protocol::ProtocolError;
use qkd_core::sim::SimError;
use qkd_core::timesync::SyncError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("session failed in frame {frame_id}: {source}")]
    Session { frame_id: u32, source: NetError },
    #[error("peer sent {got} while {expected} was expected (frame {frame_id})")]
    Unexpected { frame_id: u32, expected: &'static str, got: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
    #[error("party thread panicked: {0}")]
    Panic(String),
}

impl AppError {
    pub fn config(path: &str, reason: impl std::fmt::Display) -> Self {
        AppError::Config { path: path.to_string(), reason: reason.to_string() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_path_buf(), source }
    }

    pub fn session(frame_id: u32, source: NetError) -> Self {
        AppError::Session { frame_id, source }
    }
}
