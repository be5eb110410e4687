//! Session orchestration: stimulus files and sidecars, an on-disk session
//! store with an operation log, capture assembly, calibration, the local HTTP
//! service and the command-line front end.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

pub mod calibration;
pub mod capture;
pub mod commands;
pub mod config;
pub mod error;
pub mod manager;
pub mod meter;
pub mod service;
pub mod sidecar;
pub mod store;
pub mod wav;

pub use error::{Error, Result};
pub use manager::SessionManager;
pub use store::Store;

use error::IoContext;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// UTC timestamp, RFC 3339 with milliseconds.
pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", uuid::Uuid::new_v4().simple()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
        std::fs::rename(&tmp, path).at(path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
