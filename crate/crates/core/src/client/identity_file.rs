use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::UserIdEntry;
use crate::guid::{Guid, GuidError, GuidIdentity, GuidParams};

#[derive(Debug, Error)]
pub enum IdentityFileError {
    #[error("identity file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("identity file format: {0}")]
    Format(String),
    #[error(transparent)]
    Guid(#[from] GuidError),
}

/// Locally stored identity: key, salt, and the last published version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityFile {
    pub guid: Guid,
    #[serde(rename = "privateKey")]
    pub private_key: String,
    pub salt: String,
    pub iterations: u32,
    pub version: u64,
    #[serde(rename = "userIDs")]
    pub user_ids: Vec<UserIdEntry>,
}

impl IdentityFile {
    pub fn new(identity: &GuidIdentity, params: &GuidParams, version: u64, user_ids: Vec<UserIdEntry>) -> Self {
        IdentityFile {
            guid: identity.guid().clone(),
            private_key: URL_SAFE_NO_PAD.encode(identity.private_key_bytes()),
            salt: URL_SAFE_NO_PAD.encode(identity.salt()),
            iterations: params.iterations,
            version,
            user_ids,
        }
    }

    pub fn params(&self) -> GuidParams {
        GuidParams { iterations: self.iterations }
    }

    /// Rebuilds the identity and checks it still derives the stored GUID.
    pub fn identity(&self) -> Result<GuidIdentity, IdentityFileError> {
        let decode = |s: &str| URL_SAFE_NO_PAD.decode(s).map_err(|e| IdentityFileError::Format(e.to_string()));
        let identity = GuidIdentity::from_parts(&decode(&self.private_key)?, &decode(&self.salt)?, &self.params())?;
        if identity.guid() != &self.guid {
            return Err(IdentityFileError::Format("stored GUID does not match key and salt".into()));
        }
        Ok(identity)
    }

    pub fn load(path: &Path) -> Result<Self, IdentityFileError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| IdentityFileError::Format(e.to_string()))
    }

    /// Writes the file readable by the owner only, replacing it atomically.
    pub fn save(&self, path: &Path) -> Result<(), IdentityFileError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        let mut options = fs::OpenOptions::new();
        options.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        let mut file = options.open(&tmp)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| IdentityFileError::Format(e.to_string()))?;
        file.write_all(json.as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
