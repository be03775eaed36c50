use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LmBackend, RemoteConfig, RemoteLm};
use crate::error::Result;
use crate::optim::SoftmaxLm;

/// Where to find a model: a toy checkpoint on disk or a remote endpoint.
/// Relative paths resolve against the directory passed to [`open`](Self::open).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendDescriptor {
    SoftmaxToy { checkpoint: PathBuf },
    Remote(RemoteConfig),
}

impl BackendDescriptor {
    pub fn checkpoint(path: impl Into<PathBuf>) -> Self {
        BackendDescriptor::SoftmaxToy {
            checkpoint: path.into(),
        }
    }

    pub fn open(&self, base: &Path) -> Result<Box<dyn LmBackend>> {
        match self {
            BackendDescriptor::SoftmaxToy { checkpoint } => {
                Ok(Box::new(SoftmaxLm::load(&base.join(checkpoint))?))
            }
            BackendDescriptor::Remote(cfg) => {
                let mut cfg = cfg.clone();
                if cfg.endpoint.is_empty() {
                    cfg.endpoint = std::env::var(super::remote::ENDPOINT_ENV).map_err(|_| {
                        crate::Error::Config(format!(
                            "remote backend has no endpoint and {} is not set",
                            super::remote::ENDPOINT_ENV
                        ))
                    })?;
                }
                if cfg.token.is_none() {
                    cfg.token = std::env::var(super::remote::TOKEN_ENV).ok();
                }
                if let Some(dir) = &cfg.cache_dir {
                    cfg.cache_dir = Some(base.join(dir));
                }
                Ok(Box::new(RemoteLm::new(cfg)?))
            }
        }
    }
}
