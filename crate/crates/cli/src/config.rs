//! Server configuration. Each field resolves as flag, then environment, then
//! config file, then default.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use cocreate_core::backend::BackendSpec;
use cocreate_core::dialogue::DEFAULT_TURN_TIMEOUT;
use serde::Deserialize;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

/// One layer of settings; `None` defers to the layer below.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConfigLayer {
    pub listen_address: Option<String>,
    pub catalog_path: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub default_backend: Option<String>,
    /// Seconds.
    pub per_turn_timeout: Option<u64>,
    pub cors_allow_list: Option<Vec<String>>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("malformed config {}", path.display()))
    }

    /// Reads `COCREATE_*` variables through `get`.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let timeout = match get("COCREATE_PER_TURN_TIMEOUT") {
            Some(v) => Some(v.trim().parse().with_context(|| format!("COCREATE_PER_TURN_TIMEOUT `{v}` is not a number of seconds"))?),
            None => None,
        };
        Ok(Self {
            listen_address: get("COCREATE_LISTEN_ADDRESS"),
            catalog_path: get("COCREATE_CATALOG_PATH").map(PathBuf::from),
            data_dir: get("COCREATE_DATA_DIR").map(PathBuf::from),
            default_backend: get("COCREATE_DEFAULT_BACKEND"),
            per_turn_timeout: timeout,
            cors_allow_list: get("COCREATE_CORS_ALLOW_LIST")
                .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()),
        })
    }

    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            listen_address: self.listen_address.or(lower.listen_address),
            catalog_path: self.catalog_path.or(lower.catalog_path),
            data_dir: self.data_dir.or(lower.data_dir),
            default_backend: self.default_backend.or(lower.default_backend),
            per_turn_timeout: self.per_turn_timeout.or(lower.per_turn_timeout),
            cors_allow_list: self.cors_allow_list.or(lower.cors_allow_list),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub listen_address: SocketAddr,
    /// The bundled reference catalog when absent.
    pub catalog_path: Option<PathBuf>,
    /// Case files and the order inventory; in memory when absent.
    pub data_dir: Option<PathBuf>,
    pub default_backend: BackendSpec,
    pub per_turn_timeout: Duration,
    pub cors_allow_list: Vec<String>,
}

impl ServerConfig {
    pub fn resolve(flags: ConfigLayer, env: ConfigLayer, file: ConfigLayer) -> Result<Self> {
        let c = flags.over(env).over(file);
        let listen = c.listen_address.unwrap_or_else(|| DEFAULT_LISTEN.to_owned());
        let listen_address = listen.parse().with_context(|| format!("listen address `{listen}` is not host:port"))?;
        let backend = c.default_backend.unwrap_or_else(|| "oracle".to_owned());
        let default_backend = BackendSpec::parse(&backend).map_err(anyhow::Error::msg)?;
        let per_turn_timeout = c.per_turn_timeout.map(Duration::from_secs).unwrap_or(DEFAULT_TURN_TIMEOUT);
        if per_turn_timeout.is_zero() {
            bail!("perTurnTimeout must be at least one second");
        }
        Ok(Self {
            listen_address,
            catalog_path: c.catalog_path,
            data_dir: c.data_dir,
            default_backend,
            per_turn_timeout,
            cors_allow_list: c.cors_allow_list.unwrap_or_default(),
        })
    }
}
