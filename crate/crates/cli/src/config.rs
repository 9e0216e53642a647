use std::path::Path;

use mscsa_core::MscsaConfig;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Configs shipped with the tool, addressable by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("pvtv2-b1", include_str!("../../../configs/pvtv2-b1.cfg")),
    ("mini", include_str!("../../../configs/mini.cfg")),
    ("mini-dense", include_str!("../../../configs/mini-dense.cfg")),
];

/// Loads `spec` as a file path, falling back to a bundled config name
/// (with or without the `.cfg` suffix).
pub fn resolve(spec: &str) -> Result<MscsaConfig, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        return MscsaConfig::load(path).map_err(|e| CliError::Usage(format!("config {spec}: {e}")));
    }
    let name = spec.strip_suffix(".cfg").unwrap_or(spec);
    match BUNDLED.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => Ok(MscsaConfig::from_toml_str(text)?),
        None => {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            Err(CliError::Usage(format!(
                "config {spec}: no such file and not a bundled config ({})",
                names.join(", ")
            )))
        }
    }
}

/// SHA-256 of the canonical TOML form of `cfg`.
pub fn hash(cfg: &MscsaConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml_string().as_bytes()))
}
