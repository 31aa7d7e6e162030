//! Loading run configurations from TOML files.
//!
//! Every key is optional; absent keys take the model defaults. Unknown keys
//! are rejected. The reception table for `channel.model = "table"` is a CSV
//! file whose first row holds `distance_m` followed by the CBR breakpoints,
//! and whose remaining rows hold a distance followed by one probability per
//! CBR breakpoint.

use std::fs;
use std::path::{Path, PathBuf};

use csesim_core::channel::ReceptionTable;
use csesim_core::{ConfigError, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(#[from] ConfigError),
}

impl LoadError {
    /// The config key the error is about, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            LoadError::Io { .. } => None,
            LoadError::Invalid(e) => Some(&e.key),
        }
    }
}

/// Read, default-fill and validate a config file.
pub fn parse_config(path: &Path) -> Result<SimConfig, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_owned(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

/// Like [`parse_config`] for text already in memory. Relative table paths are
/// resolved against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<SimConfig, LoadError> {
    let mut config: SimConfig = toml::from_str(text).map_err(|e| {
        let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
        ConfigError::new(key, e.message().trim())
    })?;
    if let Some(rel) = config.channel.table_path.clone() {
        let path = base_dir.join(rel);
        config.reception_table = Some(load_reception_table(&path)?);
    }
    config.validate()?;
    Ok(config)
}

/// Serialize a config back to TOML. Parsing the result gives the same config.
pub fn to_toml(config: &SimConfig) -> String {
    toml::to_string(config).expect("every config field is representable in TOML")
}

pub fn load_reception_table(path: &Path) -> Result<ReceptionTable, LoadError> {
    let bad = |message: String| ConfigError::new("channel.table_path", format!("{}: {message}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cbrs = header
        .iter()
        .skip(1)
        .map(|h| h.parse::<f64>().map_err(|_| bad(format!("CBR breakpoint {h:?} is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;

    let mut distances = Vec::new();
    let mut values = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let mut nums = row.iter().map(|f| f.parse::<f64>().map_err(|_| bad(format!("line {}: {f:?} is not a number", i + 2))));
        distances.push(nums.next().ok_or_else(|| bad(format!("line {} is empty", i + 2)))??);
        values.push(nums.collect::<Result<Vec<_>, _>>()?);
    }
    ReceptionTable::new(distances, cbrs, values).map_err(|e| bad(e.to_string()).into())
}

/// Dotted name of the key on the line containing byte `offset`, prefixed by
/// the enclosing `[table]` header.
fn key_at(text: &str, offset: usize) -> String {
    let upto = &text[..offset.min(text.len())];
    let line_start = upto.rfind('\n').map_or(0, |i| i + 1);
    let line_end = text[line_start..].find('\n').map_or(text.len(), |i| line_start + i);
    let line = text[line_start..line_end].trim();

    let table = upto[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());

    if line.starts_with('[') {
        return line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
    }
    let key = line.split('=').next().unwrap_or("").trim().to_string();
    match table {
        Some(t) if !key.is_empty() => format!("{t}.{key}"),
        Some(t) => t,
        None => key,
    }
}
