//! Plain-text `key=value` configuration and the thread cap.

use std::path::Path;

use moldflow::model::ModelConfig;
use moldflow::training::TrainConfig;
use moldflow::Error;

use crate::{CliError, CliResult};

pub const THREADS_VAR: &str = "MFO_THREADS";

const MODEL_KEYS: [&str; 9] =
    ["latent", "t_lat", "channels", "layers", "modes", "radius", "horizon", "kernel_width", "activation"];

/// One pair per line; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingRecord(format!("config file {}", path.display())),
        _ => Error::Io { path: path.to_path_buf(), source: e },
    })?;
    parse_pairs(&text)
}

pub fn write_pairs(path: &Path, pairs: &[(String, String)]) -> CliResult<()> {
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    moldflow::evaluation::write_file(path, text.as_bytes())?;
    Ok(())
}

/// Routes each pair to the model or the training configuration.
pub fn apply(pairs: &[(String, String)], model: &mut ModelConfig, train: &mut TrainConfig) -> CliResult<()> {
    for (k, v) in pairs {
        let r = if MODEL_KEYS.contains(&k.as_str()) { model.set(k, v) } else { train.set(k, v) };
        r.map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

/// `KEY=VALUE` strings from repeated `--set` flags.
pub fn split_overrides(items: &[String]) -> CliResult<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set {s:?}: expected KEY=VALUE")))
        })
        .collect()
}

/// Value of `MFO_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_VAR).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Desk defaults, then the file, then `--set`, then dedicated flags.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[String],
    flags: &[(&str, Option<String>)],
) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::desk();
    let mut train = TrainConfig::desk();
    if let Some(path) = file {
        apply(&read_pairs(path)?, &mut model, &mut train)?;
    }
    apply(&split_overrides(overrides)?, &mut model, &mut train)?;
    let flagged: Vec<(String, String)> =
        flags.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect();
    apply(&flagged, &mut model, &mut train)?;
    let model = model.resolve().map_err(|e| CliError::Usage(e.to_string()))?;
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((model, train))
}

pub fn all_pairs(model: &ModelConfig, train: &TrainConfig) -> Vec<(String, String)> {
    let mut out = model.to_pairs();
    out.extend(train.to_pairs());
    out
}
