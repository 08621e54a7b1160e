//! Config files: TOML by default, JSON when the extension is `.json`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kramers::{kramers_model, Kramers};

fn is_json(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if is_json(path) {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn to_string<T: Serialize>(value: &T, json: bool) -> Result<String> {
    if json {
        Ok(serde_json::to_string_pretty(value)? + "\n")
    } else {
        toml::to_string_pretty(value)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

pub fn save<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(value, is_json(path))?)?;
    Ok(())
}

/// `<output>.resolved.toml` next to an output file.
pub fn resolved_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".resolved.toml");
    output.with_file_name(name)
}

/// Looks up a model by its config name.
pub fn resolve_model(name: &str) -> Result<Kramers> {
    match name.to_ascii_lowercase().as_str() {
        "kramers" => Ok(kramers_model()),
        _ => Err(Error::Config(format!(
            "unknown model '{name}'; available: kramers"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::ObjectiveKind;
    use crate::study::StudyConfig;

    const STUDY: &str = r#"
theta0 = [6.5, 1.0, 0.6, 0.1]
h_sim = 0.001
h = 0.1
n = 5000
replicates = 100
seed = 1
kinds = ["CF", "CR", "EM-CR", "LG-CF"]

[options]
max_iters = 500
"#;

    #[test]
    fn toml_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("study.toml");
        std::fs::write(&p, STUDY).unwrap();
        let cfg: StudyConfig = load(&p).unwrap();
        assert_eq!(cfg.kinds[2], ObjectiveKind::EmCr);
        assert_eq!(cfg.options.max_iters, 500);
        assert_eq!(cfg.options.tol, 1e-5);
        assert_eq!(cfg.model, "kramers");

        let j = dir.path().join("study.json");
        save(&cfg, &j).unwrap();
        let back: StudyConfig = load(&j).unwrap();
        assert_eq!(back, cfg);
        let t = resolved_path(&dir.path().join("out.csv"));
        assert!(t.ends_with("out.csv.resolved.toml"));
        save(&cfg, &t).unwrap();
        assert_eq!(load::<StudyConfig>(&t).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_models_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(
            &p,
            format!("{STUDY}\nbogus = 1\n").replace("[options]\nmax_iters = 500\n", ""),
        )
        .unwrap();
        assert!(matches!(load::<StudyConfig>(&p), Err(Error::Config(_))));
        assert!(resolve_model("duffing").is_err());
    }
}
