//! Optional TOML config file. Each subcommand reads the table named after it
//! (`[detect]`, `[experiment]`, ...); keys are the long flag names. Flags
//! given on the command line override the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub fn load(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::validation(format!("bad config {}: {e}", path.display())))
}

/// Overlays the non-null fields of `flags` onto the `section` table of `file`.
pub fn merge<T>(flags: &T, file: Option<&toml::Table>, section: &str) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let mut base = match file.and_then(|f| f.get(section)) {
        Some(toml::Value::Table(t)) => serde_json::to_value(t).map_err(CliError::from_json)?,
        Some(_) => return Err(CliError::validation(format!("config key [{section}] must be a table"))),
        None => Value::Object(Default::default()),
    };
    let Value::Object(over) = serde_json::to_value(flags).map_err(CliError::from_json)? else {
        unreachable!("options serialize to an object")
    };
    let obj = base.as_object_mut().expect("table");
    for (k, v) in over {
        if !v.is_null() {
            obj.insert(k, v);
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::validation(format!("config [{section}]: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(rename_all = "kebab-case", deny_unknown_fields)]
    struct Opts {
        k: Option<usize>,
        split_seed: Option<u64>,
    }

    #[test]
    fn flags_override_file() {
        let file: toml::Table = toml::from_str("[detect]\nk = 3\nsplit-seed = 9\n").unwrap();
        let flags = Opts { k: Some(5), split_seed: None };
        let got = merge(&flags, Some(&file), "detect").unwrap();
        assert_eq!(got, Opts { k: Some(5), split_seed: Some(9) });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file: toml::Table = toml::from_str("[detect]\nkk = 3\n").unwrap();
        assert!(merge(&Opts::default(), Some(&file), "detect").is_err());
    }
}
