//! Resolved `key=value` settings: built-in defaults, then a config file,
//! then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Layers `file` and then `flags` over `defaults`. Keys outside the
    /// defaults table are usage errors naming the key.
    pub fn resolve(
        defaults: Vec<(&str, String)>,
        file: Option<&Path>,
        flags: Vec<(&str, Option<String>)>,
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text)? {
                if !values.contains_key(&k) {
                    return Err(CliError::Usage(format!("unknown config key `{k}` in {}", path.display())));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                debug_assert!(values.contains_key(k), "flag for undeclared key {k}");
                values.insert(k.to_string(), v);
            }
        }
        Ok(Settings { values })
    }

    /// Replaces a value, typically to materialize an inherited default.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        assert!(self.values.contains_key(key), "undeclared setting {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared setting {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::Usage(format!("invalid value {raw:?} for `{key}`: {e}")))
    }

    /// `None` for the literal `none` or an empty value.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid entry {s:?} in `{key}`")))
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Sorted `key=value` lines, loadable again with `--config`.
    pub fn to_config_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults<'a>(pairs: &[(&'a str, &str)]) -> Vec<(&'a str, String)> {
        pairs.iter().map(|&(k, v)| (k, v.to_string())).collect()
    }

    #[test]
    fn precedence_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "# comment\na = 2\nb=3\n").unwrap();
        let s = Settings::resolve(defaults(&[("a", "1"), ("b", "1"), ("c", "1")]), Some(&cfg), vec![("b", Some("4".into()))])
            .unwrap();
        assert_eq!((s.raw("a"), s.raw("b"), s.raw("c")), ("2", "4", "1"));

        std::fs::write(&cfg, "zzz=1\n").unwrap();
        let err = Settings::resolve(defaults(&[("a", "1")]), Some(&cfg), vec![]).unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("zzz")), "{err:?}");
    }

    #[test]
    fn typed_access() {
        let s = Settings::resolve(defaults(&[("x", "1.5"), ("w", "3,4"), ("o", "none")]), None, vec![]).unwrap();
        assert_eq!(s.get::<f64>("x").unwrap(), 1.5);
        assert_eq!(s.get_list("w").unwrap(), vec![3, 4]);
        assert_eq!(s.get_opt::<f64>("o").unwrap(), None);
        assert!(matches!(s.get::<usize>("x"), Err(CliError::Usage(m)) if m.contains("`x`")));
        assert_eq!(s.to_config_text(), "o=none\nw=3,4\nx=1.5\n");
    }
}
