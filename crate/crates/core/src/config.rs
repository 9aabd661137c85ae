//! Flat `key=value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line must
//! be `key=value`; unknown keys are errors.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A configuration section that reads and writes `key=value` pairs.
pub trait KvSection {
    /// Applies one entry. Returns `Ok(false)` when the key is not one of
    /// this section's.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Entries in a fixed order.
    fn entries(&self) -> Vec<(&'static str, String)>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvLine {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_lines(text: &str, path: &Path) -> Result<Vec<KvLine>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        out.push(KvLine {
            line: i + 1,
            key: k.trim().to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Applies each line to the first section that accepts its key.
pub fn apply(lines: &[KvLine], sections: &mut [&mut dyn KvSection], path: &Path) -> Result<()> {
    'lines: for l in lines {
        for s in sections.iter_mut() {
            let accepted = s.set(&l.key, &l.value).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: l.line,
                message: e.to_string(),
            })?;
            if accepted {
                continue 'lines;
            }
        }
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: l.line,
            message: format!("unknown key {:?}", l.key),
        });
    }
    Ok(())
}

pub fn render(sections: &[&dyn KvSection]) -> String {
    let mut s = String::new();
    for sec in sections {
        for (k, v) in sec.entries() {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
    }
    s
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key}: cannot parse {value:?}: {e}")))
}

/// Path used in messages for configuration text that did not come from a file.
pub fn inline_path() -> PathBuf {
    PathBuf::from("<inline>")
}
