//! Flat INI: `[section]` headers, `key = value` lines, `#` or `;` comments.
//! Every entry keeps its line number for diagnostics.

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ini {
    pub sections: Vec<Section>,
}

impl Ini {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn parse(text: &str) -> Result<Ini> {
    let mut ini = Ini::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|n| is_name(n))
                .ok_or_else(|| CliError::Syntax { line, msg: format!("malformed section header `{s}`") })?;
            if let Some(prev) = ini.section(name) {
                return Err(CliError::Syntax { line, msg: format!("section [{name}] already opened on line {}", prev.line) });
            }
            ini.sections.push(Section { name: name.to_string(), line, entries: Vec::new() });
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            return Err(CliError::Syntax { line, msg: format!("expected `key = value`, got `{s}`") });
        };
        let (key, value) = (k.trim(), v.trim());
        if !is_name(key) {
            return Err(CliError::Syntax { line, msg: format!("invalid key `{key}`") });
        }
        let Some(section) = ini.sections.last_mut() else {
            return Err(CliError::Syntax { line, msg: format!("key `{key}` appears before any section header") });
        };
        if let Some(prev) = section.get(key) {
            return Err(CliError::Syntax { line, msg: format!("key `{key}` already set on line {}", prev.line) });
        }
        section.entries.push(Entry { key: key.to_string(), value: value.to_string(), line });
    }
    Ok(ini)
}

/// Closest candidate by edit distance, if reasonably close.
pub fn nearest<'a>(name: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(name, c), c))
        .min()
        .filter(|(d, c)| *d <= (c.len().max(name.len()) / 2).max(2))
        .map(|(_, c)| c.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_lines() {
        let ini = parse("# top\n[a]\nx = 1\n\n[b]\ny= two words \n").unwrap();
        assert_eq!(ini.sections.len(), 2);
        let y = ini.section("b").unwrap().get("y").unwrap();
        assert_eq!((y.value.as_str(), y.line), ("two words", 6));
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
        assert!(matches!(parse("x = 1\n"), Err(CliError::Syntax { line: 1, .. })));
        assert!(matches!(parse("[a]\nnonsense\n"), Err(CliError::Syntax { line: 2, .. })));
        assert!(matches!(parse("[a\n"), Err(CliError::Syntax { line: 1, .. })));
        assert!(matches!(parse("[a]\n[a]\n"), Err(CliError::Syntax { line: 2, .. })));
    }

    #[test]
    fn nearest_key() {
        assert_eq!(nearest("d_adaa", ["seed", "d_ada", "regime"]).as_deref(), Some("d_ada"));
        assert_eq!(nearest("zzzzzzzz", ["seed", "d_ada"]), None);
    }
}
