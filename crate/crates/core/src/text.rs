//! Helpers for the whitespace-separated fixture formats.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Reads a file, dropping `#` comments and blank lines. Yields
/// `(1-based line number, tokens)`.
pub(crate) fn read_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(records(&text))
}

pub(crate) fn records(text: &str) -> Vec<(usize, Vec<String>)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let body = line.split('#').next().unwrap_or("");
            let tokens: Vec<String> = body.split_whitespace().map(str::to_owned).collect();
            (!tokens.is_empty()).then_some((i + 1, tokens))
        })
        .collect()
}

pub(crate) fn parse_tokens<T: FromStr>(
    context: &str,
    line: usize,
    tokens: &[String],
    expected: Option<usize>,
) -> Result<Vec<T>> {
    if let Some(n) = expected {
        if tokens.len() != n {
            return Err(Error::parse(
                context,
                line,
                format!("expected {n} columns, found {}", tokens.len()),
            ));
        }
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::parse(context, line, format!("cannot parse `{t}`")))
        })
        .collect()
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
