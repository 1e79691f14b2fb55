//! Few-shot prompt templates and `{placeholder}` substitution.
//!
//! The bundled templates live in `assets/` and can be replaced at run time
//! by any text file using the same placeholders.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use thiserror::Error;

pub const COVERAGE: &str = include_str!("../assets/coverage.txt");
pub const QA: &str = include_str!("../assets/qa.txt");
pub const TIFA_QA: &str = include_str!("../assets/tifa_qa.txt");
pub const TAGGING: &str = include_str!("../assets/tagging.txt");
pub const CAPTION_TEXT_RENDERING: &str = include_str!("../assets/caption_text_rendering.txt");

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template placeholder {{{0}}} has no value")]
    Unfilled(String),
    #[error("template has no placeholder {{{0}}}")]
    UnknownKey(String),
}

/// Named placeholders appearing in `template`, in sorted order.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    PLACEHOLDER
        .captures_iter(template)
        .map(|c| c[1].to_owned())
        .collect()
}

/// Substitutes every `{name}` in one pass, so values containing braces are
/// inserted literally. Numeric markers such as `{1}` are not placeholders.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let names = placeholders(template);
    if let Some((k, _)) = vars.iter().find(|(k, _)| !names.contains(*k)) {
        return Err(TemplateError::UnknownKey((*k).to_owned()));
    }
    if let Some(missing) = names.iter().find(|n| !vars.iter().any(|(k, _)| k == n)) {
        return Err(TemplateError::Unfilled(missing.clone()));
    }
    Ok(PLACEHOLDER
        .replace_all(template, |c: &Captures| {
            let name = &c[1];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .unwrap_or_default()
                .to_owned()
        })
        .into_owned())
}
