//! Versioned instruction templates. A template id is either a built-in
//! name or a path to a plain-text file with `{{fds}}`, `{{shots}}`, and
//! `{{query}}` placeholders.

use std::fs;
use std::path::Path;

pub const DEFAULT_TEMPLATE: &str = "You write workflow-automation programs. A program is a sequence of assignments of the form `out = await namespace.Function({\"key\": value});`, optionally with if/else blocks. Use only the API functions and parameter keys listed below or shown in the examples.\n\nAPI definitions:\n{{fds}}\n\nExamples:\n{{shots}}\n\nRequest: {{query}}\nProgram:";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read template `{id}`: {source}")]
    Unreadable {
        id: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template `{id}` is missing the {placeholder} placeholder")]
    MissingPlaceholder { id: String, placeholder: String },
}

/// Resolves a template id to its content and validates the placeholders.
pub fn resolve(id: &str) -> Result<String, TemplateError> {
    let content = if id == "default" {
        DEFAULT_TEMPLATE.to_string()
    } else {
        fs::read_to_string(Path::new(id)).map_err(|source| TemplateError::Unreadable {
            id: id.to_string(),
            source,
        })?
    };
    for placeholder in ["{{fds}}", "{{shots}}", "{{query}}"] {
        if !content.contains(placeholder) {
            return Err(TemplateError::MissingPlaceholder {
                id: id.to_string(),
                placeholder: placeholder.to_string(),
            });
        }
    }
    Ok(content)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_template_resolves() {
        let t = resolve("default").unwrap();
        assert!(t.contains("{{query}}"));
    }

    #[test]
    fn missing_placeholder_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "no placeholders here").unwrap();
        assert!(matches!(
            resolve(f.path().to_str().unwrap()),
            Err(TemplateError::MissingPlaceholder { .. })
        ));
    }
}
