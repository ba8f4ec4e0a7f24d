//! API metadata: function definitions, the catalog that indexes them, and
//! the plain-text rendering used for metaprompt grounding.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::dsl::{ApiName, JsonValue};

/// Metadata for one API function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDefinition {
    pub function_name: ApiName,
    pub description: String,
    pub display_name: String,
    pub is_trigger: bool,
    pub is_in_training_set: bool,
    pub parameters: Vec<ParameterInfo>,
    /// Stored but never interpreted.
    pub response_schema: Vec<JsonValue>,
    /// Unknown metadata fields, preserved opaquely in load order.
    pub extra: Vec<(String, JsonValue)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterInfo {
    /// May contain `/`, e.g. `emailMessage/To`; treated as an opaque key.
    pub key: String,
    pub type_name: String,
    pub summary: String,
    pub format: Option<String>,
    pub description: String,
}

impl FunctionDefinition {
    /// Renders the grounding text block: name, description, then one line
    /// per parameter as `key (type): description`. Byte-stable across runs.
    pub fn render_fd(&self) -> String {
        let mut out = String::new();
        out.push_str(&alloc::format!("{}\n", self.function_name));
        out.push_str(&self.description);
        for p in &self.parameters {
            out.push('\n');
            out.push_str(&alloc::format!("{} ({}): {}", p.key, p.type_name, p.description));
        }
        out
    }

    /// True iff `key` matches one of this definition's parameter keys.
    pub fn has_parameter(&self, key: &str) -> bool {
        self.parameters.iter().any(|p| p.key == key)
    }
}

/// Immutable index of function definitions keyed by API name.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    definitions: BTreeMap<ApiName, FunctionDefinition>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CatalogError {
    DuplicateFunction(ApiName),
    DuplicateParameterKey { function: ApiName, key: String },
}

impl fmt::Display for CatalogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CatalogError::DuplicateFunction(name) => {
                write!(f, "duplicate function definition `{name}`")
            }
            CatalogError::DuplicateParameterKey { function, key } => {
                write!(f, "duplicate parameter key `{key}` in `{function}`")
            }
        }
    }
}

impl core::error::Error for CatalogError {}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_definitions(
        definitions: impl IntoIterator<Item = FunctionDefinition>,
    ) -> Result<Self, CatalogError> {
        let mut catalog = Self::new();
        for def in definitions {
            catalog.insert(def)?;
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, def: FunctionDefinition) -> Result<(), CatalogError> {
        let mut seen: Vec<&str> = Vec::with_capacity(def.parameters.len());
        for p in &def.parameters {
            if seen.contains(&p.key.as_str()) {
                return Err(CatalogError::DuplicateParameterKey {
                    function: def.function_name.clone(),
                    key: p.key.clone(),
                });
            }
            seen.push(&p.key);
        }
        let name = def.function_name.clone();
        if self.definitions.contains_key(&name) {
            return Err(CatalogError::DuplicateFunction(name));
        }
        self.definitions.insert(name, def);
        Ok(())
    }

    /// Exact, case-sensitive lookup.
    pub fn lookup(&self, name: &ApiName) -> Option<&FunctionDefinition> {
        self.definitions.get(name)
    }

    pub fn remove(&mut self, name: &ApiName) -> Option<FunctionDefinition> {
        self.definitions.remove(name)
    }

    pub fn len(&self) -> usize {
        self.definitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.definitions.is_empty()
    }

    /// Definitions in name order.
    pub fn iter(&self) -> impl Iterator<Item = &FunctionDefinition> {
        self.definitions.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    pub(crate) fn send_email_v2() -> FunctionDefinition {
        FunctionDefinition {
            function_name: ApiName::parse("shared_outlook.SendEmailV2").unwrap(),
            description: "This operation sends an email message.".into(),
            display_name: "Send an email (V2)".into(),
            is_trigger: false,
            is_in_training_set: false,
            parameters: vec![ParameterInfo {
                key: "emailMessage/To".into(),
                type_name: "String".into(),
                summary: "To".into(),
                format: Some("email".into()),
                description: "Specify email addresses separated by semicolons like someone@contoso.com".into(),
            }],
            response_schema: vec![],
            extra: vec![],
        }
    }

    #[test]
    fn lookup_is_case_sensitive() {
        let catalog = Catalog::from_definitions([send_email_v2()]).unwrap();
        assert!(catalog
            .lookup(&ApiName::parse("shared_outlook.SendEmailV2").unwrap())
            .is_some());
        assert!(catalog
            .lookup(&ApiName::parse("shared_outlook.sendemailv2").unwrap())
            .is_none());
    }

    #[test]
    fn empty_catalog_lookup_is_absent() {
        let catalog = Catalog::new();
        assert!(catalog.lookup(&ApiName::parse("a.B").unwrap()).is_none());
    }

    #[test]
    fn duplicate_function_rejected() {
        let err = Catalog::from_definitions([send_email_v2(), send_email_v2()]).unwrap_err();
        assert_eq!(
            err,
            CatalogError::DuplicateFunction(ApiName::parse("shared_outlook.SendEmailV2").unwrap())
        );
    }

    #[test]
    fn render_fd_is_deterministic_and_complete() {
        let def = send_email_v2();
        let block = def.render_fd();
        assert!(block.starts_with("shared_outlook.SendEmailV2\n"));
        assert!(block.contains("This operation sends an email message."));
        assert!(block.contains("emailMessage/To (String): Specify email addresses"));
        assert_eq!(block, def.render_fd());
    }

    #[test]
    fn render_fd_without_parameters() {
        let mut def = send_email_v2();
        def.parameters.clear();
        assert_eq!(
            def.render_fd(),
            "shared_outlook.SendEmailV2\nThis operation sends an email message.".to_string()
        );
    }
}
