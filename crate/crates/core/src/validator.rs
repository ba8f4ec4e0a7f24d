//! Classifies a generated flow as unparsed, hallucinating API names,
//! hallucinating parameter keys, or clean.

use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::Catalog;
use crate::dsl::{self, ApiName, ParseError};

/// Per-flow validation outcome. Unparsed flows are not inspected further.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub parsed: bool,
    pub parse_error: Option<ParseError>,
    /// Distinct API names absent from the catalog, in first-occurrence order.
    pub hallucinated_apis: Vec<ApiName>,
    /// Distinct (known API, made-up key) pairs in first-occurrence order.
    /// Keys are only checkable for APIs present in the catalog.
    pub hallucinated_params: Vec<(ApiName, String)>,
    /// Ordered action list; empty if unparsed.
    pub actions: Vec<ApiName>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.parsed && self.hallucinated_apis.is_empty() && self.hallucinated_params.is_empty()
    }

    fn unparsed(error: ParseError) -> Self {
        Self {
            parsed: false,
            parse_error: Some(error),
            hallucinated_apis: Vec::new(),
            hallucinated_params: Vec::new(),
            actions: Vec::new(),
        }
    }
}

/// Validates DSL source against a catalog. All failure modes are encoded
/// in the report; this never fails.
pub fn classify(catalog: &Catalog, source: &str) -> ValidationReport {
    let program = match dsl::parse(source) {
        Ok(p) => p,
        Err(e) => return ValidationReport::unparsed(e),
    };
    let actions = program.extract_actions();
    let mut hallucinated_apis: Vec<ApiName> = Vec::new();
    let mut hallucinated_params: Vec<(ApiName, String)> = Vec::new();
    for (name, keys) in program.extract_parameter_usages() {
        match catalog.lookup(&name) {
            None => {
                if !hallucinated_apis.contains(&name) {
                    hallucinated_apis.push(name);
                }
            }
            Some(def) => {
                for key in keys {
                    if !def.has_parameter(&key) {
                        let entry = (name.clone(), key);
                        if !hallucinated_params.contains(&entry) {
                            hallucinated_params.push(entry);
                        }
                    }
                }
            }
        }
    }
    ValidationReport {
        parsed: true,
        parse_error: None,
        hallucinated_apis,
        hallucinated_params,
        actions,
    }
}
