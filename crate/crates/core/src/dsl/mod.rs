//! The workflow-automation DSL: abstract syntax, parsing, canonical
//! serialization, and traversal helpers.
//!
//! A program is a sequence of statements. A statement is either an
//! assignment of a (possibly awaited) namespaced API call taking exactly
//! one JSON-object argument, or an if/else block over a member-path
//! condition:
//!
//! ```text
//! triggerOutputs = await shared_microsoftforms.CreateFormWebhook({});
//! out = shared_teams.PostMessageToConversation({"poster": "User"});
//! if (out.status == "ok") {
//!   x = shared_outlook.SendEmailV2({});
//! }
//! ```

mod parser;

pub use parser::{parse, ParseError};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// A parsed DSL program: one or more statements in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Assignment {
        target: String,
        awaited: bool,
        call: CallExpr,
    },
    Conditional {
        condition: CondExpr,
        then_branch: Vec<Statement>,
        else_branch: Option<Vec<Statement>>,
    },
}

/// One API invocation: a namespaced function applied to a single
/// JSON-object argument.
#[derive(Debug, Clone, PartialEq)]
pub struct CallExpr {
    pub api_name: ApiName,
    pub argument: JsonObject,
}

/// A fully qualified API function name, canonically `namespace.function`
/// (e.g. `shared_teams.PostMessageToConversation`). Comparison is exact
/// and case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ApiName {
    namespace: String,
    function: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidApiName;

impl fmt::Display for InvalidApiName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "API name must be two non-empty parts joined by a single dot")
    }
}

impl core::error::Error for InvalidApiName {}

impl ApiName {
    pub fn new(namespace: &str, function: &str) -> Result<Self, InvalidApiName> {
        if namespace.is_empty() || function.is_empty() || namespace.contains('.') || function.contains('.') {
            return Err(InvalidApiName);
        }
        Ok(Self {
            namespace: namespace.into(),
            function: function.into(),
        })
    }

    /// Parses the canonical `namespace.function` form.
    pub fn parse(s: &str) -> Result<Self, InvalidApiName> {
        let (ns, func) = s.split_once('.').ok_or(InvalidApiName)?;
        if func.contains('.') {
            return Err(InvalidApiName);
        }
        Self::new(ns, func)
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn function(&self) -> &str {
        &self.function
    }
}

impl fmt::Display for ApiName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.namespace, self.function)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for ApiName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{self}"))
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ApiName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ApiName::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A JSON object literal with unique keys in original source order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JsonObject {
    entries: Vec<(String, JsonValue)>,
}

impl JsonObject {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an object, rejecting duplicate keys.
    pub fn from_entries(entries: Vec<(String, JsonValue)>) -> Result<Self, String> {
        let mut obj = Self::new();
        for (k, v) in entries {
            if !obj.insert(k.clone(), v) {
                return Err(k);
            }
        }
        Ok(obj)
    }

    /// Inserts a new entry; returns false (and leaves the object unchanged)
    /// if the key is already present.
    pub fn insert(&mut self, key: String, value: JsonValue) -> bool {
        if self.get(&key).is_some() {
            return false;
        }
        self.entries.push((key, value));
        true
    }

    pub fn get(&self, key: &str) -> Option<&JsonValue> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &JsonValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JsonValue {
    Null,
    Bool(bool),
    Number(f64),
    String(String),
    Array(Vec<JsonValue>),
    Object(JsonObject),
}

/// A conditional expression over a member path.
#[derive(Debug, Clone, PartialEq)]
pub enum CondExpr {
    Comparison {
        left: MemberPath,
        op: CmpOp,
        right: Literal,
    },
    Truthy { path: MemberPath },
}

/// Dot-separated identifier chain of length >= 1, e.g. `out.body.status`.
pub type MemberPath = Vec<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Bool(bool),
    Number(f64),
    String(String),
}

impl Program {
    /// Collects every API name in depth-first source order, including calls
    /// inside both conditional branches. Duplicates are preserved.
    pub fn extract_actions(&self) -> Vec<ApiName> {
        let mut out = Vec::new();
        collect_calls(&self.statements, &mut |call| out.push(call.api_name.clone()));
        out
    }

    /// One entry per call in traversal order: the API name and the
    /// top-level keys of its argument object.
    pub fn extract_parameter_usages(&self) -> Vec<(ApiName, Vec<String>)> {
        let mut out = Vec::new();
        collect_calls(&self.statements, &mut |call| {
            out.push((
                call.api_name.clone(),
                call.argument.keys().map(String::from).collect(),
            ))
        });
        out
    }

    /// Canonical text form: one statement per line, `;`-terminated
    /// assignments, JSON keys in stored order, double-quoted strings.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        write_statements(&mut out, &self.statements, 0);
        out
    }
}

fn collect_calls(statements: &[Statement], f: &mut impl FnMut(&CallExpr)) {
    for stmt in statements {
        match stmt {
            Statement::Assignment { call, .. } => f(call),
            Statement::Conditional {
                then_branch,
                else_branch,
                ..
            } => {
                collect_calls(then_branch, f);
                if let Some(els) = else_branch {
                    collect_calls(els, f);
                }
            }
        }
    }
}

fn write_statements(out: &mut String, statements: &[Statement], depth: usize) {
    for (i, stmt) in statements.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_indent(out, depth);
        write_statement(out, stmt, depth);
    }
}

fn write_indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_statement(out: &mut String, stmt: &Statement, depth: usize) {
    match stmt {
        Statement::Assignment {
            target,
            awaited,
            call,
        } => {
            out.push_str(target);
            out.push_str(" = ");
            if *awaited {
                out.push_str("await ");
            }
            out.push_str(&format!("{}", call.api_name));
            out.push('(');
            write_value(out, &JsonValue::Object(call.argument.clone()));
            out.push_str(");");
        }
        Statement::Conditional {
            condition,
            then_branch,
            else_branch,
        } => {
            out.push_str("if (");
            write_cond(out, condition);
            out.push_str(") {");
            if !then_branch.is_empty() {
                out.push('\n');
                write_statements(out, then_branch, depth + 1);
            }
            out.push('\n');
            write_indent(out, depth);
            out.push('}');
            if let Some(els) = else_branch {
                out.push_str(" else {");
                if !els.is_empty() {
                    out.push('\n');
                    write_statements(out, els, depth + 1);
                }
                out.push('\n');
                write_indent(out, depth);
                out.push('}');
            }
        }
    }
}

fn write_cond(out: &mut String, cond: &CondExpr) {
    match cond {
        CondExpr::Comparison { left, op, right } => {
            out.push_str(&left.join("."));
            out.push(' ');
            out.push_str(op.as_str());
            out.push(' ');
            write_literal(out, right);
        }
        CondExpr::Truthy { path } => out.push_str(&path.join(".")),
    }
}

fn write_literal(out: &mut String, lit: &Literal) {
    match lit {
        Literal::Null => out.push_str("null"),
        Literal::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Literal::Number(n) => out.push_str(&format!("{n}")),
        Literal::String(s) => write_json_string(out, s),
    }
}

fn write_value(out: &mut String, value: &JsonValue) {
    match value {
        JsonValue::Null => out.push_str("null"),
        JsonValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        JsonValue::Number(n) => out.push_str(&format!("{n}")),
        JsonValue::String(s) => write_json_string(out, s),
        JsonValue::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item);
            }
            out.push(']');
        }
        JsonValue::Object(obj) => {
            out.push('{');
            for (i, (k, v)) in obj.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_json_string(out, k);
                out.push_str(": ");
                write_value(out, v);
            }
            out.push('}');
        }
    }
}

pub(crate) fn write_json_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}
