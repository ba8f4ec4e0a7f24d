//! File formats: catalog JSON, dataset/flow/score
//! JSONL, summary JSON, and persisted retrieval indexes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use flowgen_core::catalog::{Catalog, CatalogError, FunctionDefinition, ParameterInfo};
use flowgen_core::dsl::{ApiName, JsonObject, JsonValue};
use flowgen_core::metrics::{FlowScore, MetricsSummary};
use flowgen_core::retrieval::{ExamplePair, TstPairRecord};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Catalog {
        path: String,
        #[source]
        source: CatalogError,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> LoadError {
    LoadError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn schema_err(path: &Path, message: impl Into<String>) -> LoadError {
    LoadError::Schema {
        path: path.display().to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Catalog JSON (top-level object keyed by function name)

/// Loads a catalog file. Unknown per-definition fields are preserved
/// opaquely; duplicate function names and missing `FunctionName` fields
/// are errors.
pub fn load_catalog(path: &Path) -> Result<Catalog, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| LoadError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    let Value::Object(entries) = root else {
        return Err(schema_err(path, "catalog root must be a JSON object keyed by function name"));
    };
    let mut catalog = Catalog::new();
    for (key, value) in entries {
        let def = definition_from_json(path, &key, value)?;
        catalog.insert(def).map_err(|e| LoadError::Catalog {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(catalog)
}

fn definition_from_json(path: &Path, key: &str, value: Value) -> Result<FunctionDefinition, LoadError> {
    let Value::Object(mut fields) = value else {
        return Err(schema_err(path, format!("definition `{key}` must be a JSON object")));
    };
    let name_value = fields
        .remove("FunctionName")
        .ok_or_else(|| schema_err(path, format!("definition `{key}` is missing FunctionName")))?;
    let Value::String(name) = name_value else {
        return Err(schema_err(path, format!("FunctionName of `{key}` must be a string")));
    };
    let function_name = ApiName::parse(&name)
        .map_err(|e| schema_err(path, format!("FunctionName `{name}`: {e}")))?;

    let take_string = |fields: &mut serde_json::Map<String, Value>, field: &str| {
        match fields.remove(field) {
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                fields.insert(field.to_string(), other);
                None
            }
            None => None,
        }
    };
    let take_bool = |fields: &mut serde_json::Map<String, Value>, field: &str| {
        match fields.remove(field) {
            Some(Value::Bool(b)) => Some(b),
            Some(other) => {
                fields.insert(field.to_string(), other);
                None
            }
            None => None,
        }
    };

    let description = take_string(&mut fields, "Description").unwrap_or_default();
    let display_name = take_string(&mut fields, "DisplayName").unwrap_or_default();
    let is_trigger = take_bool(&mut fields, "IsTrigger").unwrap_or(false);
    let is_in_training_set = take_bool(&mut fields, "IsInTrainingSet").unwrap_or(false);

    let mut parameters = Vec::new();
    if let Some(value) = fields.remove("ParametersInfo") {
        let Value::Array(items) = value else {
            return Err(schema_err(path, format!("ParametersInfo of `{name}` must be an array")));
        };
        for item in items {
            let Value::Object(mut p) = item else {
                return Err(schema_err(path, format!("parameter entry of `{name}` must be an object")));
            };
            let key = match p.remove("Key") {
                Some(Value::String(s)) if !s.is_empty() => s,
                _ => {
                    return Err(schema_err(path, format!("parameter of `{name}` needs a non-empty Key")))
                }
            };
            parameters.push(ParameterInfo {
                key,
                type_name: take_string(&mut p, "Type").unwrap_or_default(),
                summary: take_string(&mut p, "Summary").unwrap_or_default(),
                format: take_string(&mut p, "Format"),
                description: take_string(&mut p, "Description").unwrap_or_default(),
            });
        }
    }

    let response_schema = match fields.remove("ResponseSchema") {
        Some(Value::Array(items)) => items.into_iter().map(to_core_value).collect(),
        Some(other) => vec![to_core_value(other)],
        None => Vec::new(),
    };

    let extra: Vec<(String, JsonValue)> = fields
        .into_iter()
        .map(|(k, v)| (k, to_core_value(v)))
        .collect();

    Ok(FunctionDefinition {
        function_name,
        description,
        display_name,
        is_trigger,
        is_in_training_set,
        parameters,
        response_schema,
        extra,
    })
}

/// Re-serializes a catalog to the same JSON shape it was loaded from.
pub fn catalog_to_json(catalog: &Catalog) -> Value {
    let mut root = serde_json::Map::new();
    for def in catalog.iter() {
        let mut fields = serde_json::Map::new();
        fields.insert("FunctionName".into(), Value::String(def.function_name.to_string()));
        fields.insert("Description".into(), Value::String(def.description.clone()));
        fields.insert("IsInTrainingSet".into(), Value::Bool(def.is_in_training_set));
        fields.insert("DisplayName".into(), Value::String(def.display_name.clone()));
        let params: Vec<Value> = def
            .parameters
            .iter()
            .map(|p| {
                let mut m = serde_json::Map::new();
                m.insert("Key".into(), Value::String(p.key.clone()));
                m.insert("Type".into(), Value::String(p.type_name.clone()));
                m.insert("Summary".into(), Value::String(p.summary.clone()));
                if let Some(format) = &p.format {
                    m.insert("Format".into(), Value::String(format.clone()));
                }
                m.insert("Description".into(), Value::String(p.description.clone()));
                Value::Object(m)
            })
            .collect();
        fields.insert("ParametersInfo".into(), Value::Array(params));
        fields.insert(
            "ResponseSchema".into(),
            Value::Array(def.response_schema.iter().map(from_core_value).collect()),
        );
        fields.insert("IsTrigger".into(), Value::Bool(def.is_trigger));
        for (k, v) in &def.extra {
            fields.insert(k.clone(), from_core_value(v));
        }
        root.insert(def.function_name.to_string(), Value::Object(fields));
    }
    Value::Object(root)
}

fn to_core_value(v: Value) -> JsonValue {
    match v {
        Value::Null => JsonValue::Null,
        Value::Bool(b) => JsonValue::Bool(b),
        Value::Number(n) => JsonValue::Number(n.as_f64().unwrap_or(0.0)),
        Value::String(s) => JsonValue::String(s),
        Value::Array(items) => JsonValue::Array(items.into_iter().map(to_core_value).collect()),
        Value::Object(map) => {
            let mut obj = JsonObject::new();
            for (k, v) in map {
                obj.insert(k, to_core_value(v));
            }
            JsonValue::Object(obj)
        }
    }
}

fn from_core_value(v: &JsonValue) -> Value {
    match v {
        JsonValue::Null => Value::Null,
        JsonValue::Bool(b) => Value::Bool(*b),
        JsonValue::Number(n) => serde_json::Number::from_f64(*n).map_or(Value::Null, Value::Number),
        JsonValue::String(s) => Value::String(s.clone()),
        JsonValue::Array(items) => Value::Array(items.iter().map(from_core_value).collect()),
        JsonValue::Object(obj) => Value::Object(
            obj.iter()
                .map(|(k, v)| (k.to_string(), from_core_value(v)))
                .collect(),
        ),
    }
}

// ---------------------------------------------------------------------------
// JSONL helpers

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, LoadError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| schema_err(path, format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), LoadError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// One dataset line: `{"id","nl","dsl"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub nl: String,
    pub dsl: String,
}

impl From<&ExamplePair> for DatasetRecord {
    fn from(p: &ExamplePair) -> Self {
        Self {
            id: p.id.clone(),
            nl: p.nl.clone(),
            dsl: p.dsl.clone(),
        }
    }
}

/// One source-flow line: `{"id","dsl"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowRecord {
    pub id: String,
    pub dsl: String,
}

/// One prediction line for `eval`: `{"id","dsl"}` (raw generation text is
/// accepted; markers are stripped before parsing).
pub type PredictionRecord = FlowRecord;

pub fn read_examples(path: &Path) -> Result<Vec<ExamplePair>, LoadError> {
    let records: Vec<DatasetRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| {
            ExamplePair::new(&r.id, &r.nl, &r.dsl)
                .map_err(|e| schema_err(path, format!("example `{}`: {e}", r.id)))
        })
        .collect()
}

pub fn write_examples(path: &Path, pairs: &[ExamplePair]) -> Result<(), LoadError> {
    let records: Vec<DatasetRecord> = pairs.iter().map(DatasetRecord::from).collect();
    write_jsonl(path, &records)
}

pub fn write_tst_pairs(path: &Path, records: &[TstPairRecord]) -> Result<(), LoadError> {
    write_jsonl(path, records)
}

pub fn write_scores(path: &Path, scores: &[FlowScore]) -> Result<(), LoadError> {
    write_jsonl(path, scores)
}

pub fn read_summary(path: &Path) -> Result<RunSummary, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| LoadError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), LoadError> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// The `summary.json` schema: aggregate metrics plus enough identity to
/// compare runs safely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    /// SHA-256 of the test set file, hex; guards `compare` against mixing
    /// runs over different test sets.
    pub testset_hash: String,
    pub config_hash: String,
    pub summary: MetricsSummary,
}
