//! Synthetic dataset construction: LLM-backed NL prompts for existing
//! flows, and seeded train/test splits mirroring API usage.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use flowgen_core::catalog::Catalog;
use flowgen_core::dsl::{self, ApiName};
use flowgen_core::retrieval::ExamplePair;

use crate::llm::Generator;

const NL_RETRY_CAP: u32 = 3;

/// Instruction template for NL synthesis; `{{fds}}` and `{{flow}}` are
/// substituted.
pub const NL_TEMPLATE: &str = "You are given a workflow written in an automation language, together with the definitions of every API it calls.\n\nAPI definitions:\n{{fds}}\n\nWorkflow:\n{{flow}}\n\nWrite the one-sentence request a user would type to ask for this workflow. Describe what it does in plain language. Do not mention API names, code, or syntax.";

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("flow `{flow_id}` does not parse: {error}")]
    UnparseableFlow {
        flow_id: String,
        error: flowgen_core::dsl::ParseError,
    },
    #[error("flow `{flow_id}` uses `{api}`, which is not in the catalog")]
    UnresolvedApi { flow_id: String, api: ApiName },
    #[error("generation for flow `{flow_id}` rejected after {attempts} attempt(s): {reason}")]
    GenerationRejected {
        flow_id: String,
        attempts: u32,
        reason: String,
    },
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error("target_count {requested} exceeds the pool of {available} examples")]
    InsufficientData { requested: usize, available: usize },
    #[error("train and test fractions must be non-negative and sum to 1")]
    BadFractions,
    #[error("dataset is empty")]
    EmptyPool,
}

/// Synthesizes the natural-language prompt for one flow. The metaprompt
/// grounds the model with the rendered definition of every API in the
/// flow; outputs that are empty or leak DSL tokens are rejected and
/// retried up to a cap.
pub fn generate_nl_for_flow(
    flow_id: &str,
    flow: &str,
    catalog: &Catalog,
    generator: &dyn Generator,
) -> Result<String, DatagenError> {
    let program = dsl::parse(flow).map_err(|error| DatagenError::UnparseableFlow {
        flow_id: flow_id.to_string(),
        error,
    })?;
    let mut fd_blocks = Vec::new();
    let mut seen = Vec::new();
    for name in program.extract_actions() {
        if seen.contains(&name) {
            continue;
        }
        let def = catalog
            .lookup(&name)
            .ok_or_else(|| DatagenError::UnresolvedApi {
                flow_id: flow_id.to_string(),
                api: name.clone(),
            })?;
        fd_blocks.push(def.render_fd());
        seen.push(name);
    }
    let prompt = NL_TEMPLATE
        .replace("{{fds}}", &fd_blocks.join("\n\n"))
        .replace("{{flow}}", flow);

    let mut last_reason = String::new();
    for attempt in 1..=NL_RETRY_CAP {
        let generation = generator.generate(flow_id, &prompt)?;
        let text = generation.text.trim().to_string();
        match rejection_reason(&text, &seen) {
            None => return Ok(text),
            Some(reason) => last_reason = reason,
        }
        let _ = attempt;
    }
    Err(DatagenError::GenerationRejected {
        flow_id: flow_id.to_string(),
        attempts: NL_RETRY_CAP,
        reason: last_reason,
    })
}

fn rejection_reason(text: &str, flow_apis: &[ApiName]) -> Option<String> {
    if text.is_empty() {
        return Some("empty output".to_string());
    }
    if text.contains("({") {
        return Some("output contains DSL call syntax".to_string());
    }
    for api in flow_apis {
        let name = api.to_string();
        if text.contains(&name) {
            return Some(format!("output names the API `{name}` verbatim"));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionMode {
    /// Sample flows proportional to the source-data frequency of the APIs
    /// they use.
    UsageWeighted,
    /// Stratify across APIs so each is represented near-uniformly.
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source_flows: String,
    pub catalog: String,
    pub target_count: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub distribution_mode: DistributionMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_api_histogram: BTreeMap<String, usize>,
    pub test_api_histogram: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub train: Vec<ExamplePair>,
    pub test: Vec<ExamplePair>,
    pub manifest: SplitManifest,
}

/// Builds seeded, disjoint train/test splits of `target_count` examples.
pub fn build_splits(spec: &DatasetSpec, pairs: &[ExamplePair]) -> Result<SplitOutput, DatagenError> {
    if pairs.is_empty() {
        return Err(DatagenError::EmptyPool);
    }
    if spec.train_fraction < 0.0
        || spec.test_fraction < 0.0
        || (spec.train_fraction + spec.test_fraction - 1.0).abs() > 1e-9
    {
        return Err(DatagenError::BadFractions);
    }
    if spec.target_count > pairs.len() {
        return Err(DatagenError::InsufficientData {
            requested: spec.target_count,
            available: pairs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sampled = match spec.distribution_mode {
        DistributionMode::UsageWeighted => sample_usage_weighted(pairs, spec.target_count, &mut rng),
        DistributionMode::Uniform => sample_uniform(pairs, spec.target_count, &mut rng),
    };
    sampled.shuffle(&mut rng);

    let n_train = (spec.target_count as f64 * spec.train_fraction).round() as usize;
    let n_train = n_train.min(sampled.len());
    let test = sampled.split_off(n_train);
    let train = sampled;

    let mut warnings = Vec::new();
    if test.is_empty() {
        warnings.push("test split is empty (train_fraction covers everything)".to_string());
    }
    let manifest = SplitManifest {
        seed: spec.seed,
        n_train: train.len(),
        n_test: test.len(),
        train_api_histogram: histogram(&train),
        test_api_histogram: histogram(&test),
        warnings,
    };
    Ok(SplitOutput {
        train,
        test,
        manifest,
    })
}

fn histogram(pairs: &[ExamplePair]) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for pair in pairs {
        for api in pair.api_set() {
            *hist.entry(api.to_string()).or_insert(0) += 1;
        }
    }
    hist
}

/// Weighted sampling without replacement: each flow weighs the sum of the
/// pool-wide usage counts of its APIs.
fn sample_usage_weighted(
    pairs: &[ExamplePair],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ExamplePair> {
    let mut usage: BTreeMap<&ApiName, usize> = BTreeMap::new();
    for pair in pairs {
        for api in pair.api_set() {
            *usage.entry(api).or_insert(0) += 1;
        }
    }
    let mut weights: Vec<f64> = pairs
        .iter()
        .map(|p| {
            p.api_set()
                .iter()
                .map(|a| usage[a] as f64)
                .sum::<f64>()
                .max(1.0)
        })
        .collect();
    let mut remaining: Vec<usize> = (0..pairs.len()).collect();
    let mut picked = Vec::with_capacity(count);
    use rand::Rng as _;
    while picked.len() < count {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut target = rng.random_range(0.0..total);
        let mut chosen = remaining.len() - 1;
        for (slot, &i) in remaining.iter().enumerate() {
            target -= weights[i];
            if target <= 0.0 {
                chosen = slot;
                break;
            }
        }
        let idx = remaining.swap_remove(chosen);
        weights[idx] = 0.0;
        picked.push(pairs[idx].clone());
    }
    picked
}

/// Stratified sampling: bucket flows by their first API and draw
/// round-robin across buckets so each API lands within one of uniform.
fn sample_uniform(pairs: &[ExamplePair], count: usize, rng: &mut ChaCha8Rng) -> Vec<ExamplePair> {
    let mut buckets: BTreeMap<&ApiName, Vec<usize>> = BTreeMap::new();
    for (i, pair) in pairs.iter().enumerate() {
        if let Some(first) = pair.api_set().iter().next() {
            buckets.entry(first).or_default().push(i);
        }
    }
    let mut bucket_lists: Vec<Vec<usize>> = buckets.into_values().collect();
    for list in bucket_lists.iter_mut() {
        list.shuffle(rng);
    }
    let mut picked = Vec::with_capacity(count);
    let mut cursor = 0;
    while picked.len() < count {
        let mut progressed = false;
        for list in bucket_lists.iter_mut() {
            if picked.len() >= count {
                break;
            }
            if cursor < list.len() {
                picked.push(pairs[list[cursor]].clone());
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
        cursor += 1;
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallLogEntry, Generation, LlmError};
    use flowgen_core::catalog::FunctionDefinition;
    use std::sync::Mutex;

    struct ScriptedGenerator {
        responses: Mutex<Vec<String>>,
    }

    impl ScriptedGenerator {
        fn new(responses: &[&str]) -> Self {
            Self {
                responses: Mutex::new(responses.iter().rev().map(|s| s.to_string()).collect()),
            }
        }
    }

    impl Generator for ScriptedGenerator {
        fn generate(&self, _id: &str, _prompt: &str) -> Result<Generation, LlmError> {
            let text = self.responses.lock().unwrap().pop().unwrap_or_default();
            Ok(Generation {
                text,
                log: CallLogEntry {
                    request_id: "t".into(),
                    model: "scripted".into(),
                    latency_ms: 0,
                    prompt_tokens: 0,
                    completion_tokens: 0,
                },
            })
        }
    }

    fn def(name: &str) -> FunctionDefinition {
        FunctionDefinition {
            function_name: ApiName::parse(name).unwrap(),
            description: "does things".into(),
            display_name: name.into(),
            is_trigger: false,
            is_in_training_set: false,
            parameters: vec![],
            response_schema: vec![],
            extra: vec![],
        }
    }

    fn catalog() -> Catalog {
        Catalog::from_definitions([
            def("shared_microsoftforms.CreateFormWebhook"),
            def("shared_teams.PostMessageToConversation"),
        ])
        .unwrap()
    }

    const SAMPLE_FLOW: &str = "t = await shared_microsoftforms.CreateFormWebhook({}); o = shared_teams.PostMessageToConversation({\"poster\": \"User\"});";

    #[test]
    fn nl_generation_returns_clean_text() {
        let generator = ScriptedGenerator::new(&[
            "Post a message in the channel of teams, when a new form is created in the forms",
        ]);
        let nl = generate_nl_for_flow("f1", SAMPLE_FLOW, &catalog(), &generator).unwrap();
        assert_eq!(
            nl,
            "Post a message in the channel of teams, when a new form is created in the forms"
        );
    }

    #[test]
    fn unresolved_api_is_an_error() {
        let generator = ScriptedGenerator::new(&["anything"]);
        let err =
            generate_nl_for_flow("f1", "x = shared_x.Unknown({});", &catalog(), &generator)
                .unwrap_err();
        assert!(matches!(err, DatagenError::UnresolvedApi { .. }));
    }

    #[test]
    fn empty_outputs_are_retried_then_rejected() {
        let generator = ScriptedGenerator::new(&["", "", ""]);
        let err = generate_nl_for_flow("f1", SAMPLE_FLOW, &catalog(), &generator).unwrap_err();
        assert!(matches!(
            err,
            DatagenError::GenerationRejected { attempts: 3, .. }
        ));
    }

    #[test]
    fn dsl_leakage_is_rejected_and_retried() {
        let generator = ScriptedGenerator::new(&[
            "call shared_teams.PostMessageToConversation for me",
            "Post a teams message when a form is created",
        ]);
        let nl = generate_nl_for_flow("f1", SAMPLE_FLOW, &catalog(), &generator).unwrap();
        assert_eq!(nl, "Post a teams message when a form is created");
    }

    fn pool(n: usize, api_of: impl Fn(usize) -> String) -> Vec<ExamplePair> {
        (0..n)
            .map(|i| {
                ExamplePair::new(
                    &format!("e{i:03}"),
                    &format!("task {i}"),
                    &format!("x = {}({{}});", api_of(i)),
                )
                .unwrap()
            })
            .collect()
    }

    fn spec(target: usize, train: f64, mode: DistributionMode) -> DatasetSpec {
        DatasetSpec {
            source_flows: String::new(),
            catalog: String::new(),
            target_count: target,
            train_fraction: train,
            test_fraction: 1.0 - train,
            seed: 7,
            distribution_mode: mode,
        }
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let pairs = pool(100, |i| format!("ns.Api{}", i % 10));
        let spec = spec(100, 0.8, DistributionMode::UsageWeighted);
        let a = build_splits(&spec, &pairs).unwrap();
        let b = build_splits(&spec, &pairs).unwrap();
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.test.len(), 20);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let train_ids: std::collections::BTreeSet<_> = a.train.iter().map(|p| &p.id).collect();
        assert!(a.test.iter().all(|p| !train_ids.contains(&p.id)));
        assert_eq!(train_ids.len() + a.test.len(), 100);
    }

    #[test]
    fn uniform_mode_balances_apis() {
        let pairs = pool(200, |i| format!("ns.Api{}", i % 10));
        let spec = spec(100, 0.0, DistributionMode::Uniform);
        let out = build_splits(&spec, &pairs).unwrap();
        assert_eq!(out.test.len(), 100);
        for count in out.manifest.test_api_histogram.values() {
            assert!((*count as i64 - 10).unsigned_abs() <= 1, "histogram {:?}", out.manifest.test_api_histogram);
        }
    }

    #[test]
    fn full_train_fraction_warns_about_empty_test() {
        let pairs = pool(10, |_| "ns.A".to_string());
        let out = build_splits(&spec(10, 1.0, DistributionMode::UsageWeighted), &pairs).unwrap();
        assert!(out.test.is_empty());
        assert!(!out.manifest.warnings.is_empty());
    }

    #[test]
    fn oversized_target_is_rejected() {
        let pairs = pool(5, |_| "ns.A".to_string());
        assert!(matches!(
            build_splits(&spec(6, 0.5, DistributionMode::UsageWeighted), &pairs),
            Err(DatagenError::InsufficientData { .. })
        ));
    }
}
