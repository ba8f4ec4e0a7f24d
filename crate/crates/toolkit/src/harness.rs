//! Experiment orchestration: retrieval -> grounding -> generation ->
//! validation -> metrics -> delta tables, with bounded concurrency and
//! per-example failure isolation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flowgen_core::dsl;
use flowgen_core::grounding::{
    assemble_metaprompt, build_fd_index, extract_fds_for_shots, retrieve_semantic_fds,
    CharEstimate, FdExtraction, FdIndex, GroundingConfig,
};
use flowgen_core::metrics::{
    aggregate, delta_row, DeltaTable, FlowScore, MetricsError, MetricsSummary,
};
use flowgen_core::retrieval::{build_index, retrieve_few_shots, EmbeddingProvider, ExamplePair};
use flowgen_core::validator::classify;

use crate::embed::ProviderConfig;
use crate::io::{self, LoadError, RunSummary};
use crate::llm::{strip_markers, CallLogEntry, EndpointConfig, Generator, HttpGenerator, ReplayGenerator};
use crate::templates;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalSection {
    pub provider: ProviderConfig,
    /// Dataset JSONL of (id, nl, dsl) records to index for few-shot
    /// retrieval.
    pub index_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EndpointSpec {
    Http {
        #[serde(flatten)]
        config: EndpointConfig,
    },
    Replay {
        path: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub grounding: GroundingConfig,
    pub retrieval: RetrievalSection,
    pub endpoint: EndpointSpec,
    pub testset: String,
    pub catalog: String,
    #[serde(default)]
    pub baseline_summary: Option<String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Template(#[from] templates::TemplateError),
    #[error("retrieval setup failed: {0}")]
    Retrieval(String),
    #[error("grounding setup failed: {0}")]
    Grounding(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("test sets differ between runs: {0}")]
    TestsetMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug)]
pub struct RunResult {
    pub config_hash: String,
    pub testset_hash: String,
    pub scores: Vec<FlowScore>,
    pub summary: MetricsSummary,
    pub delta: Option<DeltaTable>,
    pub calls: Vec<CallLogEntry>,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    sha256_hex(canonical.as_bytes())
}

struct ExampleOutcome {
    score: FlowScore,
    call: Option<CallLogEntry>,
    warning: Option<String>,
}

/// Runs one experimental arm end to end and writes
/// `<out_root>/<name>/{config.json, scores.jsonl, summary.json, delta.md,
/// calls.jsonl}`. Endpoint failures after retries are isolated per
/// example and surfaced as warnings, never aborting the run.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunResult, HarnessError> {
    let catalog = io::load_catalog(Path::new(&config.catalog))?;
    let testset = io::read_examples(Path::new(&config.testset))?;
    let train = io::read_examples(Path::new(&config.retrieval.index_path))?;
    let testset_bytes = fs::read(&config.testset).map_err(|e| HarnessError::Io {
        path: config.testset.clone(),
        source: e,
    })?;
    let testset_hash = sha256_hex(&testset_bytes);

    let corpus: Vec<&str> = train.iter().map(|p| p.nl.as_str()).collect();
    let provider = config.retrieval.provider.build(&corpus);
    let shot_index = build_index(train, provider.as_ref())
        .map_err(|e| HarnessError::Retrieval(e.to_string()))?;
    let fd_index: Option<FdIndex> = if config.grounding.use_sfd {
        Some(
            build_fd_index(&catalog, provider.as_ref())
                .map_err(|e| HarnessError::Grounding(e.to_string()))?,
        )
    } else {
        None
    };
    let instructions = templates::resolve(&config.grounding.instruction_template)?;

    let generator: Box<dyn Generator> = match &config.endpoint {
        EndpointSpec::Http { config } => Box::new(HttpGenerator::new(config.clone())),
        EndpointSpec::Replay { path } => Box::new(ReplayGenerator::from_path(Path::new(path))?),
    };

    let next = AtomicUsize::new(0);
    let outcomes: Vec<Mutex<Option<ExampleOutcome>>> =
        testset.iter().map(|_| Mutex::new(None)).collect();
    let workers = config.concurrency.max(1).min(testset.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= testset.len() {
                    break;
                }
                let outcome = run_one(
                    &testset[i],
                    &catalog,
                    &shot_index,
                    fd_index.as_ref(),
                    provider.as_ref(),
                    &instructions,
                    &config.grounding,
                    generator.as_ref(),
                );
                *outcomes[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut scores = Vec::with_capacity(testset.len());
    let mut calls = Vec::new();
    let mut warnings = Vec::new();
    for slot in outcomes {
        let outcome = slot.into_inner().unwrap().expect("worker filled every slot");
        scores.push(outcome.score);
        if let Some(call) = outcome.call {
            calls.push(call);
        }
        if let Some(warning) = outcome.warning {
            warnings.push(warning);
        }
    }
    scores.sort_by(|a, b| a.example_id.cmp(&b.example_id));

    let summary = aggregate(&scores)?;
    if summary.n_generation_failed > 0 {
        warnings.push(format!(
            "WARNING: {} example(s) failed generation after retries; they score 0 and are excluded from failure-rate denominators",
            summary.n_generation_failed
        ));
    }

    let delta = match &config.baseline_summary {
        Some(path) => {
            let baseline = io::read_summary(Path::new(path))?;
            let row = delta_row(&config.name, &summary, &baseline.summary)?;
            Some(DeltaTable {
                baseline_label: baseline.name,
                rows: vec![row],
            })
        }
        None => None,
    };

    let out_dir = out_root.join(&config.name);
    fs::create_dir_all(&out_dir).map_err(|e| HarnessError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    let hash = config_hash(config);
    let config_snapshot = serde_json::json!({
        "config": config,
        "config_hash": hash,
        "testset_hash": testset_hash,
    });
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&config_snapshot).expect("snapshot serializes"),
    )
    .map_err(|e| HarnessError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    io::write_scores(&out_dir.join("scores.jsonl"), &scores)?;
    io::write_summary(
        &out_dir.join("summary.json"),
        &RunSummary {
            name: config.name.clone(),
            testset_hash: testset_hash.clone(),
            config_hash: hash.clone(),
            summary: summary.clone(),
        },
    )?;
    io::write_jsonl(&out_dir.join("calls.jsonl"), &calls)?;
    if let Some(delta) = &delta {
        fs::write(out_dir.join("delta.md"), delta.render_markdown()).map_err(|e| {
            HarnessError::Io {
                path: out_dir.display().to_string(),
                source: e,
            }
        })?;
    }

    Ok(RunResult {
        config_hash: hash,
        testset_hash,
        scores,
        summary,
        delta,
        calls,
        warnings,
        out_dir,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    example: &ExamplePair,
    catalog: &flowgen_core::catalog::Catalog,
    shot_index: &flowgen_core::retrieval::ShotIndex,
    fd_index: Option<&FdIndex>,
    provider: &dyn EmbeddingProvider,
    instructions: &str,
    grounding: &GroundingConfig,
    generator: &dyn Generator,
) -> ExampleOutcome {
    let failed = |stage: &str, message: String| ExampleOutcome {
        score: FlowScore::generation_failed(&example.id),
        call: None,
        warning: Some(format!("example `{}` failed during {stage}: {message}", example.id)),
    };

    let shots = match retrieve_few_shots(shot_index, &example.nl, grounding.n_shots, provider) {
        Ok(shots) => shots,
        Err(e) => return failed("retrieval", e.to_string()),
    };
    let shot_refs: Vec<&ExamplePair> = shots.iter().map(|(p, _)| *p).collect();
    let extraction = if grounding.use_fd {
        extract_fds_for_shots(&shot_refs, catalog)
    } else {
        FdExtraction {
            definitions: Vec::new(),
            best_shot_rank: Vec::new(),
            missing: Vec::new(),
        }
    };
    let semantic = match fd_index {
        Some(index) => {
            match retrieve_semantic_fds(index, &example.nl, grounding.sfd_k, provider) {
                Ok(hits) => hits,
                Err(e) => return failed("semantic FD retrieval", e.to_string()),
            }
        }
        None => Vec::new(),
    };
    let prompt = match assemble_metaprompt(
        grounding,
        instructions,
        &shots,
        &extraction,
        &semantic,
        &example.nl,
        &CharEstimate,
    ) {
        Ok(prompt) => prompt,
        Err(e) => return failed("prompt assembly", e.to_string()),
    };

    let generation = match generator.generate(&example.id, &prompt.text) {
        Ok(g) => g,
        Err(e) => return failed("generation", e.to_string()),
    };
    let code = strip_markers(&generation.text);
    let report = classify(catalog, &code);

    // Ground truths are curated; a testset that fails to parse is a
    // configuration error caught at load time by read_examples.
    let truth = dsl::parse(&example.dsl).expect("testset DSL parses");
    ExampleOutcome {
        score: FlowScore::score(&example.id, &truth, report),
        call: Some(generation.log),
        warning: None,
    }
}

/// Builds the multi-arm comparison table against a shared baseline,
/// refusing to mix runs over different test sets.
pub fn compare_runs(
    runs: &[RunSummary],
    baseline: &RunSummary,
) -> Result<DeltaTable, HarnessError> {
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if run.testset_hash != baseline.testset_hash {
            return Err(HarnessError::TestsetMismatch(format!(
                "run `{}` used a different test set than baseline `{}`",
                run.name, baseline.name
            )));
        }
        rows.push(delta_row(&run.name, &run.summary, &baseline.summary)?);
    }
    Ok(DeltaTable {
        baseline_label: baseline.name.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(n: usize, sim: f64) -> MetricsSummary {
        MetricsSummary {
            n_total: n,
            n_generation_failed: 0,
            n_unparsed: 0,
            n_parsed: n,
            n_halluc_api: 0,
            n_halluc_param: 0,
            avg_similarity: sim,
            frac_unparsed: 0.0,
            pct_unparsed: 0.0,
            frac_made_up_apis: Some(0.0),
            pct_made_up_apis: Some(0.0),
            frac_made_up_params: Some(0.0),
            pct_made_up_params: Some(0.0),
        }
    }

    fn run_summary(name: &str, testset_hash: &str, sim: f64) -> RunSummary {
        RunSummary {
            name: name.into(),
            testset_hash: testset_hash.into(),
            config_hash: "c".into(),
            summary: summary(10, sim),
        }
    }

    #[test]
    fn baseline_vs_itself_is_a_zero_row() {
        let base = run_summary("base", "h1", 0.8);
        let table = compare_runs(std::slice::from_ref(&base), &base).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].d_avg_similarity, 0.0);
    }

    #[test]
    fn mismatched_test_sets_are_rejected() {
        let base = run_summary("base", "h1", 0.8);
        let other = run_summary("arm", "h2", 0.9);
        assert!(matches!(
            compare_runs(&[other], &base),
            Err(HarnessError::TestsetMismatch(_))
        ));
    }

    #[test]
    fn three_arms_produce_three_rows() {
        let base = run_summary("base", "h1", 0.8);
        let arms = vec![
            run_summary("arm-a", "h1", 0.82),
            run_summary("arm-b", "h1", 0.85),
            run_summary("arm-c", "h1", 0.79),
        ];
        let table = compare_runs(&arms, &base).unwrap();
        assert_eq!(table.rows.len(), 3);
        let md = table.render_markdown();
        assert!(md.contains("**+0.05**"), "{md}");
    }
}
