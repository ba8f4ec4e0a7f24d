//! The `flowgen` command line: parsing, validation, evaluation, retrieval
//! indexes, TST pair mining, prompt assembly, dataset synthesis, and full
//! experiment runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use flowgen_core::dsl::{self, ApiName};
use flowgen_core::grounding::{
    assemble_metaprompt, build_fd_index, extract_fds_for_shots, retrieve_semantic_fds,
    CharEstimate, FdExtraction,
};
use flowgen_core::metrics::{aggregate, delta_row, DeltaTable, FlowScore};
use flowgen_core::retrieval::{
    build_index, generate_tst_pairs, retrieve_few_shots, ExamplePair, ShotIndex,
};
use flowgen_core::validator::classify;

use crate::datagen::{self, DatasetSpec};
use crate::embed::ProviderConfig;
use crate::harness::{self, sha256_hex, EndpointSpec, ExperimentConfig};
use crate::io::{self, DatasetRecord, FlowRecord, RunSummary};
use crate::llm::{strip_markers, Generator, HttpGenerator, ReplayGenerator};
use crate::templates;

#[derive(Parser)]
#[command(name = "flowgen", about = "Generate and evaluate workflow-automation programs with retrieval-grounded prompts", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a program file and print its canonical form.
    Parse { file: PathBuf },
    /// Catalog inspection and validation.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
    /// Validate a program against a catalog; exit 1 on any failure.
    Validate {
        file: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
    },
    /// Score predictions against ground truths.
    Eval(EvalArgs),
    /// Build or query a retrieval index.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Mine labeled pairs for task-specific embedding training.
    TstPairs(TstPairsArgs),
    /// Prompt construction.
    Prompt {
        #[command(subcommand)]
        command: PromptCommand,
    },
    /// Synthetic dataset construction.
    Datagen {
        #[command(subcommand)]
        command: DatagenCommand,
    },
    /// Run one experiment arm end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Compare run summaries against a baseline summary.
    Compare {
        /// Comma-separated summary.json paths.
        #[arg(long, value_delimiter = ',')]
        runs: Vec<PathBuf>,
        #[arg(long)]
        baseline: PathBuf,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Load a catalog file and report its size.
    Validate { path: PathBuf },
    /// Print one definition as JSON.
    Show {
        api_name: String,
        #[arg(long)]
        catalog: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSONL: {"id","dsl"}; markers are stripped before parsing.
    #[arg(long)]
    predictions: PathBuf,
    /// Ground-truth dataset JSONL: {"id","nl","dsl"}.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Write scores.jsonl, summary.json, and delta.md here instead of stdout only.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    name: String,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        /// Dataset JSONL to index.
        #[arg(long)]
        dataset: PathBuf,
        /// Provider config: inline JSON or a path to a JSON file.
        #[arg(long)]
        provider: String,
        #[arg(long)]
        out: PathBuf,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        provider: String,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Args)]
struct TstPairsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    provider: String,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Assemble the metaprompt for one query under an experiment config.
    Assemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: String,
    },
}

#[derive(Subcommand)]
enum DatagenCommand {
    /// Synthesize natural-language prompts for existing flows.
    Nl {
        /// Source flows JSONL: {"id","dsl"}.
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Endpoint config: inline JSON or a path to a JSON file.
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV export for manual audit of the generated prompts.
        #[arg(long)]
        review_csv: Option<PathBuf>,
    },
    /// Build seeded train/test splits.
    Split {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Persisted retrieval index: provider identity plus one record per
/// example with its embedding.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    provider_name: String,
    dimension: usize,
    records: Vec<IndexRecord>,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    id: String,
    nl: String,
    dsl: String,
    vector: Vec<f32>,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Parse { file } => cmd_parse(&file),
        Command::Catalog { command } => cmd_catalog(command),
        Command::Validate { file, catalog } => cmd_validate(&file, &catalog),
        Command::Eval(args) => cmd_eval(args),
        Command::Index { command } => cmd_index(command),
        Command::TstPairs(args) => cmd_tst_pairs(args),
        Command::Prompt {
            command: PromptCommand::Assemble { config, query },
        } => cmd_prompt_assemble(&config, &query),
        Command::Datagen { command } => cmd_datagen(command),
        Command::Run {
            config,
            baseline,
            out_dir,
        } => cmd_run(&config, baseline.as_deref(), &out_dir),
        Command::Compare { runs, baseline } => cmd_compare(&runs, &baseline),
    }
}

/// Accepts either inline JSON (starts with `{`) or a path to a JSON file.
fn json_arg<T: serde::de::DeserializeOwned>(arg: &str, what: &str) -> Result<T> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("cannot read {what} file `{arg}`"))?
    };
    serde_json::from_str(&text).with_context(|| format!("malformed {what} config"))
}

fn build_generator(spec: &EndpointSpec) -> Result<Box<dyn Generator>> {
    Ok(match spec {
        EndpointSpec::Http { config } => Box::new(HttpGenerator::new(config.clone())),
        EndpointSpec::Replay { path } => Box::new(ReplayGenerator::from_path(Path::new(path))?),
    })
}

fn cmd_parse(file: &Path) -> Result<ExitCode> {
    let source = fs::read_to_string(file).with_context(|| format!("cannot read {}", file.display()))?;
    match dsl::parse(&source) {
        Ok(program) => {
            println!("{}", program.serialize().trim_end());
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e)?);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_catalog(command: CatalogCommand) -> Result<ExitCode> {
    match command {
        CatalogCommand::Validate { path } => {
            let catalog = io::load_catalog(&path)?;
            println!("ok: {} definition(s)", catalog.len());
            Ok(ExitCode::SUCCESS)
        }
        CatalogCommand::Show { api_name, catalog } => {
            let name = ApiName::parse(&api_name).map_err(|e| anyhow::anyhow!("bad API name: {e}"))?;
            let catalog = io::load_catalog(&catalog)?;
            match catalog.lookup(&name) {
                Some(def) => {
                    let json = io::catalog_to_json(&flowgen_core::catalog::Catalog::from_definitions(
                        [def.clone()],
                    )?);
                    println!("{}", serde_json::to_string_pretty(&json[&api_name])?);
                    Ok(ExitCode::SUCCESS)
                }
                None => {
                    eprintln!("`{api_name}` is not in the catalog");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
    }
}

fn cmd_validate(file: &Path, catalog_path: &Path) -> Result<ExitCode> {
    let catalog = io::load_catalog(catalog_path)?;
    let source = fs::read_to_string(file).with_context(|| format!("cannot read {}", file.display()))?;
    let report = classify(&catalog, &source);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let catalog = io::load_catalog(&args.catalog)?;
    let truths = io::read_examples(&args.truth)?;
    let predictions: Vec<FlowRecord> = io::read_jsonl(&args.predictions)?;
    let by_id: std::collections::HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.dsl.as_str()))
        .collect();

    let mut scores = Vec::with_capacity(truths.len());
    for truth in &truths {
        let Some(raw) = by_id.get(truth.id.as_str()) else {
            bail!("no prediction for example `{}`", truth.id);
        };
        let code = strip_markers(raw);
        let report = classify(&catalog, &code);
        let truth_program = dsl::parse(&truth.dsl).expect("read_examples validated the DSL");
        scores.push(FlowScore::score(&truth.id, &truth_program, report));
    }
    scores.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let summary = aggregate(&scores)?;

    let truth_bytes = fs::read(&args.truth)?;
    let run_summary = RunSummary {
        name: args.name.clone(),
        testset_hash: sha256_hex(&truth_bytes),
        config_hash: String::new(),
        summary: summary.clone(),
    };

    let delta = match &args.baseline {
        Some(path) => {
            let baseline = io::read_summary(path)?;
            let row = delta_row(&args.name, &summary, &baseline.summary)?;
            Some(DeltaTable {
                baseline_label: baseline.name,
                rows: vec![row],
            })
        }
        None => None,
    };

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        io::write_scores(&out.join("scores.jsonl"), &scores)?;
        io::write_summary(&out.join("summary.json"), &run_summary)?;
        if let Some(delta) = &delta {
            fs::write(out.join("delta.md"), delta.render_markdown())?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&run_summary)?);
    if let Some(delta) = &delta {
        println!("{}", delta.render_markdown());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_index(command: IndexCommand) -> Result<ExitCode> {
    match command {
        IndexCommand::Build {
            dataset,
            provider,
            out,
        } => {
            let provider: ProviderConfig = json_arg(&provider, "provider")?;
            let pairs = io::read_examples(&dataset)?;
            let corpus: Vec<&str> = pairs.iter().map(|p| p.nl.as_str()).collect();
            let provider = provider.build(&corpus);
            let index = build_index(pairs, provider.as_ref())?;
            let records = index
                .pairs()
                .iter()
                .zip(index.vectors())
                .map(|(p, v)| IndexRecord {
                    id: p.id.clone(),
                    nl: p.nl.clone(),
                    dsl: p.dsl.clone(),
                    vector: v.clone(),
                })
                .collect();
            let file = IndexFile {
                provider_name: index.provider_name().to_string(),
                dimension: index.dimension(),
                records,
            };
            fs::write(&out, serde_json::to_string(&file)?)?;
            println!("indexed {} example(s) with {}", index.len(), index.provider_name());
            Ok(ExitCode::SUCCESS)
        }
        IndexCommand::Query {
            index,
            provider,
            query,
            k,
        } => {
            let provider: ProviderConfig = json_arg(&provider, "provider")?;
            let file: IndexFile = serde_json::from_str(&fs::read_to_string(&index)?)?;
            let mut pairs = Vec::with_capacity(file.records.len());
            let mut vectors = Vec::with_capacity(file.records.len());
            for r in file.records {
                pairs.push(
                    ExamplePair::new(&r.id, &r.nl, &r.dsl)
                        .map_err(|e| anyhow::anyhow!("stored example `{}`: {e}", r.id))?,
                );
                vectors.push(r.vector);
            }
            let corpus: Vec<&str> = pairs.iter().map(|p| p.nl.as_str()).collect();
            let provider = provider.build(&corpus);
            let index = ShotIndex::from_parts(&file.provider_name, file.dimension, pairs, vectors)?;
            let hits = retrieve_few_shots(&index, &query, k, provider.as_ref())?;
            for (pair, score) in hits {
                println!("{score:.4}\t{}\t{}", pair.id, pair.nl);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_tst_pairs(args: TstPairsArgs) -> Result<ExitCode> {
    let provider: ProviderConfig = json_arg(&args.provider, "provider")?;
    let dataset = io::read_examples(&args.dataset)?;
    let corpus: Vec<&str> = dataset.iter().map(|p| p.nl.as_str()).collect();
    let provider = provider.build(&corpus);
    let records = generate_tst_pairs(&dataset, provider.as_ref(), args.threshold, args.budget, args.seed)?;
    io::write_tst_pairs(&args.out, &records)?;
    println!("wrote {} pair(s) to {}", records.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_prompt_assemble(config_path: &Path, query: &str) -> Result<ExitCode> {
    let config: ExperimentConfig = json_arg(&config_path.display().to_string(), "experiment")?;
    let catalog = io::load_catalog(Path::new(&config.catalog))?;
    let train = io::read_examples(Path::new(&config.retrieval.index_path))?;
    let corpus: Vec<&str> = train.iter().map(|p| p.nl.as_str()).collect();
    let provider = config.retrieval.provider.build(&corpus);
    let index = build_index(train, provider.as_ref())?;
    let instructions = templates::resolve(&config.grounding.instruction_template)?;

    let shots = retrieve_few_shots(&index, query, config.grounding.n_shots, provider.as_ref())?;
    let shot_refs: Vec<&ExamplePair> = shots.iter().map(|(p, _)| *p).collect();
    let extraction = if config.grounding.use_fd {
        extract_fds_for_shots(&shot_refs, &catalog)
    } else {
        FdExtraction {
            definitions: Vec::new(),
            best_shot_rank: Vec::new(),
            missing: Vec::new(),
        }
    };
    let fd_index;
    let semantic = if config.grounding.use_sfd {
        fd_index = build_fd_index(&catalog, provider.as_ref())?;
        retrieve_semantic_fds(&fd_index, query, config.grounding.sfd_k, provider.as_ref())?
    } else {
        Vec::new()
    };
    let prompt = assemble_metaprompt(
        &config.grounding,
        &instructions,
        &shots,
        &extraction,
        &semantic,
        query,
        &CharEstimate,
    )?;
    let out = serde_json::json!({
        "text": prompt.text,
        "token_estimate": prompt.token_estimate,
        "manifest": prompt.manifest,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_datagen(command: DatagenCommand) -> Result<ExitCode> {
    match command {
        DatagenCommand::Nl {
            flows,
            catalog,
            endpoint,
            out,
            review_csv,
        } => {
            let catalog = io::load_catalog(&catalog)?;
            let endpoint: EndpointSpec = json_arg(&endpoint, "endpoint")?;
            let generator = build_generator(&endpoint)?;
            let flows: Vec<FlowRecord> = io::read_jsonl(&flows)?;
            let mut records = Vec::with_capacity(flows.len());
            for flow in &flows {
                let nl = datagen::generate_nl_for_flow(&flow.id, &flow.dsl, &catalog, generator.as_ref())?;
                records.push(DatasetRecord {
                    id: flow.id.clone(),
                    nl,
                    dsl: flow.dsl.clone(),
                });
            }
            io::write_jsonl(&out, &records)?;
            if let Some(path) = review_csv {
                let mut writer = csv::Writer::from_path(&path)?;
                writer.write_record(["id", "nl", "dsl"])?;
                for r in &records {
                    writer.write_record([&r.id, &r.nl, &r.dsl])?;
                }
                writer.flush()?;
            }
            println!("generated {} prompt(s)", records.len());
            Ok(ExitCode::SUCCESS)
        }
        DatagenCommand::Split { spec, out_dir } => {
            let spec: DatasetSpec = json_arg(&spec.display().to_string(), "dataset spec")?;
            let pairs = io::read_examples(Path::new(&spec.source_flows))?;
            let split = datagen::build_splits(&spec, &pairs)?;
            fs::create_dir_all(&out_dir)?;
            io::write_examples(&out_dir.join("train.jsonl"), &split.train)?;
            io::write_examples(&out_dir.join("test.jsonl"), &split.test)?;
            fs::write(
                out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&split.manifest)?,
            )?;
            for warning in &split.manifest.warnings {
                eprintln!("warning: {warning}");
            }
            println!("train {} / test {}", split.manifest.n_train, split.manifest.n_test);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_run(config_path: &Path, baseline: Option<&Path>, out_dir: &Path) -> Result<ExitCode> {
    let mut config: ExperimentConfig = json_arg(&config_path.display().to_string(), "experiment")?;
    if let Some(path) = baseline {
        config.baseline_summary = Some(path.display().to_string());
    }
    let result = harness::run_experiment(&config, out_dir)?;
    for warning in &result.warnings {
        eprintln!("{warning}");
    }
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    if let Some(delta) = &result.delta {
        println!("{}", delta.render_markdown());
    }
    println!("outputs in {}", result.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(runs: &[PathBuf], baseline: &Path) -> Result<ExitCode> {
    let baseline = io::read_summary(baseline)?;
    let runs: Vec<RunSummary> = runs
        .iter()
        .map(|p| io::read_summary(p))
        .collect::<Result<_, _>>()?;
    let table = harness::compare_runs(&runs, &baseline)?;
    println!("{}", table.render_markdown());
    Ok(ExitCode::SUCCESS)
}
