//! Metaprompt assembly: instruction template + API function-definition
//! blocks (regular and/or semantically retrieved) + few-shot exemplars,
//! under a token budget.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::{Catalog, FunctionDefinition};
use crate::dsl::ApiName;
use crate::retrieval::{dot, normalize, EmbedError, EmbeddingProvider, ExamplePair};

/// Estimates the token count of a text. The default heuristic is
/// ceil(chars / 4); an exact tokenizer can be swapped in.
pub trait Tokenizer {
    fn estimate(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CharEstimate;

impl Tokenizer for CharEstimate {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundingConfig {
    pub n_shots: usize,
    pub use_fd: bool,
    pub use_sfd: bool,
    pub sfd_k: usize,
    pub token_budget: usize,
    pub instruction_template: String,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            n_shots: 5,
            use_fd: false,
            use_sfd: false,
            sfd_k: 5,
            token_budget: 16_000,
            instruction_template: "default".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundingError {
    EmptyCatalog,
    Embed(EmbedError),
    ProviderMismatch { expected: String, got: String },
    /// Instructions plus query alone exceed the budget.
    BudgetImpossible { needed: usize, budget: usize },
}

impl fmt::Display for GroundingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundingError::EmptyCatalog => write!(f, "cannot index an empty catalog"),
            GroundingError::Embed(e) => write!(f, "{e}"),
            GroundingError::ProviderMismatch { expected, got } => {
                write!(f, "FD index was built with provider `{expected}`, got `{got}`")
            }
            GroundingError::BudgetImpossible { needed, budget } => write!(
                f,
                "instructions and query alone need ~{needed} tokens, budget is {budget}"
            ),
        }
    }
}

impl core::error::Error for GroundingError {}

impl From<EmbedError> for GroundingError {
    fn from(e: EmbedError) -> Self {
        GroundingError::Embed(e)
    }
}

/// Function definitions for every API used by the given shots: union in
/// first-occurrence order, de-duplicated, resolved via the catalog.
/// Names absent from the catalog are skipped and reported in `missing`.
#[derive(Debug, Clone)]
pub struct FdExtraction {
    pub definitions: Vec<FunctionDefinition>,
    /// The most-similar shot rank (0 = most similar) that uses each
    /// definition, aligned with `definitions`; drives drop order.
    pub best_shot_rank: Vec<usize>,
    pub missing: Vec<ApiName>,
}

pub fn extract_fds_for_shots(shots: &[&ExamplePair], catalog: &Catalog) -> FdExtraction {
    let mut definitions: Vec<FunctionDefinition> = Vec::new();
    let mut best_shot_rank: Vec<usize> = Vec::new();
    let mut missing: Vec<ApiName> = Vec::new();
    for (rank, shot) in shots.iter().enumerate() {
        for name in shot.api_set() {
            if definitions.iter().any(|d| d.function_name == *name) {
                continue;
            }
            match catalog.lookup(name) {
                Some(def) => {
                    definitions.push(def.clone());
                    best_shot_rank.push(rank);
                }
                None => {
                    if !missing.contains(name) {
                        missing.push(name.clone());
                    }
                }
            }
        }
    }
    FdExtraction {
        definitions,
        best_shot_rank,
        missing,
    }
}

/// Flat cosine index over rendered function-definition texts. Separate
/// from the few-shot index.
#[derive(Debug, Clone)]
pub struct FdIndex {
    provider_name: String,
    definitions: Vec<FunctionDefinition>,
    vectors: Vec<Vec<f32>>,
}

impl FdIndex {
    pub fn len(&self) -> usize {
        self.definitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.definitions.is_empty()
    }
}

pub fn build_fd_index(
    catalog: &Catalog,
    provider: &dyn EmbeddingProvider,
) -> Result<FdIndex, GroundingError> {
    if catalog.is_empty() {
        return Err(GroundingError::EmptyCatalog);
    }
    let definitions: Vec<FunctionDefinition> = catalog.iter().cloned().collect();
    let texts: Vec<String> = definitions.iter().map(|d| d.render_fd()).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut vectors = provider.embed(&refs)?;
    for v in vectors.iter_mut() {
        // A definition with no usable tokens still gets indexed; it just
        // never scores above zero.
        normalize(v);
    }
    Ok(FdIndex {
        provider_name: provider.name().to_string(),
        definitions,
        vectors,
    })
}

/// Top-k function definitions by cosine similarity to the query,
/// descending; ties broken by ascending function name.
pub fn retrieve_semantic_fds<'a>(
    index: &'a FdIndex,
    query: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(&'a FunctionDefinition, f32)>, GroundingError> {
    if provider.name() != index.provider_name {
        return Err(GroundingError::ProviderMismatch {
            expected: index.provider_name.clone(),
            got: provider.name().to_string(),
        });
    }
    let mut q = provider.embed(&[query])?.remove(0);
    normalize(&mut q);
    let mut scored: Vec<(usize, f32)> = index
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (i, dot(v, &q)))
        .collect();
    scored.sort_by(|(i, a), (j, b)| {
        b.partial_cmp(a)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| {
                index.definitions[*i]
                    .function_name
                    .cmp(&index.definitions[*j].function_name)
            })
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, score)| (&index.definitions[i], score))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptManifest {
    pub template_id: String,
    /// FNV-64 content hash of the instruction template, hex.
    pub template_hash: String,
    pub included_shots: Vec<String>,
    pub dropped_shots: Vec<String>,
    pub included_fds: Vec<String>,
    pub dropped_fds: Vec<String>,
    /// Shot APIs that could not be resolved against the catalog.
    pub missing_apis: Vec<String>,
}

/// A fully assembled metaprompt. `text` is the rendered template with all
/// placeholders substituted; `token_estimate <= token_budget` always.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub text: String,
    /// (nl, dsl) exemplars in final order, most similar last.
    pub shots: Vec<(String, String)>,
    pub fd_blocks: Vec<String>,
    pub token_estimate: usize,
    pub manifest: PromptManifest,
}

fn fnv64_hex(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

fn render(template: &str, fds: &[&str], shots: &[(String, String)], query: &str) -> String {
    let fd_text = fds.join("\n\n");
    let shot_text = shots
        .iter()
        .map(|(nl, dsl)| format!("Query: {nl}\nFlow: {dsl}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    template
        .replace("{{fds}}", &fd_text)
        .replace("{{shots}}", &shot_text)
        .replace("{{query}}", query)
}

/// Deterministic metaprompt assembly. Layout: instructions, then FD
/// blocks (regular first, then semantic, de-duplicated), then shots with
/// the most similar last, then the user query. When over budget, drops
/// semantic FDs (lowest score first), then regular FDs of the least
/// similar shots, then the least similar shots; the instructions and
/// query are never dropped.
#[allow(clippy::too_many_arguments)]
pub fn assemble_metaprompt(
    config: &GroundingConfig,
    instructions: &str,
    shots: &[(&ExamplePair, f32)],
    fds_regular: &FdExtraction,
    fds_semantic: &[(&FunctionDefinition, f32)],
    query: &str,
    tokenizer: &dyn Tokenizer,
) -> Result<AssembledPrompt, GroundingError> {
    let floor = render(instructions, &[], &[], query);
    let floor_estimate = tokenizer.estimate(&floor);
    if floor_estimate > config.token_budget {
        return Err(GroundingError::BudgetImpossible {
            needed: floor_estimate,
            budget: config.token_budget,
        });
    }

    // Candidate shots, most similar first.
    let mut shot_count = shots.len().min(config.n_shots);

    // Regular FD candidates keep extraction order; semantic candidates are
    // appended after, skipping names already present.
    struct FdCandidate<'a> {
        def: &'a FunctionDefinition,
        /// Drop priority: higher drops earlier.
        semantic_rank: Option<usize>, // position from the END of the semantic list
        shot_rank: usize,             // best shot rank for regular FDs
        order: usize,                 // stable layout order
    }
    let mut candidates: Vec<FdCandidate> = Vec::new();
    if config.use_fd {
        for (i, def) in fds_regular.definitions.iter().enumerate() {
            candidates.push(FdCandidate {
                def,
                semantic_rank: None,
                shot_rank: fds_regular.best_shot_rank[i],
                order: candidates.len(),
            });
        }
    }
    if config.use_sfd {
        let semantic: Vec<_> = fds_semantic.iter().take(config.sfd_k).collect();
        let n_sem = semantic.len();
        for (i, (def, _)) in semantic.into_iter().enumerate() {
            if candidates
                .iter()
                .any(|c| c.def.function_name == def.function_name)
            {
                continue;
            }
            candidates.push(FdCandidate {
                def,
                semantic_rank: Some(n_sem - i), // lowest score drops first
                shot_rank: usize::MAX,
                order: candidates.len(),
            });
        }
    }
    let mut fd_alive = alloc::vec![true; candidates.len()];

    let build = |shot_count: usize, fd_alive: &[bool]| -> (String, Vec<(String, String)>, Vec<String>, usize) {
        let included_shots: Vec<(String, String)> = shots[..shot_count]
            .iter()
            .rev() // most similar last
            .map(|(p, _)| (p.nl.clone(), p.dsl.clone()))
            .collect();
        let fd_blocks: Vec<String> = candidates
            .iter()
            .zip(fd_alive)
            .filter(|(_, alive)| **alive)
            .map(|(c, _)| c.def.render_fd())
            .collect();
        let fd_refs: Vec<&str> = fd_blocks.iter().map(String::as_str).collect();
        let text = render(instructions, &fd_refs, &included_shots, query);
        let estimate = tokenizer.estimate(&text);
        (text, included_shots, fd_blocks, estimate)
    };

    let (mut text, mut included_shots, mut fd_blocks, mut estimate) =
        build(shot_count, &fd_alive);

    while estimate > config.token_budget {
        // Semantic FDs first, lowest score first.
        let next_semantic = candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| fd_alive[*i] && c.semantic_rank.is_some())
            .min_by_key(|(_, c)| c.semantic_rank)
            .map(|(i, _)| i);
        if let Some(i) = next_semantic {
            fd_alive[i] = false;
        } else {
            // Then regular FDs of the least similar shots.
            let next_regular = candidates
                .iter()
                .enumerate()
                .filter(|(i, _)| fd_alive[*i])
                .max_by_key(|(_, c)| (c.shot_rank, c.order))
                .map(|(i, _)| i);
            if let Some(i) = next_regular {
                fd_alive[i] = false;
            } else if shot_count > 0 {
                shot_count -= 1;
            } else {
                // Nothing left to drop; floor fits, so this is unreachable,
                // but stay total.
                break;
            }
        }
        (text, included_shots, fd_blocks, estimate) = build(shot_count, &fd_alive);
    }

    let manifest = PromptManifest {
        template_id: config.instruction_template.clone(),
        template_hash: fnv64_hex(instructions),
        included_shots: shots[..shot_count].iter().map(|(p, _)| p.id.clone()).collect(),
        dropped_shots: shots
            .iter()
            .enumerate()
            .filter(|(i, _)| *i >= shot_count)
            .map(|(_, (p, _))| p.id.clone())
            .collect(),
        included_fds: candidates
            .iter()
            .zip(&fd_alive)
            .filter(|(_, alive)| **alive)
            .map(|(c, _)| c.def.function_name.to_string())
            .collect(),
        dropped_fds: candidates
            .iter()
            .zip(&fd_alive)
            .filter(|(_, alive)| !**alive)
            .map(|(c, _)| c.def.function_name.to_string())
            .collect(),
        missing_apis: fds_regular.missing.iter().map(ToString::to_string).collect(),
    };

    Ok(AssembledPrompt {
        text,
        shots: included_shots,
        fd_blocks,
        token_estimate: estimate,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ParameterInfo;
    use crate::retrieval::HashedEmbedder;
    use alloc::vec;

    const TEMPLATE: &str = "Generate a workflow for the request.\n\nAPI definitions:\n{{fds}}\n\nExamples:\n{{shots}}\n\nRequest: {{query}}";

    fn def(name: &str, description: &str) -> FunctionDefinition {
        FunctionDefinition {
            function_name: ApiName::parse(name).unwrap(),
            description: description.into(),
            display_name: name.into(),
            is_trigger: false,
            is_in_training_set: false,
            parameters: vec![ParameterInfo {
                key: "k".into(),
                type_name: "String".into(),
                summary: String::new(),
                format: None,
                description: "a key".into(),
            }],
            response_schema: vec![],
            extra: vec![],
        }
    }

    fn catalog() -> Catalog {
        Catalog::from_definitions([
            def("shared_outlook.SendEmailV2", "This operation sends an email message."),
            def("shared_teams.PostMessageToConversation", "Posts a message to a teams channel conversation."),
            def("shared_excel.AddRow", "Adds a row to an excel spreadsheet table."),
        ])
        .unwrap()
    }

    fn shot(id: &str, nl: &str, dsl: &str) -> ExamplePair {
        ExamplePair::new(id, nl, dsl).unwrap()
    }

    #[test]
    fn fd_extraction_dedups_in_flow_order() {
        let a = shot("a", "mail then post", "x = shared_outlook.SendEmailV2({}); y = shared_teams.PostMessageToConversation({});");
        let b = shot("b", "mail again", "x = shared_outlook.SendEmailV2({});");
        let extraction = extract_fds_for_shots(&[&a, &b], &catalog());
        let names: Vec<_> = extraction
            .definitions
            .iter()
            .map(|d| d.function_name.to_string())
            .collect();
        assert_eq!(
            names,
            ["shared_outlook.SendEmailV2", "shared_teams.PostMessageToConversation"]
        );
        assert!(extraction.missing.is_empty());
    }

    #[test]
    fn fd_extraction_records_missing_apis() {
        let a = shot("a", "mystery", "x = shared_unknown.Mystery({});");
        let extraction = extract_fds_for_shots(&[&a], &catalog());
        assert!(extraction.definitions.is_empty());
        assert_eq!(extraction.missing.len(), 1);
    }

    #[test]
    fn fd_index_requires_a_catalog() {
        let provider = HashedEmbedder::new(64);
        assert!(matches!(
            build_fd_index(&Catalog::new(), &provider),
            Err(GroundingError::EmptyCatalog)
        ));
        let index = build_fd_index(&catalog(), &provider).unwrap();
        assert_eq!(index.len(), 3);
    }

    #[test]
    fn semantic_fds_rank_the_relevant_definition_first() {
        let provider = HashedEmbedder::new(256);
        let index = build_fd_index(&catalog(), &provider).unwrap();
        let hits = retrieve_semantic_fds(&index, "send an email", 3, &provider).unwrap();
        assert_eq!(
            hits[0].0.function_name.to_string(),
            "shared_outlook.SendEmailV2"
        );
    }

    #[test]
    fn without_fd_flags_no_blocks_appear() {
        let a = shot("a", "mail", "x = shared_outlook.SendEmailV2({});");
        let ranked = vec![(&a, 0.9f32)];
        let extraction = extract_fds_for_shots(&[&a], &catalog());
        let config = GroundingConfig {
            n_shots: 5,
            ..GroundingConfig::default()
        };
        let prompt = assemble_metaprompt(
            &config,
            TEMPLATE,
            &ranked,
            &extraction,
            &[],
            "send a mail",
            &CharEstimate,
        )
        .unwrap();
        assert!(prompt.fd_blocks.is_empty());
        assert_eq!(prompt.shots.len(), 1);
        assert!(prompt.text.contains("Request: send a mail"));
    }

    #[test]
    fn fd_blocks_are_deduplicated_across_classes() {
        let a = shot("a", "mail", "x = shared_outlook.SendEmailV2({});");
        let ranked = vec![(&a, 0.9f32)];
        let extraction = extract_fds_for_shots(&[&a], &catalog());
        let email = def("shared_outlook.SendEmailV2", "This operation sends an email message.");
        let excel = def("shared_excel.AddRow", "Adds a row to an excel spreadsheet table.");
        let semantic = vec![(&email, 0.8f32), (&excel, 0.2f32)];
        let config = GroundingConfig {
            use_fd: true,
            use_sfd: true,
            ..GroundingConfig::default()
        };
        let prompt = assemble_metaprompt(
            &config,
            TEMPLATE,
            &ranked,
            &extraction,
            &semantic,
            "send a mail",
            &CharEstimate,
        )
        .unwrap();
        assert_eq!(prompt.fd_blocks.len(), 2);
        assert_eq!(
            prompt.manifest.included_fds,
            ["shared_outlook.SendEmailV2", "shared_excel.AddRow"]
        );
    }

    #[test]
    fn over_budget_drops_semantic_then_regular_then_shots() {
        let a = shot("a", "send the mail to everyone on the list", "x = shared_outlook.SendEmailV2({});");
        let b = shot("b", "post the message into the channel", "y = shared_teams.PostMessageToConversation({});");
        let ranked = vec![(&a, 0.9f32), (&b, 0.5f32)];
        let extraction = extract_fds_for_shots(&[&a, &b], &catalog());
        let excel = def("shared_excel.AddRow", "Adds a row to an excel spreadsheet table.");
        let semantic = vec![(&excel, 0.3f32)];
        let config = GroundingConfig {
            n_shots: 2,
            use_fd: true,
            use_sfd: true,
            token_budget: 60,
            ..GroundingConfig::default()
        };
        let prompt = assemble_metaprompt(
            &config,
            TEMPLATE,
            &ranked,
            &extraction,
            &semantic,
            "send a mail",
            &CharEstimate,
        )
        .unwrap();
        assert!(prompt.token_estimate <= 60);
        // The semantic FD and both regular FDs must be gone before any
        // shot drop; with this budget the least similar shot also drops.
        assert!(prompt.manifest.dropped_fds.contains(&"shared_excel.AddRow".to_string()));
        assert_eq!(prompt.manifest.included_shots, ["a"]);
        assert_eq!(prompt.manifest.dropped_shots, ["b"]);
    }

    #[test]
    fn impossible_budget_is_an_error() {
        let config = GroundingConfig {
            token_budget: 2,
            ..GroundingConfig::default()
        };
        let extraction = FdExtraction {
            definitions: vec![],
            best_shot_rank: vec![],
            missing: vec![],
        };
        assert!(matches!(
            assemble_metaprompt(&config, TEMPLATE, &[], &extraction, &[], "q", &CharEstimate),
            Err(GroundingError::BudgetImpossible { .. })
        ));
    }

    #[test]
    fn assembly_is_deterministic() {
        let a = shot("a", "mail", "x = shared_outlook.SendEmailV2({});");
        let ranked = vec![(&a, 0.9f32)];
        let extraction = extract_fds_for_shots(&[&a], &catalog());
        let config = GroundingConfig {
            use_fd: true,
            ..GroundingConfig::default()
        };
        let p1 = assemble_metaprompt(&config, TEMPLATE, &ranked, &extraction, &[], "q", &CharEstimate).unwrap();
        let p2 = assemble_metaprompt(&config, TEMPLATE, &ranked, &extraction, &[], "q", &CharEstimate).unwrap();
        assert_eq!(p1.text, p2.text);
        assert_eq!(p1.manifest, p2.manifest);
    }
}
