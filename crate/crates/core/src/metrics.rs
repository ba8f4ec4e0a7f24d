//! Code-quality metrics: LCSS-based flow similarity, aggregate failure
//! rates, and delta tables against a baseline run.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::dsl::Program;
use crate::validator::ValidationReport;

/// Length of the longest common subsequence (order-preserving,
/// non-contiguous) under exact equality.
pub fn lcss<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // One-row DP over b.
    let mut row = alloc::vec![0usize; b.len() + 1];
    for item_a in a {
        let mut diag = 0; // row[j] from the previous iteration
        for (j, item_b) in b.iter().enumerate() {
            let next_diag = row[j + 1];
            row[j + 1] = if item_a == item_b {
                diag + 1
            } else {
                row[j + 1].max(row[j])
            };
            diag = next_diag;
        }
    }
    row[b.len()]
}

/// Similarity between a ground-truth flow and a prediction's validation
/// report: LCSS over action lists normalized by the longer list. Unparsed
/// flows and flows with hallucinated API names score 0. If both action
/// lists are empty the match is vacuous and scores 1.
pub fn flow_similarity(truth: &Program, report: &ValidationReport) -> f64 {
    if !report.parsed || !report.hallucinated_apis.is_empty() {
        return 0.0;
    }
    let truth_actions = truth.extract_actions();
    let denom = truth_actions.len().max(report.actions.len());
    if denom == 0 {
        return 1.0;
    }
    lcss(&truth_actions, &report.actions) as f64 / denom as f64
}

/// Score for one evaluated example.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowScore {
    pub example_id: String,
    pub similarity: f64,
    pub report: ValidationReport,
    /// True when the flow is unparsed or names a hallucinated API.
    pub counted_as_failure: bool,
    /// True when the generation endpoint failed after retries; such
    /// examples score 0 but are excluded from the failure-rate
    /// denominators, which measure properties of generated code.
    #[cfg_attr(feature = "serde", serde(default))]
    pub generation_failed: bool,
}

impl FlowScore {
    /// Scores a prediction's validation report against its ground truth.
    pub fn score(example_id: &str, truth: &Program, report: ValidationReport) -> Self {
        let similarity = flow_similarity(truth, &report);
        let counted_as_failure = !report.parsed || !report.hallucinated_apis.is_empty();
        Self {
            example_id: example_id.into(),
            similarity,
            report,
            counted_as_failure,
            generation_failed: false,
        }
    }

    /// Marks an example whose generation call failed after retries.
    pub fn generation_failed(example_id: &str) -> Self {
        Self {
            example_id: example_id.into(),
            similarity: 0.0,
            report: ValidationReport {
                parsed: false,
                parse_error: None,
                hallucinated_apis: Vec::new(),
                hallucinated_params: Vec::new(),
                actions: Vec::new(),
            },
            counted_as_failure: true,
            generation_failed: true,
        }
    }
}

/// Aggregate metrics over a test set. The unparsed rate is stored both as
/// a raw fraction and as percentage points; the hallucination rates are
/// percentages over parsed flows and are absent when nothing parsed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsSummary {
    pub n_total: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub n_generation_failed: usize,
    pub n_unparsed: usize,
    pub n_parsed: usize,
    pub n_halluc_api: usize,
    pub n_halluc_param: usize,
    pub avg_similarity: f64,
    pub frac_unparsed: f64,
    pub pct_unparsed: f64,
    pub frac_made_up_apis: Option<f64>,
    pub pct_made_up_apis: Option<f64>,
    pub frac_made_up_params: Option<f64>,
    pub pct_made_up_params: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    EmptyInput,
    SizeMismatch { run: usize, baseline: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyInput => write!(f, "cannot aggregate an empty score list"),
            MetricsError::SizeMismatch { run, baseline } => write!(
                f,
                "summaries cover different test set sizes ({run} vs {baseline})"
            ),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Reduces per-flow scores to a [`MetricsSummary`].
pub fn aggregate(scores: &[FlowScore]) -> Result<MetricsSummary, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n_total = scores.len();
    let n_generation_failed = scores.iter().filter(|s| s.generation_failed).count();
    let evaluated: Vec<&FlowScore> = scores.iter().filter(|s| !s.generation_failed).collect();
    let n_unparsed = evaluated.iter().filter(|s| !s.report.parsed).count();
    let n_parsed = evaluated.len() - n_unparsed;
    let n_halluc_api = evaluated
        .iter()
        .filter(|s| !s.report.hallucinated_apis.is_empty())
        .count();
    let n_halluc_param = evaluated
        .iter()
        .filter(|s| !s.report.hallucinated_params.is_empty())
        .count();
    let avg_similarity = scores.iter().map(|s| s.similarity).sum::<f64>() / n_total as f64;
    let n_evaluated = evaluated.len();
    let frac_unparsed = if n_evaluated == 0 {
        0.0
    } else {
        n_unparsed as f64 / n_evaluated as f64
    };
    let over_parsed = |count: usize| {
        (n_parsed > 0).then(|| count as f64 / n_parsed as f64)
    };
    let frac_made_up_apis = over_parsed(n_halluc_api);
    let frac_made_up_params = over_parsed(n_halluc_param);
    Ok(MetricsSummary {
        n_total,
        n_generation_failed,
        n_unparsed,
        n_parsed,
        n_halluc_api,
        n_halluc_param,
        avg_similarity,
        frac_unparsed,
        pct_unparsed: frac_unparsed * 100.0,
        frac_made_up_apis,
        pct_made_up_apis: frac_made_up_apis.map(|f| f * 100.0),
        frac_made_up_params,
        pct_made_up_params: frac_made_up_params.map(|f| f * 100.0),
    })
}

/// One row of signed metric differences, run minus baseline.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaRow {
    pub label: String,
    pub d_avg_similarity: f64,
    pub d_pct_unparsed: f64,
    pub d_pct_made_up_apis: Option<f64>,
    pub d_pct_made_up_params: Option<f64>,
}

/// Per-metric deltas of one or more runs against a shared baseline.
/// For Avg. Similarity higher is better; for the failure-rate columns
/// lower is better.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaTable {
    pub baseline_label: String,
    pub rows: Vec<DeltaRow>,
}

/// Computes a single-row delta table for a run against a baseline over
/// the same test set size.
pub fn delta_table(
    run: &MetricsSummary,
    baseline: &MetricsSummary,
) -> Result<DeltaTable, MetricsError> {
    Ok(DeltaTable {
        baseline_label: "baseline".to_string(),
        rows: alloc::vec![delta_row("run", run, baseline)?],
    })
}

/// Computes one delta row; fails when the summaries cover different test
/// set sizes.
pub fn delta_row(
    label: &str,
    run: &MetricsSummary,
    baseline: &MetricsSummary,
) -> Result<DeltaRow, MetricsError> {
    if run.n_total != baseline.n_total {
        return Err(MetricsError::SizeMismatch {
            run: run.n_total,
            baseline: baseline.n_total,
        });
    }
    let opt_delta = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(DeltaRow {
        label: label.into(),
        d_avg_similarity: run.avg_similarity - baseline.avg_similarity,
        d_pct_unparsed: run.pct_unparsed - baseline.pct_unparsed,
        d_pct_made_up_apis: opt_delta(run.pct_made_up_apis, baseline.pct_made_up_apis),
        d_pct_made_up_params: opt_delta(run.pct_made_up_params, baseline.pct_made_up_params),
    })
}

fn fmt_delta(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:+.2}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), fmt_delta)
}

impl DeltaTable {
    /// Renders a GitHub-flavored markdown table. The best value in each
    /// column is bold: highest for Avg. Similarity, lowest for the
    /// failure-rate columns.
    pub fn render_markdown(&self) -> String {
        let best_sim = best_index(self.rows.iter().map(|r| Some(r.d_avg_similarity)), true);
        let best_unparsed = best_index(self.rows.iter().map(|r| Some(r.d_pct_unparsed)), false);
        let best_apis = best_index(self.rows.iter().map(|r| r.d_pct_made_up_apis), false);
        let best_params = best_index(self.rows.iter().map(|r| r.d_pct_made_up_params), false);

        let mut out = String::from(
            "| Model | Avg. Similarity | %Unparsed flows | %made-up API names | %made-up parameters |\n|---|---|---|---|---|\n",
        );
        for (i, row) in self.rows.iter().enumerate() {
            let cell = |text: String, best: Option<usize>| {
                if best == Some(i) {
                    format!("**{text}**")
                } else {
                    text
                }
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                row.label,
                cell(fmt_delta(row.d_avg_similarity), best_sim),
                cell(fmt_delta(row.d_pct_unparsed), best_unparsed),
                cell(fmt_opt(row.d_pct_made_up_apis), best_apis),
                cell(fmt_opt(row.d_pct_made_up_params), best_params),
            ));
        }
        out.push_str(&format!(
            "\nDeltas vs. {}. For Avg. Similarity, higher is better; for the failure-rate columns, lower is better.\n",
            self.baseline_label
        ));
        out
    }
}

fn best_index(values: impl Iterator<Item = Option<f64>>, higher_is_better: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let Some(v) = v else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{self, ApiName};
    use crate::validator::ValidationReport;
    use alloc::vec;

    fn names(symbols: &[&str]) -> Vec<ApiName> {
        symbols
            .iter()
            .map(|s| ApiName::new("ns", s).unwrap())
            .collect()
    }

    fn clean_report(actions: Vec<ApiName>) -> ValidationReport {
        ValidationReport {
            parsed: true,
            parse_error: None,
            hallucinated_apis: Vec::new(),
            hallucinated_params: Vec::new(),
            actions,
        }
    }

    #[test]
    fn lcss_basics() {
        let a = names(&["F", "T"]);
        let b = names(&["F", "M", "T"]);
        assert_eq!(lcss(&a, &b), 2);
        assert_eq!(lcss(&a, &a), 2);
        assert_eq!(lcss::<ApiName>(&a, &[]), 0);
        assert_eq!(lcss(&names(&["A", "B", "C", "D"]), &names(&["A", "B", "C", "D"])), 4);
    }

    #[test]
    fn sample_similarity_is_two_thirds() {
        let truth = dsl::parse(
            "t = await shared_microsoftforms.CreateFormWebhook({}); o = shared_teams.PostMessageToConversation({\"poster\": \"User\"});",
        )
        .unwrap();
        let prediction_actions = vec![
            ApiName::parse("shared_microsoftforms.CreateFormWebhook").unwrap(),
            ApiName::parse("shared_office365users.MyProfile_V2").unwrap(),
            ApiName::parse("shared_teams.PostMessageToConversation").unwrap(),
        ];
        let sim = flow_similarity(&truth, &clean_report(prediction_actions));
        assert!((sim - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hallucinated_api_zeroes_similarity() {
        let truth = dsl::parse("x = a.B({});").unwrap();
        let mut report = clean_report(names(&["B"]));
        report.hallucinated_apis = vec![ApiName::parse("fake.Z").unwrap()];
        assert_eq!(flow_similarity(&truth, &report), 0.0);
    }

    #[test]
    fn unparsed_zeroes_similarity() {
        let truth = dsl::parse("x = a.B({});").unwrap();
        let report = ValidationReport {
            parsed: false,
            parse_error: None,
            hallucinated_apis: Vec::new(),
            hallucinated_params: Vec::new(),
            actions: Vec::new(),
        };
        assert_eq!(flow_similarity(&truth, &report), 0.0);
    }

    fn score(parsed: bool, halluc_api: bool, halluc_param: bool, sim: f64) -> FlowScore {
        FlowScore {
            example_id: "e".into(),
            similarity: sim,
            report: ValidationReport {
                parsed,
                parse_error: None,
                hallucinated_apis: if halluc_api {
                    vec![ApiName::parse("fake.Z").unwrap()]
                } else {
                    Vec::new()
                },
                hallucinated_params: if halluc_param {
                    vec![(ApiName::parse("a.B").unwrap(), "k".into())]
                } else {
                    Vec::new()
                },
                actions: Vec::new(),
            },
            counted_as_failure: !parsed || halluc_api,
            generation_failed: false,
        }
    }

    #[test]
    fn aggregate_unparsed_rate() {
        let mut scores = vec![score(true, false, false, 1.0); 8];
        scores.extend(vec![score(false, false, false, 0.0); 2]);
        let summary = aggregate(&scores).unwrap();
        assert_eq!(summary.n_total, 10);
        assert_eq!(summary.n_unparsed, 2);
        assert_eq!(summary.n_parsed, 8);
        assert_eq!(summary.frac_unparsed, 0.2);
        assert_eq!(summary.pct_unparsed, 20.0);
    }

    #[test]
    fn aggregate_hallucination_rates() {
        let mut scores = vec![score(true, false, false, 1.0); 6];
        scores.extend(vec![score(true, true, false, 0.0); 2]);
        let summary = aggregate(&scores).unwrap();
        assert_eq!(summary.pct_made_up_apis, Some(25.0));
        assert_eq!(summary.pct_made_up_params, Some(0.0));
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert_eq!(aggregate(&[]).unwrap_err(), MetricsError::EmptyInput);
    }

    #[test]
    fn all_unparsed_leaves_rates_absent() {
        let summary = aggregate(&[score(false, false, false, 0.0)]).unwrap();
        assert_eq!(summary.pct_made_up_apis, None);
        assert_eq!(summary.pct_made_up_params, None);
    }

    #[test]
    fn generation_failures_excluded_from_denominators() {
        let mut scores = vec![score(true, false, false, 1.0); 8];
        scores.push(FlowScore::generation_failed("lost"));
        scores.push(score(false, false, false, 0.0));
        let summary = aggregate(&scores).unwrap();
        assert_eq!(summary.n_total, 10);
        assert_eq!(summary.n_generation_failed, 1);
        // 1 unparsed of 9 evaluated, not of 10.
        assert!((summary.frac_unparsed - 1.0 / 9.0).abs() < 1e-12);
        // Failed generations still drag the similarity average.
        assert!((summary.avg_similarity - 0.8).abs() < 1e-12);
    }

    #[test]
    fn delta_of_identical_runs_is_zero() {
        let summary = aggregate(&[score(true, false, false, 1.0)]).unwrap();
        let table = delta_table(&summary, &summary).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.d_avg_similarity, 0.0);
        assert_eq!(row.d_pct_unparsed, 0.0);
        assert_eq!(row.d_pct_made_up_apis, Some(0.0));
    }

    #[test]
    fn delta_signs_match_subtraction() {
        let mut run = aggregate(&vec![score(true, false, false, 1.0); 4]).unwrap();
        let mut base = run.clone();
        run.avg_similarity = 0.75;
        base.avg_similarity = 0.72;
        run.pct_made_up_params = Some(5.0);
        base.pct_made_up_params = Some(20.17);
        let row = delta_row("run", &run, &base).unwrap();
        assert!((row.d_avg_similarity - 0.03).abs() < 1e-12);
        assert!((row.d_pct_made_up_params.unwrap() + 15.17).abs() < 1e-12);
    }

    #[test]
    fn delta_rejects_size_mismatch() {
        let a = aggregate(&[score(true, false, false, 1.0)]).unwrap();
        let b = aggregate(&vec![score(true, false, false, 1.0); 2]).unwrap();
        assert!(matches!(
            delta_table(&a, &b),
            Err(MetricsError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn markdown_marks_best_per_column() {
        let base = aggregate(&vec![score(true, false, false, 1.0); 4]).unwrap();
        let mut better = base.clone();
        better.avg_similarity = 0.9;
        let rows = vec![
            delta_row("arm-a", &base, &base).unwrap(),
            delta_row("arm-b", &better, &base).unwrap(),
        ];
        let table = DeltaTable {
            baseline_label: "baseline".into(),
            rows,
        };
        let md = table.render_markdown();
        assert!(md.contains("| arm-a | **0** |"), "{md}");
        assert!(md.contains("%made-up API names"));
    }
}
