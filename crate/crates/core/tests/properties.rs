//! Property tests: parser round-trip over random programs, parser
//! totality over random bytes, LCSS invariants against a brute-force
//! oracle, and aggregation invariants.

use proptest::prelude::*;

use flowgen_core::dsl::{
    self, ApiName, CallExpr, CmpOp, CondExpr, JsonObject, JsonValue, Literal, Program, Statement,
};
use flowgen_core::metrics::{aggregate, lcss, FlowScore};
use flowgen_core::validator::classify;

// ---------------------------------------------------------------------------
// AST generation

fn identifier() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,8}".prop_filter("keyword", |s| {
        !matches!(s.as_str(), "if" | "else" | "await" | "true" | "false" | "null")
    })
}

fn api_name() -> impl Strategy<Value = ApiName> {
    (identifier(), identifier()).prop_map(|(ns, f)| ApiName::new(&ns, &f).unwrap())
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        Just(Literal::Null),
        any::<bool>().prop_map(Literal::Bool),
        any::<f64>()
            .prop_filter("finite", |n| n.is_finite())
            .prop_map(Literal::Number),
        any::<String>().prop_map(Literal::String),
    ]
}

fn json_value() -> impl Strategy<Value = JsonValue> {
    let leaf = prop_oneof![
        Just(JsonValue::Null),
        any::<bool>().prop_map(JsonValue::Bool),
        any::<f64>()
            .prop_filter("finite", |n| n.is_finite())
            .prop_map(JsonValue::Number),
        any::<String>().prop_map(JsonValue::String),
    ];
    leaf.prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(JsonValue::Array),
            prop::collection::btree_map(any::<String>(), inner, 0..4).prop_map(|m| {
                let mut obj = JsonObject::new();
                for (k, v) in m {
                    obj.insert(k, v);
                }
                JsonValue::Object(obj)
            }),
        ]
    })
}

fn call_expr() -> impl Strategy<Value = CallExpr> {
    (
        api_name(),
        prop::collection::btree_map(any::<String>(), json_value(), 0..4),
    )
        .prop_map(|(api_name, args)| {
            let mut argument = JsonObject::new();
            for (k, v) in args {
                argument.insert(k, v);
            }
            CallExpr { api_name, argument }
        })
}

fn cond_expr() -> impl Strategy<Value = CondExpr> {
    fn path() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(identifier(), 1..4)
    }
    prop_oneof![
        path().prop_map(|path| CondExpr::Truthy { path }),
        (
            path(),
            prop_oneof![
                Just(CmpOp::Eq),
                Just(CmpOp::Ne),
                Just(CmpOp::Lt),
                Just(CmpOp::Le),
                Just(CmpOp::Gt),
                Just(CmpOp::Ge),
            ],
            literal()
        )
            .prop_map(|(left, op, right)| CondExpr::Comparison { left, op, right }),
    ]
}

fn statement() -> impl Strategy<Value = Statement> {
    let assignment = (identifier(), any::<bool>(), call_expr()).prop_map(
        |(target, awaited, call)| Statement::Assignment {
            target,
            awaited,
            call,
        },
    );
    assignment.prop_recursive(3, 12, 3, move |inner| {
        let assignment = (identifier(), any::<bool>(), call_expr()).prop_map(
            |(target, awaited, call)| Statement::Assignment {
                target,
                awaited,
                call,
            },
        );
        prop_oneof![
            assignment,
            (
                cond_expr(),
                prop::collection::vec(inner.clone(), 1..3),
                prop::option::of(prop::collection::vec(inner, 1..3)),
            )
                .prop_map(|(condition, then_branch, else_branch)| Statement::Conditional {
                    condition,
                    then_branch,
                    else_branch,
                }),
        ]
    })
}

fn program() -> impl Strategy<Value = Program> {
    prop::collection::vec(statement(), 1..6).prop_map(|statements| Program { statements })
}

fn count_calls(statements: &[Statement]) -> usize {
    statements
        .iter()
        .map(|s| match s {
            Statement::Assignment { .. } => 1,
            Statement::Conditional {
                then_branch,
                else_branch,
                ..
            } => {
                count_calls(then_branch)
                    + else_branch.as_deref().map_or(0, count_calls)
            }
        })
        .sum()
}

/// Exhaustive LCSS: longest common subsequence length by enumerating all
/// subsequences of the shorter side.
fn lcss_oracle(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<u8> = short
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &x)| x)
            .collect();
        if sub.len() > best && is_subsequence(&sub, long) {
            best = sub.len();
        }
    }
    best
}

fn is_subsequence(needle: &[u8], haystack: &[u8]) -> bool {
    let mut it = haystack.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

proptest! {
    #[test]
    fn parser_round_trips_random_programs(program in program()) {
        let text = program.serialize();
        let reparsed = dsl::parse(&text).expect("serialized program parses");
        prop_assert_eq!(&reparsed, &program);
        prop_assert_eq!(reparsed.serialize(), text);
    }

    #[test]
    fn extract_actions_counts_every_call(program in program()) {
        prop_assert_eq!(
            program.extract_actions().len(),
            count_calls(&program.statements)
        );
    }

    #[test]
    fn parser_is_total(input in any::<String>()) {
        let _ = dsl::parse(&input);
    }

    #[test]
    fn lcss_matches_exhaustive_oracle(
        a in prop::collection::vec(0u8..6, 0..8),
        b in prop::collection::vec(0u8..6, 0..8),
    ) {
        prop_assert_eq!(lcss(&a, &b), lcss_oracle(&a, &b));
    }

    #[test]
    fn lcss_invariants(
        a in prop::collection::vec(0u8..10, 0..20),
        b in prop::collection::vec(0u8..10, 0..20),
    ) {
        prop_assert_eq!(lcss(&a, &b), lcss(&b, &a));
        prop_assert_eq!(lcss(&a, &a), a.len());
        prop_assert_eq!(lcss(&a, &[]), 0);
        prop_assert!(lcss(&a, &b) <= a.len().min(b.len()));
    }

    #[test]
    fn aggregate_is_permutation_invariant(
        flags in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..20),
        rotation in 0usize..20,
    ) {
        let catalog = flowgen_core::catalog::Catalog::new();
        let scores: Vec<FlowScore> = flags
            .iter()
            .enumerate()
            .map(|(i, (parsed, _))| {
                let source = if *parsed { "" } else { "x = a.B({});" };
                // Empty catalog: parsed flows hallucinate, empty text is unparsed.
                FlowScore::score(
                    &format!("e{i}"),
                    &Program { statements: vec![] },
                    classify(&catalog, source),
                )
            })
            .collect();
        let mut rotated = scores.clone();
        rotated.rotate_left(rotation % scores.len().max(1));
        prop_assert_eq!(aggregate(&scores).unwrap(), aggregate(&rotated).unwrap());
    }
}
