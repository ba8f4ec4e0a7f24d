use proptest::prelude::*;

use flowgen::llm::strip_markers;

proptest! {
    #[test]
    fn strip_markers_is_idempotent(raw in any::<String>()) {
        let once = strip_markers(&raw);
        prop_assert_eq!(strip_markers(&once), once);
    }

    #[test]
    fn strip_markers_extracts_wrapped_payloads(payload in "[a-zA-Z0-9 =.;(){}\"]{0,40}") {
        let wrapped = format!("noise <START>{payload}<END> noise");
        prop_assert_eq!(strip_markers(&wrapped), strip_markers(payload.trim()));
    }
}
