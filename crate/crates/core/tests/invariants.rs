#[path = "suites/invariants.rs"]
#[allow(dead_code)]
mod suite;

#[test]
fn attention_rows_are_stochastic() {
    suite::attention_rows_are_stochastic();
}

#[test]
fn branch_saliency_is_stochastic() {
    suite::branch_saliency_is_stochastic();
}

#[test]
fn attention_is_permutation_equivariant_without_positional() {
    suite::attention_is_permutation_equivariant_without_positional();
}

#[test]
fn softmax_is_shift_invariant() {
    suite::softmax_is_shift_invariant();
}

#[test]
fn aggregation_is_shift_invariant_and_convex() {
    suite::aggregation_is_shift_invariant_and_convex();
}

#[test]
fn fusion_returns_k_distinct_and_is_rank_based() {
    suite::fusion_returns_k_distinct_and_is_rank_based();
}

#[test]
fn class_specific_logit_depends_only_on_its_row() {
    suite::class_specific_logit_depends_only_on_its_row();
}

#[test]
fn ranking_metrics_ignore_monotone_transforms() {
    suite::ranking_metrics_ignore_monotone_transforms();
}

#[test]
fn flops_are_additive_and_order_independent() {
    suite::flops_are_additive_and_order_independent();
}

#[test]
fn schedule_never_increases() {
    suite::schedule_never_increases();
}

#[test]
fn dataset_encoding_round_trips() {
    suite::dataset_encoding_round_trips();
}
