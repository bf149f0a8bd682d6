use safeset_core::toys::{oracle_check, oracle_toys, rotation_2d};
use safeset_core::PruneScope;

fn check_all(scope: PruneScope) {
    for toy in oracle_toys().into_iter().chain([rotation_2d()]) {
        let oracle = toy.oracle().unwrap();
        for seed in 1..=5 {
            let r = oracle_check(toy.name(), &toy, &oracle, seed, scope).unwrap();
            assert!(r.matches, "{scope:?} {r:?}");
        }
    }
}

#[test]
fn toys_match_oracle_with_full_pruning() {
    check_all(PruneScope::Full);
}

#[test]
fn toys_match_oracle_with_start_pruning() {
    check_all(PruneScope::StartAndAncestors);
}
