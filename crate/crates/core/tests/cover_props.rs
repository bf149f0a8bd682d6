#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeset_core::scenario::NoFailure;
use safeset_core::{
    build_cover, refine, remove_cells, CellId, CellLookup, CoverLattice, DeltaVector, DiskGraph, DomainBox,
    ExcludedRegion,
};

fn domain_and_delta() -> impl Strategy<Value = (DomainBox, DeltaVector)> {
    prop::collection::vec((-5.0f64..5.0, 0.5f64..8.0, 0.1f64..2.0), 1..=3).prop_map(|dims| {
        let lo: Vec<f64> = dims.iter().map(|d| d.0).collect();
        let hi: Vec<f64> = dims.iter().map(|d| d.0 + d.1).collect();
        let delta: Vec<f64> = dims.iter().map(|d| d.2).collect();
        (DomainBox::new(lo, hi).unwrap(), DeltaVector::new(delta).unwrap())
    })
}

fn full_cover(domain: &DomainBox, delta: &DeltaVector) -> CoverLattice {
    build_cover(domain, delta, &NoFailure, &ExcludedRegion::new(domain.clone())).unwrap()
}

/// `[lo, hi)` of a cell in dimension `i`, with the last cell closed.
fn contains(cover: &CoverLattice, id: CellId, s: &[f64]) -> bool {
    let lat = cover.lattice();
    let d = lat.domain();
    (0..lat.dim()).all(|i| {
        let k = lat.coord(id, i);
        let w = lat.widths()[i];
        let lo = d.lo()[i] + k as f64 * w;
        let hi = d.lo()[i] + (k + 1) as f64 * w;
        let last = k + 1 == lat.counts()[i];
        s[i] >= lo && (s[i] < hi || (last && s[i] <= d.hi()[i]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_point_lands_in_exactly_one_cell((domain, delta) in domain_and_delta(), seed in any::<u64>()) {
        let cover = full_cover(&domain, &delta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let s: Vec<f64> = (0..domain.dim()).map(|i| rng.random_range(domain.lo()[i]..=domain.hi()[i])).collect();
            let CellLookup::Active(id) = cover.cell_of(&s) else {
                return Err(TestCaseError::fail(format!("{s:?} not covered")));
            };
            prop_assert!(contains(&cover, id, &s));
            // the only other candidates are lattice neighbours
            for i in 0..domain.dim() {
                for step in [-1i64, 1] {
                    if let Some(other) = cover.lattice().shifted(id, i, step) {
                        prop_assert!(!contains(&cover, other, &s), "{s:?} in two cells");
                    }
                }
            }
        }
    }

    #[test]
    fn refinement_conserves_volume(
        (domain, delta) in domain_and_delta(),
        factors in prop::collection::vec(1u64..=3, 3),
        keep in prop::collection::vec(any::<bool>(), 64),
    ) {
        let mut cover = full_cover(&domain, &delta);
        let ids: Vec<CellId> = cover.active().collect();
        for (n, id) in ids.into_iter().enumerate() {
            if !keep[n % keep.len()] {
                cover.deactivate(id);
            }
        }
        let factors = &factors[..domain.dim()];
        let fine = refine(&cover, factors).unwrap();
        let cell_volume = |c: &CoverLattice| c.lattice().widths().iter().product::<f64>();
        let before = cover.len() as f64 * cell_volume(&cover);
        let after = fine.len() as f64 * cell_volume(&fine);
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
        // each child lies inside an active parent
        for child in fine.active() {
            let c = fine.centroid(child);
            prop_assert!(matches!(cover.cell_of(&c), CellLookup::Active(_)));
        }
    }

    #[test]
    fn exclusion_never_reverts(
        (domain, delta) in domain_and_delta(),
        ops in prop::collection::vec((any::<u8>(), any::<bool>()), 1..20),
    ) {
        let mut cover = full_cover(&domain, &delta);
        let mut graph = DiskGraph::new();
        let mut excluded = ExcludedRegion::new(domain.clone());
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for (pick, refine_now) in ops {
            if refine_now && cover.len() < 4000 {
                cover = refine(&cover, &vec![2; domain.dim()]).unwrap();
                graph.clear();
            } else if !cover.is_empty() {
                let ids: Vec<CellId> = cover.active().collect();
                let id = ids[pick as usize % ids.len()];
                seen.push(cover.centroid(id));
                remove_cells(&mut cover, &mut graph, &BTreeSet::from([id]), &mut excluded).unwrap();
            }
            for c in &seen {
                prop_assert!(excluded.contains(c));
            }
        }
    }
}

/// Reflexive-transitive closure by Floyd–Warshall.
fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

fn check_graph(n: usize, edges: &[(usize, usize)], targets: &BTreeSet<usize>) {
    let mut g = DiskGraph::new();
    for &(a, b) in edges {
        g.add_edge(CellId(a as u64), CellId(b as u64));
    }
    let r = closure(n, edges);
    let want: BTreeSet<CellId> = (0..n)
        .filter(|&v| targets.iter().any(|&t| r[v][t]))
        .map(|v| CellId(v as u64))
        .collect();
    let t: BTreeSet<CellId> = targets.iter().map(|&v| CellId(v as u64)).collect();
    assert_eq!(g.ancestors(&t), want, "n={n} edges={edges:?} targets={targets:?}");
}

#[test]
fn ancestors_match_closure_on_every_small_digraph() {
    // all digraphs without self-loops on up to 4 vertices, every target set
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, e)| *e).collect();
            for tmask in 1u32..(1 << n) {
                let targets: BTreeSet<usize> = (0..n).filter(|v| tmask & (1 << v) != 0).collect();
                check_graph(n, &edges, &targets);
            }
        }
    }
}

#[test]
fn ancestors_match_closure_on_random_digraphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // up to 8 vertices densely, then 100 graphs up to 50 vertices
    for _ in 0..2000 {
        let n = rng.random_range(1..=8);
        let p = rng.random_range(0.0..0.6);
        let edges: Vec<_> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .filter(|_| rng.random_bool(p))
            .collect();
        let targets: BTreeSet<usize> = (0..rng.random_range(1..=n)).map(|_| rng.random_range(0..n)).collect();
        check_graph(n, &edges, &targets);
    }
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let p = rng.random_range(0.0..0.15);
        let edges: Vec<_> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .filter(|_| rng.random_bool(p))
            .collect();
        let targets: BTreeSet<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..n)).collect();
        check_graph(n, &edges, &targets);
    }
}

#[test]
fn removing_a_vertex_cuts_paths_through_it() {
    let mut g = DiskGraph::new();
    for (a, b) in [(0, 1), (1, 2), (3, 2)] {
        g.add_edge(CellId(a), CellId(b));
    }
    g.remove_vertex(CellId(1));
    let anc = g.ancestors(&BTreeSet::from([CellId(2)]));
    assert_eq!(anc, BTreeSet::from([CellId(2), CellId(3)]));
}
