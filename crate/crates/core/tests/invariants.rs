use codesplat_core::io::{decode_model, encode_model};
use codesplat_core::{Aabb, ChainRng, CodebookKind, ModelState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// A random interleaving of densify, split and merge operations.
fn mutate(seed: u64, n: usize, degree: usize, ops: usize) -> (ModelState, bool) {
    let mut rng = ChainRng::seed_from_u64(seed);
    let mut s = ModelState::init_one_to_one(n, degree, seed, Aabb::cube(1.0)).unwrap();
    let mut conserved = true;
    for _ in 0..ops {
        let w = CodebookKind::ALL[rng.random_range(0..2)];
        match rng.random_range(0..3) {
            0 => {
                s.densify(0.5, 4 * n, 0.01, &mut rng).unwrap();
            }
            1 => {
                let i = rng.random_range(0..s.len());
                let row = s.row_of(i, w);
                if s.codebook(w).refcount(row) >= 2 {
                    let v: Vec<f32> = s.codebook(w).row(row).iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
                    s.split_row(i, w, &v).unwrap();
                }
            }
            _ => {
                let live: Vec<u32> = s.codebook(w).live_rows().collect();
                let (a, b) = (live[rng.random_range(0..live.len())], live[rng.random_range(0..live.len())]);
                if a != b {
                    s.merge_rows(w, a, b).unwrap();
                }
            }
        }
        conserved &= s.check_invariants().is_ok()
            && CodebookKind::ALL.iter().all(|&w| {
                let b = s.codebook(w);
                b.live_rows().map(|r| b.refcount(r) as usize).sum::<usize>() == s.len()
            });
    }
    (s, conserved)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refcounts_are_conserved(seed in any::<u64>(), n in 1usize..40, degree in 0usize..4, ops in 0usize..60) {
        let (_, conserved) = mutate(seed, n, degree, ops);
        prop_assert!(conserved);
    }

    #[test]
    fn model_file_round_trips(seed in any::<u64>(), n in 1usize..40, degree in 0usize..4, ops in 0usize..60) {
        let (s, _) = mutate(seed, n, degree, ops);
        let bytes = encode_model(&s);
        let back = decode_model(&bytes).unwrap();
        prop_assert_eq!(encode_model(&back), bytes);
        prop_assert_eq!(back.model_bytes(), s.model_bytes());
    }
}
