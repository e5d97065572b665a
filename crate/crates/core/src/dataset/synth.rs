//! Seeded synthetic interaction logs bundled for tests and examples.
//!
//! Two shapes ship in `data/`:
//! - [`mia_toy`]: 200 users × 100 items, 5-10 uniformly drawn interactions
//!   per user. Short uniform histories carry almost no shared structure, so
//!   an overfit model can only memorize them — which is exactly what a
//!   membership audit needs to detect.
//! - [`removal_toy`]: 200 users × 300 items with four user groups that
//!   each favor their own 75-item block, giving ranking metrics enough
//!   headroom to register what data removal costs.

use super::{ingest_str, InteractionDataset, SourceFormat};
use crate::seed::{derive_seed, Stream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Default generation seed for the bundled `data/toy.tsv`.
pub const MIA_TOY_SEED: u64 = 20240601;
/// Default generation seed for the bundled `data/removal_toy.tsv`.
pub const REMOVAL_TOY_SEED: u64 = 20240602;

/// Membership-audit fixture: 200 users, 100 items, 5-10 interactions per
/// user drawn uniformly without replacement. User `u`'s first interaction
/// is planted at item `u mod 100` so every item is guaranteed to appear.
///
/// Histories are kept short and uniform on purpose: with no popularity or
/// group structure to generalize from, an overfit model's only way to score
/// a training pair highly is to have memorized it, and memorization is the
/// signal a membership audit measures.
pub fn mia_toy(seed: u64) -> InteractionDataset {
    let num_users = 200usize;
    let num_items = 100usize;
    let mut text = String::new();
    for u in 0..num_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Synthetic, u as u64));
        let n = rng.random_range(5..=10usize);
        let mut chosen: Vec<u32> = vec![(u % num_items) as u32];
        while chosen.len() < n {
            let item = rng.random_range(0..num_items as u32);
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        for (t, item) in chosen.iter().enumerate() {
            writeln!(text, "u{u}\ti{item}\t-\t{t}").unwrap();
        }
    }
    ingest_str(&text, SourceFormat::Tsv).expect("generated text is well-formed")
}

/// Removal-experiment fixture: 200 users in ten groups of 20, 300 items
/// in ten blocks of 30, 16-24 interactions per user. Most of a user's
/// history lies in their group's block (shared, learnable taste); the
/// rest is drawn uniformly from the other blocks, and how much varies by
/// user (5-45% of draws), so users differ widely in how much random,
/// memorizable exposure they carry. Off-block draws come first and
/// in-block draws last, which puts both held-out items in the user's own
/// block: ranking quality then measures shared structure for every user,
/// not their private noise. The first two interactions of user `u` are
/// planted at items `2u mod 300` and `2u+1 mod 300` so the full item
/// vocabulary appears.
pub fn removal_toy(seed: u64) -> InteractionDataset {
    let num_users = 200usize;
    let num_items = 300usize;
    let block = 30usize;
    let group_size = 20usize;
    let mut text = String::new();
    for u in 0..num_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            Stream::Synthetic,
            (1u64 << 32) + u as u64,
        ));
        let n = rng.random_range(16..=24usize);
        let off_share = rng.random_range(0.05..0.45);
        let block_lo = (u / group_size * block) as u32;
        let block_hi = block_lo + block as u32;
        let mut chosen: Vec<u32> =
            vec![(2 * u % num_items) as u32, ((2 * u + 1) % num_items) as u32];
        let n_extra = n - 2;
        let n_off = (off_share * n_extra as f64).round() as usize;
        let mut drawn = 0usize;
        while drawn < n_off {
            let item = rng.random_range(0..num_items as u32);
            if (block_lo..block_hi).contains(&item) || chosen.contains(&item) {
                continue;
            }
            chosen.push(item);
            drawn += 1;
        }
        while drawn < n_extra {
            let item = block_lo + rng.random_range(0..block as u32);
            if chosen.contains(&item) {
                continue;
            }
            chosen.push(item);
            drawn += 1;
        }
        for (t, item) in chosen.iter().enumerate() {
            writeln!(text, "u{u}\ti{item}\t-\t{t}").unwrap();
        }
    }
    ingest_str(&text, SourceFormat::Tsv).expect("generated text is well-formed")
}
