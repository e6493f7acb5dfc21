use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::TreePair;

use super::TrainError;

/// Independent random stream for one (phase, epoch, slot) of a run.
pub fn stream_rng(seed: u64, phase: u8, epoch: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((phase as u64) << 56) | ((epoch as u64) << 24) | slot);
    rng
}

/// Training-pair indices for one epoch: a seeded shuffle truncated to
/// `max_batches` batches, cut into batches. A trailing batch of one pair is dropped.
pub fn epoch_batches(
    seed: u64,
    phase: u8,
    epoch: usize,
    n_pairs: usize,
    batch_size: usize,
    max_batches: usize,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut stream_rng(seed, phase, epoch, 0));
    order.truncate(batch_size.saturating_mul(max_batches));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Whether a pair id lands in the held-out tenth.
pub fn is_validation(pair_id: &str) -> bool {
    let digest = Sha256::digest(pair_id.as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    head % 10 == 0
}

/// Deterministic 90/10 split by pair id, preserving order.
pub fn split_by_hash(pairs: Vec<TreePair>) -> (Vec<TreePair>, Vec<TreePair>) {
    pairs.into_iter().partition(|p| !is_validation(&p.pair_id))
}

/// Forward-pass partners for the `2B` trees of a batch: trees `perm[2j]` and
/// `perm[2j + 1]` are run together.
pub fn randomized_pairing(n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, TrainError> {
    if n_pairs < 2 {
        return Err(TrainError::DegenerateBatch(format!(
            "randomized pairing needs at least 2 pairs, got {n_pairs}"
        )));
    }
    let mut perm: Vec<usize> = (0..2 * n_pairs).collect();
    perm.shuffle(rng);
    Ok(perm)
}
