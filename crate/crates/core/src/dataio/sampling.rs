use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Impression;
use crate::error::{Error, Result};

/// 64-bit FNV-1a over the parts, with a separator byte between them.
pub fn stable_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.iter().chain(std::iter::once(&0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// A user's engaged content, most recent first, capped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: String,
    pub engaged: Vec<String>,
}

impl UserHistory {
    /// From a log history field, which lists the oldest engagement first.
    pub fn from_log(user_id: &str, logged: &[String], cap: usize) -> Self {
        Self {
            user_id: user_id.to_string(),
            engaged: logged.iter().rev().take(cap).cloned().collect(),
        }
    }

    /// Stable key of the engaged ids, used to validate cached summaries.
    pub fn hash(&self) -> u64 {
        stable_hash(self.engaged.iter().map(|s| s.as_bytes()))
    }
}

/// Partitions `count` items into contiguous groups of `session_size`
/// (the last one possibly shorter), or into singletons when disabled.
pub fn make_sessions(count: usize, session_size: usize, enabled: bool) -> Result<Vec<Range<usize>>> {
    if session_size == 0 {
        return Err(Error::Config("session_size must be at least 1".into()));
    }
    let size = if enabled { session_size } else { 1 };
    Ok((0..count).step_by(size).map(|s| s..(s + size).min(count)).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainExample {
    pub user_id: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// One example per clicked candidate with `r` negatives from the same
/// impression: without replacement when enough exist, otherwise with
/// replacement. Returns nothing when the impression has no negatives.
///
/// The generator for each positive is keyed by `(seed, impression id,
/// positive id)`, so results do not depend on processing order.
pub fn sample_negatives(impression: &Impression, r: usize, seed: u64) -> Vec<TrainExample> {
    let negatives: Vec<&String> = impression.candidates.iter().filter(|(_, l)| *l == 0).map(|(id, _)| id).collect();
    if negatives.is_empty() || r == 0 {
        return Vec::new();
    }
    impression
        .candidates
        .iter()
        .filter(|(_, l)| *l == 1)
        .map(|(pos, _)| {
            let key = stable_hash([
                &seed.to_le_bytes()[..],
                impression.impression_id.as_bytes(),
                pos.as_bytes(),
            ]);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let chosen = if negatives.len() >= r {
                negatives.choose_multiple(&mut rng, r).map(|s| (*s).clone()).collect()
            } else {
                (0..r).map(|_| negatives[rng.gen_range(0..negatives.len())].clone()).collect()
            };
            TrainExample {
                user_id: impression.user_id.clone(),
                positive: pos.clone(),
                negatives: chosen,
            }
        })
        .collect()
}
