use super::DRUG_DIM;
use crate::error::{Error, Result};

/// Seed folded into the FNV-1a offset basis for trigram hashing.
pub const FEATURE_HASH_SEED: u64 = 0x5EED_C0DE_2024_0300;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ FEATURE_HASH_SEED;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Character trigrams of `^smiles$` (one boundary marker on each side).
pub fn smiles_trigrams(smiles: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('^')
        .chain(smiles.chars())
        .chain(std::iter::once('$'))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Deterministic 300-wide drug vector: trigram counts hashed into buckets,
/// then L2-normalized. Used when no pretrained drug embedding is supplied.
pub fn featurize_smiles(smiles: &str) -> Result<Vec<f64>> {
    if smiles.trim().is_empty() {
        return Err(Error::invalid("cannot featurize an empty SMILES string"));
    }
    let mut v = vec![0.0; DRUG_DIM];
    for gram in smiles_trigrams(smiles) {
        v[(fnv1a(gram.as_bytes()) % DRUG_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}
