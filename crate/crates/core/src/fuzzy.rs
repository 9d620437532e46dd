//! Code-offset fuzzy extractor over a repetition code.
//!
//! Enrollment takes the bitwise majority of a few measurements as the
//! reference response, draws a random key, spreads every key bit over `ρ`
//! reference cells and publishes `mask = codeword ⊕ reference` at those
//! cells. Reproduction XORs a fresh response back onto the mask and
//! majority-decodes each block.
//!
//! Half of the selected cells flipped in the reference and half did not.
//! Flips are rare, so cells drawn uniformly would hold the IV bit on almost
//! every device and the mask would decode on foreign hardware too.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{initial_bit, Measurement, PufConfig};
use crate::error::{Error, Result};

pub const HELPER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeParams {
    pub key_bits: u32,
    /// Repetition factor ρ.
    pub repetition: u32,
    pub enroll_count: u32,
    pub fe_seed: u64,
}

impl Default for FeParams {
    fn default() -> Self {
        FeParams {
            key_bits: 128,
            repetition: 7,
            enroll_count: 5,
            fe_seed: 0,
        }
    }
}

impl FeParams {
    pub fn code_len(&self) -> usize {
        self.key_bits as usize * self.repetition as usize
    }

    pub fn validate(&self, cells: u64) -> Result<()> {
        if self.repetition < 3 || self.repetition.is_multiple_of(2) {
            return Err(Error::config("repetition must be odd and at least 3"));
        }
        if self.key_bits == 0 || !self.key_bits.is_multiple_of(8) {
            return Err(Error::config("key_bits must be a positive multiple of 8"));
        }
        if self.enroll_count == 0 {
            return Err(Error::config("enroll_count must be at least 1"));
        }
        if self.code_len() as u64 > cells {
            return Err(Error::config(format!(
                "{} code bits do not fit in {cells} PUF cells",
                self.code_len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Key(pub Vec<u8>);

impl Key {
    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    fn check(&self) -> [u8; 32] {
        Sha256::digest(&self.0).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperData {
    pub fe_params: FeParams,
    /// Sorted, distinct cell indices.
    pub positions: Vec<u64>,
    /// `codeword[j] ⊕ reference[positions[order[j]]]`, one bit per code bit.
    pub mask: Vec<bool>,
    pub key_check: [u8; 32],
    pub config_fingerprint: String,
}

/// Outcome of reproduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reproduction {
    Recovered(Key),
    /// Decoding finished but the key does not match the enrolled commitment.
    Mismatch,
}

impl Reproduction {
    pub fn key(&self) -> Option<&Key> {
        match self {
            Reproduction::Recovered(k) => Some(k),
            Reproduction::Mismatch => None,
        }
    }
}

/// Per-bit majority over `measurements`; ties resolve to the IV bit.
pub fn majority_vector(measurements: &[Measurement]) -> Result<Vec<bool>> {
    let first = measurements
        .first()
        .ok_or_else(|| Error::Usage("majority vote needs at least one measurement".into()))?;
    for m in &measurements[1..] {
        if m.device_id != first.device_id || m.config != first.config {
            return Err(Error::Usage(
                "majority vote over measurements of different devices or configurations".into(),
            ));
        }
    }
    let n = measurements.len();
    let cells = first.cells();
    Ok((0..cells)
        .map(|i| {
            let ones = measurements.iter().filter(|m| m.bit(i)).count();
            match (2 * ones).cmp(&n) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => first.initial_bit(i),
            }
        })
        .collect())
}

/// Majority decision over one repetition block.
pub fn decode_block(block: &[bool]) -> bool {
    2 * block.iter().filter(|&&b| b).count() > block.len()
}

/// Order in which code bits are laid onto the sorted positions.
fn layout(params: &FeParams) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(params.fe_seed ^ 0x6C61_796F_7574);
    let n = params.code_len();
    index::sample(&mut rng, n, n).into_vec()
}

fn select_positions(reference: &[bool], config: &PufConfig, params: &FeParams) -> Result<Vec<u64>> {
    let (flipped, steady): (Vec<u64>, Vec<u64>) =
        (0..reference.len() as u64).partition(|&i| reference[i as usize] != initial_bit(config.puf_row_iv, i));
    let half = params.code_len() / 2;
    let rest = params.code_len() - half;
    if flipped.len() < half || steady.len() < rest {
        return Err(Error::config(format!(
            "reference has {} flipped and {} steady cells; {half} and {rest} are required",
            flipped.len(),
            steady.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(params.fe_seed);
    let mut positions: Vec<u64> = index::sample(&mut rng, flipped.len(), half)
        .into_iter()
        .map(|i| flipped[i])
        .chain(index::sample(&mut rng, steady.len(), rest).into_iter().map(|i| steady[i]))
        .collect();
    positions.sort_unstable();
    Ok(positions)
}

/// Generates a key from `measurements` and the public helper data that
/// recovers it.
pub fn enroll(measurements: &[Measurement], params: &FeParams, rng_seed: u64) -> Result<(Key, HelperData)> {
    let reference = majority_vector(measurements)?;
    let config = measurements[0].config;
    params.validate(reference.len() as u64)?;
    let positions = select_positions(&reference, &config, params)?;

    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut key = vec![0u8; params.key_bits as usize / 8];
    rng.fill(&mut key[..]);
    let key = Key(key);

    let rho = params.repetition as usize;
    let order = layout(params);
    let mask = (0..params.code_len())
        .map(|j| key.bit(j / rho) ^ reference[positions[order[j]] as usize])
        .collect();

    let helper = HelperData {
        fe_params: *params,
        positions,
        mask,
        key_check: key.check(),
        config_fingerprint: config.fingerprint(),
    };
    Ok((key, helper))
}

/// Cell index carrying each code bit, in code order; block `b` is
/// `[b * ρ, (b + 1) * ρ)`.
pub fn code_positions(helper: &HelperData) -> Vec<u64> {
    layout(&helper.fe_params).into_iter().map(|k| helper.positions[k]).collect()
}

/// Recovers the enrolled key from fresh measurements.
pub fn reconstruct(measurements: &[Measurement], helper: &HelperData) -> Result<Reproduction> {
    let first = measurements
        .first()
        .ok_or_else(|| Error::Usage("reconstruction needs at least one measurement".into()))?;
    if measurements.iter().any(|m| m.config.fingerprint() != helper.config_fingerprint) {
        return Err(Error::Usage(
            "helper data was enrolled under a different query configuration".into(),
        ));
    }
    helper.validate(first.cells())?;
    let response = majority_vector(measurements)?;
    Ok(decode(&response, helper))
}

/// Decodes `response` (one bit per PUF cell) against `helper`.
pub fn decode(response: &[bool], helper: &HelperData) -> Reproduction {
    let params = &helper.fe_params;
    let rho = params.repetition as usize;
    let order = layout(params);
    let noisy: Vec<bool> = (0..params.code_len())
        .map(|j| helper.mask[j] ^ response[helper.positions[order[j]] as usize])
        .collect();
    let mut key = vec![0u8; params.key_bits as usize / 8];
    for (b, block) in noisy.chunks(rho).enumerate() {
        if decode_block(block) {
            key[b / 8] |= 0x80 >> (b % 8);
        }
    }
    let key = Key(key);
    if key.check() == helper.key_check {
        Reproduction::Recovered(key)
    } else {
        Reproduction::Mismatch
    }
}

#[derive(Serialize, Deserialize)]
struct HelperFile {
    version: u32,
    fe_params: FeParams,
    /// First index, then successive differences.
    positions: Vec<u64>,
    mask_hex: String,
    key_check_hex: String,
    config_fingerprint: String,
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

impl HelperData {
    pub fn validate(&self, cells: u64) -> Result<()> {
        self.fe_params.validate(cells)?;
        let n = self.fe_params.code_len();
        if self.positions.len() != n || self.mask.len() != n {
            return Err(Error::format("helper data", "position or mask length disagrees with fe_params"));
        }
        if self.positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format("helper data", "positions are not sorted and distinct"));
        }
        if let Some(&last) = self.positions.last() {
            if last >= cells {
                return Err(Error::Bounds { index: last, limit: cells });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut prev = 0u64;
        let deltas = self
            .positions
            .iter()
            .map(|&p| {
                let d = p - prev;
                prev = p;
                d
            })
            .collect();
        let file = HelperFile {
            version: HELPER_FORMAT_VERSION,
            fe_params: self.fe_params,
            positions: deltas,
            mask_hex: hex::encode(pack_bits(&self.mask)),
            key_check_hex: hex::encode(self.key_check),
            config_fingerprint: self.config_fingerprint.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("helper serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        crate::io::check_version(&value, "helper data", HELPER_FORMAT_VERSION)?;
        let file: HelperFile = serde_json::from_value(value)?;
        let mut acc = 0u64;
        let mut positions = Vec::with_capacity(file.positions.len());
        for (i, d) in file.positions.into_iter().enumerate() {
            if i > 0 && d == 0 {
                return Err(Error::format("helper data", "repeated position"));
            }
            acc = acc
                .checked_add(d)
                .ok_or_else(|| Error::format("helper data", "position overflow"))?;
            positions.push(acc);
        }
        let n = file.fe_params.code_len();
        let packed = hex::decode(&file.mask_hex).map_err(|e| Error::format("helper data", e.to_string()))?;
        if packed.len() != n.div_ceil(8) {
            return Err(Error::format("helper data", "mask length disagrees with fe_params"));
        }
        let mask = (0..n).map(|i| (packed[i / 8] >> (7 - i % 8)) & 1 == 1).collect();
        let check = hex::decode(&file.key_check_hex).map_err(|e| Error::format("helper data", e.to_string()))?;
        let key_check: [u8; 32] = check
            .try_into()
            .map_err(|_| Error::format("helper data", "key_check must be 32 bytes"))?;
        Ok(HelperData {
            fe_params: file.fe_params,
            positions,
            mask,
            key_check,
            config_fingerprint: file.config_fingerprint,
        })
    }
}
