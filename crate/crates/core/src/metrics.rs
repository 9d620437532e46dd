//! Flip sets, Jaccard statistics, and entropy bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::engine::{initial_byte, Measurement};
use crate::error::{Error, Result};

/// Sorted indices (within the PUF readout) of bits that differ from the IV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipSet {
    pub indices: Vec<u64>,
    /// Number of cells the indices range over.
    pub cells: u64,
    pub source: String,
}

impl FlipSet {
    pub fn new(mut indices: Vec<u64>, cells: u64, source: impl Into<String>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= cells {
                return Err(Error::Bounds { index: last, limit: cells });
            }
        }
        Ok(FlipSet {
            indices,
            cells,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// |flips| / cells.
    pub fn fraction(&self) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            self.indices.len() as f64 / self.cells as f64
        }
    }

    pub fn contains(&self, index: u64) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn is_subset_of(&self, other: &FlipSet) -> bool {
        intersection_len(&self.indices, &other.indices) == self.indices.len()
    }

    /// One index per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.indices.len() * 8);
        for i in &self.indices {
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }
}

pub fn extract_flip_set(m: &Measurement) -> FlipSet {
    let iv = initial_byte(m.config.puf_row_iv);
    let mut indices = Vec::with_capacity(m.flip_count as usize);
    for (byte_idx, &b) in m.readout.iter().enumerate() {
        let diff = b ^ iv;
        if diff == 0 {
            continue;
        }
        for bit in 0..8u64 {
            if diff & (0x80 >> bit) != 0 {
                indices.push(byte_idx as u64 * 8 + bit);
            }
        }
    }
    FlipSet {
        indices,
        cells: m.readout.len() as u64 * 8,
        source: m.id(),
    }
}

fn intersection_len(a: &[u64], b: &[u64]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// |s1 ∩ s2| / |s1 ∪ s2|, with J(∅, ∅) = 1.
pub fn jaccard(s1: &FlipSet, s2: &FlipSet) -> f64 {
    jaccard_sorted(&s1.indices, &s2.indices)
}

pub fn jaccard_sorted(a: &[u64], b: &[u64]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Uniform bins on [0, 1]; 1.0 falls in the last bin.
    pub fn unit(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = ((v * bins as f64).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: Histogram,
}

impl JaccardStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("no Jaccard pairs to summarise".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / values.len() as f64).clamp(min, max);
        Ok(JaccardStats {
            count: values.len(),
            min,
            max,
            mean,
            histogram: Histogram::unit(values, DEFAULT_BINS),
        })
    }

    /// `{min, max, mean, count}` summary.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "count": self.count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id_a: String,
    pub id_b: String,
    pub jaccard: f64,
    pub kind: PairKind,
}

pub fn pairs_csv(records: &[PairRecord]) -> String {
    let mut out = String::from("id_a,id_b,jaccard,kind\n");
    for r in records {
        let kind = match r.kind {
            PairKind::Intra => "intra",
            PairKind::Inter => "inter",
        };
        out.push_str(&format!("{},{},{:.6},{}\n", r.id_a, r.id_b, r.jaccard, kind));
    }
    out
}

/// All unordered pairs within one instance.
pub fn intra_pairs(sets: &[FlipSet]) -> Vec<PairRecord> {
    let pairs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|i| (i + 1..sets.len()).map(move |j| (i, j)))
        .collect();
    pairs
        .par_iter()
        .map(|&(i, j)| PairRecord {
            id_a: sets[i].source.clone(),
            id_b: sets[j].source.clone(),
            jaccard: jaccard(&sets[i], &sets[j]),
            kind: PairKind::Intra,
        })
        .collect()
}

/// All pairs drawn from two different instances.
pub fn inter_pairs(groups: &[Vec<FlipSet>]) -> Vec<PairRecord> {
    let mut pairs = Vec::new();
    for ga in 0..groups.len() {
        for gb in ga + 1..groups.len() {
            for i in 0..groups[ga].len() {
                for j in 0..groups[gb].len() {
                    pairs.push((ga, i, gb, j));
                }
            }
        }
    }
    pairs
        .par_iter()
        .map(|&(ga, i, gb, j)| {
            let (a, b) = (&groups[ga][i], &groups[gb][j]);
            PairRecord {
                id_a: a.source.clone(),
                id_b: b.source.clone(),
                jaccard: jaccard(a, b),
                kind: PairKind::Inter,
            }
        })
        .collect()
}

fn values(records: &[PairRecord]) -> Vec<f64> {
    records.iter().map(|r| r.jaccard).collect()
}

fn check_same_instance(measurements: &[Measurement]) -> Result<()> {
    let first = &measurements[0];
    for m in &measurements[1..] {
        if m.device_id != first.device_id {
            return Err(Error::Usage(format!(
                "measurements come from different devices ({} vs {})",
                first.device_id, m.device_id
            )));
        }
        if m.config != first.config {
            return Err(Error::Usage("measurements use different query configurations".into()));
        }
    }
    Ok(())
}

/// Robustness: Jaccard over every pair of measurements of one device.
pub fn j_intra(measurements: &[Measurement]) -> Result<JaccardStats> {
    if measurements.len() < 2 {
        return Err(Error::Usage("J_intra needs at least two measurements".into()));
    }
    check_same_instance(measurements)?;
    let sets: Vec<FlipSet> = measurements.iter().map(extract_flip_set).collect();
    JaccardStats::from_values(&values(&intra_pairs(&sets)))
}

/// Uniqueness: Jaccard over every cross-device measurement pair.
pub fn j_inter(groups: &[Vec<Measurement>]) -> Result<JaccardStats> {
    if groups.len() < 2 {
        return Err(Error::Usage("J_inter needs at least two devices".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Usage("every device group needs a measurement".into()));
    }
    let sets: Vec<Vec<FlipSet>> = groups
        .iter()
        .map(|g| g.iter().map(extract_flip_set).collect())
        .collect();
    JaccardStats::from_values(&values(&inter_pairs(&sets)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entropy {
    pub cells: u64,
    pub flips: u64,
    pub bits: f64,
    /// bits / cells.
    pub fractional: f64,
}

/// log2 C(n, k) under the uniform flip-location assumption.
pub fn entropy_bits(n: u64, k: u64) -> Result<Entropy> {
    if k > n {
        return Err(Error::Domain(format!("flip count {k} exceeds cell count {n}")));
    }
    let bits = if k == 0 || k == n {
        0.0
    } else {
        let (nf, kf) = (n as f64, k as f64);
        ((ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0))
            / std::f64::consts::LN_2)
            .max(0.0)
    };
    let fractional = if n == 0 { 0.0 } else { bits / n as f64 };
    Ok(Entropy {
        cells: n,
        flips: k,
        bits,
        fractional,
    })
}

/// Bytes of PUF cells needed to hold `target_key_bits` of entropy.
pub fn key_material_size(target_key_bits: u64, fractional_entropy: f64) -> Result<u64> {
    if !(fractional_entropy > 0.0) || !fractional_entropy.is_finite() {
        return Err(Error::Domain(format!(
            "fractional entropy must be positive, got {fractional_entropy}"
        )));
    }
    Ok((target_key_bits as f64 / fractional_entropy / 8.0).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(v: &[u64]) -> FlipSet {
        FlipSet::new(v.to_vec(), 1 << 20, "t").unwrap()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&fs(&[1, 2, 3]), &fs(&[1, 2, 3])), 1.0);
        assert_eq!(jaccard(&fs(&[1, 2]), &fs(&[3, 4])), 0.0);
        assert!((jaccard(&fs(&[1, 2, 3, 4]), &fs(&[3, 4, 5, 6])) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&fs(&[]), &fs(&[])), 1.0);
        assert_eq!(jaccard(&fs(&[]), &fs(&[7])), 0.0);
    }

    #[test]
    fn flip_set_bounds() {
        assert!(FlipSet::new(vec![8], 8, "x").is_err());
        let s = FlipSet::new(vec![5, 1, 5, 3], 8, "x").unwrap();
        assert_eq!(s.indices, vec![1, 3, 5]);
        assert_eq!(s.to_text(), "1\n3\n5\n");
    }

    #[test]
    fn histogram_edges_and_counts() {
        let h = Histogram::unit(&[0.0, 0.5, 0.999, 1.0], 50);
        assert_eq!(h.edges.len(), 51);
        assert_eq!(h.counts.iter().sum::<u64>(), 4);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[25], 1);
        assert_eq!(h.counts[49], 2);
    }

    #[test]
    fn stats_ordering() {
        let s = JaccardStats::from_values(&[0.9, 0.95, 1.0]).unwrap();
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert_eq!(s.count, 3);
        assert!(JaccardStats::from_values(&[]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_bits(1000, 0).unwrap().bits, 0.0);
        assert!((entropy_bits(4, 2).unwrap().bits - 6f64.log2()).abs() < 1e-12);
        let e = entropy_bits(1_048_576, 30_994).unwrap();
        assert!((e.fractional - 0.192).abs() < 0.001, "{}", e.fractional);
        assert!(matches!(entropy_bits(3, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn key_sizing() {
        assert_eq!(key_material_size(128, 0.192).unwrap(), 84);
        assert_eq!(key_material_size(256, 0.192).unwrap(), 167);
        assert_eq!(key_material_size(0, 0.3).unwrap(), 0);
        assert!(key_material_size(128, 0.0).is_err());
    }

    #[test]
    fn pair_enumeration_counts() {
        let sets: Vec<FlipSet> = (0..5).map(|i| fs(&[i, 100])).collect();
        assert_eq!(intra_pairs(&sets).len(), 10);
        let groups = vec![sets.clone(), sets.clone(), sets];
        assert_eq!(inter_pairs(&groups).len(), 3 * 25);
        let csv = pairs_csv(&intra_pairs(&[fs(&[1]), fs(&[1])]));
        assert_eq!(csv, "id_a,id_b,jaccard,kind\nt,t,1.000000,intra\n");
    }
}
