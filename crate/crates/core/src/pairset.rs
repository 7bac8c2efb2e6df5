//! Pair manifest construction under the three pairing policies, plus the
//! overlap audit used to verify them.
//!
//! Strong pairs the same codepoint across fonts; Soft permutes the training
//! codepoints so content and style are unaligned but the sets overlap fully;
//! Random hits an exact overlap ratio by drawing the non-overlapping targets
//! from codepoints outside the training split.

use crate::error::Error;
use crate::glyphrender::{cp_label, parse_cp_label, CorpusManifest};
use crate::rngs::{derive, Stream};
use crate::Result;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Strong,
    Soft,
    Random,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Strong => "strong",
            PolicyKind::Soft => "soft",
            PolicyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        match s {
            "strong" => Some(PolicyKind::Strong),
            "soft" => Some(PolicyKind::Soft),
            "random" => Some(PolicyKind::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub kind: PolicyKind,
    /// Target fraction of source codepoints that appear among the targets.
    /// Only Random reads it; Strong and Soft are always 1.0 by construction.
    pub overlap_ratio: f64,
    pub seed: u64,
}

impl PairPolicy {
    pub fn strong(seed: u64) -> Self {
        PairPolicy {
            kind: PolicyKind::Strong,
            overlap_ratio: 1.0,
            seed,
        }
    }

    pub fn soft(seed: u64) -> Self {
        PairPolicy {
            kind: PolicyKind::Soft,
            overlap_ratio: 1.0,
            seed,
        }
    }

    pub fn random(overlap_ratio: f64, seed: u64) -> Self {
        PairPolicy {
            kind: PolicyKind::Random,
            overlap_ratio,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap_ratio) || !self.overlap_ratio.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "overlap_ratio {} outside [0, 1]",
                self.overlap_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One training pair: the source-font image of `src_cp` and the target-font
/// image of `tgt_cp`. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub src_cp: u32,
    pub tgt_cp: u32,
    pub src_path: String,
    pub tgt_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub pairs: Vec<PairRecord>,
    pub policy: PairPolicy,
    pub split: Split,
    /// Directory the record paths are relative to.
    pub base_dir: PathBuf,
}

/// Deterministic disjoint split of the corpus codepoints.
pub fn split_corpus(
    manifest: &CorpusManifest,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let cps = manifest.codepoints();
    if n_train + n_test > cps.len() {
        return Err(Error::InsufficientCorpus(format!(
            "split needs {} codepoints, corpus has {}",
            n_train + n_test,
            cps.len()
        )));
    }
    let mut shuffled = cps;
    shuffled.shuffle(&mut derive(seed, Stream::Split, 0));
    let train = shuffled[..n_train].to_vec();
    let test = shuffled[n_train..n_train + n_test].to_vec();
    Ok((train, test))
}

/// Half-to-even rounding of the nominal overlap count.
pub fn overlap_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round_ties_even() as usize
}

pub fn build_pairs(
    train_cps: &[u32],
    policy: PairPolicy,
    corpus: &CorpusManifest,
) -> Result<PairManifest> {
    build_pairs_split(train_cps, policy, corpus, Split::Train)
}

pub fn build_pairs_split(
    train_cps: &[u32],
    policy: PairPolicy,
    corpus: &CorpusManifest,
    split: Split,
) -> Result<PairManifest> {
    policy.validate()?;
    let paths: BTreeMap<u32, (&str, &str)> = corpus
        .rows
        .iter()
        .filter_map(|r| Some((parse_cp_label(&r.cp)?, (r.src.as_str(), r.tgt.as_str()))))
        .collect();
    let missing: Vec<u32> = train_cps
        .iter()
        .copied()
        .filter(|cp| !paths.contains_key(cp))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InsufficientCorpus(format!(
            "{} pairing codepoints absent from corpus (first: {})",
            missing.len(),
            cp_label(missing[0])
        )));
    }
    let unique: BTreeSet<u32> = train_cps.iter().copied().collect();
    if unique.len() != train_cps.len() {
        return Err(Error::InvalidConfig(
            "pairing codepoints contain duplicates".into(),
        ));
    }

    let n = train_cps.len();
    let mut rng = derive(policy.seed, Stream::Pairing, 0);
    let targets: Vec<u32> = match policy.kind {
        PolicyKind::Strong => train_cps.to_vec(),
        PolicyKind::Soft => {
            let mut t = train_cps.to_vec();
            t.shuffle(&mut rng);
            // Identity would be indistinguishable from Strong; re-draw.
            while n > 1 && t == train_cps {
                t.shuffle(&mut rng);
            }
            t
        }
        PolicyKind::Random => {
            let k = overlap_count(policy.overlap_ratio, n);
            let mut shuffled_sources = train_cps.to_vec();
            shuffled_sources.shuffle(&mut rng);
            let mut t: Vec<u32> = shuffled_sources[..k].to_vec();

            let mut outside: Vec<u32> = paths
                .keys()
                .copied()
                .filter(|cp| !unique.contains(cp))
                .collect();
            if outside.len() < n - k {
                return Err(Error::InsufficientCorpus(format!(
                    "random policy needs {} codepoints outside the training set, corpus offers {}",
                    n - k,
                    outside.len()
                )));
            }
            outside.shuffle(&mut rng);
            t.extend_from_slice(&outside[..n - k]);
            t.shuffle(&mut rng);
            t
        }
    };

    let pairs = train_cps
        .iter()
        .zip(&targets)
        .map(|(&src_cp, &tgt_cp)| PairRecord {
            src_cp,
            tgt_cp,
            src_path: paths[&src_cp].0.to_string(),
            tgt_path: paths[&tgt_cp].1.to_string(),
        })
        .collect();
    Ok(PairManifest {
        pairs,
        policy,
        split,
        base_dir: corpus.base_dir.clone(),
    })
}

/// Fraction of pair positions whose source codepoint appears anywhere among
/// the targets.
pub fn measure_overlap(m: &PairManifest) -> Result<f64> {
    if m.pairs.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let targets: BTreeSet<u32> = m.pairs.iter().map(|p| p.tgt_cp).collect();
    let hits = m
        .pairs
        .iter()
        .filter(|p| targets.contains(&p.src_cp))
        .count();
    Ok(hits as f64 / m.pairs.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct HeaderRow {
    policy: String,
    overlap: f64,
    seed: u64,
    split: String,
}

#[derive(Serialize, Deserialize)]
struct BodyRow {
    src_cp: String,
    tgt_cp: String,
    src: String,
    tgt: String,
}

impl PairManifest {
    /// JSON-lines serialization: one header row, then one row per pair.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = HeaderRow {
            policy: self.policy.kind.as_str().to_string(),
            overlap: self.policy.overlap_ratio,
            seed: self.policy.seed,
            split: self.split.as_str().to_string(),
        };
        let mut text = serde_json::to_string(&header).expect("plain values");
        text.push('\n');
        for p in &self.pairs {
            let row = BodyRow {
                src_cp: cp_label(p.src_cp),
                tgt_cp: cp_label(p.tgt_cp),
                src: p.src_path.clone(),
                tgt: p.tgt_path.clone(),
            };
            writeln!(text, "{}", serde_json::to_string(&row).expect("plain strings")).unwrap();
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PairManifest> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FileNotFound(path.to_path_buf()))
            }
            Err(e) => return Err(Error::Io(e)),
        };
        let bad = |line: usize, reason: String| Error::BadManifest {
            path: path.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, header_line) = lines.next().ok_or(Error::EmptyManifest)?;
        let header: HeaderRow =
            serde_json::from_str(header_line).map_err(|e| bad(i + 1, e.to_string()))?;
        let kind = PolicyKind::parse(&header.policy)
            .ok_or_else(|| bad(i + 1, format!("unknown policy {:?}", header.policy)))?;
        let split = match header.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(i + 1, format!("unknown split {other:?}"))),
        };
        let mut pairs = Vec::new();
        for (i, line) in lines {
            let row: BodyRow = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
            let src_cp = parse_cp_label(&row.src_cp)
                .ok_or_else(|| bad(i + 1, format!("bad codepoint label {:?}", row.src_cp)))?;
            let tgt_cp = parse_cp_label(&row.tgt_cp)
                .ok_or_else(|| bad(i + 1, format!("bad codepoint label {:?}", row.tgt_cp)))?;
            pairs.push(PairRecord {
                src_cp,
                tgt_cp,
                src_path: row.src,
                tgt_path: row.tgt,
            });
        }
        Ok(PairManifest {
            pairs,
            policy: PairPolicy {
                kind,
                overlap_ratio: header.overlap,
                seed: header.seed,
            },
            split,
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphrender::CorpusRow;
    use proptest::prelude::*;

    /// In-memory corpus over the first `n` codepoints of the CJK block.
    fn corpus(n: usize) -> CorpusManifest {
        let rows = (0..n)
            .map(|i| {
                let label = cp_label(0x4E00 + i as u32);
                CorpusRow {
                    cp: label.clone(),
                    src: format!("src/{label}.png"),
                    tgt: format!("tgt/{label}.png"),
                }
            })
            .collect();
        CorpusManifest {
            rows,
            base_dir: PathBuf::from("."),
        }
    }

    fn cps(n: usize) -> Vec<u32> {
        (0..n as u32).map(|i| 0x4E00 + i).collect()
    }

    #[test]
    fn strong_pairs_are_identity_aligned() {
        let c = corpus(3);
        let m = build_pairs(&cps(3), PairPolicy::strong(9), &c).unwrap();
        assert_eq!(m.pairs.len(), 3);
        for p in &m.pairs {
            assert_eq!(p.src_cp, p.tgt_cp);
        }
        assert_eq!(measure_overlap(&m).unwrap(), 1.0);
    }

    #[test]
    fn soft_pairs_permute_and_reject_identity() {
        let c = corpus(4);
        for seed in 0..50 {
            let m = build_pairs(&cps(4), PairPolicy::soft(seed), &c).unwrap();
            let mut tgts: Vec<u32> = m.pairs.iter().map(|p| p.tgt_cp).collect();
            tgts.sort_unstable();
            assert_eq!(tgts, cps(4), "targets are a permutation");
            assert!(
                m.pairs.iter().any(|p| p.src_cp != p.tgt_cp),
                "identity rejected at seed {seed}"
            );
            assert_eq!(measure_overlap(&m).unwrap(), 1.0);
        }
        // Single pair has only the identity permutation.
        let c1 = corpus(1);
        let m = build_pairs(&cps(1), PairPolicy::soft(0), &c1).unwrap();
        assert_eq!(m.pairs[0].src_cp, m.pairs[0].tgt_cp);
    }

    #[test]
    fn random_policy_hits_exact_overlap_count() {
        let c = corpus(12);
        let train = cps(4);
        let m = build_pairs(&train, PairPolicy::random(0.5, 3), &c).unwrap();
        let tgt_set: BTreeSet<u32> = m.pairs.iter().map(|p| p.tgt_cp).collect();
        let hits = train.iter().filter(|cp| tgt_set.contains(cp)).count();
        assert_eq!(hits, 2, "exactly round(0.5*4) sources among targets");
        assert_eq!(measure_overlap(&m).unwrap(), 0.5);
        assert_eq!(tgt_set.len(), m.pairs.len(), "no duplicate targets");
    }

    #[test]
    fn random_zero_and_one_are_extremes() {
        let c = corpus(20);
        let train = cps(8);
        let m0 = build_pairs(&train, PairPolicy::random(0.0, 1), &c).unwrap();
        assert_eq!(measure_overlap(&m0).unwrap(), 0.0);
        let m1 = build_pairs(&train, PairPolicy::random(1.0, 1), &c).unwrap();
        assert_eq!(measure_overlap(&m1).unwrap(), 1.0);
    }

    #[test]
    fn random_needs_enough_outside_codepoints() {
        let c = corpus(5);
        let err = build_pairs(&cps(4), PairPolicy::random(0.0, 0), &c).unwrap_err();
        assert!(matches!(err, Error::InsufficientCorpus(_)), "{err}");
        // 4 outside needed, only 1 available; ratio 0.75 needs just 1.
        build_pairs(&cps(4), PairPolicy::random(0.75, 0), &c).unwrap();
    }

    #[test]
    fn overlap_count_rounds_half_to_even() {
        assert_eq!(overlap_count(0.5, 1), 0); // 0.5 -> 0
        assert_eq!(overlap_count(0.5, 3), 2); // 1.5 -> 2
        assert_eq!(overlap_count(0.5, 5), 2); // 2.5 -> 2
        assert_eq!(overlap_count(0.5, 7), 4); // 3.5 -> 4
        assert_eq!(overlap_count(0.25, 2), 0); // 0.5 -> 0
    }

    #[test]
    fn measure_overlap_on_hand_built_manifest() {
        let mk = |src_cp: u32, tgt_cp: u32| PairRecord {
            src_cp,
            tgt_cp,
            src_path: String::new(),
            tgt_path: String::new(),
        };
        // Sources {1,2,3,4}, targets {2,1,9,8}: sources 1 and 2 appear among
        // targets, 3 and 4 do not.
        let m = PairManifest {
            pairs: vec![mk(1, 2), mk(2, 1), mk(3, 9), mk(4, 8)],
            policy: PairPolicy::random(0.5, 0),
            split: Split::Train,
            base_dir: PathBuf::from("."),
        };
        assert_eq!(measure_overlap(&m).unwrap(), 0.5);

        let empty = PairManifest {
            pairs: vec![],
            policy: PairPolicy::strong(0),
            split: Split::Train,
            base_dir: PathBuf::from("."),
        };
        assert!(matches!(measure_overlap(&empty), Err(Error::EmptyManifest)));
    }

    #[test]
    fn split_corpus_is_deterministic_and_disjoint() {
        let c = corpus(100);
        let (tr1, te1) = split_corpus(&c, 90, 10, 7).unwrap();
        let (tr2, te2) = split_corpus(&c, 90, 10, 7).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len(), 90);
        assert_eq!(te1.len(), 10);
        let train_set: BTreeSet<u32> = tr1.iter().copied().collect();
        assert!(te1.iter().all(|cp| !train_set.contains(cp)));

        let (tr3, _) = split_corpus(&c, 90, 10, 8).unwrap();
        assert_ne!(tr1, tr3, "different seeds split differently");

        let (e1, e2) = split_corpus(&c, 0, 0, 0).unwrap();
        assert!(e1.is_empty() && e2.is_empty());
        assert!(matches!(
            split_corpus(&c, 95, 10, 0),
            Err(Error::InsufficientCorpus(_))
        ));
    }

    #[test]
    fn build_pairs_is_deterministic_in_seed() {
        let c = corpus(30);
        let train = cps(10);
        for policy in [
            PairPolicy::soft(5),
            PairPolicy::random(0.5, 5),
            PairPolicy::strong(5),
        ] {
            let a = build_pairs(&train, policy, &c).unwrap();
            let b = build_pairs(&train, policy, &c).unwrap();
            assert_eq!(a, b);
        }
        let a = build_pairs(&train, PairPolicy::soft(1), &c).unwrap();
        let b = build_pairs(&train, PairPolicy::soft(2), &c).unwrap();
        assert_ne!(a.pairs, b.pairs);
    }

    #[test]
    fn manifest_save_load_round_trips() {
        let c = corpus(16);
        let m = build_pairs(&cps(8), PairPolicy::random(0.5, 11), &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.jsonl");
        m.save(&p).unwrap();
        let back = PairManifest::load(&p).unwrap();
        assert_eq!(back.pairs, m.pairs);
        assert_eq!(back.policy, m.policy);
        assert_eq!(back.split, m.split);

        let first = std::fs::read_to_string(&p).unwrap();
        assert!(first.starts_with(r#"{"policy":"random","overlap":0.5,"seed":11"#));

        std::fs::write(&p, "").unwrap();
        assert!(matches!(PairManifest::load(&p), Err(Error::EmptyManifest)));
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let c = corpus(8);
        let err = build_pairs(&cps(4), PairPolicy::random(1.5, 0), &c).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let err = build_pairs(&[0x4E00, 0x4E00], PairPolicy::strong(0), &c).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let err = build_pairs(&[0x9999], PairPolicy::strong(0), &c).unwrap_err();
        assert!(matches!(err, Error::InsufficientCorpus(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Overlap is exact for every policy, size, ratio, and seed.
        #[test]
        fn nominal_overlap_always_achieved(
            n in 1usize..60,
            extra in 0usize..80,
            seed in 0u64..1000,
            ratio_pct in 0u32..=100,
        ) {
            let ratio = ratio_pct as f64 / 100.0;
            let c = corpus(n + extra);
            let train = cps(n);
            let k = overlap_count(ratio, n);
            let need_outside = n - k;

            for policy in [PairPolicy::strong(seed), PairPolicy::soft(seed)] {
                let m = build_pairs(&train, policy, &c).unwrap();
                prop_assert_eq!(measure_overlap(&m).unwrap(), 1.0);
                prop_assert_eq!(m.pairs.len(), n);
            }

            let r = build_pairs(&train, PairPolicy::random(ratio, seed), &c);
            if extra < need_outside {
                prop_assert!(matches!(r, Err(Error::InsufficientCorpus(_))));
            } else {
                let m = r.unwrap();
                let expect = k as f64 / n as f64;
                prop_assert_eq!(measure_overlap(&m).unwrap(), expect);
                let tgts: BTreeSet<u32> = m.pairs.iter().map(|p| p.tgt_cp).collect();
                prop_assert_eq!(tgts.len(), n, "targets never repeat");
            }
        }

        /// Soft targets are always a permutation; identity only at n = 1.
        #[test]
        fn soft_is_a_non_identity_permutation(n in 2usize..40, seed in 0u64..500) {
            let c = corpus(n);
            let train = cps(n);
            let m = build_pairs(&train, PairPolicy::soft(seed), &c).unwrap();
            let mut tgts: Vec<u32> = m.pairs.iter().map(|p| p.tgt_cp).collect();
            prop_assert!(m.pairs.iter().any(|p| p.src_cp != p.tgt_cp));
            tgts.sort_unstable();
            prop_assert_eq!(tgts, train);
        }
    }
}
