//! Synthetic clustered corpus generation.
//!
//! The vocabulary is a set of synonym clusters: tight balls in embedding
//! space, wired internally as a substitution ring (so expanding a word's
//! neighborhood with 2-hop neighbors genuinely grows it). Every cluster
//! carries a latent polarity and a sentence's gold label is the sign of the
//! sum of its words' polarities, so the label is invariant under
//! within-cluster substitution: a perfect classifier has 100% robust
//! accuracy and any robustness gap is attributable to the learner.
//!
//! Word choice within a cluster is rank-skewed, so low-rank cluster members
//! are common in training while high-rank members stay rare; substitution
//! toward rarely-seen synonyms is exactly the attack surface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub cluster_size: usize,
    pub dim: usize,
    pub sentence_len: usize,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
    /// Ball radius around each cluster center.
    pub cluster_radius: f64,
    /// Within-cluster rank weight exponent; higher means rarer tail words.
    pub skew: f64,
    /// Trailing ranks per cluster that never occur in the corpus. They exist
    /// only in the embedding and synonym files, as substitution targets —
    /// the usual situation for synonym-table entries.
    pub rare_ranks: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clusters: 40,
            cluster_size: 5,
            dim: 16,
            sentence_len: 8,
            train_n: 2000,
            val_n: 500,
            test_n: 500,
            cluster_radius: 1.0,
            skew: 2.0,
            rare_ranks: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_size < 2 {
            return Err(Error::Param("cluster_size must be >= 2".into()));
        }
        if self.clusters < 2 {
            return Err(Error::Param("need at least 2 clusters".into()));
        }
        if self.sentence_len == 0 || self.dim == 0 {
            return Err(Error::Param("sentence_len and dim must be > 0".into()));
        }
        if self.rare_ranks >= self.cluster_size {
            return Err(Error::Param(
                "rare_ranks must leave at least one corpus rank per cluster".into(),
            ));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.clusters * self.cluster_size
    }

    /// Polarity of a cluster: alternating +1/-1.
    pub fn polarity(cluster: usize) -> i64 {
        if cluster % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

/// Token naming scheme: cluster then within-cluster rank.
pub fn token_name(cluster: usize, rank: usize) -> String {
    format!("c{:03}w{}", cluster, rank)
}

/// Parses a generated token name back to (cluster, rank).
pub fn token_cluster(token: &str) -> Option<(usize, usize)> {
    let rest = token.strip_prefix('c')?;
    let (cluster, rank) = rest.split_once('w')?;
    Some((cluster.parse().ok()?, rank.parse().ok()?))
}

/// Gold label for a sequence of cluster indices: 1 when the polarity sum is
/// positive, 0 when negative, None on a tie (ties are never emitted).
pub fn label_of(clusters: &[usize]) -> Option<usize> {
    let sum: i64 = clusters.iter().map(|c| SyntheticSpec::polarity(*c)).sum();
    match sum.signum() {
        1 => Some(1),
        -1 => Some(0),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub embeddings: PathBuf,
    pub synonyms: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

/// Writes embeddings, the synonym table, and the three splits into
/// `out_dir`. Byte-identical for identical (spec, seed).
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticFiles> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Geometry: cluster centers with members in a tight ball around each.
    let mut geom_rng = seeding::rng(seeding::derive(spec.seed, "synthetic-geometry"));
    let normal = StandardNormal;
    let mut embeddings = String::new();
    for c in 0..spec.clusters {
        let center: Vec<f64> = (0..spec.dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&normal, &mut geom_rng))
            .collect();
        for r in 0..spec.cluster_size {
            let mut line = token_name(c, r);
            for v in &center {
                let jitter: f64 = normal.sample(&mut geom_rng);
                write!(line, " {:.6}", v + spec.cluster_radius * jitter).unwrap();
            }
            embeddings.push_str(&line);
            embeddings.push('\n');
        }
    }

    // Substitution ring within each cluster; both directions listed.
    let mut synonyms = String::new();
    for c in 0..spec.clusters {
        for r in 0..spec.cluster_size {
            let prev = (r + spec.cluster_size - 1) % spec.cluster_size;
            let next = (r + 1) % spec.cluster_size;
            let mut neighbors = vec![token_name(c, prev)];
            if next != prev {
                neighbors.push(token_name(c, next));
            }
            synonyms.push_str(&format!("{}\t{}\n", token_name(c, r), neighbors.join(",")));
        }
    }

    // Rank weights: w_r proportional to (r+1)^(-skew); the trailing
    // rare_ranks never appear in the corpus.
    let corpus_ranks = spec.cluster_size - spec.rare_ranks;
    let weights: Vec<f64> = (0..corpus_ranks)
        .map(|r| ((r + 1) as f64).powf(-spec.skew))
        .collect();

    let files = SyntheticFiles {
        embeddings: out_dir.join("embeddings.txt"),
        synonyms: out_dir.join("synonyms.tsv"),
        train: out_dir.join("train.tsv"),
        val: out_dir.join("val.tsv"),
        test: out_dir.join("test.tsv"),
    };
    fs::write(&files.embeddings, embeddings).map_err(|e| Error::io(&files.embeddings, e))?;
    fs::write(&files.synonyms, synonyms).map_err(|e| Error::io(&files.synonyms, e))?;

    for (name, n, path) in [
        ("train", spec.train_n, &files.train),
        ("val", spec.val_n, &files.val),
        ("test", spec.test_n, &files.test),
    ] {
        let mut rng = seeding::rng(seeding::derive(spec.seed, &format!("synthetic-{}", name)));
        let body = generate_split(spec, &weights, n, &mut rng);
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

fn generate_split(
    spec: &SyntheticSpec,
    weights: &[f64],
    n: usize,
    rng: &mut ChaCha12Rng,
) -> String {
    let total_w: f64 = weights.iter().sum();
    let mut out = String::new();
    for i in 0..n {
        // Alternate targets for an exact class balance.
        let target = if i % 2 == 0 { 1 } else { 0 };
        loop {
            let clusters: Vec<usize> = (0..spec.sentence_len)
                .map(|_| rng.random_range(0..spec.clusters))
                .collect();
            if label_of(&clusters) != Some(target) {
                continue;
            }
            let words: Vec<String> = clusters
                .iter()
                .map(|&c| {
                    let mut t = rng.random::<f64>() * total_w;
                    let mut rank = 0;
                    for (r, w) in weights.iter().enumerate() {
                        t -= w;
                        if t <= 0.0 {
                            rank = r;
                            break;
                        }
                    }
                    token_name(c, rank)
                })
                .collect();
            out.push_str(&format!("{}\t{}\n", target, words.join(" ")));
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{load_embeddings, load_synonyms};

    #[test]
    fn within_cluster_substitution_never_changes_the_label() {
        let spec = SyntheticSpec {
            clusters: 6,
            cluster_size: 4,
            train_n: 40,
            val_n: 10,
            test_n: 10,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let files = generate_synthetic(&spec, dir.path()).unwrap();
        let (vocab, _) = load_embeddings(&files.embeddings, spec.dim).unwrap();
        let graph = load_synonyms(&files.synonyms, &vocab, false).unwrap();
        let text = std::fs::read_to_string(&files.train).unwrap();
        for line in text.lines() {
            let (label, body) = line.split_once('\t').unwrap();
            let label: usize = label.parse().unwrap();
            let words: Vec<&str> = body.split_whitespace().collect();
            let clusters: Vec<usize> =
                words.iter().map(|w| token_cluster(w).unwrap().0).collect();
            assert_eq!(label_of(&clusters), Some(label));
            // Substitute each position by every 1-hop synonym in turn.
            for (pos, w) in words.iter().enumerate() {
                let id = vocab.id(w).unwrap();
                for syn in graph.synonyms(id) {
                    let syn_tok = vocab.token(syn);
                    let (c, _) = token_cluster(syn_tok).unwrap();
                    let mut subbed = clusters.clone();
                    subbed[pos] = c;
                    assert_eq!(label_of(&subbed), Some(label), "line {:?}", line);
                }
            }
        }
    }

    #[test]
    fn default_spec_is_class_balanced() {
        let spec = SyntheticSpec {
            train_n: 200,
            val_n: 50,
            test_n: 50,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let files = generate_synthetic(&spec, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.train).unwrap();
        let ones = text
            .lines()
            .filter(|l| l.starts_with("1\t"))
            .count() as f64;
        let frac = ones / text.lines().count() as f64;
        assert!((frac - 0.5).abs() <= 0.02, "class balance {}", frac);
    }

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let spec = SyntheticSpec {
            clusters: 5,
            cluster_size: 3,
            train_n: 30,
            val_n: 10,
            test_n: 10,
            seed: 9,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = generate_synthetic(&spec, d1.path()).unwrap();
        let f2 = generate_synthetic(&spec, d2.path()).unwrap();
        for (a, b) in [
            (&f1.embeddings, &f2.embeddings),
            (&f1.synonyms, &f2.synonyms),
            (&f1.train, &f2.train),
            (&f1.val, &f2.val),
            (&f1.test, &f2.test),
        ] {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{:?} differs",
                a
            );
        }
    }

    #[test]
    fn ring_topology_has_two_hop_structure() {
        let spec = SyntheticSpec {
            clusters: 3,
            cluster_size: 5,
            train_n: 10,
            val_n: 5,
            test_n: 5,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let files = generate_synthetic(&spec, dir.path()).unwrap();
        let (vocab, _) = load_embeddings(&files.embeddings, spec.dim).unwrap();
        let graph = load_synonyms(&files.synonyms, &vocab, false).unwrap();
        let id = vocab.id(&token_name(0, 0)).unwrap();
        let nbh = crate::lexicon::neighborhood(&graph, id, true);
        assert_eq!(nbh.one_hop.len(), 3); // self + ring neighbors
        assert_eq!(nbh.two_hop_only.len(), 2); // rest of the cluster
        assert_eq!(nbh.len(), spec.cluster_size);
    }
}
