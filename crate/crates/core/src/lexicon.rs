//! Vocabulary, embeddings, and the synonym relation.
//!
//! All structures here are immutable after load and safe to share across
//! threads. Orderings are deterministic (ascending id) so that a seed plus a
//! position fully determines any downstream sample.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token id. PAD is always 0 and UNK always 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

pub const PAD: TokenId = TokenId(0);
pub const UNK: TokenId = TokenId(1);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TokenId(i as u32)))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id for `token`, or UNK when out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as u32).map(TokenId)
    }
}

/// One d-dimensional row per vocabulary id.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(vocab_len: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != vocab_len * dim {
            return Err(Error::Shape(format!(
                "embedding rows {} != |V|*d = {}*{}",
                rows.len(),
                vocab_len,
                dim
            )));
        }
        if !rows.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite embedding entry".into()));
        }
        Ok(EmbeddingMatrix { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        &self.rows[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }
}

/// Directed substitution relation over token ids. Self-loops are not stored;
/// `synonyms_with_self` re-adds the center, matching the convention that a
/// word's substitution set always contains the word itself.
#[derive(Debug, Clone, Default)]
pub struct SynonymGraph {
    adjacency: BTreeMap<TokenId, BTreeSet<TokenId>>,
    /// Tokens from the synonym file that were not in the vocabulary.
    pub dropped_tokens: usize,
}

impl SynonymGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, head: TokenId, synonym: TokenId) {
        if head == synonym || head == PAD || head == UNK || synonym == PAD || synonym == UNK {
            return;
        }
        self.adjacency.entry(head).or_default().insert(synonym);
    }

    /// Adds the reverse of every stored edge.
    pub fn symmetrize(&mut self) {
        let edges: Vec<(TokenId, TokenId)> = self
            .adjacency
            .iter()
            .flat_map(|(h, s)| s.iter().map(|t| (*t, *h)))
            .collect();
        for (h, t) in edges {
            self.insert(h, t);
        }
    }

    /// Stored (non-self) synonyms of `id`, ascending.
    pub fn synonyms(&self, id: TokenId) -> impl Iterator<Item = TokenId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    /// S(id): the substitution set including `id` itself, center first then
    /// ascending.
    pub fn synonyms_with_self(&self, id: TokenId) -> Vec<TokenId> {
        let mut out = vec![id];
        out.extend(self.synonyms(id).filter(|s| *s != id));
        out
    }

    pub fn has_synonyms(&self, id: TokenId) -> bool {
        self.adjacency.get(&id).map_or(false, |s| !s.is_empty())
    }
}

/// The sampling support around one token: `one_hop` is S(center) with the
/// center first, `two_hop_only` is B(center) minus S(center), both ascending
/// past the center slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: TokenId,
    pub one_hop: Vec<TokenId>,
    pub two_hop_only: Vec<TokenId>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.one_hop.len() + self.two_hop_only.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always contains the center
    }

    /// one_hop followed by two_hop_only; the canonical simplex vertex order.
    pub fn vertex_ids(&self) -> Vec<TokenId> {
        let mut out = self.one_hop.clone();
        out.extend_from_slice(&self.two_hop_only);
        out
    }

    pub fn one_hop_len(&self) -> usize {
        self.one_hop.len()
    }
}

/// S(center) as a neighborhood, optionally expanded with 2-hop neighbors
/// (the union of S(x_j) over x_j in S(center), minus S(center)).
pub fn neighborhood(graph: &SynonymGraph, center: TokenId, expand: bool) -> Neighborhood {
    let one_hop = graph.synonyms_with_self(center);
    let mut two_hop_only = Vec::new();
    if expand {
        let one: BTreeSet<TokenId> = one_hop.iter().copied().collect();
        let mut two = BTreeSet::new();
        for &mid in &one_hop {
            for far in graph.synonyms_with_self(mid) {
                if !one.contains(&far) {
                    two.insert(far);
                }
            }
        }
        two_hop_only = two.into_iter().collect();
    }
    Neighborhood {
        center,
        one_hop,
        two_hop_only,
    }
}

/// Loads whitespace-separated embeddings (`token v1 .. vd` per line).
///
/// Ids 0 and 1 are reserved for PAD (zero row) and UNK (mean of all loaded
/// rows; zero when the file is empty).
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut rows: Vec<f64> = vec![0.0; 2 * expected_dim];
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut loaded = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty line"))?;
        if let Some(prev) = seen.insert(token.to_string(), lineno) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate token {:?} (first at line {})", token, prev),
            ));
        }
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(path, lineno, format!("bad float {:?}: {}", f, e)))
            })
            .collect::<Result<_>>()?;
        if values.len() != expected_dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} dims, found {}", expected_dim, values.len()),
            ));
        }
        tokens.push(token.to_string());
        rows.extend_from_slice(&values);
        loaded += 1;
    }
    // UNK row: mean of loaded rows (zero for an empty file).
    if loaded > 0 {
        for d in 0..expected_dim {
            let mut sum = 0.0;
            for r in 0..loaded {
                sum += rows[(2 + r) * expected_dim + d];
            }
            rows[expected_dim + d] = sum / loaded as f64;
        }
    }
    let vocab = Vocabulary::from_tokens(tokens);
    let emb = EmbeddingMatrix::new(vocab.len(), expected_dim, rows)?;
    Ok((vocab, emb))
}

/// Loads a TSV synonym table (`head<TAB>syn1,syn2,...`). Tokens missing from
/// the vocabulary are dropped and counted; direction is preserved unless
/// `symmetrize` is set.
pub fn load_synonyms(path: &Path, vocab: &Vocabulary, symmetrize: bool) -> Result<SynonymGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut graph = SynonymGraph::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (head, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected head<TAB>synonyms"))?;
        let Some(head_id) = vocab.id(head.trim()) else {
            graph.dropped_tokens += 1;
            // Head unknown: every synonym on the line is unusable too.
            graph.dropped_tokens += rest.split(',').filter(|s| !s.trim().is_empty()).count();
            continue;
        };
        for syn in rest.split(',') {
            let syn = syn.trim();
            if syn.is_empty() {
                continue;
            }
            match vocab.id(syn) {
                Some(syn_id) => graph.insert(head_id, syn_id),
                None => graph.dropped_tokens += 1,
            }
        }
    }
    if symmetrize {
        graph.symmetrize();
    }
    Ok(graph)
}
