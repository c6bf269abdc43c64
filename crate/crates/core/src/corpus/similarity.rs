use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use super::{CorpusSnapshot, Document};
use crate::error::{Error, Result};
use crate::gateway::Gateway;

/// Pairwise document similarity used to rank distractor candidates.
pub trait SimilarityScorer: Send + Sync {
    fn similarity(&self, a: &Document, b: &Document) -> Result<f64>;

    /// The smallest score this scorer can return, if known. Lets least-similar ranking
    /// stop early once enough candidates sit at the floor.
    fn floor(&self) -> Option<f64> {
        None
    }
}

type TermVector = HashMap<String, f64>;

/// Cosine similarity over lowercased unigram counts. Deterministic and offline.
#[derive(Default)]
pub struct TermOverlapCosine {
    cache: RwLock<HashMap<String, Arc<(TermVector, f64)>>>,
}

impl TermOverlapCosine {
    pub fn new() -> Self {
        Self::default()
    }

    fn vector(&self, doc: &Document) -> Arc<(TermVector, f64)> {
        if let Some(v) = self.cache.read().expect("scorer cache poisoned").get(&doc.doc_id) {
            return v.clone();
        }
        let mut counts = TermVector::new();
        for tok in doc.text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            *counts.entry(tok.to_owned()).or_default() += 1.0;
        }
        let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
        let v = Arc::new((counts, norm));
        self.cache.write().expect("scorer cache poisoned").insert(doc.doc_id.clone(), v.clone());
        v
    }
}

impl SimilarityScorer for TermOverlapCosine {
    fn similarity(&self, a: &Document, b: &Document) -> Result<f64> {
        let va = self.vector(a);
        let vb = self.vector(b);
        let (small, large) = if va.0.len() <= vb.0.len() { (&va, &vb) } else { (&vb, &va) };
        if small.1 == 0.0 || large.1 == 0.0 {
            return Ok(0.0);
        }
        let dot: f64 = small.0.iter().filter_map(|(t, c)| large.0.get(t).map(|d| c * d)).sum();
        Ok(dot / (small.1 * large.1))
    }

    fn floor(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Cosine similarity over backend embeddings of `title + text`.
pub struct EmbeddingCosine {
    gateway: Arc<Gateway>,
    cache: RwLock<HashMap<String, Arc<Vec<f32>>>>,
}

impl EmbeddingCosine {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        EmbeddingCosine {
            gateway,
            cache: RwLock::default(),
        }
    }

    fn embedding(&self, doc: &Document) -> Result<Arc<Vec<f32>>> {
        if let Some(v) = self.cache.read().expect("scorer cache poisoned").get(&doc.doc_id) {
            return Ok(v.clone());
        }
        let v = Arc::new(self.gateway.embed(&format!("{}\n{}", doc.title, doc.text))?);
        self.cache.write().expect("scorer cache poisoned").insert(doc.doc_id.clone(), v.clone());
        Ok(v)
    }
}

impl SimilarityScorer for EmbeddingCosine {
    fn similarity(&self, a: &Document, b: &Document) -> Result<f64> {
        let (ea, eb) = (self.embedding(a)?, self.embedding(b)?);
        if ea.len() != eb.len() {
            return Err(Error::Capability("embedding dimensions differ".into()));
        }
        let dot: f64 = ea.iter().zip(eb.iter()).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na = ea.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb = eb.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        Ok(if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) })
    }
}

impl CorpusSnapshot {
    /// The `k` documents most similar to `doc_id` (`same_topic = true`) or least
    /// similar (`same_topic = false`), never including `doc_id` itself or `exclude`.
    ///
    /// Title equality is the primary key: same-title documents rank first when
    /// `same_topic` is set and last otherwise. Score is the secondary key and
    /// ascending doc_id breaks ties, so the order is total.
    pub fn topic_neighbors(
        &self,
        doc_id: &str,
        same_topic: bool,
        k: usize,
        exclude: &HashSet<String>,
        scorer: &dyn SimilarityScorer,
    ) -> Result<Vec<String>> {
        let query = self.document(doc_id).ok_or_else(|| Error::UnknownDocument(doc_id.to_owned()))?;
        self.rank_neighbors(query, same_topic, k, &|d: &Document| !exclude.contains(&d.doc_id), scorer)
    }

    /// Like [`topic_neighbors`](Self::topic_neighbors), but the query need not be in the
    /// snapshot and candidates are filtered by a predicate.
    pub fn rank_neighbors(
        &self,
        query: &Document,
        same_topic: bool,
        k: usize,
        accept: &dyn Fn(&Document) -> bool,
        scorer: &dyn SimilarityScorer,
    ) -> Result<Vec<String>> {
        if k == 0 {
            return Err(Error::Precondition("k must be at least 1".into()));
        }
        // Partition on title first; `accept` may be expensive, so it only runs on
        // groups that are actually consulted.
        let (same, other): (Vec<&Document>, Vec<&Document>) = self
            .documents()
            .filter(|d| d.doc_id != query.doc_id)
            .partition(|d| d.title == query.title);
        let (first, second) = if same_topic { (same, other) } else { (other, same) };

        if !same_topic {
            if let Some(floor) = scorer.floor() {
                let mut at_floor = Vec::with_capacity(k);
                for d in &first {
                    if scorer.similarity(query, d)? <= floor && accept(d) {
                        at_floor.push(d.doc_id.clone());
                        if at_floor.len() == k {
                            return Ok(at_floor);
                        }
                    }
                }
            }
        }

        let first: Vec<&Document> = first.into_iter().filter(|d| accept(d)).collect();
        let mut picked = ranked(query, &first, same_topic, scorer)?;
        if picked.len() < k {
            let second: Vec<&Document> = second.into_iter().filter(|d| accept(d)).collect();
            picked.extend(ranked(query, &second, same_topic, scorer)?);
        }
        if picked.len() < k {
            return Err(Error::InsufficientCandidates {
                needed: k,
                available: picked.len(),
            });
        }
        picked.truncate(k);
        Ok(picked)
    }
}

fn ranked(query: &Document, docs: &[&Document], descending: bool, scorer: &dyn SimilarityScorer) -> Result<Vec<String>> {
    let mut scored = docs
        .iter()
        .map(|d| Ok((scorer.similarity(query, d)?, d.doc_id.as_str())))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        let by_score = if descending { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) };
        match by_score {
            Ordering::Equal => a.1.cmp(b.1),
            o => o,
        }
    });
    Ok(scored.into_iter().map(|(_, id)| id.to_owned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(docs: Vec<Document>) -> CorpusSnapshot {
        CorpusSnapshot::build(docs, vec![], vec![]).unwrap()
    }

    fn election_corpus() -> CorpusSnapshot {
        snapshot(vec![
            Document::new("e0", "2024 US election", "Vice President Kamala Harris became the presumed Democratic nominee."),
            Document::new("e1", "2024 US election", "Top contenders for running mate include Pete Buttigieg and Mark Kelly, the Democratic senator."),
            Document::new("e2", "2024 US election", "Polling stations opened early."),
            Document::new("g1", "Geology", "Basalt is an igneous rock."),
            Document::new("g2", "Cooking", "Whisk the eggs with the Democratic flour."),
        ])
    }

    #[test]
    fn same_topic_never_returns_query() {
        let snap = election_corpus();
        let scorer = TermOverlapCosine::new();
        let got = snap.topic_neighbors("e0", true, 1, &HashSet::new(), &scorer).unwrap();
        assert_eq!(got, vec!["e1".to_string()]);
    }

    #[test]
    fn least_similar_prefers_other_titles() {
        let snap = election_corpus();
        let scorer = TermOverlapCosine::new();
        let got = snap.topic_neighbors("e0", false, 2, &HashSet::new(), &scorer).unwrap();
        // g1 shares no terms (score 0); g2 shares "the" and "democratic".
        assert_eq!(got, vec!["g1".to_string(), "g2".to_string()]);
    }

    #[test]
    fn zero_k_is_precondition_error() {
        let snap = election_corpus();
        let err = snap.topic_neighbors("e0", true, 0, &HashSet::new(), &TermOverlapCosine::new()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn two_doc_corpus_returns_the_other_doc() {
        // Brute force: with one candidate, any scorer ranks it first for either direction.
        let snap = snapshot(vec![Document::new("a", "X", "alpha beta"), Document::new("b", "X", "gamma")]);
        let scorer = TermOverlapCosine::new();
        assert_eq!(scorer.similarity(snap.document("a").unwrap(), snap.document("b").unwrap()).unwrap(), 0.0);
        for same_topic in [true, false] {
            let got = snap.topic_neighbors("a", same_topic, 1, &HashSet::new(), &scorer).unwrap();
            assert_eq!(got, vec!["b".to_string()]);
        }
    }

    #[test]
    fn shortfall_names_counts() {
        let snap = election_corpus();
        let exclude: HashSet<String> = ["e1", "e2", "g1"].iter().map(|s| s.to_string()).collect();
        match snap.topic_neighbors("e0", true, 3, &exclude, &TermOverlapCosine::new()) {
            Err(Error::InsufficientCandidates { needed: 3, available: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ranking_is_deterministic() {
        let snap = election_corpus();
        let scorer = TermOverlapCosine::new();
        let a = snap.topic_neighbors("e2", true, 4, &HashSet::new(), &scorer).unwrap();
        let b = snap.topic_neighbors("e2", true, 4, &HashSet::new(), &TermOverlapCosine::new()).unwrap();
        assert_eq!(a, b);
    }
}
