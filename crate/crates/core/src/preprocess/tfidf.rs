use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::text::CleanText;
use crate::error::{Error, Result};

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }
}

/// Term-to-column mapping with smoothed inverse document frequencies.
///
/// Columns are assigned in lexicographic term order, so fitting is
/// independent of document order. `idf(t) = ln((1 + n) / (1 + df(t))) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVocabulary {
    index: HashMap<String, usize>,
    terms: Vec<String>,
    idf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    terms: BTreeMap<String, usize>,
    idf: BTreeMap<String, f64>,
}

impl TfidfVocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i])
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabularyFile {
            terms: self.terms.iter().cloned().zip(0..).collect(),
            idf: self.terms.iter().cloned().zip(self.idf.iter().copied()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(json)?;
        let n = file.terms.len();
        let mut terms = vec![String::new(); n];
        let mut idf = vec![0.0; n];
        for (term, &i) in &file.terms {
            if i >= n || !terms[i].is_empty() {
                return Err(Error::Load(format!("vocabulary index {i} is not dense")));
            }
            terms[i] = term.clone();
            idf[i] = *file
                .idf
                .get(term)
                .ok_or_else(|| Error::Load(format!("vocabulary lacks idf for `{term}`")))?;
        }
        let index = terms.iter().cloned().zip(0..).collect();
        Ok(Self { index, terms, idf })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }

    /// SHA-256 over the serialized vocabulary.
    pub fn fingerprint(&self) -> String {
        let json = self.to_json().expect("vocabulary serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn fit_tfidf<'a>(texts: impl IntoIterator<Item = &'a CleanText>) -> Result<TfidfVocabulary> {
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n_docs = 0usize;
    for text in texts {
        n_docs += 1;
        let mut words: Vec<&str> = text.words().collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            *df.entry(w).or_default() += 1;
        }
    }
    if n_docs == 0 {
        return Err(Error::Validation("cannot fit TF-IDF on an empty corpus".into()));
    }
    let n = n_docs as f64;
    let terms: Vec<String> = df.keys().map(|t| t.to_string()).collect();
    let idf = df
        .values()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    let index = terms.iter().cloned().zip(0..).collect();
    Ok(TfidfVocabulary { index, terms, idf })
}

/// Raw term counts times IDF, L2-normalized. Out-of-vocabulary terms are ignored.
pub fn tfidf_transform(vocab: &TfidfVocabulary, text: &CleanText) -> SparseVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for w in text.words() {
        if let Some(i) = vocab.index_of(w) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(i, tf)| (i, tf * vocab.idf[i]))
        .collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    SparseVector {
        dim: vocab.len(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::clean_text;

    fn docs(texts: &[&str]) -> Vec<CleanText> {
        texts.iter().map(|t| clean_text(t)).collect()
    }

    #[test]
    fn smoothed_idf_orders_by_document_frequency() {
        let corpus = docs(&["a b", "a"]);
        let v = fit_tfidf(&corpus).unwrap();
        assert_eq!(v.terms(), &["a".to_string(), "b".to_string()]);
        // ln(3/3) + 1 and ln(3/2) + 1
        assert!((v.idf("a").unwrap() - 1.0).abs() < 1e-12);
        assert!((v.idf("b").unwrap() - (1.5f64.ln() + 1.0)).abs() < 1e-12);
        assert!(v.idf("a").unwrap() < v.idf("b").unwrap());
    }

    #[test]
    fn symmetric_corpora_share_idf() {
        let v = fit_tfidf(&docs(&["x y z"])).unwrap();
        assert!(v.terms().iter().all(|t| v.idf(t) == v.idf("x")));
        let v = fit_tfidf(&docs(&["p q", "p q", "p q"])).unwrap();
        assert_eq!(v.idf("p"), v.idf("q"));
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(fit_tfidf(&Vec::<CleanText>::new()).is_err());
    }

    #[test]
    fn transform_rules() {
        let corpus = docs(&["a b", "a"]);
        let v = fit_tfidf(&corpus).unwrap();
        let oov = tfidf_transform(&v, &clean_text("zzz qqq"));
        assert_eq!(oov.dim, 2);
        assert!(oov.entries.is_empty());

        let x = tfidf_transform(&v, &clean_text("a a b"));
        let ratio = x.get(0) / x.get(1);
        let expected = 2.0 * v.idf("a").unwrap() / v.idf("b").unwrap();
        assert!((ratio - expected).abs() < 1e-12);
        assert!(x.entries.iter().all(|&(_, e)| e >= 0.0));
    }

    #[test]
    fn transform_matches_training_rows() {
        let corpus = docs(&["red fish blue fish", "one fish"]);
        let v = fit_tfidf(&corpus).unwrap();
        let rows: Vec<_> = corpus.iter().map(|d| tfidf_transform(&v, d)).collect();
        assert_eq!(tfidf_transform(&v, &corpus[0]), rows[0]);
    }

    #[test]
    fn json_round_trip_and_fingerprint() {
        let v = fit_tfidf(&docs(&["the cat sat", "the dog"])).unwrap();
        let back = TfidfVocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn fitting_is_order_independent() {
        let train = docs(&["alpha beta", "beta gamma"]);
        let mut reversed = train.clone();
        reversed.reverse();
        assert_eq!(
            fit_tfidf(&reversed).unwrap().fingerprint(),
            fit_tfidf(&train).unwrap().fingerprint()
        );
    }
}
