use std::collections::HashMap;

use super::Catalog;

/// TF-IDF vectors over lowercased alphanumeric word tokens.
///
/// Weight of term t in document d: `count(t, d) * idf(t)` with the smoothed
/// `idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1`. Similarity is the cosine
/// of two weight vectors; an empty vector has similarity 0 with anything.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vectors: Vec<Vec<(usize, f64)>>,
    norms: Vec<f64>,
}

pub(crate) fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl TfIdfIndex {
    pub fn new<S: AsRef<str>>(documents: &[S]) -> Self {
        let mut vocab: HashMap<String, usize> = HashMap::new();
        let docs: Vec<Vec<usize>> = documents
            .iter()
            .map(|d| {
                word_tokens(d.as_ref())
                    .into_iter()
                    .map(|w| {
                        let next = vocab.len();
                        *vocab.entry(w).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        let mut df = vec![0usize; vocab.len()];
        for doc in &docs {
            let mut terms = doc.clone();
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                df[t] += 1;
            }
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&f| ((1.0 + n) / (1.0 + f as f64)).ln() + 1.0)
            .collect();
        let vectors: Vec<Vec<(usize, f64)>> = docs
            .iter()
            .map(|doc| {
                let mut counts: Vec<(usize, f64)> = Vec::new();
                let mut sorted = doc.clone();
                sorted.sort_unstable();
                for t in sorted {
                    match counts.last_mut() {
                        Some((last, c)) if *last == t => *c += 1.0,
                        _ => counts.push((t, 1.0)),
                    }
                }
                counts.into_iter().map(|(t, c)| (t, c * idf[t])).collect()
            })
            .collect();
        let norms = vectors
            .iter()
            .map(|v| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt())
            .collect();
        Self { vectors, norms }
    }

    pub fn from_catalog(catalog: &Catalog) -> Self {
        let texts: Vec<String> = catalog.items.iter().map(|i| i.text()).collect();
        Self::new(&texts)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.norms[a], self.norms[b]);
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let (va, vb) = (&self.vectors[a], &self.vectors[b]);
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < va.len() && j < vb.len() {
            match va[i].0.cmp(&vb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += va[i].1 * vb[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Cosine TF-IDF similarity of two catalog items under `index`.
pub fn text_similarity(index: &TfIdfIndex, item_a: usize, item_b: usize) -> f64 {
    index.similarity(item_a, item_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint_texts() {
        let idx = TfIdfIndex::new(&["Green Tea", "green tea", "Dark Roast"]);
        assert!((idx.similarity(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(idx.similarity(0, 2), 0.0);
        assert_eq!(idx.similarity(1, 0), idx.similarity(0, 1));
    }

    #[test]
    fn empty_text_scores_zero() {
        let idx = TfIdfIndex::new(&["", "red apple", "!!!"]);
        assert_eq!(idx.similarity(0, 1), 0.0);
        assert_eq!(idx.similarity(2, 2), 0.0);
    }

    #[test]
    fn two_document_hand_computation() {
        // n = 2; df(red) = 2, df(apple) = df(berry) = 1.
        // idf(red) = ln(3/3) + 1 = 1, idf(apple) = idf(berry) = ln(3/2) + 1.
        // cos = 1 / (1 + idf(apple)^2).
        let idx = TfIdfIndex::new(&["red apple", "red berry"]);
        let idf_rare = (1.5f64).ln() + 1.0;
        let expected = 1.0 / (1.0 + idf_rare * idf_rare);
        assert!((idx.similarity(0, 1) - expected).abs() < 1e-12);
        assert!((expected - 0.336_096_9).abs() < 1e-6);
    }
}
