use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("the caption index is empty")]
    EmptyIndex,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF | 0x3040..=0x30FF | 0xAC00..=0xD7AF)
}

fn flush_cjk(run: &mut Vec<char>, out: &mut Vec<String>) {
    match run.len() {
        0 => {}
        1 => out.push(run[0].to_string()),
        _ => out.extend(run.windows(2).map(|w| w.iter().collect())),
    }
    run.clear();
}

/// Lowercase, split on anything that is not alphanumeric, and break runs
/// of CJK characters into overlapping bigrams (a lone CJK character is its
/// own token).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut cjk = Vec::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            cjk.push(c);
        } else if c.is_alphanumeric() {
            flush_cjk(&mut cjk, &mut out);
            word.extend(c.to_lowercase());
        } else {
            flush_cjk(&mut cjk, &mut out);
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        }
    }
    flush_cjk(&mut cjk, &mut out);
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored {
    pub index: usize,
    pub caption: String,
    pub score: f64,
}

/// Okapi BM25 over a fixed caption catalog.
///
/// `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`, which keeps every
/// score non-negative. Each distinct query term counts once.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    captions: Vec<String>,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(captions: &[S], params: Bm25Params) -> Self {
        let mut term_freqs = Vec::with_capacity(captions.len());
        let mut doc_lens = Vec::with_capacity(captions.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for c in captions {
            let toks = tokenize(c.as_ref());
            doc_lens.push(toks.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let total: usize = doc_lens.iter().sum();
        let avg_len = if captions.is_empty() { 0.0 } else { total as f64 / captions.len() as f64 };
        Bm25Index {
            params,
            captions: captions.iter().map(|c| c.as_ref().to_string()).collect(),
            term_freqs,
            doc_lens,
            doc_freq,
            avg_len,
        }
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.captions.len() as f64;
        let df = *self.doc_freq.get(term).unwrap_or(&0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document against `query`, in catalog order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        (0..self.captions.len())
            .map(|d| {
                let norm = if self.avg_len > 0.0 { self.doc_lens[d] as f64 / self.avg_len } else { 0.0 };
                terms
                    .iter()
                    .map(|t| {
                        let tf = *self.term_freqs[d].get(t).unwrap_or(&0) as f64;
                        if tf == 0.0 {
                            return 0.0;
                        }
                        self.idf(t) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
                    })
                    .sum()
            })
            .collect()
    }

    /// Top `k` captions by score; ties broken by caption text ascending.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Scored>, RetrievalError> {
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut ranked: Vec<Scored> = self
            .scores(query)
            .into_iter()
            .enumerate()
            .map(|(index, score)| Scored {
                index,
                caption: self.captions[index].clone(),
                score,
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.caption.cmp(&b.caption)));
        ranked.truncate(k.max(1));
        Ok(ranked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Table for POIs in Guangzhou"), ["table", "for", "pois", "in", "guangzhou"]);
        assert_eq!(tokenize("广州小区表"), ["广州", "州小", "小区", "区表"]);
        assert_eq!(tokenize("Table 广 x"), ["table", "广", "x"]);
        assert_eq!(tokenize("a_b-c"), ["a", "b", "c"]);
        assert!(tokenize("  ,. ").is_empty());
    }

    #[test]
    fn empty_index_errors() {
        let idx = Bm25Index::new::<&str>(&[], Bm25Params::default());
        assert_eq!(idx.retrieve("x", 1), Err(RetrievalError::EmptyIndex));
    }

    #[test]
    fn zero_overlap_falls_back_to_lexicographic() {
        let idx = Bm25Index::new(&["b c", "a c", "c d"], Bm25Params::default());
        let r = idx.retrieve("zzz", 3).unwrap();
        assert!(r.iter().all(|s| s.score == 0.0));
        let order: Vec<&str> = r.iter().map(|s| s.caption.as_str()).collect();
        assert_eq!(order, ["a c", "b c", "c d"]);
    }
}
