use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SluPrediction;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision with no predictions and recall with no gold items are 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SluMetrics {
    pub instances: usize,
    /// Micro-averaged over (instance, intent) pairs.
    pub intent: Prf,
    /// Fraction of instances whose predicted intent set equals gold.
    pub intent_accuracy: f64,
    /// Micro-averaged over (instance, slot type, value) multisets.
    pub slot: Prf,
}

fn multiset<I: IntoIterator<Item = K>, K: Ord>(items: I) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn overlap<K: Ord>(p: &BTreeMap<K, usize>, g: &BTreeMap<K, usize>) -> (usize, usize, usize) {
    let tp: usize = p.iter().map(|(k, n)| (*n).min(*g.get(k).unwrap_or(&0))).sum();
    let np: usize = p.values().sum();
    let ng: usize = g.values().sum();
    (tp, np - tp, ng - tp)
}

pub fn slu_metrics(predictions: &[SluPrediction], golds: &[SluPrediction]) -> Result<SluMetrics, String> {
    if predictions.len() != golds.len() {
        return Err(format!(
            "{} predictions for {} gold instances",
            predictions.len(),
            golds.len()
        ));
    }
    let (mut it, mut ifp, mut ifn) = (0, 0, 0);
    let (mut st, mut sfp, mut sfn) = (0, 0, 0);
    let mut exact = 0;
    for (p, g) in predictions.iter().zip(golds) {
        let pi = multiset(p.intents.iter().cloned().collect::<std::collections::BTreeSet<_>>());
        let gi = multiset(g.intents.iter().cloned().collect::<std::collections::BTreeSet<_>>());
        if pi == gi {
            exact += 1;
        }
        let (a, b, c) = overlap(&pi, &gi);
        it += a;
        ifp += b;
        ifn += c;
        let ps = multiset(p.slots.iter().map(|s| (s.slot_type.clone(), s.value.clone())));
        let gs = multiset(g.slots.iter().map(|s| (s.slot_type.clone(), s.value.clone())));
        let (a, b, c) = overlap(&ps, &gs);
        st += a;
        sfp += b;
        sfn += c;
    }
    Ok(SluMetrics {
        instances: golds.len(),
        intent: prf(it, ifp, ifn),
        intent_accuracy: if golds.is_empty() { 0.0 } else { exact as f64 / golds.len() as f64 },
        slot: prf(st, sfp, sfn),
    })
}
