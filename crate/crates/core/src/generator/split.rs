use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::QAInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// train : val : test, normalized before use.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [8.0, 1.0, 1.0],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<QAInstance>,
    pub val: Vec<QAInstance>,
    pub test: Vec<QAInstance>,
    pub warnings: Vec<String>,
}

/// Largest-remainder allocation of `n` items to the normalized ratios;
/// remainder ties go to the earlier part.
pub fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = quotas[i].floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Per-template stratified split. Strata with fewer than 3 instances go
/// entirely to train with a warning. Each part is sorted by id.
pub fn stratified_split(instances: &[QAInstance], spec: &SplitSpec) -> Split {
    let mut strata: BTreeMap<&str, Vec<&QAInstance>> = BTreeMap::new();
    for inst in instances {
        strata.entry(inst.template_id.as_str()).or_default().push(inst);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Split::default();
    for (template_id, mut members) in strata {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        if members.len() < 3 {
            out.warnings.push(format!(
                "stratum '{template_id}' has {} instance(s); all assigned to train",
                members.len()
            ));
            out.train.extend(members.into_iter().cloned());
            continue;
        }
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(members.len(), spec.ratios);
        for (i, m) in members.into_iter().enumerate() {
            let part = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            part.push(m.clone());
        }
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_by(|a, b| a.id.cmp(&b.id));
    }
    out
}
