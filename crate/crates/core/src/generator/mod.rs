//! QA instance generation: template sampling, trace construction,
//! plausibility filtering, validation and stratified splitting.

mod instantiate;
mod paraphrase;
mod split;
mod template;
mod validate;

pub use instantiate::{
    instantiate, plausibility_filter, render, render_question, resolve_rule, sample_bindings, Bindings,
    Instantiated, RejectReason, Rejection, CYCLING_LIMIT_M, WALKING_LIMIT_M,
};
pub use paraphrase::{paraphrase_hook, relocate_slots};
pub use split::{allocate, stratified_split, Split, SplitSpec};
pub use template::{
    parse_pattern, AnswerSource, AnswerSpec, ForEach, PlaceholderKind, PlaceholderSpec, ResolvedRule, Segment,
    Template, TemplateError, TemplateSet, ToolPattern,
};
pub use validate::{validate_dataset, validate_instance, Mismatch, ValidationReport};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::QAInstance;
use crate::store::GeoStore;
use crate::tools::ToolCache;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub attempts_per_template: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            attempts_per_template: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl Tally {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    fn reject(&mut self, r: RejectReason) {
        *self.rejected.entry(r).or_default() += 1;
    }
}

/// Attempt accounting; `attempted == accepted + rejected` overall and per
/// template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub total: Tally,
    pub per_template: BTreeMap<String, Tally>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub instances: Vec<QAInstance>,
    pub report: GenerationReport,
}

/// Stable per-template stream so adding a template does not perturb the
/// others.
fn template_seed(seed: u64, template_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in template_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    seed ^ h
}

/// Generate instances for every template. A pure function of (store,
/// templates, seed) when `cache` is backed by a deterministic provider.
pub fn generate(templates: &TemplateSet, store: &GeoStore, cache: &ToolCache, config: &GeneratorConfig) -> GenerationOutput {
    let mut report = GenerationReport {
        seed: config.seed,
        ..Default::default()
    };
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut instances = Vec::new();
    for t in templates {
        let mut rng = ChaCha8Rng::seed_from_u64(template_seed(config.seed, &t.id));
        let mut tally = Tally::default();
        for _ in 0..config.attempts_per_template {
            tally.attempted += 1;
            let outcome = sample_bindings(t, store, &mut rng)
                .and_then(|b| instantiate(t, &b, store, cache))
                .and_then(|inst| plausibility_filter(&inst.instance).map(|_| inst));
            match outcome {
                Ok(inst) => {
                    let mut instance = inst.instance;
                    if !seen.insert(instance.question.clone()) {
                        tally.reject(RejectReason::Duplicate);
                        continue;
                    }
                    instance.id = format!("{}-{:05}", t.id, tally.accepted + 1);
                    tally.accepted += 1;
                    instances.push(instance);
                }
                Err(rej) => {
                    log::debug!("{}: {}", t.id, rej);
                    tally.reject(rej.reason);
                }
            }
        }
        report.total.attempted += tally.attempted;
        report.total.accepted += tally.accepted;
        for (r, n) in &tally.rejected {
            *report.total.rejected.entry(*r).or_default() += n;
        }
        report.per_template.insert(t.id.clone(), tally);
    }
    GenerationOutput { instances, report }
}
