use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::backend::{call_backend, ChatBackend, StageContext, Stage};
use crate::agent::prompts;
use crate::domain::{QAInstance, SlotAnnotation, Span};

use super::{SluPrediction, SluStrategy};

pub const DEFAULT_SHOTS: usize = 26;

#[derive(Debug, Clone, PartialEq)]
struct Shot {
    question: String,
    prediction: SluPrediction,
}

/// Envelope the prompt asks for:
///
/// ```text
/// INTENTS: a, b
/// SLOT community_name: Oak Garden
/// ```
pub fn format_slu_output(p: &SluPrediction) -> String {
    let mut out = format!("INTENTS: {}\n", p.intents.join(", "));
    for s in &p.slots {
        out.push_str(&format!("SLOT {}: {}\n", s.slot_type, s.value));
    }
    out
}

/// Parse the envelope and locate each value in `question`, scanning
/// forward so repeated values get successive occurrences. `None` when
/// there is no INTENTS line; values that do not occur are dropped.
pub fn parse_slu_output(question: &str, text: &str) -> Option<SluPrediction> {
    let mut intents: Option<Vec<String>> = None;
    let mut raw_slots: Vec<(String, String)> = Vec::new();
    for line in text.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("INTENTS:") {
            intents = Some(
                rest.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
            );
        } else if let Some(rest) = line.strip_prefix("SLOT ") {
            if let Some((t, v)) = rest.split_once(':') {
                let (t, v) = (t.trim(), v.trim());
                if !t.is_empty() && !v.is_empty() {
                    raw_slots.push((t.to_string(), v.to_string()));
                }
            }
        }
    }
    let intents = intents?;
    let chars: Vec<char> = question.chars().collect();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut slots = Vec::new();
    let find = |value: &[char], from: usize, taken: &[(usize, usize)]| -> Option<usize> {
        if value.is_empty() || value.len() > chars.len() {
            return None;
        }
        (from..=chars.len() - value.len()).find(|&i| {
            chars[i..i + value.len()] == *value && taken.iter().all(|&(s, e)| i + value.len() <= s || i >= e)
        })
    };
    let mut cursor = 0;
    for (t, v) in raw_slots {
        let vc: Vec<char> = v.chars().collect();
        let at = find(&vc, cursor, &taken).or_else(|| find(&vc, 0, &taken));
        match at {
            Some(i) => {
                taken.push((i, i + vc.len()));
                cursor = i + vc.len();
                slots.push(SlotAnnotation {
                    slot_type: t,
                    value: v,
                    span: Span {
                        start: i,
                        end: i + vc.len(),
                    },
                });
            }
            None => log::warn!("slot value '{v}' does not occur in the question; dropped"),
        }
    }
    slots.sort_by_key(|s| s.span.start);
    Some(SluPrediction { intents, slots })
}

/// In-context strategy: a fixed, seeded sample of worked examples that
/// covers every intent in the pool, sent with each question.
pub struct FewShotSlu {
    backend: Arc<dyn ChatBackend>,
    system: String,
    shots: usize,
}

impl FewShotSlu {
    /// Pick `shots` examples from `pool`: one per intent first (in intent
    /// order), then random fill.
    pub fn from_pool(backend: Arc<dyn ChatBackend>, pool: &[QAInstance], shots: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intents: BTreeSet<&str> = pool.iter().flat_map(|i| i.intents.iter().map(String::as_str)).collect();
        let slot_types: BTreeSet<&str> = pool
            .iter()
            .flat_map(|i| i.slots.iter().map(|s| s.slot_type.as_str()))
            .collect();
        let mut picked: Vec<usize> = Vec::new();
        for intent in &intents {
            let having: Vec<usize> = (0..pool.len())
                .filter(|&i| pool[i].intents.iter().any(|x| x == intent) && !picked.contains(&i))
                .collect();
            if let Some(&i) = having.choose(&mut rng) {
                if picked.len() < shots {
                    picked.push(i);
                }
            }
        }
        let mut rest: Vec<usize> = (0..pool.len()).filter(|i| !picked.contains(i)).collect();
        rest.shuffle(&mut rng);
        picked.extend(rest.into_iter().take(shots.saturating_sub(picked.len())));
        let shots: Vec<Shot> = picked
            .into_iter()
            .map(|i| Shot {
                question: pool[i].question.clone(),
                prediction: SluPrediction::gold(&pool[i]),
            })
            .collect();
        let examples: Vec<String> = shots
            .iter()
            .map(|s| format!("Question: {}\n{}", s.question, format_slu_output(&s.prediction)))
            .collect();
        let system = prompts::SLU_FEWSHOT
            .replace("{intents}", &intents.into_iter().collect::<Vec<_>>().join(", "))
            .replace("{slot_types}", &slot_types.into_iter().collect::<Vec<_>>().join(", "))
            .replace("{examples}", &examples.join("\n"));
        FewShotSlu {
            backend,
            system,
            shots: shots.len(),
        }
    }

    pub fn system_prompt(&self) -> &str {
        &self.system
    }

    pub fn example_count(&self) -> usize {
        self.shots
    }
}

impl SluStrategy for FewShotSlu {
    fn name(&self) -> String {
        format!("fewshot:{}", self.backend.name())
    }

    fn predict(&self, question: &str) -> SluPrediction {
        let mut log = Vec::new();
        let ctx = StageContext {
            question: question.to_string(),
            ..Default::default()
        };
        match call_backend(self.backend.as_ref(), Stage::Slu, &self.system, format!("Question: {question}"), ctx, &mut log) {
            Ok(text) => parse_slu_output(question, &text).unwrap_or_else(|| {
                log::warn!("unparseable SLU output for '{question}'");
                SluPrediction::default()
            }),
            Err(e) => {
                log::warn!("SLU backend failed for '{question}': {e}");
                SluPrediction::default()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip() {
        let q = "Is Oak Garden closer than Oak Garden Two?";
        let text = "INTENTS: a, b\nSLOT community_name: Oak Garden\nSLOT community_name: Oak Garden Two\nSLOT city: Paris\n";
        let p = parse_slu_output(q, text).unwrap();
        assert_eq!(p.intents, ["a", "b"]);
        assert_eq!(p.slots.len(), 2);
        assert_eq!(p.slots[0].span, Span { start: 3, end: 13 });
        p.check(q).unwrap();
        assert_eq!(parse_slu_output(q, &format_slu_output(&p)).unwrap(), p);
    }

    #[test]
    fn malformed_is_none() {
        assert!(parse_slu_output("q", "I am not sure.").is_none());
        assert_eq!(parse_slu_output("q", "INTENTS:\n").unwrap(), SluPrediction::default());
    }
}
