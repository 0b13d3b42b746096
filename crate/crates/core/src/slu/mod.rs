//! Intent detection and slot filling.
//!
//! Two strategies share one interface: a deterministic lexicon matcher
//! built from the store, and a few-shot prompt sent to a chat backend.
//! Slots are scored at the (type, value) level.

mod fewshot;
mod gazetteer;
mod lexicon;
mod metrics;

pub use fewshot::{format_slu_output, parse_slu_output, FewShotSlu, DEFAULT_SHOTS};
pub use gazetteer::{Gazetteer, GazetteerError, GAZETTEER_VERSION};
pub use lexicon::{LexiconSlu, UNKNOWN_INTENT};
pub use metrics::{prf, slu_metrics, Prf, SluMetrics};

use serde::{Deserialize, Serialize};

use crate::domain::{check_slots, QAInstance, SlotAnnotation};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SluPrediction {
    pub intents: Vec<String>,
    pub slots: Vec<SlotAnnotation>,
}

impl SluPrediction {
    pub fn gold(inst: &QAInstance) -> Self {
        SluPrediction {
            intents: inst.intents.clone(),
            slots: inst.slots.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty() && self.slots.is_empty()
    }

    /// Same span invariants as gold annotations.
    pub fn check(&self, question: &str) -> Result<(), String> {
        check_slots(question, &self.slots)
    }
}

pub trait SluStrategy: Send + Sync {
    fn name(&self) -> String;
    fn predict(&self, question: &str) -> SluPrediction;
}
