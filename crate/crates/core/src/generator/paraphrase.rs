use crate::agent::backend::{call_backend, ChatBackend, StageContext, Stage};
use crate::agent::prompts;
use crate::domain::{QAInstance, SlotAnnotation, Span};

/// Find every slot value in `question`, in the original slot order, each
/// occurrence after the previous one and without overlap. `None` when any
/// value is missing.
pub fn relocate_slots(question: &str, slots: &[SlotAnnotation]) -> Option<Vec<SlotAnnotation>> {
    let chars: Vec<char> = question.chars().collect();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::with_capacity(slots.len());
    for s in slots {
        let v: Vec<char> = s.value.chars().collect();
        if v.is_empty() || v.len() > chars.len() {
            return None;
        }
        let start = (0..=chars.len() - v.len())
            .find(|&i| chars[i..i + v.len()] == v[..] && taken.iter().all(|&(a, b)| i + v.len() <= a || i >= b))?;
        taken.push((start, start + v.len()));
        out.push(SlotAnnotation {
            slot_type: s.slot_type.clone(),
            value: s.value.clone(),
            span: Span {
                start,
                end: start + v.len(),
            },
        });
    }
    out.sort_by_key(|s| s.span.start);
    Some(out)
}

/// Ask the backend for a more natural wording. The rewrite is kept only
/// if every slot value survives verbatim; otherwise, or on any backend
/// failure, the instance is returned unchanged.
pub fn paraphrase_hook(instance: &QAInstance, backend: &dyn ChatBackend) -> QAInstance {
    let protected: Vec<&str> = instance.slots.iter().map(|s| s.value.as_str()).collect();
    let user = format!(
        "Question: {}\nProtected values: {}",
        instance.question,
        protected.join(" | ")
    );
    let ctx = StageContext {
        question: instance.question.clone(),
        intents: instance.intents.clone(),
        slots: instance.slots.clone(),
        ..Default::default()
    };
    let mut log = Vec::new();
    let text = match call_backend(backend, Stage::Paraphrase, prompts::PARAPHRASE, user, ctx, &mut log) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("paraphrase of {} failed: {e}", instance.id);
            return instance.clone();
        }
    };
    let rewrite = text
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("REWRITE:").map(|r| r.trim().to_string()))
        .filter(|r| !r.is_empty());
    let Some(rewrite) = rewrite else {
        log::warn!("paraphrase of {} had no REWRITE line", instance.id);
        return instance.clone();
    };
    match relocate_slots(&rewrite, &instance.slots) {
        Some(slots) => {
            let mut out = instance.clone();
            out.question = rewrite;
            out.slots = slots;
            out
        }
        None => {
            log::warn!("paraphrase of {} dropped a slot value; original kept", instance.id);
            instance.clone()
        }
    }
}
