use std::sync::OnceLock;

use aho_corasick::AhoCorasick;
use regex::Regex;

use crate::domain::{SlotAnnotation, Span};
use crate::generator::{parse_pattern, Segment, TemplateSet};

use super::{Gazetteer, SluPrediction, SluStrategy};

pub const UNKNOWN_INTENT: &str = "unknown";

/// Pattern-derived slots beat gazetteer hits on identical spans (a mode
/// word followed by "distance" is a distance kind, not a travel mode).
const PATTERN_PRIORITY: u8 = 9;

fn type_priority(slot_type: &str) -> u8 {
    match slot_type {
        "community_name" => 6,
        "poi_name" => 5,
        "district" => 4,
        "city" => 3,
        "poi_label" => 2,
        "transport_mode" => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    start: usize,
    end: usize,
    slot_type: String,
    value: String,
    priority: u8,
}

fn numeric_patterns() -> &'static [(Regex, &'static str)] {
    static P: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    P.get_or_init(|| {
        [
            (r"\b(\d+) yuan\b", "price"),
            (r"\b(\d+) meters\b", "radius"),
            (r"\b(\d+) minutes\b", "duration_limit"),
            (r"\b([1-3]) (?:nearest|closest)\b", "count_limit"),
            (r"\b(straight-line|walking|driving) distance\b", "distance_kind"),
        ]
        .into_iter()
        .map(|(p, t)| (Regex::new(p).expect("slot pattern"), t))
        .collect()
    })
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !matches!(c as u32, 0x3400..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

struct Signature {
    regex: Regex,
    literal_len: usize,
    intents: Vec<String>,
}

/// Deterministic baseline: gazetteer longest match for names, regular
/// expressions for numbers and units, and intents from question-shape
/// signatures with a slot-combination fallback.
pub struct LexiconSlu {
    gazetteer: Gazetteer,
    matcher: Option<AhoCorasick>,
    patterns: Vec<(String, String)>,
    signatures: Vec<Signature>,
}

impl LexiconSlu {
    pub fn new(gazetteer: Gazetteer, templates: &TemplateSet) -> Self {
        let patterns: Vec<(String, String)> = gazetteer.iter().map(|(t, v)| (t.to_string(), v.to_string())).collect();
        let matcher = if patterns.is_empty() {
            None
        } else {
            Some(AhoCorasick::new(patterns.iter().map(|(_, v)| v.as_str())).expect("gazetteer automaton"))
        };
        let mut signatures = Vec::new();
        for t in templates {
            let Ok(segments) = parse_pattern(&t.question) else { continue };
            let mut re = String::from("^");
            let mut literal_len = 0;
            for seg in segments {
                match seg {
                    Segment::Text(s) => {
                        literal_len += s.chars().count();
                        re.push_str(&regex::escape(&s));
                    }
                    Segment::Ref { .. } => re.push_str("(.+?)"),
                }
            }
            re.push('$');
            if let Ok(regex) = Regex::new(&re) {
                signatures.push(Signature {
                    regex,
                    literal_len,
                    intents: t.intents.clone(),
                });
            }
        }
        LexiconSlu {
            gazetteer,
            matcher,
            patterns,
            signatures,
        }
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }

    fn candidates(&self, question: &str) -> Vec<Candidate> {
        // byte offset -> char offset
        let mut char_at = vec![0usize; question.len() + 1];
        let mut n = 0;
        for (b, _) in question.char_indices() {
            char_at[b] = n;
            n += 1;
        }
        char_at[question.len()] = n;
        let chars: Vec<char> = question.chars().collect();
        let bounded = |s: usize, e: usize| -> bool {
            let left_ok = s == 0 || !(is_word_char(chars[s - 1]) && is_word_char(chars[s]));
            let right_ok = e == chars.len() || !(is_word_char(chars[e - 1]) && is_word_char(chars[e]));
            left_ok && right_ok
        };
        let mut out = Vec::new();
        if let Some(m) = &self.matcher {
            for hit in m.find_overlapping_iter(question) {
                let (t, v) = &self.patterns[hit.pattern().as_usize()];
                let (s, e) = (char_at[hit.start()], char_at[hit.end()]);
                if s < e && bounded(s, e) {
                    out.push(Candidate {
                        start: s,
                        end: e,
                        slot_type: t.clone(),
                        value: v.clone(),
                        priority: type_priority(t),
                    });
                }
            }
        }
        for (re, slot_type) in numeric_patterns() {
            for c in re.captures_iter(question) {
                let g = c.get(1).expect("capture group 1");
                out.push(Candidate {
                    start: char_at[g.start()],
                    end: char_at[g.end()],
                    slot_type: slot_type.to_string(),
                    value: g.as_str().to_string(),
                    priority: PATTERN_PRIORITY,
                });
            }
        }
        out
    }

    /// Longest match wins; equal lengths go to the earliest span, then to
    /// the higher-priority slot type.
    pub fn slots(&self, question: &str) -> Vec<SlotAnnotation> {
        let mut cands = self.candidates(question);
        cands.sort_by(|a, b| {
            (b.end - b.start)
                .cmp(&(a.end - a.start))
                .then(a.start.cmp(&b.start))
                .then(b.priority.cmp(&a.priority))
                .then(a.slot_type.cmp(&b.slot_type))
        });
        let mut chosen: Vec<Candidate> = Vec::new();
        for c in cands {
            if chosen.iter().all(|k| c.end <= k.start || c.start >= k.end) {
                chosen.push(c);
            }
        }
        chosen.sort_by_key(|c| c.start);
        chosen
            .into_iter()
            .map(|c| SlotAnnotation {
                slot_type: c.slot_type,
                value: c.value,
                span: Span { start: c.start, end: c.end },
            })
            .collect()
    }

    pub fn intents(&self, question: &str, slots: &[SlotAnnotation]) -> Vec<String> {
        // Most literal text wins; the earlier template wins ties.
        let mut best: Option<&Signature> = None;
        for s in self.signatures.iter().filter(|s| s.regex.is_match(question)) {
            if best.is_none_or(|b| s.literal_len > b.literal_len) {
                best = Some(s);
            }
        }
        if let Some(s) = best {
            return s.intents.clone();
        }
        fallback_intents(question, slots)
    }
}

fn fallback_intents(question: &str, slots: &[SlotAnnotation]) -> Vec<String> {
    let count = |t: &str| slots.iter().filter(|s| s.slot_type == t).count();
    let q = question.to_lowercase();
    let has = |w: &str| q.contains(w);
    let one = |s: &str| vec![s.to_string()];
    let (communities, modes) = (count("community_name"), count("transport_mode"));
    if has("rush") {
        return if modes >= 2 {
            vec!["rush_hour_commute".into(), "commute_comparison".into()]
        } else {
            one("rush_hour_commute")
        };
    }
    if count("distance_kind") > 0 || has("distance") {
        return one("distance_inquiry");
    }
    if count("duration_limit") > 0 {
        return one("commute_threshold");
    }
    if count("count_limit") > 0 {
        return one(if modes > 0 { "nearest_amenity_commute" } else { "amenity_proximity" });
    }
    if count("poi_label") > 0 {
        return one(if count("radius") > 0 { "amenity_count" } else { "amenity_listing" });
    }
    if count("price") > 0 {
        return one("price_filter");
    }
    if communities >= 2 && modes > 0 {
        return one(if communities >= 3 { "commute_comparison" } else { "commute_burden" });
    }
    if communities >= 2 {
        return one("price_comparison");
    }
    if communities == 1 && count("poi_name") > 0 && modes > 0 {
        return one("commute_time");
    }
    if has("greening") || has("green") {
        return one("greening_inquiry");
    }
    if count("district") > 0 {
        return one("community_count");
    }
    if communities == 1 && has("price") {
        return one("price_inquiry");
    }
    if communities == 1 && has("how many") {
        return one("neighborhood_density");
    }
    one(UNKNOWN_INTENT)
}

impl SluStrategy for LexiconSlu {
    fn name(&self) -> String {
        "lexicon".into()
    }

    fn predict(&self, question: &str) -> SluPrediction {
        let slots = self.slots(question);
        let intents = self.intents(question, &slots);
        SluPrediction { intents, slots }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slu() -> LexiconSlu {
        let mut g = Gazetteer::new();
        for (t, v) in [
            ("city", "Guangzhou"),
            ("district", "Tianhe"),
            ("community_name", "Oak Garden"),
            ("community_name", "Tianhe Court"),
            ("poi_name", "Lotus Park"),
            ("poi_label", "park"),
            ("transport_mode", "walking"),
            ("transport_mode", "driving"),
        ] {
            g.insert(t, v);
        }
        LexiconSlu::new(g, &TemplateSet::default_set())
    }

    #[test]
    fn single_community_hit() {
        let p = slu().predict("What is the average price of Oak Garden in Guangzhou?");
        assert_eq!(p.intents, ["price_inquiry"]);
        let s: Vec<(&str, &str)> = p.slots.iter().map(|s| (s.slot_type.as_str(), s.value.as_str())).collect();
        assert_eq!(s, [("community_name", "Oak Garden"), ("city", "Guangzhou")]);
        p.check("What is the average price of Oak Garden in Guangzhou?").unwrap();
    }

    #[test]
    fn no_hits_is_unknown() {
        let p = slu().predict("Is it going to rain tomorrow?");
        assert!(p.slots.is_empty());
        assert_eq!(p.intents, [UNKNOWN_INTENT]);
    }

    #[test]
    fn longest_match_and_distance_kind() {
        let q = "What is the walking distance between Tianhe Court and Lotus Park in Guangzhou?";
        let p = slu().predict(q);
        let s: Vec<(&str, &str)> = p.slots.iter().map(|s| (s.slot_type.as_str(), s.value.as_str())).collect();
        assert_eq!(
            s,
            [("distance_kind", "walking"), ("community_name", "Tianhe Court"), ("poi_name", "Lotus Park"), ("city", "Guangzhou")]
        );
        assert_eq!(p.intents, ["distance_inquiry"]);
        p.check(q).unwrap();
    }

    #[test]
    fn word_boundaries_and_numbers() {
        let q = "What are the 2 nearest park POIs within 3000 meters of Oak Garden in Guangzhou?";
        let p = slu().predict(q);
        let s: Vec<(&str, &str)> = p.slots.iter().map(|s| (s.slot_type.as_str(), s.value.as_str())).collect();
        assert_eq!(
            s,
            [("count_limit", "2"), ("poi_label", "park"), ("radius", "3000"), ("community_name", "Oak Garden"), ("city", "Guangzhou")]
        );
        // "parking" must not yield the label "park"
        assert!(slu().slots("Is parking free?").is_empty());
    }

    #[test]
    fn fallback_on_paraphrase() {
        let p = slu().predict("Oak Garden to Lotus Park by driving, how long in Guangzhou?");
        assert_eq!(p.intents, ["commute_time"]);
    }
}
