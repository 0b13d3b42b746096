use geoqa_core::db_agent::{tokenize, Bm25Index, Bm25Params};
use geoqa_core::store::{TableCaption, TableFamily};
use proptest::prelude::*;

const DOCS: [&str; 3] = ["the cat sat", "the dog sat down", "cat cat dog"];

// Worked by hand: N = 3, avgdl = 10/3, idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
// "cat" and "dog" have df 2 (idf ln 1.6), "down" has df 1 (idf ln(8/3)).
#[test]
fn toy_corpus_matches_hand_computed_scores() {
    let idx = Bm25Index::new(&DOCS, Bm25Params::default());
    let expect = |got: Vec<f64>, want: [f64; 3]| {
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
        }
    };
    expect(idx.scores("cat dog"), [0.4900511774126154, 0.4344571362775708, 1.1550080805255534]);
    expect(idx.scores("sat down"), [0.4900511774126154, 1.3411060256161413, 0.0]);
    // repeated query terms count once
    assert_eq!(idx.scores("cat dog dog"), idx.scores("cat dog"));
    assert_eq!(idx.scores("CAT, dog!"), idx.scores("cat dog"));
    let top = idx.retrieve("cat dog", 1).unwrap();
    assert_eq!(top[0].index, 2);
}

#[test]
fn empty_index_is_an_error() {
    let idx = Bm25Index::new::<&str>(&[], Bm25Params::default());
    assert!(idx.retrieve("anything", 3).is_err());
}

#[test]
fn cjk_runs_become_bigrams() {
    assert_eq!(tokenize("广州小区 Table"), ["广州", "州小", "小区", "table"]);
}

const CITIES: [&str; 8] = ["Guangzhou", "Shenzhen", "Beijing", "Shanghai", "Chengdu", "Hangzhou", "Wuhan", "Xiamen"];

proptest! {
    #[test]
    fn every_caption_retrieves_itself(n in 2usize..=8, rot in 0usize..8) {
        let captions: Vec<String> = (0..n)
            .flat_map(|i| {
                let city = CITIES[(i + rot) % CITIES.len()];
                TableFamily::ALL.into_iter().map(move |f| TableCaption::new(city, f).caption)
            })
            .collect();
        prop_assert!((8..=32).contains(&captions.len()));
        let idx = Bm25Index::new(&captions, Bm25Params::default());
        for (i, c) in captions.iter().enumerate() {
            let top = idx.retrieve(c, 1).unwrap();
            prop_assert_eq!(top[0].index, i, "{}", c);
        }
    }

    #[test]
    fn scores_are_non_negative_and_sized(q in "[a-z ]{0,30}") {
        let idx = Bm25Index::new(&DOCS, Bm25Params::default());
        let s = idx.scores(&q);
        prop_assert_eq!(s.len(), 3);
        prop_assert!(s.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }
}
