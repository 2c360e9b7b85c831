use async_trait::async_trait;
use futures::executor::block_on;
use proptest::prelude::*;
use rolecast_core::gateway::GatewayError;
use rolecast_core::memory::{maybe_consolidate, Summarizer};
use rolecast_core::metrics::{align_unigrams, cosine, meteor, Embedder, HashingEmbedder};
use rolecast_core::state::{InterlocutorUpdate, StateDelta};
use rolecast_core::{apply_state_delta, new_character_state, CharacterProfile, ConversationLog, Emotion, MemoryList, Turn};

const VOCAB: &[&str] = &["the", "cat", "cats", "sat", "on", "mat", "run", "runs", "running", "a", "dog", "Dog,"];

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB), 0..12).prop_map(|w| w.join(" "))
}

/// Returns a multi-line summary whose length depends on the input, so the
/// normalization paths get exercised.
struct Chatty;

#[async_trait]
impl Summarizer for Chatty {
    async fn summarize(&self, turns: &[Turn]) -> Result<String, GatewayError> {
        let words: Vec<&str> = turns.iter().flat_map(|t| t.text.split_whitespace()).collect();
        Ok(words.chunks(7).map(|c| c.join(" ")).collect::<Vec<_>>().join("\n"))
    }
}

proptest! {
    #[test]
    fn meteor_score_invariants(c in text(), r in text()) {
        let s = meteor(&c, &r);
        prop_assert!((0.0..=1.0).contains(&s.score));
        prop_assert!((0.0..=0.5).contains(&s.penalty));
        prop_assert!(s.chunks <= s.matches);
        prop_assert!((s.score - s.f_mean * (1.0 - s.penalty)).abs() < 1e-12);
    }

    #[test]
    fn alignment_is_injective_and_sorted(c in text(), r in text()) {
        let toks = |s: &str| rolecast_core::tokenize::metric_tokens(s);
        let a = align_unigrams(&toks(&c), &toks(&r));
        let mut cs: Vec<usize> = a.pairs.iter().map(|p| p.candidate).collect();
        let mut rs: Vec<usize> = a.pairs.iter().map(|p| p.reference).collect();
        prop_assert!(cs.windows(2).all(|w| w[0] < w[1]));
        rs.sort_unstable();
        rs.dedup();
        cs.dedup();
        prop_assert_eq!(rs.len(), cs.len());
    }

    #[test]
    fn meteor_identity_for_distinct_tokens(m in 1usize..40) {
        let text: Vec<String> = (0..m).map(|i| format!("w{i}")).collect();
        let text = text.join(" ");
        let s = meteor(&text, &text);
        let expected = 1.0 - 0.5 * (1.0 / m as f64).powi(3);
        prop_assert!((s.score - expected).abs() < 1e-12);
    }

    #[test]
    fn mock_embedding_properties(a in text(), b in text()) {
        let e = HashingEmbedder::default();
        let va = block_on(e.embed(&a)).unwrap();
        let vb = block_on(e.embed(&b)).unwrap();
        prop_assert!(va.norm == 0.0 || (va.norm - 1.0).abs() < 1e-12);
        let sim = cosine(&va, &vb);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&sim));
        let reversed: Vec<&str> = a.split_whitespace().rev().collect();
        let vr = block_on(e.embed(&reversed.join(" "))).unwrap();
        prop_assert_eq!(va.values, vr.values);
    }

    #[test]
    fn memory_stays_bounded(
        lengths in prop::collection::vec(1usize..40, 1..120),
        threshold in 5usize..200,
        retain in 0usize..4,
    ) {
        let mut log = ConversationLog::new(threshold, retain).unwrap();
        let mut memory = MemoryList::default();
        for (i, n) in lengths.iter().enumerate() {
            let text = vec!["word"; *n].join(" ");
            log = log.record_turn(Turn::new(if i % 2 == 0 { "A" } else { "B" }, text).unwrap());
            let before = memory.len();
            let c = block_on(maybe_consolidate(&log, &memory, &Chatty)).unwrap();
            prop_assert_eq!(c.memory.len(), before + usize::from(c.consolidated));
            log = c.log;
            memory = c.memory;
            prop_assert!(log.total_tokens() <= threshold);
            prop_assert!(memory.entries().iter().all(|e| !e.contains('\n')));
        }
    }

    #[test]
    fn deltas_keep_state_valid(
        fav in -5.0f64..5.0,
        intensities in prop::collection::vec(0.0f64..=1.0, 0..10),
    ) {
        let state = new_character_state(CharacterProfile::new("Ann", ["calm"]), "Ben", None, None).unwrap();
        let emotions: Vec<Emotion> =
            intensities.iter().enumerate().map(|(i, x)| Emotion::new(format!("e{i}"), *x)).collect();
        let delta = StateDelta {
            senses: None,
            emotions: Some(emotions),
            interlocutor: Some(InterlocutorUpdate { relationship: None, favorability: Some(fav), new_experiences: vec![] }),
        };
        let next = apply_state_delta(&state, &delta).unwrap();
        prop_assert!((-1.0..=1.0).contains(&next.interlocutor.favorability));
        prop_assert!(next.emotions.emotions.len() <= next.emotions.capacity);
        prop_assert!(rolecast_core::state::validate_state(&next).is_empty());
        prop_assert_eq!(state.interlocutor.favorability, 0.0);
    }
}
