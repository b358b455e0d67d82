use entroseg::corpus::{self, Corpus, Vocabulary};
use entroseg::{EntropyScale, EntropyTrace, Tier, TokenSequence};
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn token_fixture_has_three_sequences() {
    let c = corpus::read_token_corpus(fixture("tiny.tok"), None, None).unwrap();
    let lens: Vec<usize> = c.sequences.iter().map(TokenSequence::len).collect();
    assert_eq!(lens, vec![4, 1, 6]);
    assert_eq!(c.vocab.size(), 8);
    assert_eq!(c.frame_rate_hz, 50.0);
    let c = corpus::read_token_corpus(fixture("tiny.tok"), None, Some(25.0)).unwrap();
    assert_eq!(c.sequences[2].duration_s(), 6.0 / 25.0);
}

#[test]
fn alignment_fixture_tier_counts() {
    let a = corpus::read_alignment(fixture("cat_sat.csv")).unwrap();
    assert_eq!(a.tier(Tier::Word).len(), 4);
    assert_eq!(a.tier(Tier::Phoneme).len(), 11);
    assert_eq!(a.boundaries(Tier::Word), vec![0.0, 0.12, 0.40, 0.72, 0.80, 1.10]);
}

#[test]
fn file_errors_carry_the_path() {
    let err = corpus::read_token_corpus(fixture("tiny.tok"), Some(Vocabulary::new(4).unwrap()), None).unwrap_err();
    assert!(err.to_string().contains("tiny.tok"), "{err}");
    let err = corpus::read_token_corpus(fixture("missing.tok"), None, None).unwrap_err();
    assert_eq!(err.kind(), entroseg::ErrorKind::Io);
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (2usize..50, prop_oneof![Just(50.0), Just(25.0), 1.0..200.0f64]).prop_flat_map(|(k, rate)| {
        prop::collection::vec(
            (
                prop_oneof![Just(String::new()), "[a-z0-9_]{1,8}"],
                prop::collection::vec(0..k as u32, 1..30),
            ),
            1..6,
        )
        .prop_map(move |seqs| Corpus {
            vocab: Vocabulary::new(k).unwrap(),
            frame_rate_hz: rate,
            sequences: seqs
                .into_iter()
                .map(|(id, t)| TokenSequence::new(id, t, rate).unwrap())
                .collect(),
        })
    })
}

proptest! {
    #[test]
    fn corpus_round_trip(c in corpus_strategy()) {
        let text = corpus::format_token_corpus(&c);
        prop_assert_eq!(corpus::parse_token_corpus(&text, None, None).unwrap(), c);
    }

    #[test]
    fn trace_round_trip_is_exact(values in prop::collection::vec(0.0..=1.0f64, 1..40), raw in any::<bool>()) {
        let scale = if raw { EntropyScale::NatsRaw } else { EntropyScale::Normalized };
        let t = EntropyTrace::new("x", values, scale).unwrap();
        let text = corpus::format_trace_set(std::slice::from_ref(&t));
        prop_assert_eq!(corpus::parse_trace_set(&text).unwrap(), vec![t]);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "(#k=[0-9]{1,2} rate=[0-9.]{1,4}\n)?([a-z0-9| .-]{0,20}\n){0,6}") {
        let _ = corpus::parse_token_corpus(&text, None, None);
        let _ = corpus::parse_trace_set(&text);
        let _ = corpus::parse_alignment(&text);
    }

    #[test]
    fn out_of_range_ids_are_rejected(k in 2usize..20, extra in 0u32..5) {
        let text = format!("0 {}\n", k as u32 + extra);
        prop_assert!(corpus::parse_token_corpus(&text, Some(Vocabulary::new(k).unwrap()), None).is_err());
    }
}
