//! Tokenizer round trips, vocabularies and chunk balance.

use blockmix_core::corpus::{
    chunk_balance, detokenize, embedding_savings, pitch_hand_nmi, tokenize, Hand, NoteEvent, Piece, Token, TokenVocab,
};
use blockmix_core::synthgen::random_piece;
use proptest::prelude::*;

#[test]
fn random_pieces_round_trip() {
    for seed in 0..20 {
        let piece = random_piece(200, 0.0, seed).unwrap();
        let tokens = tokenize(&piece);
        assert_eq!(tokens.first(), Some(&Token::Sos));
        assert_eq!(tokens.last(), Some(&Token::Eos));
        assert_eq!(detokenize(&tokens).unwrap(), piece);
    }
}

#[test]
fn token_text_round_trip_through_vocab() {
    let pieces: Vec<Piece> = (0..5).map(|s| random_piece(100, 0.2, s).unwrap()).collect();
    let vocab = TokenVocab::from_pieces(&pieces);
    for p in &pieces {
        let t = tokenize(p);
        let ids = vocab.encode(&t);
        assert_eq!(vocab.decode(&ids).unwrap(), t);
        let names: Vec<String> = t.iter().map(ToString::to_string).collect();
        let parsed: Vec<Token> = names.iter().map(|n| n.parse().unwrap()).collect();
        assert_eq!(parsed, t);
    }
    // Tokens never seen become UNK.
    let other = TokenVocab::from_tokens([Token::TimeShift(480)]);
    let ids = other.encode(&[Token::NoteOn { hand: Hand::Rh, pitch: 60 }]);
    assert_eq!(other.decode(&ids).unwrap(), vec![Token::Unk]);
}

#[test]
fn full_vocab_savings() {
    // 176 note-on rows against 88 pitch rows plus 3 hand rows.
    let s = embedding_savings(&TokenVocab::full(), 64).unwrap();
    assert!(s.smart_rows < s.naive_rows);
    assert!(!s.negative_savings);
}

#[test]
fn hand_split_by_register_is_informative() {
    let pieces: Vec<Piece> = (0..10).map(|s| random_piece(300, 0.0, s).unwrap()).collect();
    let n = pitch_hand_nmi(&pieces).unwrap();
    assert!(n.value > 0.2 && n.value < 1.0, "{n:?}");
}

#[test]
fn overlapped_chunks_dilute_a_left_hand_prefix() {
    let pieces: Vec<Vec<Token>> = (0..20).map(|s| tokenize(&random_piece(2000, 0.3, 100 + s).unwrap())).collect();
    let prefix_only = chunk_balance(&pieces, 256, 256).unwrap();
    let overlapped = chunk_balance(&pieces, 256, 64).unwrap();
    let global = overlapped.global_ratio.unwrap();
    assert!(prefix_only.prefix_mean.unwrap() > global + 0.2);
    assert!((overlapped.all_chunk_mean.unwrap() - global).abs() <= 0.02);
}

fn arb_piece() -> impl Strategy<Value = Piece> {
    prop::collection::vec((0u64..2000, 1u64..600, 21u8..=108, any::<bool>()), 0..40).prop_filter_map(
        "overlapping same-key notes",
        |notes| {
            let events = notes
                .into_iter()
                .map(|(onset, duration, pitch, lh)| NoteEvent {
                    onset,
                    duration,
                    pitch,
                    hand: if lh { Hand::Lh } else { Hand::Rh },
                })
                .collect();
            Piece::new(events).ok()
        },
    )
}

proptest! {
    #[test]
    fn tokenize_detokenize_identity(piece in arb_piece()) {
        prop_assert_eq!(detokenize(&tokenize(&piece)).unwrap(), piece);
    }
}
