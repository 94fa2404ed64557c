//! Two-hand note events, their token form, and corpus statistics.
//!
//! Time is measured in ticks, 480 per quarter note. A piece tokenizes as
//! `SOS`, then note-on/note-off tokens interleaved with `TIME_SHIFT` tokens,
//! then `EOS`. Gaps are written greedily with the shift alphabet
//! `{480, 256, 128, ..., 2, 1}`, so any gap is representable. At a given
//! tick all note-offs precede all note-ons, and note-ons keep piece order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::info::{nmi, JointHistogram, Nmi};
use crate::nets::{embedding_comparison, EmbeddingComparison, EmbeddingMode, EmbeddingSpec};
use crate::{Error, Result};

pub const TICKS_PER_QUARTER: u64 = 480;
pub const PITCH_MIN: u8 = 21;
pub const PITCH_MAX: u8 = 108;
pub const PITCH_CARD: usize = (PITCH_MAX - PITCH_MIN + 1) as usize;
/// Time-shift token sizes, largest first.
pub const TIME_SHIFTS: [u32; 10] = [480, 256, 128, 64, 32, 16, 8, 4, 2, 1];
/// Hand factor cardinality: RH, LH and a neutral slot for non-note tokens.
pub const HAND_CARD: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hand {
    #[serde(rename = "RH")]
    Rh,
    #[serde(rename = "LH")]
    Lh,
}

impl Hand {
    pub fn as_str(self) -> &'static str {
        match self {
            Hand::Rh => "RH",
            Hand::Lh => "LH",
        }
    }

    /// Index in the hand factor.
    pub fn index(self) -> usize {
        match self {
            Hand::Rh => 0,
            Hand::Lh => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: u64,
    #[serde(rename = "dur")]
    pub duration: u64,
    pub pitch: u8,
    pub hand: Hand,
}

impl NoteEvent {
    pub fn end(&self) -> u64 {
        self.onset + self.duration
    }
}

/// Notes sorted by onset, ties kept in input order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    events: Vec<NoteEvent>,
}

impl Piece {
    /// Sorts stably by onset and validates: positive durations, pitches in
    /// the piano range, and no key struck again by the same hand while it is
    /// still sounding.
    pub fn new(mut events: Vec<NoteEvent>) -> Result<Self> {
        events.sort_by_key(|e| e.onset);
        let mut sounding: BTreeMap<(Hand, u8), u64> = BTreeMap::new();
        for (i, e) in events.iter().enumerate() {
            if e.duration == 0 {
                return Err(Error::invalid(format!("note {i} has zero duration")));
            }
            if !(PITCH_MIN..=PITCH_MAX).contains(&e.pitch) {
                return Err(Error::invalid(format!("note {i} pitch {} outside {PITCH_MIN}..={PITCH_MAX}", e.pitch)));
            }
            e.onset.checked_add(e.duration).ok_or_else(|| Error::invalid(format!("note {i} ends past u64")))?;
            if let Some(&end) = sounding.get(&(e.hand, e.pitch)) {
                if e.onset < end {
                    return Err(Error::invalid(format!(
                        "note {i}: {} key {} struck at {} while still sounding",
                        e.hand.as_str(),
                        e.pitch,
                        e.onset
                    )));
                }
            }
            sounding.insert((e.hand, e.pitch), e.end());
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[NoteEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Sos,
    Eos,
    Unk,
    NoteOn { hand: Hand, pitch: u8 },
    NoteOff { hand: Hand, pitch: u8 },
    TimeShift(u32),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Pad => f.write_str("PAD"),
            Token::Sos => f.write_str("SOS"),
            Token::Eos => f.write_str("EOS"),
            Token::Unk => f.write_str("UNK"),
            Token::NoteOn { hand, pitch } => write!(f, "{}_NOTE_ON_{pitch}", hand.as_str()),
            Token::NoteOff { hand, pitch } => write!(f, "{}_NOTE_OFF_{pitch}", hand.as_str()),
            Token::TimeShift(t) => write!(f, "TIME_SHIFT_{t}"),
        }
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown token {s:?}"));
        match s {
            "PAD" => return Ok(Token::Pad),
            "SOS" => return Ok(Token::Sos),
            "EOS" => return Ok(Token::Eos),
            "UNK" => return Ok(Token::Unk),
            _ => {}
        }
        if let Some(t) = s.strip_prefix("TIME_SHIFT_") {
            let t: u32 = t.parse().map_err(|_| bad())?;
            return if TIME_SHIFTS.contains(&t) { Ok(Token::TimeShift(t)) } else { Err(bad()) };
        }
        let (hand, rest) = if let Some(r) = s.strip_prefix("RH_") {
            (Hand::Rh, r)
        } else if let Some(r) = s.strip_prefix("LH_") {
            (Hand::Lh, r)
        } else {
            return Err(bad());
        };
        let (on, p) = if let Some(p) = rest.strip_prefix("NOTE_ON_") {
            (true, p)
        } else if let Some(p) = rest.strip_prefix("NOTE_OFF_") {
            (false, p)
        } else {
            return Err(bad());
        };
        let pitch: u8 = p.parse().map_err(|_| bad())?;
        if !(PITCH_MIN..=PITCH_MAX).contains(&pitch) {
            return Err(bad());
        }
        Ok(if on { Token::NoteOn { hand, pitch } } else { Token::NoteOff { hand, pitch } })
    }
}

fn push_gap(out: &mut Vec<Token>, mut gap: u64) {
    for &s in &TIME_SHIFTS {
        while gap >= u64::from(s) {
            out.push(Token::TimeShift(s));
            gap -= u64::from(s);
        }
    }
}

pub fn tokenize(piece: &Piece) -> Vec<Token> {
    // (time, 0 = off / 1 = on, order key, token)
    let mut marks: Vec<(u64, u8, usize, Token)> = Vec::with_capacity(2 * piece.len());
    for (i, e) in piece.events().iter().enumerate() {
        let (hand, pitch) = (e.hand, e.pitch);
        marks.push((e.onset, 1, i, Token::NoteOn { hand, pitch }));
        let key = hand.index() * 256 + usize::from(pitch);
        marks.push((e.end(), 0, key, Token::NoteOff { hand, pitch }));
    }
    marks.sort_by_key(|m| (m.0, m.1, m.2));
    let mut out = vec![Token::Sos];
    let mut now = 0;
    for (t, _, _, tok) in marks {
        push_gap(&mut out, t - now);
        now = t;
        out.push(tok);
    }
    out.push(Token::Eos);
    out
}

/// Inverse of [`tokenize`]. A note-off closes the earliest open note on the
/// same hand and key. `PAD` after `EOS` is ignored.
pub fn detokenize(tokens: &[Token]) -> Result<Piece> {
    if tokens.first() != Some(&Token::Sos) {
        return Err(Error::invalid("token stream does not start with SOS"));
    }
    let mut now: u64 = 0;
    let mut open: BTreeMap<(Hand, u8), Vec<usize>> = BTreeMap::new();
    let mut notes: Vec<(u64, Option<u64>, u8, Hand)> = Vec::new();
    let mut ended = false;
    for (i, &tok) in tokens.iter().enumerate().skip(1) {
        if ended {
            if tok != Token::Pad {
                return Err(Error::invalid(format!("token {i} ({tok}) after EOS")));
            }
            continue;
        }
        match tok {
            Token::Eos => ended = true,
            Token::TimeShift(t) => now += u64::from(t),
            Token::NoteOn { hand, pitch } => {
                open.entry((hand, pitch)).or_default().push(notes.len());
                notes.push((now, None, pitch, hand));
            }
            Token::NoteOff { hand, pitch } => {
                let q = open.get_mut(&(hand, pitch)).filter(|q| !q.is_empty());
                let idx =
                    q.ok_or_else(|| Error::invalid(format!("token {i}: {tok} without a sounding note")))?.remove(0);
                if now == notes[idx].0 {
                    return Err(Error::invalid(format!("token {i}: {tok} closes a zero-length note")));
                }
                notes[idx].1 = Some(now - notes[idx].0);
            }
            Token::Pad | Token::Sos | Token::Unk => {
                return Err(Error::invalid(format!("token {i}: unexpected {tok}")));
            }
        }
    }
    if !ended {
        return Err(Error::invalid("token stream has no EOS"));
    }
    let events = notes
        .into_iter()
        .map(|(onset, dur, pitch, hand)| {
            let duration =
                dur.ok_or_else(|| Error::invalid(format!("{} key {pitch} at {onset} never released", hand.as_str())))?;
            Ok(NoteEvent { onset, duration, pitch, hand })
        })
        .collect::<Result<Vec<_>>>()?;
    Piece::new(events)
}

/// Token to id map with the pitch/hand factorization used by factorized
/// embeddings. Note tokens factor into a content part (on/off and pitch) and
/// a hand part; every other token gets its own content value and the
/// neutral hand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<Token>,
    index: BTreeMap<Token, usize>,
    pitch_map: Vec<usize>,
    hand_map: Vec<usize>,
    pitch_card: usize,
}

impl TokenVocab {
    /// The four specials plus the given tokens, deduplicated and in
    /// canonical order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = Token>) -> Self {
        let mut set: Vec<Token> = [Token::Pad, Token::Sos, Token::Eos, Token::Unk].into_iter().chain(tokens).collect();
        set.sort_unstable();
        set.dedup();
        let index = set.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let mut content: BTreeMap<(u8, u32), usize> = BTreeMap::new();
        let mut pitch_map = Vec::with_capacity(set.len());
        let mut hand_map = Vec::with_capacity(set.len());
        for (i, &t) in set.iter().enumerate() {
            let (key, hand) = match t {
                Token::NoteOn { hand, pitch } => ((0, u32::from(pitch)), hand.index()),
                Token::NoteOff { hand, pitch } => ((1, u32::from(pitch)), hand.index()),
                _ => ((2, i as u32), 2),
            };
            let n = content.len();
            pitch_map.push(*content.entry(key).or_insert(n));
            hand_map.push(hand);
        }
        let pitch_card = content.len();
        Self { tokens: set, index, pitch_map, hand_map, pitch_card }
    }

    /// Every note and time-shift token over the piano range.
    pub fn full() -> Self {
        let mut all = Vec::new();
        for hand in [Hand::Rh, Hand::Lh] {
            for pitch in PITCH_MIN..=PITCH_MAX {
                all.push(Token::NoteOn { hand, pitch });
                all.push(Token::NoteOff { hand, pitch });
            }
        }
        all.extend(TIME_SHIFTS.iter().map(|&t| Token::TimeShift(t)));
        Self::from_tokens(all)
    }

    pub fn from_pieces<'a>(pieces: impl IntoIterator<Item = &'a Piece>) -> Self {
        Self::from_tokens(pieces.into_iter().flat_map(tokenize))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn id(&self, t: Token) -> Option<usize> {
        self.index.get(&t).copied()
    }

    /// Unknown tokens map to `UNK`.
    pub fn encode(&self, tokens: &[Token]) -> Vec<usize> {
        let unk = self.index[&Token::Unk];
        tokens.iter().map(|t| self.id(*t).unwrap_or(unk)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<Token>> {
        ids.iter()
            .map(|&i| self.tokens.get(i).copied().ok_or(Error::TokenOutOfRange { token: i, vocab: self.len() }))
            .collect()
    }

    pub fn pitch_map(&self) -> &[usize] {
        &self.pitch_map
    }

    pub fn hand_map(&self) -> &[usize] {
        &self.hand_map
    }

    pub fn pitch_card(&self) -> usize {
        self.pitch_card
    }

    pub fn embedding_spec(&self, mode: EmbeddingMode, d: usize) -> Result<EmbeddingSpec> {
        EmbeddingSpec::new(mode, d, self.pitch_map.clone(), self.hand_map.clone(), self.pitch_card, HAND_CARD)
    }

    /// Number of note tokens and of distinct content values among them.
    pub fn note_factor_counts(&self) -> (usize, usize) {
        let mut content: Vec<usize> = Vec::new();
        let mut notes = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if matches!(t, Token::NoteOn { .. } | Token::NoteOff { .. }) {
                notes += 1;
                content.push(self.pitch_map[i]);
            }
        }
        content.sort_unstable();
        content.dedup();
        (notes, content.len())
    }
}

/// Embedding parameter savings on the note tokens of `vocab`. Tokens outside
/// the factorization cost one row either way and are left out.
pub fn embedding_savings(vocab: &TokenVocab, d: usize) -> Result<EmbeddingComparison> {
    let (notes, content) = vocab.note_factor_counts();
    embedding_comparison(notes, content, HAND_CARD, d)
}

/// One fixed-length window of a token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub piece: usize,
    pub start: usize,
    /// `chunk_len` tokens, `PAD`-filled at the end.
    pub tokens: Vec<Token>,
    pub lh_note_ons: usize,
    pub note_ons: usize,
}

impl Chunk {
    /// Share of note-ons played by the left hand; `None` without note-ons.
    pub fn lh_ratio(&self) -> Option<f64> {
        (self.note_ons > 0).then(|| self.lh_note_ons as f64 / self.note_ons as f64)
    }
}

/// Left-hand balance of a chunked corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkSummary {
    pub chunk_len: usize,
    pub stride: usize,
    pub chunks: usize,
    /// Mean chunk ratio over all chunks with note-ons.
    pub all_chunk_mean: Option<f64>,
    /// Mean ratio of the first chunk of each piece.
    pub prefix_mean: Option<f64>,
    /// Left-hand share of all note-ons in the corpus.
    pub global_ratio: Option<f64>,
}

fn count_ons(tokens: &[Token]) -> (usize, usize) {
    tokens.iter().fold((0, 0), |(lh, all), t| match t {
        Token::NoteOn { hand: Hand::Lh, .. } => (lh + 1, all + 1),
        Token::NoteOn { .. } => (lh, all + 1),
        _ => (lh, all),
    })
}

/// Windows of `chunk_len` tokens every `stride` tokens, until a window
/// reaches the end of the piece.
pub fn chunk_tokens(pieces: &[Vec<Token>], chunk_len: usize, stride: usize) -> Result<Vec<Chunk>> {
    if chunk_len < 2 {
        return Err(Error::invalid("chunk_len must leave room for SOS and EOS"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let mut out = Vec::new();
    for (p, toks) in pieces.iter().enumerate() {
        let mut start = 0;
        loop {
            let end = (start + chunk_len).min(toks.len());
            let mut tokens = toks[start.min(end)..end].to_vec();
            let (lh_note_ons, note_ons) = count_ons(&tokens);
            tokens.resize(chunk_len, Token::Pad);
            out.push(Chunk { piece: p, start, tokens, lh_note_ons, note_ons });
            if start + chunk_len >= toks.len() {
                break;
            }
            start += stride;
        }
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn chunk_balance(pieces: &[Vec<Token>], chunk_len: usize, stride: usize) -> Result<ChunkSummary> {
    let chunks = chunk_tokens(pieces, chunk_len, stride)?;
    let all_chunk_mean = mean(chunks.iter().filter_map(Chunk::lh_ratio));
    let prefix_mean = mean(chunks.iter().filter(|c| c.start == 0).filter_map(Chunk::lh_ratio));
    let (lh, all) = pieces.iter().fold((0, 0), |(a, b), t| {
        let (x, y) = count_ons(t);
        (a + x, b + y)
    });
    let global_ratio = (all > 0).then(|| lh as f64 / all as f64);
    Ok(ChunkSummary { chunk_len, stride, chunks: chunks.len(), all_chunk_mean, prefix_mean, global_ratio })
}

/// Counts of `(pitch - 21, hand)` over all notes.
pub fn pitch_hand_histogram<'a>(pieces: impl IntoIterator<Item = &'a Piece>) -> JointHistogram {
    let mut h = JointHistogram::new(PITCH_CARD, 2);
    for p in pieces {
        for e in p.events() {
            h.add(usize::from(e.pitch - PITCH_MIN), e.hand.index()).expect("validated pitch");
        }
    }
    h
}

pub fn pitch_hand_nmi<'a>(pieces: impl IntoIterator<Item = &'a Piece>) -> Result<Nmi> {
    nmi(&pitch_hand_histogram(pieces))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureMetrics {
    /// `min(n_RH, n_LH) / max(n_RH, n_LH)`; 0 when a hand is silent.
    pub hand_balance: f64,
    /// Share of beat windows where both hands' top lines move the same way.
    pub contour_score: Option<f64>,
    /// Jaccard overlap of the two hands' onset sets.
    pub rhythm_overlap: Option<f64>,
}

fn top_line(notes: &[&NoteEvent], windows: u64) -> Vec<Option<u8>> {
    (0..windows)
        .map(|w| {
            let (lo, hi) = (w * TICKS_PER_QUARTER, (w + 1) * TICKS_PER_QUARTER);
            notes.iter().filter(|e| e.onset < hi && e.end() > lo).map(|e| e.pitch).max()
        })
        .collect()
}

pub fn texture_metrics(piece: &Piece) -> TextureMetrics {
    let rh: Vec<&NoteEvent> = piece.events().iter().filter(|e| e.hand == Hand::Rh).collect();
    let lh: Vec<&NoteEvent> = piece.events().iter().filter(|e| e.hand == Hand::Lh).collect();
    if rh.is_empty() || lh.is_empty() {
        return TextureMetrics { hand_balance: 0.0, contour_score: None, rhythm_overlap: None };
    }
    let hand_balance = rh.len().min(lh.len()) as f64 / rh.len().max(lh.len()) as f64;

    let end = piece.events().iter().map(NoteEvent::end).max().unwrap_or(0);
    let windows = end.div_ceil(TICKS_PER_QUARTER);
    let (top_r, top_l) = (top_line(&rh, windows), top_line(&lh, windows));
    let dir = |line: &[Option<u8>], w: usize| match (line[w - 1], line[w]) {
        (Some(a), Some(b)) => Some(b.cmp(&a)),
        _ => None,
    };
    let mut agree = 0usize;
    let mut total = 0usize;
    for w in 1..windows as usize {
        if let (Some(a), Some(b)) = (dir(&top_r, w), dir(&top_l, w)) {
            total += 1;
            agree += usize::from(a == b);
        }
    }
    let contour_score = (total > 0).then(|| agree as f64 / total as f64);

    let mut on_r: Vec<u64> = rh.iter().map(|e| e.onset).collect();
    let mut on_l: Vec<u64> = lh.iter().map(|e| e.onset).collect();
    on_r.dedup();
    on_l.dedup();
    let inter = on_r.iter().filter(|t| on_l.binary_search(t).is_ok()).count();
    let union = on_r.len() + on_l.len() - inter;
    TextureMetrics { hand_balance, contour_score, rhythm_overlap: Some(inter as f64 / union as f64) }
}

/// Token names, for text export.
pub fn token_names(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(ToString::to_string).collect()
}
