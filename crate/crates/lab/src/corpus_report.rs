//! Statistics of a note-event corpus.

use blockmix_core::corpus::{
    chunk_balance, embedding_savings, pitch_hand_histogram, texture_metrics, tokenize, ChunkSummary, Piece, TokenVocab,
};
use blockmix_core::info::{factorization_loss, mutual_information, nmi, Nmi};
use blockmix_core::nets::EmbeddingComparison;
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureMeans {
    pub hand_balance: f64,
    /// Mean over pieces where the score is defined.
    pub contour_score: Option<f64>,
    pub rhythm_overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub pieces: usize,
    pub notes: usize,
    pub tokens: usize,
    pub vocab_size: usize,
    /// Bits.
    pub pitch_hand_mi: f64,
    pub pitch_hand_nmi: Nmi,
    /// Bits lost by modelling pitch and hand as independent.
    pub factorization_loss: f64,
    pub chunks: ChunkSummary,
    pub texture: TextureMeans,
    pub embedding: EmbeddingComparison,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

pub fn build(pieces: &[Piece], chunk_len: usize, stride: usize, d: usize) -> Result<CorpusReport> {
    let streams: Vec<_> = pieces.iter().map(tokenize).collect();
    let vocab = TokenVocab::from_pieces(pieces);
    let hist = pitch_hand_histogram(pieces);
    let tex: Vec<_> = pieces.iter().map(texture_metrics).collect();
    Ok(CorpusReport {
        pieces: pieces.len(),
        notes: pieces.iter().map(Piece::len).sum(),
        tokens: streams.iter().map(Vec::len).sum(),
        vocab_size: vocab.len(),
        pitch_hand_mi: mutual_information(&hist)?,
        pitch_hand_nmi: nmi(&hist)?,
        factorization_loss: factorization_loss(&hist)?,
        chunks: chunk_balance(&streams, chunk_len, stride)?,
        texture: TextureMeans {
            hand_balance: mean(tex.iter().map(|t| t.hand_balance)).unwrap_or(0.0),
            contour_score: mean(tex.iter().filter_map(|t| t.contour_score)),
            rhythm_overlap: mean(tex.iter().filter_map(|t| t.rhythm_overlap)),
        },
        embedding: embedding_savings(&vocab, d)?,
    })
}
