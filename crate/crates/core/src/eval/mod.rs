//! Evaluation: oracle ASR, WER, BLEU, and the end-to-end ASR-BLEU pipeline.

pub mod asr_bleu;
pub mod bleu;
pub mod oracle;
pub mod wer;

pub use asr_bleu::{
    asr_bleu, gold_unit_bleu, symbol_recovery, AsrBleuOptions, AsrBleuTable, DirectionScore,
};
pub use bleu::{bleu, BleuReport, MAX_ORDER};
pub use oracle::{
    oracle_transcribe, oracle_transcribe_detailed, OracleAsr, Transcription, ENERGY_GATE_RMS,
};
pub use wer::{wer, WerReport};
