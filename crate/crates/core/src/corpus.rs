//! Text ingestion, vocabulary construction, 90/5/5 splitting,
//! training-fraction subsetting, and contiguous-stream batch generation.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

/// Bijection between characters and dense token ids, ordered by first
/// appearance. In bytes mode each raw byte is mapped through U+0000..U+00FF,
/// which keeps the bijection and round-trips arbitrary binary data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl Vocab {
    fn from_symbols(symbols: impl Iterator<Item = char>) -> (Vocab, Vec<u32>) {
        let mut chars = Vec::new();
        let mut index = HashMap::new();
        let mut ids = Vec::new();
        for ch in symbols {
            let id = *index.entry(ch).or_insert_with(|| {
                chars.push(ch);
                (chars.len() - 1) as u32
            });
            ids.push(id);
        }
        (Vocab { chars, index }, ids)
    }

    /// Rebuild a vocabulary from its id-ordered character table.
    pub fn from_table(table: &str) -> Result<Vocab> {
        let chars: Vec<char> = table.chars().collect();
        let mut index = HashMap::new();
        for (i, &ch) in chars.iter().enumerate() {
            if index.insert(ch, i as u32).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate character {ch:?} in vocabulary table"
                )));
            }
        }
        Ok(Vocab { chars, index })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id_of(&self, ch: char) -> Option<u32> {
        self.index.get(&ch).copied()
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        self.chars.get(id as usize).copied()
    }

    /// The id-ordered character table (checkpoint representation).
    pub fn table(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|ch| self.id_of(ch).ok_or(Error::OutOfVocabulary(ch)))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.char_of(id).ok_or(Error::TokenOutOfRange {
                    token: id,
                    vocab: self.len(),
                })
            })
            .collect()
    }
}

/// Build a first-appearance-ordered vocabulary over Unicode scalar values
/// and encode the text.
pub fn build_vocab_encode(text: &str) -> Result<(Vocab, Vec<u32>)> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(Vocab::from_symbols(text.chars()))
}

/// Bytes mode: one token per raw byte, first-appearance order.
pub fn build_vocab_encode_bytes(data: &[u8]) -> Result<(Vocab, Vec<u32>)> {
    if data.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(Vocab::from_symbols(data.iter().map(|&b| b as char)))
}

/// Token streams split as the first 90% / next 5% / last 5% of the source.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
    pub source: String,
    pub fraction: f64,
}

/// Prefix splits at floor(0.90·N) and floor(0.95·N), computed in integer
/// arithmetic so the boundaries are exact.
pub fn split_90_5_5(ids: &[u32], source: &str) -> Result<SplitCorpus> {
    let n = ids.len();
    if n < 20 {
        return Err(Error::CorpusTooShort { len: n, need: 20 });
    }
    let train_end = n * 9 / 10;
    let valid_end = n * 19 / 20;
    Ok(SplitCorpus {
        train: ids[..train_end].to_vec(),
        valid: ids[train_end..valid_end].to_vec(),
        test: ids[valid_end..].to_vec(),
        source: source.to_string(),
        fraction: 1.0,
    })
}

/// Shrink the training split to its prefix of length floor(p·|train|);
/// validation and test are untouched so efficiency curves stay comparable.
pub fn subset_fraction(sc: &SplitCorpus, p: f64) -> Result<SplitCorpus> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::FractionOutOfRange(p));
    }
    // Tolerant floor: p arrives as a decimal like 0.6 whose f64 image may sit
    // a hair below the exact rational, which would otherwise floor one short.
    let len = ((p * sc.train.len() as f64) + 1e-9).floor() as usize;
    let mut out = sc.clone();
    out.train.truncate(len);
    out.fraction = p;
    Ok(out)
}

/// A prepared corpus: vocabulary plus token splits.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocab: Vocab,
    pub split: SplitCorpus,
}

/// Full pipeline over a UTF-8 string. The vocabulary is built from the full
/// text so later splits never contain out-of-vocabulary characters.
pub fn prepare_text(text: &str, source: &str) -> Result<PreparedCorpus> {
    let (vocab, ids) = build_vocab_encode(text)?;
    let split = split_90_5_5(&ids, source)?;
    Ok(PreparedCorpus { vocab, split })
}

pub fn prepare_bytes(data: &[u8], source: &str) -> Result<PreparedCorpus> {
    let (vocab, ids) = build_vocab_encode_bytes(data)?;
    let split = split_90_5_5(&ids, source)?;
    Ok(PreparedCorpus { vocab, split })
}

/// Load a corpus from disk; `bytes` selects bytes mode.
pub fn prepare_file(path: &Path, bytes: bool) -> Result<PreparedCorpus> {
    let source = path.display().to_string();
    let data = std::fs::read(path)?;
    if bytes {
        prepare_bytes(&data, &source)
    } else {
        let text = String::from_utf8(data).map_err(|_| Error::InvalidUtf8)?;
        prepare_text(&text, &source)
    }
}

/// One BPTT window: inputs and next-character targets, both K×B row-major.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub k: usize,
    pub b: usize,
    /// inputs[t·b + s] is the token at position t of stream s
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
}

impl WindowBatch {
    pub fn input_row(&self, t: usize) -> &[u32] {
        &self.inputs[t * self.b..(t + 1) * self.b]
    }

    pub fn target_row(&self, t: usize) -> &[u32] {
        &self.targets[t * self.b..(t + 1) * self.b]
    }
}

/// Iterator over contiguous-stream BPTT windows.
///
/// The token array is cut into B equal streams of length S = ⌊N/B⌋; each
/// window advances every stream by K positions, with targets one character
/// ahead in the same stream. The final partial window is dropped.
#[derive(Debug, Clone)]
pub struct StreamBatcher {
    ids: Vec<u32>,
    b: usize,
    k: usize,
    stream_len: usize,
    windows: usize,
    cursor: usize,
}

pub fn stream_windows(ids: &[u32], b: usize, k: usize) -> Result<StreamBatcher> {
    if b == 0 || k == 0 {
        return Err(Error::InvalidConfig("batch and bptt must be positive".into()));
    }
    let stream_len = ids.len() / b;
    let windows = if stream_len == 0 { 0 } else { (stream_len - 1) / k };
    if windows == 0 {
        return Err(Error::CorpusTooSmall {
            len: ids.len(),
            batch: b,
            bptt: k,
        });
    }
    Ok(StreamBatcher {
        ids: ids.to_vec(),
        b,
        k,
        stream_len,
        windows,
        cursor: 0,
    })
}

impl StreamBatcher {
    pub fn num_windows(&self) -> usize {
        self.windows
    }

    pub fn reset(&mut self) {
        self.cursor = 0;
    }
}

impl Iterator for StreamBatcher {
    type Item = WindowBatch;

    fn next(&mut self) -> Option<WindowBatch> {
        if self.cursor >= self.windows {
            return None;
        }
        let offset = self.cursor * self.k;
        let mut inputs = Vec::with_capacity(self.k * self.b);
        let mut targets = Vec::with_capacity(self.k * self.b);
        for t in 0..self.k {
            for s in 0..self.b {
                let base = s * self.stream_len + offset + t;
                inputs.push(self.ids[base]);
                targets.push(self.ids[base + 1]);
            }
        }
        self.cursor += 1;
        Some(WindowBatch {
            k: self.k,
            b: self.b,
            inputs,
            targets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_first_appearance_order() {
        let (vocab, ids) = build_vocab_encode("aba").unwrap();
        assert_eq!(vocab.id_of('a'), Some(0));
        assert_eq!(vocab.id_of('b'), Some(1));
        assert_eq!(ids, vec![0, 1, 0]);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(build_vocab_encode(""), Err(Error::EmptyText)));
    }

    #[test]
    fn twenty_seven_symbol_corpus() {
        // text8-style alphabet: 26 letters plus space
        let mut text = String::new();
        for ch in 'a'..='z' {
            text.push(ch);
            text.push(' ');
        }
        let (vocab, _) = build_vocab_encode(&text).unwrap();
        assert_eq!(vocab.len(), 27);
    }

    #[test]
    fn split_lengths_1000() {
        let ids: Vec<u32> = (0..1000).map(|i| i % 7).collect();
        let sc = split_90_5_5(&ids, "t").unwrap();
        assert_eq!(sc.train.len(), 900);
        assert_eq!(sc.valid.len(), 50);
        assert_eq!(sc.test.len(), 50);
    }

    #[test]
    fn split_floor_boundary_n20() {
        let ids: Vec<u32> = (0..20).collect();
        let sc = split_90_5_5(&ids, "t").unwrap();
        assert_eq!((sc.train.len(), sc.valid.len(), sc.test.len()), (18, 1, 1));
    }

    #[test]
    fn split_is_a_partition() {
        let ids: Vec<u32> = (0..503).map(|i| i % 11).collect();
        let sc = split_90_5_5(&ids, "t").unwrap();
        let mut cat = sc.train.clone();
        cat.extend(&sc.valid);
        cat.extend(&sc.test);
        assert_eq!(cat, ids);
    }

    #[test]
    fn split_too_short() {
        let ids: Vec<u32> = (0..19).collect();
        assert!(matches!(
            split_90_5_5(&ids, "t"),
            Err(Error::CorpusTooShort { .. })
        ));
    }

    #[test]
    fn subset_identity_and_prefix() {
        let ids: Vec<u32> = (0..1000).collect();
        let sc = split_90_5_5(&ids, "t").unwrap();
        let full = subset_fraction(&sc, 1.0).unwrap();
        assert_eq!(full.train, sc.train);
        let fifth = subset_fraction(&sc, 0.2).unwrap();
        assert_eq!(fifth.train.len(), 180);
        assert_eq!(fifth.train[..], sc.train[..180]);
        assert_eq!(fifth.valid, sc.valid);
        assert_eq!(fifth.test, sc.test);
        // 0.6 has no exact binary representation; the floor must not slip
        let three_fifths = subset_fraction(&sc, 0.6).unwrap();
        assert_eq!(three_fifths.train.len(), 540);
    }

    #[test]
    fn subset_rejects_out_of_range() {
        let ids: Vec<u32> = (0..100).collect();
        let sc = split_90_5_5(&ids, "t").unwrap();
        assert!(subset_fraction(&sc, 0.0).is_err());
        assert!(subset_fraction(&sc, 1.5).is_err());
    }

    #[test]
    fn stream_windows_layout_forced() {
        let ids: Vec<u32> = (0..10).collect();
        let mut it = stream_windows(&ids, 2, 2).unwrap();
        assert_eq!(it.num_windows(), 2);
        let w = it.next().unwrap();
        assert_eq!(w.input_row(0), &[0, 5]);
        assert_eq!(w.input_row(1), &[1, 6]);
        assert_eq!(w.target_row(0), &[1, 6]);
        assert_eq!(w.target_row(1), &[2, 7]);
    }

    #[test]
    fn stream_windows_too_small() {
        let ids: Vec<u32> = (0..1001).collect();
        assert!(matches!(
            stream_windows(&ids, 250, 50),
            Err(Error::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn targets_are_successors_brute_force() {
        let ids: Vec<u32> = (0..149).map(|i| (i * 31) % 256).collect();
        let b = 4;
        let k = 5;
        let stream_len = ids.len() / b;
        let it = stream_windows(&ids, b, k).unwrap();
        let mut seen_positions = vec![0usize; ids.len()];
        for (wi, w) in it.enumerate() {
            for t in 0..k {
                for s in 0..b {
                    let pos = s * stream_len + wi * k + t;
                    assert_eq!(w.input_row(t)[s], ids[pos]);
                    assert_eq!(w.target_row(t)[s], ids[pos + 1]);
                    seen_positions[pos] += 1;
                }
            }
        }
        // each input position visited at most once; per stream at least S−1−K
        assert!(seen_positions.iter().all(|&c| c <= 1));
        for s in 0..b {
            let visited: usize = seen_positions[s * stream_len..(s + 1) * stream_len]
                .iter()
                .sum();
            assert!(visited >= stream_len - 1 - k);
        }
    }

    #[test]
    fn bytes_mode_round_trips_raw_bytes() {
        let data: Vec<u8> = (0..=255u8).chain([7, 200, 0]).collect();
        let (vocab, ids) = build_vocab_encode_bytes(&data).unwrap();
        assert_eq!(vocab.len(), 256);
        let decoded: Vec<u8> = ids
            .iter()
            .map(|&id| vocab.char_of(id).unwrap() as u8)
            .collect();
        assert_eq!(decoded, data);
    }

    #[test]
    fn vocab_table_round_trip() {
        let (vocab, _) = build_vocab_encode("hello, wörld!").unwrap();
        let rebuilt = Vocab::from_table(&vocab.table()).unwrap();
        assert_eq!(vocab, rebuilt);
    }
}
