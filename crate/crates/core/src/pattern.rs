//! Percussion-track to drum-pattern pipeline.
//!
//! A drum pattern is 14 merged instrument classes by 32 sixteenth-note steps.
//! Each step packs its 14 instrument bits into a step code `0..=16383`
//! (bit `i` set when class `i` hits), so a pattern is also 32 integers.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::dataset::PatternRecord;
use crate::midi::{self, MidiFile, NoteEvent, PERCUSSION_CHANNEL};

pub const INSTRUMENTS: usize = 14;
pub const STEPS: usize = 32;
/// Flattened pattern length fed to the networks.
pub const PATTERN_BITS: usize = INSTRUMENTS * STEPS;
pub const MAX_CODE: u16 = (1 << INSTRUMENTS) - 1;

/// The 32 step codes of one pattern.
pub type Codes = [u16; STEPS];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("step {step} has code {value}, above {MAX_CODE}")]
    CodeOutOfRange { step: usize, value: u32 },
    #[error("expected {STEPS} step codes, got {0}")]
    WrongLength(usize),
}

/// 14 x 32 binary matrix; row `i` is a bitmask over steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DrumPattern {
    rows: [u32; INSTRUMENTS],
}

impl DrumPattern {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn get(&self, instrument: usize, step: usize) -> bool {
        self.rows[instrument] >> step & 1 == 1
    }

    pub fn set(&mut self, instrument: usize, step: usize, on: bool) {
        if on {
            self.rows[instrument] |= 1 << step;
        } else {
            self.rows[instrument] &= !(1 << step);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    pub fn hit_count(&self) -> u32 {
        self.rows.iter().map(|r| r.count_ones()).sum()
    }

    pub fn codes(&self) -> Codes {
        encode_pattern(self)
    }

    /// Instrument-major flattening: element `i * 32 + t` is `matrix[i][t]`.
    pub fn to_bits(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(PATTERN_BITS);
        for i in 0..INSTRUMENTS {
            for t in 0..STEPS {
                out.push(if self.get(i, t) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// Inverse of [`DrumPattern::to_bits`]; a bit is set iff its value exceeds `threshold`.
    pub fn from_probabilities(probs: &[f64], threshold: f64) -> Self {
        assert_eq!(probs.len(), PATTERN_BITS, "pattern vector must have {PATTERN_BITS} entries");
        let mut p = Self::empty();
        for (idx, &v) in probs.iter().enumerate() {
            if v > threshold {
                p.set(idx / STEPS, idx % STEPS, true);
            }
        }
        p
    }
}

pub fn encode_pattern(pattern: &DrumPattern) -> Codes {
    let mut codes = [0u16; STEPS];
    for (t, code) in codes.iter_mut().enumerate() {
        for i in 0..INSTRUMENTS {
            if pattern.get(i, t) {
                *code |= 1 << i;
            }
        }
    }
    codes
}

pub fn decode_codes(codes: &[u16]) -> Result<DrumPattern, PatternError> {
    if codes.len() != STEPS {
        return Err(PatternError::WrongLength(codes.len()));
    }
    let mut pattern = DrumPattern::empty();
    for (t, &code) in codes.iter().enumerate() {
        if code > MAX_CODE {
            return Err(PatternError::CodeOutOfRange { step: t, value: u32::from(code) });
        }
        for i in 0..INSTRUMENTS {
            if code >> i & 1 == 1 {
                pattern.set(i, t, true);
            }
        }
    }
    Ok(pattern)
}

/// General MIDI percussion pitch to merged instrument class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTable {
    classes: [Option<u8>; 128],
}

/// Sounds used when rendering each class back to General MIDI.
const PREFERRED_PITCH: [u8; INSTRUMENTS] = [36, 38, 37, 39, 45, 50, 42, 46, 49, 51, 56, 70, 64, 75];

impl Default for MergeTable {
    fn default() -> Self {
        const GROUPS: [&[u8]; INSTRUMENTS - 1] = [
            &[35, 36],             // kick
            &[38, 40],             // snare
            &[37],                 // side stick / rim
            &[39],                 // clap
            &[41, 43, 45, 47],     // low tom
            &[48, 50],             // high tom
            &[42, 44],             // closed hi-hat
            &[46],                 // open hi-hat
            &[49, 52, 55, 57],     // crash
            &[51, 53, 59],         // ride
            &[54, 56],             // cowbell / bell
            &[69, 70],             // shaker / tambourine
            &[61, 63, 64, 66, 68], // low latin
        ];
        let mut classes = [None; 128];
        for pitch in 35..=81 {
            classes[pitch] = Some(13);
        }
        for (class, group) in GROUPS.iter().enumerate() {
            for &pitch in group.iter() {
                classes[usize::from(pitch)] = Some(class as u8);
            }
        }
        Self { classes }
    }
}

impl MergeTable {
    pub fn class_of(&self, pitch: u8) -> Option<u8> {
        self.classes.get(usize::from(pitch)).copied().flatten()
    }

    /// Applies per-pitch overrides (`None` removes the pitch from the table).
    pub fn with_overrides(mut self, overrides: &BTreeMap<u8, Option<u8>>) -> Result<Self, String> {
        for (&pitch, &class) in overrides {
            if pitch > 127 {
                return Err(format!("pitch {pitch} is not a MIDI pitch"));
            }
            if let Some(c) = class {
                if usize::from(c) >= INSTRUMENTS {
                    return Err(format!("class {c} for pitch {pitch} is outside 0..{INSTRUMENTS}"));
                }
            }
            self.classes[usize::from(pitch)] = class;
        }
        let reachable: HashSet<u8> = self.classes.iter().flatten().copied().collect();
        if reachable.len() != INSTRUMENTS {
            return Err(format!("merge table reaches {} classes, expected {INSTRUMENTS}", reachable.len()));
        }
        Ok(self)
    }

    /// A pitch that maps to `class`, preferring the conventional sound.
    pub fn representative(&self, class: u8) -> Option<u8> {
        let preferred = *PREFERRED_PITCH.get(usize::from(class))?;
        if self.class_of(preferred) == Some(class) {
            return Some(preferred);
        }
        (0..=127u8).find(|&p| self.class_of(p) == Some(class))
    }
}

/// Merged class of a percussion pitch under the default table.
pub fn merge_class(pitch: u8) -> Option<u8> {
    MergeTable::default().class_of(pitch)
}

/// Nearest-slot sixteenth-note index, ties toward the later slot.
pub fn sixteenth_slot(tick: u64, ppq: u16) -> u64 {
    let ppq = u64::from(ppq);
    // round(4 * tick / ppq) with halves rounded up, in integers.
    (8 * tick + ppq) / (2 * ppq)
}

/// Builds the step grid of a percussion note stream.
///
/// Notes whose pitch has no merged class are ignored; the grid ends at the
/// last occupied slot.
pub fn quantize(notes: &[NoteEvent], ppq: u16, table: &MergeTable) -> Vec<u16> {
    assert!(ppq > 0, "ppq must be positive");
    let mut grid: Vec<u16> = Vec::new();
    for note in notes {
        let Some(class) = table.class_of(note.pitch) else { continue };
        let slot = sixteenth_slot(note.start_tick, ppq) as usize;
        if grid.len() <= slot {
            grid.resize(slot + 1, 0);
        }
        grid[slot] |= 1 << class;
    }
    grid
}

/// Spans of non-silent material separated by at least `pause_steps` empty steps.
pub fn chunk_spans(grid: &[u16], pause_steps: usize) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut current: Option<Range<usize>> = None;
    for (t, &code) in grid.iter().enumerate() {
        if code == 0 {
            continue;
        }
        current = match current {
            Some(span) if t - span.end < pause_steps => Some(span.start..t + 1),
            Some(span) => {
                spans.push(span);
                Some(t..t + 1)
            }
            None => Some(t..t + 1),
        };
    }
    spans.extend(current);
    spans
}

pub fn split_chunks(grid: &[u16], pause_steps: usize) -> Vec<Vec<u16>> {
    chunk_spans(grid, pause_steps).into_iter().map(|r| grid[r].to_vec()).collect()
}

/// Smallest offset at which a 32-step window occurs three times in a row.
pub fn find_repeat_offset(chunk: &[u16]) -> Option<usize> {
    if chunk.len() < 3 * STEPS {
        return None;
    }
    (0..=chunk.len() - 3 * STEPS).find(|&o| {
        let w = &chunk[o..o + STEPS];
        w == &chunk[o + STEPS..o + 2 * STEPS] && w == &chunk[o + 2 * STEPS..o + 3 * STEPS]
    })
}

pub fn find_repeated_pattern(chunk: &[u16]) -> Option<Codes> {
    find_repeat_offset(chunk).map(|o| chunk[o..o + STEPS].try_into().expect("window has 32 steps"))
}

/// Shannon entropy in bits of the empirical distribution of step codes.
pub fn pattern_entropy(codes: &[u16]) -> f64 {
    if codes.is_empty() {
        return 0.0;
    }
    let mut sorted = codes.to_vec();
    sorted.sort_unstable();
    let n = codes.len() as f64;
    let mut entropy = 0.0;
    for run in sorted.chunk_by(|a, b| a == b) {
        let p = run.len() as f64 / n;
        entropy -= p * p.log2();
    }
    // -0.0 for a single symbol
    entropy.max(0.0)
}

pub fn rotate(codes: &Codes, shift: usize) -> Codes {
    let mut out = *codes;
    out.rotate_left(shift % STEPS);
    out
}

/// Lexicographically smallest cyclic rotation.
pub fn canonical_rotation(codes: &Codes) -> Codes {
    (0..STEPS).map(|s| rotate(codes, s)).min().expect("32 rotations")
}

/// Channel 9 is non-trivial when it has at least 8 mapped hits spread over
/// at least two merged classes.
pub fn channel9_nontrivial(file: &MidiFile, table: &MergeTable) -> bool {
    let mut count = 0usize;
    let mut classes = 0u16;
    for note in midi::extract_notes(file) {
        if note.channel != PERCUSSION_CHANNEL {
            continue;
        }
        if let Some(c) = table.class_of(note.pitch) {
            count += 1;
            classes |= 1 << c;
        }
    }
    count >= 8 && classes.count_ones() >= 2
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreRule {
    pub label: String,
    pub keywords: Vec<String>,
}

/// Priority-ordered keyword table for filename genre labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreTable {
    pub rules: Vec<GenreRule>,
}

impl Default for GenreTable {
    fn default() -> Self {
        let rule = |label: &str, keywords: &[&str]| GenreRule {
            label: label.to_string(),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
        };
        Self {
            rules: vec![
                rule("punk", &["punk"]),
                rule("metal", &["metal"]),
                rule("rock", &["rock"]),
                rule("hip-hop", &["hip-hop", "hiphop", "rap"]),
                rule("soul", &["soul"]),
                rule("funk", &["funk"]),
                rule("afro", &["afro"]),
                rule("jazz", &["jazz"]),
                rule("blues", &["blues"]),
                rule("pop", &["pop"]),
                rule("dance", &["dance"]),
                rule("electro", &["electro"]),
            ],
        }
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl GenreTable {
    /// First rule (in priority order) with a keyword whose tokens appear
    /// contiguously among the path tokens. "hip-hop" thus also matches
    /// "hip_hop" and "Hip Hop".
    pub fn genre_of(&self, path: &str) -> Option<&str> {
        let path_tokens = tokens(path);
        self.rules
            .iter()
            .find(|rule| {
                rule.keywords.iter().any(|k| {
                    let kt = tokens(k);
                    !kt.is_empty() && path_tokens.windows(kt.len()).any(|w| w == kt.as_slice())
                })
            })
            .map(|rule| rule.label.as_str())
    }
}

pub fn genre_from_path(path: &str) -> Option<String> {
    GenreTable::default().genre_of(path).map(str::to_string)
}

/// A detected drum loop: 32 steps starting at `start_step` of the file's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopWindow {
    pub start_step: usize,
    pub codes: Codes,
}

/// Per-file outcome of the drum stages.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DrumScan {
    pub chunks: usize,
    pub no_repeat: usize,
    pub low_entropy: usize,
    /// Loops that passed the repetition and entropy gates, in grid order.
    pub windows: Vec<LoopWindow>,
}

/// Quantizes channel 9, splits on pauses, finds triple repeats and applies
/// the entropy gate. Time signature and triviality checks are the caller's.
pub fn scan_drum_loops(file: &MidiFile, config: &PipelineConfig) -> DrumScan {
    let drums: Vec<NoteEvent> =
        midi::extract_notes(file).into_iter().filter(|n| n.channel == PERCUSSION_CHANNEL).collect();
    let grid = quantize(&drums, file.ppq, &config.merge);
    let mut scan = DrumScan::default();
    for span in chunk_spans(&grid, config.pause_steps) {
        scan.chunks += 1;
        let chunk = &grid[span.clone()];
        let Some(offset) = find_repeat_offset(chunk) else {
            scan.no_repeat += 1;
            continue;
        };
        let codes: Codes = chunk[offset..offset + STEPS].try_into().expect("window has 32 steps");
        if pattern_entropy(&codes) > config.entropy_threshold {
            scan.windows.push(LoopWindow { start_step: span.start + offset, codes });
        } else {
            scan.low_entropy += 1;
        }
    }
    scan
}

/// Drop counts for each corpus extraction stage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub files: usize,
    pub parse_errors: usize,
    pub not_four_four: usize,
    pub trivial_drums: usize,
    pub chunks: usize,
    pub no_repeat: usize,
    pub low_entropy: usize,
    pub duplicates: usize,
    pub records: usize,
}

impl ExtractStats {
    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        format!(
            "files={}\nparse_errors={}\nnot_four_four={}\ntrivial_drums={}\nchunks={}\nno_repeat={}\nlow_entropy={}\nduplicates={}\nrecords={}\n",
            self.files,
            self.parse_errors,
            self.not_four_four,
            self.trivial_drums,
            self.chunks,
            self.no_repeat,
            self.low_entropy,
            self.duplicates,
            self.records
        )
    }
}

enum FileOutcome {
    ParseError,
    NotFourFour,
    Trivial,
    Scanned(DrumScan),
}

fn scan_file(path: &str, bytes: &[u8], config: &PipelineConfig) -> FileOutcome {
    let file = match midi::parse_midi(bytes) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("skipping {path}: {e}");
            return FileOutcome::ParseError;
        }
    };
    if !midi::is_four_four(&file) {
        return FileOutcome::NotFourFour;
    }
    if !channel9_nontrivial(&file, &config.merge) {
        return FileOutcome::Trivial;
    }
    FileOutcome::Scanned(scan_drum_loops(&file, config))
}

/// Runs the full extraction over `(path, bytes)` pairs.
///
/// Files are scanned in parallel; deduplication on the canonical rotation
/// happens afterwards in input order, so the first file to contribute a
/// pattern (and its genre) wins.
pub fn extract_corpus(files: &[(String, Vec<u8>)], config: &PipelineConfig) -> (Vec<PatternRecord>, ExtractStats) {
    let outcomes: Vec<FileOutcome> =
        files.par_iter().map(|(path, bytes)| scan_file(path, bytes, config)).collect();

    let mut stats = ExtractStats { files: files.len(), ..Default::default() };
    let mut seen: HashSet<Codes> = HashSet::new();
    let mut records = Vec::new();
    for ((path, _), outcome) in files.iter().zip(outcomes) {
        let scan = match outcome {
            FileOutcome::ParseError => {
                stats.parse_errors += 1;
                continue;
            }
            FileOutcome::NotFourFour => {
                stats.not_four_four += 1;
                continue;
            }
            FileOutcome::Trivial => {
                stats.trivial_drums += 1;
                continue;
            }
            FileOutcome::Scanned(scan) => scan,
        };
        stats.chunks += scan.chunks;
        stats.no_repeat += scan.no_repeat;
        stats.low_entropy += scan.low_entropy;
        let genre = config.genres.genre_of(path).map(str::to_string);
        for window in scan.windows {
            let canonical = canonical_rotation(&window.codes);
            if seen.insert(canonical) {
                records.push(PatternRecord { codes: canonical, latent: None, projection: None, genre: genre.clone() });
            } else {
                stats.duplicates += 1;
            }
        }
    }
    stats.records = records.len();
    (records, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn note(pitch: u8, start_tick: u64) -> NoteEvent {
        NoteEvent { channel: 9, pitch, velocity: 100, start_tick, duration_ticks: 10 }
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_class(38), Some(1));
        assert_eq!(merge_class(40), Some(1));
        assert_eq!(merge_class(45), Some(4));
        assert_eq!(merge_class(47), Some(4));
        assert_eq!(merge_class(50), Some(5));
        assert_eq!(merge_class(48), Some(5));
        assert_eq!(merge_class(34), None);
        assert_eq!(merge_class(82), None);
        assert_eq!(merge_class(0), None);
    }

    #[test]
    fn default_table_is_total_with_fourteen_classes() {
        let table = MergeTable::default();
        let classes: HashSet<u8> = (35..=81).map(|p| table.class_of(p).expect("total on 35..=81")).collect();
        assert_eq!(classes.len(), INSTRUMENTS);
        for class in 0..INSTRUMENTS as u8 {
            let rep = table.representative(class).unwrap();
            assert_eq!(table.class_of(rep), Some(class));
        }
    }

    #[test]
    fn overrides_are_validated() {
        let table = MergeTable::default();
        let mut o = BTreeMap::new();
        o.insert(81u8, Some(0u8));
        assert_eq!(table.clone().with_overrides(&o).unwrap().class_of(81), Some(0));
        o.insert(37, Some(14));
        assert!(table.clone().with_overrides(&o).is_err());
        let mut drop_rim = BTreeMap::new();
        drop_rim.insert(37, None);
        assert!(table.with_overrides(&drop_rim).is_err(), "class 2 would become unreachable");
    }

    #[test]
    fn quantize_examples() {
        let table = MergeTable::default();
        assert_eq!(quantize(&[note(36, 0)], 480, &table), vec![1]);
        assert_eq!(quantize(&[note(36, 130)], 480, &table), vec![0, 1]);
        assert_eq!(quantize(&[note(36, 0), note(38, 0)], 480, &table), vec![3]);
        assert!(quantize(&[], 480, &table).is_empty());
        // 60 ticks is exactly half a slot at 480 ppq: ties go to the later slot.
        assert_eq!(quantize(&[note(36, 60)], 480, &table), vec![0, 1]);
        assert_eq!(quantize(&[note(36, 59)], 480, &table), vec![1]);
        // unmapped pitch
        assert!(quantize(&[note(20, 0)], 480, &table).is_empty());
        // ppq not divisible by four
        assert_eq!(sixteenth_slot(25, 50), 2);
    }

    #[test]
    fn chunk_examples() {
        assert!(split_chunks(&[0; 40], 16).is_empty());
        let mut grid = vec![1u16; 32];
        grid.extend([0; 16]);
        grid.extend([2; 32]);
        let chunks = split_chunks(&grid, 16);
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.len() == 32));

        let mut grid = vec![1u16; 32];
        grid.extend([0; 15]);
        grid.extend([2; 32]);
        let chunks = split_chunks(&grid, 16);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].len(), 79);

        let mut padded = vec![0u16; 5];
        padded.extend([4, 0, 4]);
        padded.extend([0; 3]);
        assert_eq!(chunk_spans(&padded, 16), vec![5..8]);
    }

    fn brute_force_repeat(chunk: &[u16]) -> Option<Codes> {
        let mut hits = Vec::new();
        for o in 0..chunk.len() {
            if o + 96 > chunk.len() {
                break;
            }
            let ok = (0..32).all(|t| chunk[o + t] == chunk[o + 32 + t] && chunk[o + t] == chunk[o + 64 + t]);
            if ok {
                hits.push(o);
            }
        }
        hits.first().map(|&o| chunk[o..o + 32].try_into().unwrap())
    }

    fn sample_codes(seed: u16) -> Codes {
        let mut c = [0u16; STEPS];
        for (t, v) in c.iter_mut().enumerate() {
            *v = ((t as u16 * 37 + seed * 101) % 17 + 1) & MAX_CODE;
        }
        c
    }

    #[test]
    fn repetition_examples() {
        let p = sample_codes(1);
        let q = sample_codes(2);
        let thrice: Vec<u16> = p.iter().chain(&p).chain(&p).copied().collect();
        assert_eq!(find_repeated_pattern(&thrice), Some(p));
        let twice: Vec<u16> = p.iter().chain(&p).copied().collect();
        assert_eq!(find_repeated_pattern(&twice), None);
        let lead: Vec<u16> = q.iter().chain(&p).chain(&p).chain(&p).copied().collect();
        assert_eq!(find_repeated_pattern(&lead), brute_force_repeat(&lead));
        assert_eq!(find_repeated_pattern(&lead), Some(p));
        assert_eq!(find_repeat_offset(&lead), Some(32));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(pattern_entropy(&[7; 32]), 0.0);
        let mut two = [1u16; 32];
        two[16..].fill(2);
        assert_eq!(pattern_entropy(&two), 1.0);
        let four: Vec<u16> = (0..32).map(|t| (t % 4) as u16).collect();
        assert_eq!(pattern_entropy(&four), 2.0);
        let distinct: Vec<u16> = (0..32).collect();
        assert!((pattern_entropy(&distinct) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(canonical_rotation(&[0; 32]), [0; 32]);
        let mut x = [0u16; 32];
        x[0] = 3;
        let mut expected = [0u16; 32];
        expected[31] = 3;
        assert_eq!(canonical_rotation(&x), expected);
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_pattern(&DrumPattern::empty()), [0; 32]);
        let mut all = DrumPattern::empty();
        for i in 0..INSTRUMENTS {
            all.set(i, 0, true);
        }
        let mut expected = [0u16; 32];
        expected[0] = 16383;
        assert_eq!(all.codes(), expected);
        let mut one = DrumPattern::empty();
        one.set(3, 7, true);
        assert_eq!(one.codes()[7], 8);
        assert_eq!(one.codes().iter().filter(|&&c| c != 0).count(), 1);
        let mut bad = [0u16; 32];
        bad[4] = 16384;
        assert_eq!(decode_codes(&bad), Err(PatternError::CodeOutOfRange { step: 4, value: 16384 }));
        assert_eq!(decode_codes(&[0; 31]), Err(PatternError::WrongLength(31)));
    }

    #[test]
    fn flattening_is_instrument_major() {
        let mut p = DrumPattern::empty();
        p.set(2, 5, true);
        let bits = p.to_bits();
        assert_eq!(bits.len(), PATTERN_BITS);
        assert_eq!(bits[2 * 32 + 5], 1.0);
        assert_eq!(bits.iter().sum::<f64>(), 1.0);
        assert_eq!(DrumPattern::from_probabilities(&bits, 0.5), p);
    }

    fn drum_file(hits: &[(u8, u64)]) -> MidiFile {
        use crate::midi::{EventKind, Format, TrackEvent};
        let mut events = Vec::new();
        for &(pitch, tick) in hits {
            events.push(TrackEvent::new(tick, EventKind::NoteOn { channel: 9, pitch, velocity: 90 }));
            events.push(TrackEvent::new(tick + 10, EventKind::NoteOff { channel: 9, pitch, velocity: 0 }));
        }
        events.sort_by_key(|e| e.tick);
        let end = events.last().map_or(0, |e| e.tick);
        events.push(TrackEvent::new(end, EventKind::EndOfTrack));
        MidiFile { format: Format::SingleTrack, ppq: 480, tracks: vec![events] }
    }

    #[test]
    fn channel9_triviality() {
        let table = MergeTable::default();
        assert!(!channel9_nontrivial(&drum_file(&[]), &table));
        let kicks: Vec<_> = (0..100).map(|i| (36, i * 120)).collect();
        assert!(!channel9_nontrivial(&drum_file(&kicks), &table));
        let alternating: Vec<_> = (0..8).map(|i| (if i % 2 == 0 { 36 } else { 38 }, i * 120)).collect();
        assert!(channel9_nontrivial(&drum_file(&alternating), &table));
        let seven: Vec<_> = alternating[..7].to_vec();
        assert!(!channel9_nontrivial(&drum_file(&seven), &table));
    }

    #[test]
    fn genre_examples() {
        assert_eq!(genre_from_path("collection/Metal/slayer_01.mid").as_deref(), Some("metal"));
        assert_eq!(genre_from_path("songs/untitled_127.mid"), None);
        assert_eq!(genre_from_path("punk_rock_anthem.mid").as_deref(), Some("punk"));
        assert_eq!(genre_from_path("beats/Hip Hop/loop.mid").as_deref(), Some("hip-hop"));
        assert_eq!(genre_from_path("beats/hip-hop/loop.mid").as_deref(), Some("hip-hop"));
        assert_eq!(genre_from_path("rapid_fire.mid"), None);
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(rows in proptest::array::uniform14(any::<u32>())) {
            let p = DrumPattern { rows };
            prop_assert_eq!(decode_codes(&encode_pattern(&p)).unwrap(), p);
        }

        #[test]
        fn rotations_share_canonical_form(codes in proptest::array::uniform32(0u16..4), shift in 0usize..32) {
            let canonical = canonical_rotation(&codes);
            prop_assert_eq!(canonical_rotation(&rotate(&codes, shift)), canonical);
            prop_assert_eq!(canonical_rotation(&canonical), canonical);
        }

        #[test]
        fn entropy_bounds(codes in proptest::array::uniform32(0u16..=MAX_CODE)) {
            let h = pattern_entropy(&codes);
            prop_assert!((0.0..=5.0 + 1e-12).contains(&h));
            let all_equal = codes.iter().all(|&c| c == codes[0]);
            prop_assert_eq!(h == 0.0, all_equal);
        }
    }
}
