//! Drum-conditioned melody loops: extraction, the 496 -> 8192 generator,
//! the eight-rule quality filter and key detection.
//!
//! A melody loop is a 64 x 128 onset roll: 64 ticks (two per drum step) by
//! 128 MIDI pitches. Only onsets are modelled, not durations.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Reader, Writer};
use crate::midi::{self, MidiFile, PERCUSSION_CHANNEL};
use crate::nn::{self, Activation, AdamConfig, AdamState, Mlp, MlpGrads, Parameters};
use crate::pattern::{decode_codes, Codes, LoopWindow, MAX_CODE, PATTERN_BITS, STEPS};

pub const MELODY_TICKS: usize = 64;
pub const PITCHES: usize = 128;
pub const ROLL_BITS: usize = MELODY_TICKS * PITCHES;
pub const EMBEDDING_DIM: usize = 16;
pub const INSTRUMENTS: usize = 128;
pub const KEYS: usize = 24;
pub const OCTAVES: usize = 11;
pub const INPUT_DIM: usize = PATTERN_BITS + 3 * EMBEDDING_DIM;
pub const HIDDEN_WIDTH: usize = 64;
pub const HIDDEN_LAYERS: usize = 4;
pub const MIN_ONSETS: usize = 4;
pub const MAX_POSITIVE_WEIGHT: f64 = 50.0;

const CHECKPOINT_TAG: &[u8; 4] = b"MELO";
pub const DATASET_HEADER: &str = "# drumspace melody v1";

const TONIC_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MelodyError {
    #[error("melody corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{field} id {value} out of range 0..{limit}")]
    IdOutOfRange { field: &'static str, value: usize, limit: usize },
    #[error("melody has no onsets")]
    EmptyMelody,
    #[error("invalid drum codes: {0}")]
    BadCodes(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("melody dataset row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

// ---------------------------------------------------------------------------
// Roll

/// 64 x 128 onset matrix; bit `p` of `rows[t]` is pitch `p` at tick `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MelodyRoll {
    pub rows: [u128; MELODY_TICKS],
}

impl Default for MelodyRoll {
    fn default() -> Self {
        Self::empty()
    }
}

impl MelodyRoll {
    pub fn empty() -> Self {
        Self { rows: [0; MELODY_TICKS] }
    }

    /// Builds a roll from `(tick, pitch)` onsets.
    pub fn from_onsets(onsets: &[(usize, u8)]) -> Self {
        let mut roll = Self::empty();
        for &(t, p) in onsets {
            roll.set(t, p, true);
        }
        roll
    }

    pub fn get(&self, tick: usize, pitch: u8) -> bool {
        self.rows[tick] >> (pitch & 0x7F) & 1 == 1
    }

    pub fn set(&mut self, tick: usize, pitch: u8, on: bool) {
        let bit = 1u128 << (pitch & 0x7F);
        if on {
            self.rows[tick] |= bit;
        } else {
            self.rows[tick] &= !bit;
        }
    }

    pub fn pitches_at(&self, tick: usize) -> impl Iterator<Item = u8> + '_ {
        let row = self.rows[tick];
        (0..PITCHES as u8).filter(move |&p| row >> p & 1 == 1)
    }

    /// Onsets ordered by tick, then pitch.
    pub fn onsets(&self) -> Vec<(usize, u8)> {
        (0..MELODY_TICKS).flat_map(|t| self.pitches_at(t).map(move |p| (t, p))).collect()
    }

    pub fn onset_count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    /// Tick-major flattening: index `tick * 128 + pitch`.
    pub fn to_bits(&self) -> Vec<f64> {
        let mut bits = vec![0.0; ROLL_BITS];
        for (t, p) in self.onsets() {
            bits[t * PITCHES + p as usize] = 1.0;
        }
        bits
    }

    /// `bit = prob > threshold`, laid out like [`MelodyRoll::to_bits`].
    pub fn from_probabilities(probs: &[f64], threshold: f64) -> Self {
        let mut roll = Self::empty();
        for (i, &p) in probs.iter().take(ROLL_BITS).enumerate() {
            if p > threshold {
                roll.rows[i / PITCHES] |= 1 << (i % PITCHES);
            }
        }
        roll
    }

    /// Shifts every onset by `semitones`; `None` if one leaves 0..=127.
    pub fn transpose(&self, semitones: i32) -> Option<Self> {
        let mut out = Self::empty();
        for (t, p) in self.onsets() {
            let q = p as i32 + semitones;
            if !(0..PITCHES as i32).contains(&q) {
                return None;
            }
            out.set(t, q as u8, true);
        }
        Some(out)
    }

    /// Rows as 128-bit lowercase hex, one per tick.
    pub fn to_hex(&self) -> String {
        self.rows.iter().map(|r| format!("{r:032x}")).collect::<Vec<_>>().join(",")
    }

    pub fn from_hex(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(',').collect();
        if parts.len() != MELODY_TICKS {
            return Err(format!("expected {MELODY_TICKS} hex rows, got {}", parts.len()));
        }
        let mut roll = Self::empty();
        for (row, part) in roll.rows.iter_mut().zip(parts) {
            *row = u128::from_str_radix(part.trim(), 16).map_err(|_| format!("bad hex row {part:?}"))?;
        }
        Ok(roll)
    }
}

// ---------------------------------------------------------------------------
// Keys

/// One of 24 keys: `tonic * 2 + (1 if minor)`, so major precedes minor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(u8);

impl KeyId {
    pub fn new(id: usize) -> Result<Self, MelodyError> {
        if id < KEYS {
            Ok(Self(id as u8))
        } else {
            Err(MelodyError::IdOutOfRange { field: "key", value: id, limit: KEYS })
        }
    }

    pub fn from_parts(tonic: u8, minor: bool) -> Self {
        Self((tonic % 12) * 2 + u8::from(minor))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn tonic(self) -> u8 {
        self.0 / 2
    }

    pub fn is_minor(self) -> bool {
        self.0 % 2 == 1
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self::from_parts((self.tonic() as i32 + semitones).rem_euclid(12) as u8, self.is_minor())
    }

    fn scale(self) -> &'static [u8; 7] {
        if self.is_minor() {
            &MINOR_SCALE
        } else {
            &MAJOR_SCALE
        }
    }

    /// Scale degree weight of a pitch class: +3 tonic, +2 fifth,
    /// +1 other diatonic, -2 chromatic.
    pub fn weight(self, pitch_class: u8) -> i64 {
        let rel = (pitch_class + 12 - self.tonic()) % 12;
        match rel {
            0 => 3,
            7 => 2,
            r if self.scale().contains(&r) => 1,
            _ => -2,
        }
    }

    pub fn is_diatonic(self, pitch_class: u8) -> bool {
        self.scale().contains(&((pitch_class + 12 - self.tonic()) % 12))
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = if self.is_minor() { "minor" } else { "major" };
        write!(f, "{} {mode}", TONIC_NAMES[self.tonic() as usize])
    }
}

impl FromStr for KeyId {
    type Err = String;

    /// Accepts `C`, `c#m`, `Bb minor`, `F# major` or a numeric id.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(id) = s.parse::<usize>() {
            return KeyId::new(id).map_err(|e| e.to_string());
        }
        let lower = s.to_ascii_lowercase();
        let (note, minor) = if let Some(n) = lower.strip_suffix("minor") {
            (n.trim(), true)
        } else if let Some(n) = lower.strip_suffix("major") {
            (n.trim(), false)
        } else if let Some(n) = lower.strip_suffix('m') {
            (n.trim(), true)
        } else {
            (lower.as_str(), false)
        };
        let mut chars = note.chars();
        let base = match chars.next() {
            Some('c') => 0,
            Some('d') => 2,
            Some('e') => 4,
            Some('f') => 5,
            Some('g') => 7,
            Some('a') => 9,
            Some('b') => 11,
            _ => return Err(format!("unknown key {s:?}")),
        };
        let tonic = match chars.as_str() {
            "" => base,
            "#" => base + 1,
            "b" => base + 11,
            _ => return Err(format!("unknown key {s:?}")),
        };
        Ok(KeyId::from_parts(tonic % 12, minor))
    }
}

/// Score of every key for an onset sequence ordered by time.
pub fn key_scores(onsets: &[(usize, u8)]) -> [i64; KEYS] {
    std::array::from_fn(|k| {
        let key = KeyId(k as u8);
        let notes: i64 = onsets.iter().map(|&(_, p)| key.weight(p % 12)).sum();
        let pairs = onsets.windows(2).filter(|w| key.is_diatonic(w[0].1 % 12) && key.is_diatonic(w[1].1 % 12)).count();
        let last_tonic = onsets.last().is_some_and(|&(_, p)| p % 12 == key.tonic());
        notes + pairs as i64 + if last_tonic { 2 } else { 0 }
    })
}

/// Highest-scoring key; ties go to the key whose tonic occurs more often,
/// then to the lower id.
pub fn detect_key_onsets(onsets: &[(usize, u8)]) -> Result<KeyId, MelodyError> {
    if onsets.is_empty() {
        return Err(MelodyError::EmptyMelody);
    }
    let scores = key_scores(onsets);
    let tonic_count = |k: usize| onsets.iter().filter(|&&(_, p)| p % 12 == KeyId(k as u8).tonic()).count();
    let best = (0..KEYS)
        .max_by(|&a, &b| {
            scores[a].cmp(&scores[b]).then(tonic_count(a).cmp(&tonic_count(b))).then(b.cmp(&a))
        })
        .expect("24 keys");
    Ok(KeyId(best as u8))
}

pub fn detect_key(roll: &MelodyRoll) -> Result<KeyId, MelodyError> {
    detect_key_onsets(&roll.onsets())
}

// ---------------------------------------------------------------------------
// Filter

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    TooFewOnsetTicks,
    LongPause,
    CloseInterval,
    WideRange,
    FewDistinctPitches,
    DenseChord,
    DominantPitch,
    KeyMismatch,
}

impl RejectReason {
    /// Position of the rule in the fixed checking order, from 1.
    pub fn rule(self) -> u8 {
        self as u8 + 1
    }

    pub fn describe(self) -> &'static str {
        match self {
            RejectReason::TooFewOnsetTicks => "onsets on three or fewer ticks",
            RejectReason::LongPause => "more than 16 consecutive silent ticks",
            RejectReason::CloseInterval => "simultaneous notes one or two semitones apart",
            RejectReason::WideRange => "range wider than two octaves",
            RejectReason::FewDistinctPitches => "fewer than three distinct pitches",
            RejectReason::DenseChord => "four or more simultaneous onsets",
            RejectReason::DominantPitch => "one pitch carries more than three quarters of the onsets",
            RejectReason::KeyMismatch => "detected key differs from the target",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}: {}", self.rule(), self.describe())
    }
}

/// Longest run of silent ticks, wrapping around the loop boundary.
pub fn longest_cyclic_silence(roll: &MelodyRoll) -> usize {
    if roll.is_empty() {
        return MELODY_TICKS;
    }
    let mut best = 0;
    let mut run = 0;
    for t in 0..2 * MELODY_TICKS {
        if roll.rows[t % MELODY_TICKS] == 0 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Applies the eight rules in order and reports the first failure.
pub fn filter_melody(roll: &MelodyRoll, target: KeyId) -> Result<(), RejectReason> {
    let active_ticks = roll.rows.iter().filter(|&&r| r != 0).count();
    if active_ticks <= 3 {
        return Err(RejectReason::TooFewOnsetTicks);
    }
    if longest_cyclic_silence(roll) > 16 {
        return Err(RejectReason::LongPause);
    }
    for row in roll.rows {
        if row & (row >> 1) != 0 || row & (row >> 2) != 0 {
            return Err(RejectReason::CloseInterval);
        }
    }
    let onsets = roll.onsets();
    let lo = onsets.iter().map(|o| o.1).min().expect("non-empty");
    let hi = onsets.iter().map(|o| o.1).max().expect("non-empty");
    if hi - lo > 24 {
        return Err(RejectReason::WideRange);
    }
    let mut counts = [0usize; PITCHES];
    onsets.iter().for_each(|o| counts[o.1 as usize] += 1);
    if counts.iter().filter(|&&c| c > 0).count() < 3 {
        return Err(RejectReason::FewDistinctPitches);
    }
    if roll.rows.iter().any(|r| r.count_ones() >= 4) {
        return Err(RejectReason::DenseChord);
    }
    let modal = *counts.iter().max().expect("128 pitches");
    if 4 * modal > 3 * onsets.len() {
        return Err(RejectReason::DominantPitch);
    }
    if detect_key_onsets(&onsets).expect("non-empty") != target {
        return Err(RejectReason::KeyMismatch);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Context and samples

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MelodyContext {
    pub instrument: u8,
    pub key: KeyId,
    pub octave: u8,
}

impl MelodyContext {
    pub fn new(instrument: usize, key: usize, octave: usize) -> Result<Self, MelodyError> {
        let check = |field: &'static str, value: usize, limit: usize| {
            if value < limit {
                Ok(())
            } else {
                Err(MelodyError::IdOutOfRange { field, value, limit })
            }
        };
        check("instrument", instrument, INSTRUMENTS)?;
        check("octave", octave, OCTAVES)?;
        Ok(Self { instrument: instrument as u8, key: KeyId::new(key)?, octave: octave as u8 })
    }

    fn validate(&self) -> Result<(), MelodyError> {
        Self::new(self.instrument as usize, self.key.id(), self.octave as usize).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelodySample {
    pub codes: Codes,
    pub roll: MelodyRoll,
    pub context: MelodyContext,
}

/// Melody tick (32nd note) nearest to `tick`.
pub fn melody_slot(tick: u64, ppq: u16) -> u64 {
    let ppq = ppq as u64;
    (16 * tick + ppq) / (2 * ppq)
}

fn lower_median(values: &mut [u8]) -> u8 {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

/// Pairs every detected drum loop with each melodic channel playing over it.
///
/// A channel yields a sample when it has at least four onsets inside the
/// window and the resulting roll passes [`filter_melody`] for its own
/// detected key.
pub fn extract_melody_pairs(file: &MidiFile, windows: &[LoopWindow]) -> Vec<MelodySample> {
    let notes: Vec<_> = midi::extract_notes(file).into_iter().filter(|n| n.channel != PERCUSSION_CHANNEL).collect();
    let mut out = Vec::new();
    for window in windows {
        let first = 2 * window.start_step as u64;
        let span = first..first + MELODY_TICKS as u64;
        for channel in 0..16u8 {
            let mut roll = MelodyRoll::empty();
            let mut pitches = Vec::new();
            for n in notes.iter().filter(|n| n.channel == channel) {
                let slot = melody_slot(n.start_tick, file.ppq);
                if span.contains(&slot) {
                    roll.set((slot - first) as usize, n.pitch, true);
                    pitches.push(n.pitch);
                }
            }
            if pitches.len() < MIN_ONSETS {
                continue;
            }
            let Ok(key) = detect_key(&roll) else { continue };
            let start_tick = window.start_step as u64 * file.ppq as u64 / 4;
            let context = MelodyContext {
                instrument: midi::program_at(file, channel, start_tick),
                key,
                octave: (lower_median(&mut pitches) / 12).min(OCTAVES as u8 - 1),
            };
            if filter_melody(&roll, key).is_ok() {
                out.push(MelodySample { codes: window.codes, roll, context });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Generator

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyGenerator {
    /// Row-major embedding tables, 16 values per id.
    pub instrument_embedding: Vec<f64>,
    pub key_embedding: Vec<f64>,
    pub octave_embedding: Vec<f64>,
    pub net: Mlp,
}

fn embedding_row(table: &[f64], id: usize) -> &[f64] {
    &table[id * EMBEDDING_DIM..(id + 1) * EMBEDDING_DIM]
}

impl MelodyGenerator {
    /// Glorot-initialized net; embedding entries drawn from N(0, 0.1^2).
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut dims = vec![INPUT_DIM];
        dims.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        dims.push(ROLL_BITS);
        let net = Mlp::new(&dims, Activation::Relu, Activation::Sigmoid, rng);
        let mut table = |n: usize| (0..n * EMBEDDING_DIM).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            instrument_embedding: table(INSTRUMENTS),
            key_embedding: table(KEYS),
            octave_embedding: table(OCTAVES),
            net,
        }
    }

    /// Flattened drums, then the instrument, key and octave embeddings.
    pub fn assemble_input(&self, codes: &Codes, context: &MelodyContext) -> Result<Vec<f64>, MelodyError> {
        context.validate()?;
        let pattern = decode_codes(codes).map_err(|e| MelodyError::BadCodes(e.to_string()))?;
        let mut input = pattern.to_bits();
        input.reserve(3 * EMBEDDING_DIM);
        input.extend_from_slice(embedding_row(&self.instrument_embedding, context.instrument as usize));
        input.extend_from_slice(embedding_row(&self.key_embedding, context.key.id()));
        input.extend_from_slice(embedding_row(&self.octave_embedding, context.octave as usize));
        Ok(input)
    }

    pub fn probabilities(&self, codes: &Codes, context: &MelodyContext) -> Result<Vec<f64>, MelodyError> {
        let input = self.assemble_input(codes, context)?;
        Ok(self.net.predict(&input).expect("input is 496 wide"))
    }

    pub fn save(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_TAG);
        w.f64s(&self.instrument_embedding);
        w.f64s(&self.key_embedding);
        w.f64s(&self.octave_embedding);
        w.mlp(&self.net);
        w.finish()
    }

    pub fn load(bytes: &[u8]) -> Result<Self, MelodyError> {
        let mut r = Reader::new(bytes, CHECKPOINT_TAG)?;
        let instrument_embedding = r.f64s()?;
        let key_embedding = r.f64s()?;
        let octave_embedding = r.f64s()?;
        let net = r.mlp()?;
        r.finish()?;
        let ok = instrument_embedding.len() == INSTRUMENTS * EMBEDDING_DIM
            && key_embedding.len() == KEYS * EMBEDDING_DIM
            && octave_embedding.len() == OCTAVES * EMBEDDING_DIM
            && net.input_dim() == INPUT_DIM
            && net.output_dim() == ROLL_BITS;
        if !ok {
            return Err(CheckpointError::Invalid("melody generator shapes".into()).into());
        }
        Ok(Self { instrument_embedding, key_embedding, octave_embedding, net })
    }
}

pub fn assemble_input(codes: &Codes, context: &MelodyContext, generator: &MelodyGenerator) -> Result<Vec<f64>, MelodyError> {
    generator.assemble_input(codes, context)
}

/// Net parameters, then the instrument, key and octave tables.
impl Parameters for MelodyGenerator {
    fn parameters(&self) -> Vec<&[f64]> {
        let mut p = self.net.parameters();
        p.extend([
            self.instrument_embedding.as_slice(),
            self.key_embedding.as_slice(),
            self.octave_embedding.as_slice(),
        ]);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.net.parameters_mut();
        p.extend([
            self.instrument_embedding.as_mut_slice(),
            self.key_embedding.as_mut_slice(),
            self.octave_embedding.as_mut_slice(),
        ]);
        p
    }
}

pub fn generate_melody(
    generator: &MelodyGenerator,
    codes: &Codes,
    context: &MelodyContext,
    threshold: f64,
) -> Result<MelodyRoll, MelodyError> {
    Ok(MelodyRoll::from_probabilities(&generator.probabilities(codes, context)?, threshold))
}

// ---------------------------------------------------------------------------
// Training

pub struct MelodyGrads {
    pub net: MlpGrads,
    pub instrument: Vec<f64>,
    pub key: Vec<f64>,
    pub octave: Vec<f64>,
}

impl MelodyGrads {
    fn zeros(generator: &MelodyGenerator) -> Self {
        Self {
            net: MlpGrads::zeros_like(&generator.net),
            instrument: vec![0.0; generator.instrument_embedding.len()],
            key: vec![0.0; generator.key_embedding.len()],
            octave: vec![0.0; generator.octave_embedding.len()],
        }
    }

    fn add_assign(&mut self, other: &MelodyGrads) {
        self.net.add_assign(&other.net);
        for (a, b) in [(&mut self.instrument, &other.instrument), (&mut self.key, &other.key), (&mut self.octave, &other.octave)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Laid out like [`MelodyGenerator`]'s parameters.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.net.slices();
        s.extend([self.instrument.as_slice(), self.key.as_slice(), self.octave.as_slice()]);
        s
    }
}

/// Weight of positive targets: `#zeros / #ones` of the batch, clamped to [1, 50].
pub fn positive_weight(samples: &[MelodySample]) -> f64 {
    let ones: usize = samples.iter().map(|s| s.roll.onset_count()).sum();
    let zeros = samples.len() * ROLL_BITS - ones;
    if ones == 0 {
        return MAX_POSITIVE_WEIGHT;
    }
    (zeros as f64 / ones as f64).clamp(1.0, MAX_POSITIVE_WEIGHT)
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

fn weighted_bce_terms<'a>(probs: &'a [f64], roll: &'a MelodyRoll, pos_weight: f64) -> impl Iterator<Item = f64> + 'a {
    probs.iter().enumerate().map(move |(i, &p)| {
        let p = p.clamp(nn::BCE_EPS, 1.0 - nn::BCE_EPS);
        if roll.rows[i / PITCHES] >> (i % PITCHES) & 1 == 1 {
            -pos_weight * p.ln()
        } else {
            -(1.0 - p).ln()
        }
    })
}

/// Mean positively-weighted cross-entropy over all batch elements.
pub fn melody_loss(generator: &MelodyGenerator, batch: &[MelodySample], pos_weight: f64) -> Result<f64, MelodyError> {
    let n = (batch.len() * ROLL_BITS) as f64;
    let mut per_sample = Vec::with_capacity(batch.len());
    for s in batch {
        let probs = generator.probabilities(&s.codes, &s.context)?;
        per_sample.push(compensated_sum(weighted_bce_terms(&probs, &s.roll, pos_weight)));
    }
    Ok(compensated_sum(per_sample) / n)
}

const GRAD_CHUNK: usize = 4;

fn chunk_gradients(
    generator: &MelodyGenerator,
    chunk: &[MelodySample],
    pos_weight: f64,
    n: f64,
) -> Result<(f64, MelodyGrads), MelodyError> {
    let mut grads = MelodyGrads::zeros(generator);
    let mut loss = 0.0;
    for s in chunk {
        let input = generator.assemble_input(&s.codes, &s.context)?;
        let trace = generator.net.forward(&input).expect("input is 496 wide");
        let out = trace.output();
        loss += compensated_sum(weighted_bce_terms(out, &s.roll, pos_weight)) / n;
        let logit_grad: Vec<f64> = out
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if s.roll.rows[i / PITCHES] >> (i % PITCHES) & 1 == 1 {
                    pos_weight * (p - 1.0) / n
                } else {
                    p / n
                }
            })
            .collect();
        let input_grad = generator.net.backward_pre_into(&trace, &logit_grad, Some(&mut grads.net)).expect("shapes");
        let emb = &input_grad[PATTERN_BITS..];
        let targets = [
            (&mut grads.instrument, s.context.instrument as usize),
            (&mut grads.key, s.context.key.id()),
            (&mut grads.octave, s.context.octave as usize),
        ];
        for (k, (table, id)) in targets.into_iter().enumerate() {
            let src = &emb[k * EMBEDDING_DIM..(k + 1) * EMBEDDING_DIM];
            table[id * EMBEDDING_DIM..(id + 1) * EMBEDDING_DIM].iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }
    Ok((loss, grads))
}

/// Loss of [`melody_loss`] and its gradient for the net and embedding
/// tables. Fixed-size chunks are evaluated in parallel and summed in order,
/// so the result does not depend on the thread count.
pub fn melody_gradients(
    generator: &MelodyGenerator,
    batch: &[MelodySample],
    pos_weight: f64,
) -> Result<(f64, MelodyGrads), MelodyError> {
    let n = (batch.len() * ROLL_BITS) as f64;
    let parts: Vec<_> =
        batch.par_chunks(GRAD_CHUNK).map(|c| chunk_gradients(generator, c, pos_weight, n)).collect::<Result<_, _>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or(MelodyError::EmptyCorpus)?;
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl Default for MelodyTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 16, seed: 0, learning_rate: 1e-3 }
    }
}

pub fn train_generator(samples: &[MelodySample], config: &MelodyTrainConfig) -> Result<MelodyGenerator, MelodyError> {
    train_generator_with_report(samples, config).map(|(g, _)| g)
}

/// Mini-batch Adam on [`melody_loss`], returning the per-epoch mean loss.
pub fn train_generator_with_report(
    samples: &[MelodySample],
    config: &MelodyTrainConfig,
) -> Result<(MelodyGenerator, Vec<f64>), MelodyError> {
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(MelodyError::InvalidConfig("epochs, batch_size and learning_rate must be positive".into()));
    }
    if samples.is_empty() {
        return Err(MelodyError::EmptyCorpus);
    }
    for s in samples {
        s.context.validate()?;
        decode_codes(&s.codes).map_err(|e| MelodyError::BadCodes(e.to_string()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = MelodyGenerator::new(&mut rng);
    let mut adam = AdamState::for_model(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() }, &generator);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<MelodySample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let weight = positive_weight(&batch);
            let (loss, grads) = melody_gradients(&generator, &batch, weight)?;
            if !loss.is_finite() {
                return Err(MelodyError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * batch.len() as f64 / samples.len() as f64;
            nn::adam_step(&mut generator.parameters_mut(), &grads.slices(), &mut adam).expect("shapes");
        }
        log::debug!("melody epoch {epoch}: loss {epoch_loss:.6}");
        history.push(epoch_loss);
    }
    Ok((generator, history))
}

/// Fraction of the samples' onsets that the generator reproduces at `threshold`.
pub fn onset_recall(generator: &MelodyGenerator, samples: &[MelodySample], threshold: f64) -> Result<f64, MelodyError> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in samples {
        let roll = generate_melody(generator, &s.codes, &s.context, threshold)?;
        for (a, b) in s.roll.rows.iter().zip(&roll.rows) {
            hit += (a & b).count_ones() as usize;
            total += a.count_ones() as usize;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

// ---------------------------------------------------------------------------
// Dataset file

/// Header line, then per sample: 32 drum codes, `instrument,key,octave`, and
/// 64 hex rows, tab-separated.
pub fn write_melody_dataset(samples: &[MelodySample]) -> Vec<u8> {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for s in samples {
        let codes = s.codes.iter().map(u16::to_string).collect::<Vec<_>>().join(",");
        let c = &s.context;
        out.push_str(&format!("{codes}\t{},{},{}\t{}\n", c.instrument, c.key.id(), c.octave, s.roll.to_hex()));
    }
    out.into_bytes()
}

pub fn read_melody_dataset(bytes: &[u8]) -> Result<Vec<MelodySample>, MelodyError> {
    let malformed = |row: usize, reason: String| MelodyError::MalformedRow { row, reason };
    let text = std::str::from_utf8(bytes).map_err(|_| malformed(0, "not UTF-8".into()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == DATASET_HEADER => {}
        _ => return Err(malformed(1, format!("missing header {DATASET_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(row, format!("expected 3 columns, got {}", fields.len())));
        }
        let codes: Vec<u16> = fields[0]
            .split(',')
            .map(|v| v.trim().parse::<u16>().ok().filter(|&c| c <= MAX_CODE))
            .collect::<Option<_>>()
            .ok_or_else(|| malformed(row, "bad drum code".into()))?;
        let codes: Codes = codes.try_into().map_err(|_| malformed(row, format!("expected {STEPS} drum codes")))?;
        let ids: Vec<usize> = fields[1]
            .split(',')
            .map(|v| v.trim().parse().ok())
            .collect::<Option<_>>()
            .ok_or_else(|| malformed(row, "bad context ids".into()))?;
        let [instrument, key, octave] = ids[..] else {
            return Err(malformed(row, "expected instrument,key,octave".into()));
        };
        let context = MelodyContext::new(instrument, key, octave).map_err(|e| malformed(row, e.to_string()))?;
        let roll = MelodyRoll::from_hex(fields[2]).map_err(|e| malformed(row, e))?;
        out.push(MelodySample { codes, roll, context });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::max_relative_error;

    const C4: u8 = 60;

    fn c_major_run() -> Vec<(usize, u8)> {
        [0u8, 2, 4, 5, 7, 9, 11, 12].iter().enumerate().map(|(i, &d)| (i * 4, C4 + d)).collect()
    }

    #[test]
    fn roll_bits_and_hex() {
        let roll = MelodyRoll::from_onsets(&[(0, 0), (5, 127), (63, 60)]);
        assert_eq!(roll.onset_count(), 3);
        assert_eq!(roll.pitches_at(5).collect::<Vec<_>>(), vec![127]);
        let bits = roll.to_bits();
        assert_eq!(bits.len(), ROLL_BITS);
        assert_eq!(bits[5 * 128 + 127], 1.0);
        assert_eq!(MelodyRoll::from_probabilities(&bits, 0.5), roll);
        assert_eq!(MelodyRoll::from_hex(&roll.to_hex()).unwrap(), roll);
        assert!(MelodyRoll::from_hex("0,1").is_err());
        assert_eq!(roll.transpose(1), None);
    }

    #[test]
    fn key_names() {
        assert_eq!(KeyId::from_parts(0, false).to_string(), "C major");
        assert_eq!(KeyId::from_parts(9, true).to_string(), "A minor");
        assert_eq!("Am".parse::<KeyId>().unwrap(), KeyId::from_parts(9, true));
        assert_eq!("Bb major".parse::<KeyId>().unwrap(), KeyId::from_parts(10, false));
        assert_eq!("f#".parse::<KeyId>().unwrap(), KeyId::from_parts(6, false));
        assert!("H".parse::<KeyId>().is_err());
        assert!(KeyId::new(24).is_err());
    }

    #[test]
    fn c_major_score_table() {
        let scores = key_scores(&c_major_run());
        // notes 3+1+1+1+2+1+1+3, seven diatonic pairs, final tonic
        assert_eq!(scores[KeyId::from_parts(0, false).id()], 13 + 7 + 2);
        // A minor: C E F G A B C weigh 1,2,1,1,3,1,1 plus D 1; no final tonic
        assert_eq!(scores[KeyId::from_parts(9, true).id()], 11 + 7);
        assert_eq!(detect_key_onsets(&c_major_run()).unwrap(), KeyId::from_parts(0, false));
        let up: Vec<_> = c_major_run().into_iter().map(|(t, p)| (t, p + 2)).collect();
        assert_eq!(detect_key_onsets(&up).unwrap(), KeyId::from_parts(2, false));
        let a: Vec<_> = (0..5).map(|t| (t * 8, 69u8)).collect();
        assert_eq!(detect_key_onsets(&a).unwrap(), KeyId::from_parts(9, false));
        assert_eq!(detect_key_onsets(&[]), Err(MelodyError::EmptyMelody));
    }

    #[test]
    fn filter_examples() {
        let target = KeyId::from_parts(0, false);
        assert_eq!(filter_melody(&MelodyRoll::empty(), target), Err(RejectReason::TooFewOnsetTicks));
        let mut scale: Vec<(usize, u8)> = c_major_run();
        scale.extend([11u8, 9, 7, 5, 4, 2, 0].iter().enumerate().map(|(i, &d)| (32 + i * 4, C4 + d)));
        let roll = MelodyRoll::from_onsets(&scale);
        assert_eq!(filter_melody(&roll, target), Ok(()));
        let mut clash = roll;
        clash.set(0, C4 + 1, true);
        assert_eq!(filter_melody(&clash, target), Err(RejectReason::CloseInterval));
    }

    #[test]
    fn cyclic_silence() {
        let roll = MelodyRoll::from_onsets(&[(10, 60), (20, 62), (30, 64), (40, 65)]);
        // 41..=63 then 0..=9
        assert_eq!(longest_cyclic_silence(&roll), 33);
        assert_eq!(longest_cyclic_silence(&MelodyRoll::empty()), 64);
    }

    #[test]
    fn assemble_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = MelodyGenerator::new(&mut rng);
        let a = MelodyContext::new(3, 4, 5).unwrap();
        let b = MelodyContext::new(3, 7, 5).unwrap();
        let x = g.assemble_input(&[0; 32], &a).unwrap();
        let y = g.assemble_input(&[0; 32], &b).unwrap();
        assert_eq!(x.len(), INPUT_DIM);
        let differ: Vec<usize> = (0..INPUT_DIM).filter(|&i| x[i] != y[i]).collect();
        assert!(!differ.is_empty() && differ.iter().all(|i| (464..480).contains(i)));
        g.instrument_embedding.fill(0.0);
        g.key_embedding.fill(0.0);
        g.octave_embedding.fill(0.0);
        assert!(g.assemble_input(&[0; 32], &a).unwrap().iter().all(|&v| v == 0.0));
        let bad = MelodyContext { octave: 11, ..a };
        assert!(matches!(g.assemble_input(&[0; 32], &bad), Err(MelodyError::IdOutOfRange { .. })));
    }

    pub(super) fn toy_samples(n: usize) -> Vec<MelodySample> {
        (0..n)
            .map(|i| {
                let mut codes = [0u16; 32];
                codes[i % 32] = 1 + i as u16;
                codes[(i * 7 + 3) % 32] |= 0b100;
                let onsets: Vec<_> = (0..6).map(|k| ((k * 9 + i) % 64, 60 + ((k * 2 + i) % 12) as u8)).collect();
                MelodySample {
                    codes,
                    roll: MelodyRoll::from_onsets(&onsets),
                    context: MelodyContext::new(i % 5, i % 24, 4 + i % 2).unwrap(),
                }
            })
            .collect()
    }

    fn relu_margin(g: &MelodyGenerator, batch: &[MelodySample]) -> f64 {
        batch
            .iter()
            .map(|s| {
                let t = g.net.forward(&g.assemble_input(&s.codes, &s.context).unwrap()).unwrap();
                t.pre[..t.pre.len() - 1].iter().flatten().fold(f64::INFINITY, |m, v| m.min(v.abs()))
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = toy_samples(2);
        // Redraw until no hidden ReLU is within reach of the finite-difference step.
        let mut g = loop {
            let g = MelodyGenerator::new(&mut rng);
            if relu_margin(&g, &batch) > 1e-4 {
                break g;
            }
        };
        let w = positive_weight(&batch);
        let (loss, grads) = melody_gradients(&g, &batch, w).unwrap();
        assert!((loss - melody_loss(&g, &batch, w).unwrap()).abs() < 1e-12);
        let sizes: Vec<usize> = g.parameters().iter().map(|p| p.len()).collect();
        let mut indices = Vec::new();
        for (s, &len) in sizes.iter().enumerate() {
            for _ in 0..12 {
                indices.push((s, rng.random_range(0..len)));
            }
        }
        // every used embedding entry
        for ctx in batch.iter().map(|b| b.context) {
            let n = sizes.len();
            for d in 0..EMBEDDING_DIM {
                indices.push((n - 3, ctx.instrument as usize * EMBEDDING_DIM + d));
                indices.push((n - 2, ctx.key.id() * EMBEDDING_DIM + d));
                indices.push((n - 1, ctx.octave as usize * EMBEDDING_DIM + d));
            }
        }
        let err = max_relative_error(&mut g, &grads.slices(), &indices, 1e-5, |m| melody_loss(m, &batch, w).unwrap());
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn generation_shape_and_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = MelodyGenerator::new(&mut rng);
        let ctx = MelodyContext::new(0, 0, 5).unwrap();
        let codes = toy_samples(1)[0].codes;
        let a = generate_melody(&g, &codes, &ctx, 0.5).unwrap();
        assert_eq!(a, generate_melody(&g, &codes, &ctx, 0.5).unwrap());
        assert!(generate_melody(&g, &codes, &ctx, 1.0).unwrap().is_empty());
        assert_eq!(MelodyGenerator::load(&g.save()).unwrap(), g);
    }

    #[test]
    fn loss_decreases_early() {
        let samples = toy_samples(12);
        for seed in 0..3 {
            let cfg = MelodyTrainConfig { epochs: 10, batch_size: 4, seed, learning_rate: 1e-3 };
            let (_, history) = train_generator_with_report(&samples, &cfg).unwrap();
            assert!(history[9] < history[0], "seed {seed}: {history:?}");
        }
        assert_eq!(train_generator(&[], &MelodyTrainConfig::default()), Err(MelodyError::EmptyCorpus));
    }

    #[test]
    fn dataset_roundtrip() {
        let samples = toy_samples(5);
        let bytes = write_melody_dataset(&samples);
        assert_eq!(read_melody_dataset(&bytes).unwrap(), samples);
        assert!(read_melody_dataset(b"1\t2\t3\n").is_err());
        let bad = format!("{DATASET_HEADER}\n{}\t0,24,0\t{}\n", ["0"; 32].join(","), MelodyRoll::empty().to_hex());
        assert!(read_melody_dataset(bad.as_bytes()).is_err());
    }
}
