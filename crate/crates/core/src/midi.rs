//! Standard MIDI File reading and writing.
//!
//! Parsing is lenient: unknown meta events, sysex blocks, non-note channel
//! messages and alien chunks are skipped. Only the structural errors that make
//! a file unreadable are reported.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::melody::{MelodyRoll, MELODY_TICKS};
use crate::pattern::{DrumPattern, MergeTable, INSTRUMENTS, STEPS};

/// Zero-based General MIDI percussion channel.
pub const PERCUSSION_CHANNEL: u8 = 9;
/// Resolution used for exported files.
pub const EXPORT_PPQ: u16 = 480;
/// Tempo used when the caller has no preference.
pub const DEFAULT_TEMPO_BPM: f64 = 120.0;

const DRUM_STEP_TICKS: u64 = EXPORT_PPQ as u64 / 4;
const MELODY_TICK_TICKS: u64 = EXPORT_PPQ as u64 / 8;
const EXPORT_VELOCITY: u8 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MidiError {
    #[error("missing MThd header chunk")]
    MissingHeader,
    #[error("chunk declares {declared} bytes but only {available} remain")]
    TruncatedChunk { declared: usize, available: usize },
    #[error("variable-length quantity longer than 4 bytes")]
    BadVlq,
    #[error("SMPTE time division is not supported")]
    SmpteDivisionUnsupported,
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("time division of zero ticks per quarter note")]
    ZeroDivision,
    #[error("unexpected end of track data")]
    UnexpectedEof,
    #[error("data byte {0:#04x} with no running status")]
    MissingStatus(u8),
    #[error("tempo must be positive, got {0}")]
    InvalidTempo(f64),
    #[error("repeat count must be positive")]
    InvalidRepeats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    SingleTrack,
    MultiTrack,
}

impl Format {
    fn code(self) -> u16 {
        match self {
            Format::SingleTrack => 0,
            Format::MultiTrack => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8, velocity: u8 },
    ProgramChange { channel: u8, program: u8 },
    Tempo { micros_per_quarter: u32 },
    TimeSignature { numerator: u8, denominator: u8 },
    EndOfTrack,
}

/// A track event at an absolute tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackEvent {
    pub tick: u64,
    pub kind: EventKind,
}

impl TrackEvent {
    pub fn new(tick: u64, kind: EventKind) -> Self {
        Self { tick, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiFile {
    pub format: Format,
    pub ppq: u16,
    /// Events per track, absolute ticks, each track terminated by `EndOfTrack`.
    pub tracks: Vec<Vec<TrackEvent>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub channel: u8,
    pub pitch: u8,
    pub velocity: u8,
    pub start_tick: u64,
    pub duration_ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignatureEvent {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u8,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self.bytes.get(self.pos).ok_or(MidiError::UnexpectedEof)?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::UnexpectedEof);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::BadVlq)
    }
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Decodes a Standard MIDI File (format 0 or 1, metrical time division).
pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    if bytes.len() < 8 || &bytes[..4] != b"MThd" {
        return Err(MidiError::MissingHeader);
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    let available = bytes.len() - 8;
    if header_len > available {
        return Err(MidiError::TruncatedChunk { declared: header_len, available });
    }
    if header_len < 6 {
        return Err(MidiError::TruncatedChunk { declared: 6, available: header_len });
    }
    let header = &bytes[8..8 + header_len];
    let format = match be_u16(&header[0..2]) {
        0 => Format::SingleTrack,
        1 => Format::MultiTrack,
        other => return Err(MidiError::UnsupportedFormat(other)),
    };
    let division = be_u16(&header[4..6]);
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivisionUnsupported);
    }
    if division == 0 {
        return Err(MidiError::ZeroDivision);
    }

    let mut pos = 8 + header_len;
    let mut tracks = Vec::new();
    // Trailing bytes too short for a chunk header are ignored.
    while bytes.len() - pos >= 8 {
        let id = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        pos += 8;
        let available = bytes.len() - pos;
        if len > available {
            return Err(MidiError::TruncatedChunk { declared: len, available });
        }
        if id == b"MTrk" {
            tracks.push(parse_track(&bytes[pos..pos + len])?);
        }
        pos += len;
    }

    Ok(MidiFile { format, ppq: division, tracks })
}

fn parse_track(data: &[u8]) -> Result<Vec<TrackEvent>, MidiError> {
    let mut cur = Cursor::new(data);
    let mut events = Vec::new();
    let mut tick = 0u64;
    let mut running: Option<u8> = None;

    while cur.remaining() > 0 {
        tick += u64::from(cur.vlq()?);
        let first = cur.u8()?;
        match first {
            0xFF => {
                let meta_type = cur.u8()?;
                let len = cur.vlq()? as usize;
                let payload = cur.take(len)?;
                match meta_type {
                    0x2F => {
                        events.push(TrackEvent::new(tick, EventKind::EndOfTrack));
                        return Ok(events);
                    }
                    0x51 if len == 3 => {
                        let micros = u32::from_be_bytes([0, payload[0], payload[1], payload[2]]);
                        events.push(TrackEvent::new(tick, EventKind::Tempo { micros_per_quarter: micros }));
                    }
                    0x58 if len >= 2 && payload[1] <= 5 => {
                        events.push(TrackEvent::new(
                            tick,
                            EventKind::TimeSignature { numerator: payload[0], denominator: 1 << payload[1] },
                        ));
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                let len = cur.vlq()? as usize;
                cur.take(len)?;
            }
            0xF1..=0xFE => {
                // System common/real-time bytes have no business in a file;
                // skip them with their nominal data lengths.
                let skip = match first {
                    0xF1 | 0xF3 => 1,
                    0xF2 => 2,
                    _ => 0,
                };
                cur.take(skip)?;
            }
            _ => {
                let (status, first_data) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, cur.u8()?)
                } else {
                    (running.ok_or(MidiError::MissingStatus(first))?, first)
                };
                let channel = status & 0x0F;
                let d1 = first_data & 0x7F;
                let kind = match status >> 4 {
                    0x8 => {
                        let d2 = cur.u8()? & 0x7F;
                        Some(EventKind::NoteOff { channel, pitch: d1, velocity: d2 })
                    }
                    0x9 => {
                        let d2 = cur.u8()? & 0x7F;
                        Some(EventKind::NoteOn { channel, pitch: d1, velocity: d2 })
                    }
                    0xA | 0xB | 0xE => {
                        cur.u8()?;
                        None
                    }
                    0xC => Some(EventKind::ProgramChange { channel, program: d1 }),
                    _ => None,
                };
                if let Some(kind) = kind {
                    events.push(TrackEvent::new(tick, kind));
                }
            }
        }
    }

    // Missing end-of-track meta event.
    events.push(TrackEvent::new(tick, EventKind::EndOfTrack));
    Ok(events)
}

fn track_end(track: &[TrackEvent]) -> u64 {
    track.iter().map(|e| e.tick).max().unwrap_or(0)
}

/// Pairs note-on/note-off events per `(channel, pitch)` in FIFO order.
///
/// Notes still sounding at the end of a track are closed there. Note-offs
/// without a matching note-on are dropped. Each track's notes are sorted by
/// start tick; tracks are then merged with a stable sort.
pub fn extract_notes(file: &MidiFile) -> Vec<NoteEvent> {
    let mut all = Vec::new();
    for track in &file.tracks {
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
        let mut notes = Vec::new();
        for event in track {
            match event.kind {
                EventKind::NoteOn { channel, pitch, velocity } if velocity > 0 => {
                    open.entry((channel, pitch)).or_default().push_back((event.tick, velocity));
                }
                EventKind::NoteOn { channel, pitch, .. } | EventKind::NoteOff { channel, pitch, .. } => {
                    if let Some((start, velocity)) = open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                        notes.push(NoteEvent {
                            channel,
                            pitch,
                            velocity,
                            start_tick: start,
                            duration_ticks: event.tick - start,
                        });
                    }
                }
                _ => {}
            }
        }
        let end = track_end(track);
        let mut dangling: Vec<_> = open
            .into_iter()
            .flat_map(|((channel, pitch), q)| {
                q.into_iter().map(move |(start, velocity)| NoteEvent {
                    channel,
                    pitch,
                    velocity,
                    start_tick: start,
                    duration_ticks: end - start,
                })
            })
            .collect();
        dangling.sort_by_key(|n| (n.start_tick, n.channel, n.pitch));
        notes.extend(dangling);
        notes.sort_by_key(|n| n.start_tick);
        all.extend(notes);
    }
    all.sort_by_key(|n| n.start_tick);
    all
}

pub fn time_signatures(file: &MidiFile) -> Vec<TimeSignatureEvent> {
    let mut out: Vec<_> = file
        .tracks
        .iter()
        .flatten()
        .filter_map(|e| match e.kind {
            EventKind::TimeSignature { numerator, denominator } => {
                Some(TimeSignatureEvent { tick: e.tick, numerator, denominator })
            }
            _ => None,
        })
        .collect();
    out.sort_by_key(|t| t.tick);
    out
}

/// True when every time signature is 4/4. A file without any time signature
/// is 4/4 by SMF default.
pub fn is_four_four(file: &MidiFile) -> bool {
    time_signatures(file).iter().all(|t| t.numerator == 4 && t.denominator == 4)
}

/// Program active on `channel` at `tick`; program 0 when none was set.
pub fn program_at(file: &MidiFile, channel: u8, tick: u64) -> u8 {
    let mut best: Option<(u64, u8)> = None;
    for event in file.tracks.iter().flatten() {
        if let EventKind::ProgramChange { channel: c, program } = event.kind {
            if c == channel && event.tick <= tick && best.is_none_or(|(t, _)| event.tick >= t) {
                best = Some((event.tick, program));
            }
        }
    }
    best.map_or(0, |(_, p)| p)
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(buf[i] | cont);
    }
}

fn encode_track(events: &[TrackEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut last = 0u64;
    let mut ended = false;
    for event in events {
        // Tick deltas beyond the 28-bit VLQ range cannot be represented.
        let delta = event.tick.saturating_sub(last).min(0x0FFF_FFFF) as u32;
        last = event.tick;
        write_vlq(&mut out, delta);
        match event.kind {
            EventKind::NoteOn { channel, pitch, velocity } => {
                out.extend([0x90 | (channel & 0x0F), pitch & 0x7F, velocity & 0x7F])
            }
            EventKind::NoteOff { channel, pitch, velocity } => {
                out.extend([0x80 | (channel & 0x0F), pitch & 0x7F, velocity & 0x7F])
            }
            EventKind::ProgramChange { channel, program } => out.extend([0xC0 | (channel & 0x0F), program & 0x7F]),
            EventKind::Tempo { micros_per_quarter } => {
                let b = micros_per_quarter.min(0xFF_FFFF).to_be_bytes();
                out.extend([0xFF, 0x51, 0x03, b[1], b[2], b[3]]);
            }
            EventKind::TimeSignature { numerator, denominator } => {
                let pow = denominator.max(1).trailing_zeros() as u8;
                out.extend([0xFF, 0x58, 0x04, numerator, pow, 24, 8]);
            }
            EventKind::EndOfTrack => {
                out.extend([0xFF, 0x2F, 0x00]);
                ended = true;
                break;
            }
        }
    }
    if !ended {
        write_vlq(&mut out, 0);
        out.extend([0xFF, 0x2F, 0x00]);
    }
    out
}

impl MidiFile {
    /// Serializes the file. Events must be in tick order within each track.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(b"MThd");
        out.extend(6u32.to_be_bytes());
        out.extend(self.format.code().to_be_bytes());
        out.extend((self.tracks.len() as u16).to_be_bytes());
        out.extend(self.ppq.to_be_bytes());
        for track in &self.tracks {
            let data = encode_track(track);
            out.extend(b"MTrk");
            out.extend((data.len() as u32).to_be_bytes());
            out.extend(data);
        }
        out
    }
}

/// Sorts note events so that note-offs precede note-ons at the same tick and
/// appends the end-of-track marker.
fn finish_track(mut events: Vec<TrackEvent>, end: u64) -> Vec<TrackEvent> {
    let rank = |k: &EventKind| match k {
        EventKind::Tempo { .. } | EventKind::TimeSignature { .. } | EventKind::ProgramChange { .. } => 0,
        EventKind::NoteOff { .. } => 1,
        EventKind::NoteOn { .. } => 2,
        EventKind::EndOfTrack => 3,
    };
    events.sort_by_key(|e| (e.tick, rank(&e.kind)));
    let end = end.max(events.last().map_or(0, |e| e.tick));
    events.push(TrackEvent::new(end, EventKind::EndOfTrack));
    events
}

fn note_pair(events: &mut Vec<TrackEvent>, channel: u8, pitch: u8, start: u64, duration: u64) {
    events.push(TrackEvent::new(start, EventKind::NoteOn { channel, pitch, velocity: EXPORT_VELOCITY }));
    events.push(TrackEvent::new(start + duration, EventKind::NoteOff { channel, pitch, velocity: 0 }));
}

/// Renders a drum loop (and optionally a melody over it) as a format-1 file
/// at 480 ppq. Drum steps are sixteenth notes, melody ticks thirty-second
/// notes, and every melody note lasts exactly one melody tick.
pub fn write_midi(
    drums: &DrumPattern,
    melody: Option<&MelodyRoll>,
    melody_program: u8,
    tempo_bpm: f64,
    repeats: u32,
) -> Result<Vec<u8>, MidiError> {
    if !(tempo_bpm.is_finite() && tempo_bpm > 0.0) {
        return Err(MidiError::InvalidTempo(tempo_bpm));
    }
    if repeats == 0 {
        return Err(MidiError::InvalidRepeats);
    }
    let loop_ticks = STEPS as u64 * DRUM_STEP_TICKS;
    let end = loop_ticks * u64::from(repeats);
    let micros = (60_000_000.0 / tempo_bpm).round().clamp(1.0, f64::from(0xFF_FFFFu32)) as u32;

    let conductor = finish_track(
        vec![
            TrackEvent::new(0, EventKind::Tempo { micros_per_quarter: micros }),
            TrackEvent::new(0, EventKind::TimeSignature { numerator: 4, denominator: 4 }),
        ],
        end,
    );

    let table = MergeTable::default();
    let mut drum_events = Vec::new();
    for rep in 0..u64::from(repeats) {
        for step in 0..STEPS {
            for class in 0..INSTRUMENTS {
                if drums.get(class, step) {
                    let start = rep * loop_ticks + step as u64 * DRUM_STEP_TICKS;
                    let pitch = table.representative(class as u8).expect("default table covers all classes");
                    note_pair(&mut drum_events, PERCUSSION_CHANNEL, pitch, start, DRUM_STEP_TICKS);
                }
            }
        }
    }
    let mut tracks = vec![conductor, finish_track(drum_events, end)];

    if let Some(roll) = melody {
        let mut events = vec![TrackEvent::new(0, EventKind::ProgramChange { channel: 0, program: melody_program & 0x7F })];
        for rep in 0..u64::from(repeats) {
            for tick in 0..MELODY_TICKS {
                for pitch in roll.pitches_at(tick) {
                    let start = rep * loop_ticks + tick as u64 * MELODY_TICK_TICKS;
                    note_pair(&mut events, 0, pitch, start, MELODY_TICK_TICKS);
                }
            }
        }
        tracks.push(finish_track(events, end));
    }

    Ok(MidiFile { format: Format::MultiTrack, ppq: EXPORT_PPQ, tracks }.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, ntracks: u16, division: u16) -> Vec<u8> {
        let mut b = b"MThd".to_vec();
        b.extend(6u32.to_be_bytes());
        b.extend(format.to_be_bytes());
        b.extend(ntracks.to_be_bytes());
        b.extend(division.to_be_bytes());
        b
    }

    fn chunk(body: &[u8]) -> Vec<u8> {
        let mut b = b"MTrk".to_vec();
        b.extend((body.len() as u32).to_be_bytes());
        b.extend(body);
        b
    }

    #[test]
    fn empty_input_is_missing_header() {
        assert_eq!(parse_midi(&[]), Err(MidiError::MissingHeader));
        assert_eq!(parse_midi(b"RIFF\0\0\0\0"), Err(MidiError::MissingHeader));
    }

    #[test]
    fn hand_assembled_header() {
        let mut bytes = header(1, 1, 0x01E0);
        bytes.extend(chunk(&[0x00, 0xFF, 0x2F, 0x00]));
        let file = parse_midi(&bytes).unwrap();
        assert_eq!(file.format, Format::MultiTrack);
        assert_eq!(file.ppq, 480);
        assert_eq!(file.tracks, vec![vec![TrackEvent::new(0, EventKind::EndOfTrack)]]);
    }

    #[test]
    fn snare_note_with_velocity_zero_off() {
        // delta 0: note-on ch9 38 vel 100; delta 480 (0x83 0x60): running-status note-on vel 0.
        let body = [0x00, 0x99, 38, 100, 0x83, 0x60, 38, 0, 0x00, 0xFF, 0x2F, 0x00];
        let mut bytes = header(1, 1, 480);
        bytes.extend(chunk(&body));
        let file = parse_midi(&bytes).unwrap();
        let notes = extract_notes(&file);
        assert_eq!(
            notes,
            vec![NoteEvent { channel: 9, pitch: 38, velocity: 100, start_tick: 0, duration_ticks: 480 }]
        );
    }

    #[test]
    fn structural_errors() {
        let mut smpte = header(1, 1, 0xE728);
        smpte.extend(chunk(&[0x00, 0xFF, 0x2F, 0x00]));
        assert_eq!(parse_midi(&smpte), Err(MidiError::SmpteDivisionUnsupported));

        let mut truncated = header(0, 1, 96);
        truncated.extend(b"MTrk");
        truncated.extend(100u32.to_be_bytes());
        truncated.extend([0x00, 0xFF]);
        assert_eq!(parse_midi(&truncated), Err(MidiError::TruncatedChunk { declared: 100, available: 2 }));

        let mut vlq = header(0, 1, 96);
        vlq.extend(chunk(&[0x81, 0x81, 0x81, 0x81, 0x01, 0x90, 60, 100]));
        assert_eq!(parse_midi(&vlq), Err(MidiError::BadVlq));

        let mut fmt2 = header(2, 1, 96);
        fmt2.extend(chunk(&[0x00, 0xFF, 0x2F, 0x00]));
        assert_eq!(parse_midi(&fmt2), Err(MidiError::UnsupportedFormat(2)));

        let mut no_status = header(0, 1, 96);
        no_status.extend(chunk(&[0x00, 0x3C, 0x40]));
        assert_eq!(parse_midi(&no_status), Err(MidiError::MissingStatus(0x3C)));
    }

    #[test]
    fn skips_sysex_and_unknown_meta() {
        let body = [
            0x00, 0xF0, 0x03, 0x7E, 0x7F, 0xF7, // sysex
            0x00, 0xFF, 0x03, 0x02, b'h', b'i', // track name
            0x00, 0xB0, 0x07, 0x64, // controller
            0x00, 0xC1, 0x05, // program change
            0x10, 0x91, 60, 90, //
            0x10, 0x81, 60, 0, //
        ];
        let mut bytes = header(0, 1, 96);
        bytes.extend(chunk(&body));
        let file = parse_midi(&bytes).unwrap();
        let notes = extract_notes(&file);
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].start_tick, 16);
        assert_eq!(notes[0].duration_ticks, 16);
        assert_eq!(program_at(&file, 1, 0), 5);
        assert_eq!(program_at(&file, 2, 0), 0);
        // A missing end-of-track marker is supplied.
        assert_eq!(file.tracks[0].last().unwrap().kind, EventKind::EndOfTrack);
    }

    fn file_with(events: Vec<TrackEvent>) -> MidiFile {
        MidiFile { format: Format::SingleTrack, ppq: 96, tracks: vec![events] }
    }

    #[test]
    fn fifo_matching_of_overlapping_notes() {
        let on = |t| TrackEvent::new(t, EventKind::NoteOn { channel: 0, pitch: 60, velocity: 80 });
        let off = |t| TrackEvent::new(t, EventKind::NoteOff { channel: 0, pitch: 60, velocity: 0 });
        let file = file_with(vec![on(0), on(10), off(20), off(30), TrackEvent::new(30, EventKind::EndOfTrack)]);
        let spans: Vec<_> = extract_notes(&file).iter().map(|n| (n.start_tick, n.duration_ticks)).collect();
        assert_eq!(spans, vec![(0, 20), (10, 20)]);
    }

    #[test]
    fn unmatched_events() {
        let file = file_with(vec![
            TrackEvent::new(0, EventKind::NoteOff { channel: 0, pitch: 61, velocity: 0 }),
            TrackEvent::new(5, EventKind::NoteOn { channel: 0, pitch: 62, velocity: 80 }),
            TrackEvent::new(50, EventKind::EndOfTrack),
        ]);
        let notes = extract_notes(&file);
        assert_eq!(notes.len(), 1);
        assert_eq!((notes[0].pitch, notes[0].start_tick, notes[0].duration_ticks), (62, 5, 45));
        assert!(extract_notes(&file_with(vec![TrackEvent::new(0, EventKind::EndOfTrack)])).is_empty());
    }

    #[test]
    fn four_four_detection() {
        let ts = |t, n, d| TrackEvent::new(t, EventKind::TimeSignature { numerator: n, denominator: d });
        let eot = TrackEvent::new(4000, EventKind::EndOfTrack);
        assert!(is_four_four(&file_with(vec![eot])));
        assert!(!is_four_four(&file_with(vec![ts(0, 3, 4), eot])));
        assert!(!is_four_four(&file_with(vec![ts(0, 4, 4), ts(1920, 7, 8), eot])));
        assert!(is_four_four(&file_with(vec![ts(0, 4, 4), ts(1920, 4, 4), eot])));
    }

    #[test]
    fn writer_rejects_bad_arguments() {
        let p = DrumPattern::empty();
        assert_eq!(write_midi(&p, None, 0, 0.0, 1), Err(MidiError::InvalidTempo(0.0)));
        assert!(matches!(write_midi(&p, None, 0, f64::NAN, 1), Err(MidiError::InvalidTempo(_))));
        assert_eq!(write_midi(&p, None, 0, 120.0, 0), Err(MidiError::InvalidRepeats));
    }

    #[test]
    fn empty_pattern_exports_parseable_file() {
        let bytes = write_midi(&DrumPattern::empty(), None, 0, DEFAULT_TEMPO_BPM, 1).unwrap();
        let file = parse_midi(&bytes).unwrap();
        assert_eq!(file.ppq, 480);
        assert_eq!(file.format, Format::MultiTrack);
        assert!(extract_notes(&file).is_empty());
        assert!(is_four_four(&file));
    }

    #[test]
    fn kick_every_fourth_step() {
        let mut p = DrumPattern::empty();
        for step in (0..STEPS).step_by(4) {
            p.set(0, step, true);
        }
        let file = parse_midi(&write_midi(&p, None, 0, 120.0, 2).unwrap()).unwrap();
        let starts: Vec<_> = extract_notes(&file).iter().map(|n| (n.channel, n.start_tick)).collect();
        let expected: Vec<_> = (0..16).map(|i| (9, i * 480)).collect();
        assert_eq!(starts, expected);
    }

    #[test]
    fn single_melody_onset() {
        let mut roll = MelodyRoll::empty();
        roll.set(0, 60, true);
        let file = parse_midi(&write_midi(&DrumPattern::empty(), Some(&roll), 33, 120.0, 1).unwrap()).unwrap();
        let notes = extract_notes(&file);
        assert_eq!(
            notes,
            vec![NoteEvent { channel: 0, pitch: 60, velocity: EXPORT_VELOCITY, start_tick: 0, duration_ticks: 60 }]
        );
        assert_eq!(program_at(&file, 0, 0), 33);
    }

    #[test]
    fn vlq_encoding_roundtrip() {
        for value in [0u32, 0x40, 0x7F, 0x80, 0x2000, 0x3FFF, 0x4000, 0x1F_FFFF, 0x0FFF_FFFF] {
            let mut out = Vec::new();
            write_vlq(&mut out, value);
            assert_eq!(Cursor::new(&out).vlq().unwrap(), value);
        }
    }
}
