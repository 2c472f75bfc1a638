//! Standard MIDI File reader and writer (formats 0 and 1, metrical timing).

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use super::{NoteEvent, Score, TempoEvent, TimeSignature};
use crate::Diagnostic;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MidiError {
    #[error("byte {offset}: expected MThd header chunk")]
    BadHeader { offset: usize },
    #[error("byte {offset}: header chunk length {length} is shorter than 6")]
    ShortHeader { offset: usize, length: u32 },
    #[error("byte {offset}: unsupported SMF format {format}")]
    UnsupportedFormat { offset: usize, format: u16 },
    #[error("byte {offset}: SMPTE time division is not supported")]
    SmpteDivision { offset: usize },
    #[error("byte {offset}: time division of zero ticks per quarter")]
    ZeroDivision { offset: usize },
    #[error("byte {offset}: truncated {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("byte {offset}: variable-length quantity longer than 4 bytes")]
    BadVarLen { offset: usize },
    #[error("byte {offset}: data byte {byte:#04x} with no running status")]
    NoRunningStatus { offset: usize, byte: u8 },
    #[error("byte {offset}: unexpected status byte {byte:#04x}")]
    BadStatus { offset: usize, byte: u8 },
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], MidiError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(MidiError::Truncated { offset: self.pos, what }),
        }
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, MidiError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, MidiError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, MidiError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self, what: &'static str) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8(what)?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::BadVarLen { offset: start })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }
}

/// Parses an SMF into a [`Score`], discarding warnings.
pub fn parse_midi(bytes: &[u8]) -> Result<Score, MidiError> {
    parse_midi_with_diagnostics(bytes, &mut Vec::new())
}

/// Parses an SMF into a [`Score`]. Unterminated notes are closed at the end of
/// their track and reported through `diagnostics`.
pub fn parse_midi_with_diagnostics(
    bytes: &[u8],
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Score, MidiError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header chunk id")? != b"MThd" {
        return Err(MidiError::BadHeader { offset: 0 });
    }
    let header_len = r.u32("header length")?;
    if header_len < 6 {
        return Err(MidiError::ShortHeader { offset: 4, length: header_len });
    }
    let header_start = r.pos;
    let format = r.u16("format")?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat { offset: header_start, format });
    }
    let n_tracks = r.u16("track count")?;
    let division = r.u16("time division")?;
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision { offset: header_start + 4 });
    }
    if division == 0 {
        return Err(MidiError::ZeroDivision { offset: header_start + 4 });
    }
    r.take(header_len as usize - 6, "header chunk")?;

    let mut notes = Vec::new();
    let mut tempo_events = Vec::new();
    let mut time_signatures = Vec::new();
    let mut track = 0usize;
    while track < usize::from(n_tracks) && r.peek().is_some() {
        let id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        let body_start = r.pos;
        let body = r.take(len, "track chunk")?;
        if id != b"MTrk" {
            // Alien chunk types are skipped per the SMF spec.
            continue;
        }
        parse_track(
            body,
            body_start,
            track,
            &mut notes,
            &mut tempo_events,
            &mut time_signatures,
            diagnostics,
        )?;
        track += 1;
    }

    tempo_events.sort_by_key(|t: &TempoEvent| t.tick);
    time_signatures.sort_by_key(|t: &TimeSignature| t.tick);
    Ok(Score::new(division, notes, tempo_events, time_signatures))
}

fn parse_track(
    body: &[u8],
    base: usize,
    track: usize,
    notes: &mut Vec<NoteEvent>,
    tempo_events: &mut Vec<TempoEvent>,
    time_signatures: &mut Vec<TimeSignature>,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<(), MidiError> {
    let mut r = Reader { bytes: body, pos: 0 };
    let offset_err = |e: MidiError| match e {
        MidiError::Truncated { offset, what } => MidiError::Truncated { offset: offset + base, what },
        MidiError::BadVarLen { offset } => MidiError::BadVarLen { offset: offset + base },
        other => other,
    };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    // (channel, pitch) -> queue of (onset, velocity)
    let mut open: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();

    while r.peek().is_some() {
        tick += u64::from(r.varlen("delta time").map_err(offset_err)?);
        let at = r.pos;
        let first = r.u8("event").map_err(offset_err)?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => return Err(MidiError::NoRunningStatus { offset: at + base, byte: first }),
            }
        };
        match status {
            0xff => {
                let kind = r.u8("meta type").map_err(offset_err)?;
                let len = r.varlen("meta length").map_err(offset_err)? as usize;
                let data = r.take(len, "meta data").map_err(offset_err)?;
                match kind {
                    0x2f => break,
                    0x51 if len >= 3 => tempo_events.push(TempoEvent {
                        tick,
                        micros_per_quarter: u32::from_be_bytes([0, data[0], data[1], data[2]]),
                    }),
                    0x58 if len >= 2 => time_signatures.push(TimeSignature {
                        tick,
                        numerator: data[0],
                        denominator: 1u8.checked_shl(u32::from(data[1])).unwrap_or(0),
                    }),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                let len = r.varlen("sysex length").map_err(offset_err)? as usize;
                r.take(len, "sysex data").map_err(offset_err)?;
                running = None;
            }
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                let data = |r: &mut Reader<'_>, pre: &mut Option<u8>| -> Result<u8, MidiError> {
                    match pre.take() {
                        Some(b) => Ok(b),
                        None => r.u8("channel message data").map_err(offset_err),
                    }
                };
                let mut pre = first_data;
                match status & 0xf0 {
                    0x80 | 0x90 => {
                        let pitch = data(&mut r, &mut pre)? & 0x7f;
                        let velocity = data(&mut r, &mut pre)? & 0x7f;
                        if status & 0xf0 == 0x90 && velocity > 0 {
                            open.entry((channel, pitch)).or_default().push_back((tick, velocity));
                        } else {
                            match open.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front) {
                                Some((onset, vel)) => {
                                    if tick == onset {
                                        diagnostics.push(Diagnostic::ZeroLengthNote { channel, pitch, onset });
                                    }
                                    notes.push(NoteEvent {
                                        onset_ticks: onset,
                                        duration_ticks: (tick - onset).max(1),
                                        pitch,
                                        velocity: vel,
                                        channel,
                                    });
                                }
                                None => diagnostics.push(Diagnostic::OrphanNoteOff { track, channel, pitch, tick }),
                            }
                        }
                    }
                    0xc0 | 0xd0 => {
                        data(&mut r, &mut pre)?;
                    }
                    _ => {
                        data(&mut r, &mut pre)?;
                        data(&mut r, &mut pre)?;
                    }
                }
            }
            other => return Err(MidiError::BadStatus { offset: at + base, byte: other }),
        }
    }

    for ((channel, pitch), queue) in open {
        for (onset, velocity) in queue {
            diagnostics.push(Diagnostic::UnterminatedNote { track, channel, pitch, onset });
            notes.push(NoteEvent {
                onset_ticks: onset,
                duration_ticks: tick.saturating_sub(onset).max(1),
                pitch,
                velocity,
                channel,
            });
        }
    }
    Ok(())
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7f) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serializes a score as a format-0 SMF. Note-offs are written before note-ons
/// that share a tick, so back-to-back repeated pitches survive a reparse.
///
/// Panics if a note has velocity 0 (unrepresentable as a note-on) or a tick
/// delta overflows 28 bits.
pub fn write_midi(score: &Score) -> Vec<u8> {
    // (tick, order class, sequence) -> event bytes; class 0 meta, 1 off, 2 on
    let mut events: Vec<(u64, u8, usize, Vec<u8>)> = Vec::new();
    for (i, t) in score.tempo_events.iter().enumerate() {
        let b = t.micros_per_quarter.to_be_bytes();
        events.push((t.tick, 0, i, alloc::vec![0xff, 0x51, 3, b[1], b[2], b[3]]));
    }
    for (i, ts) in score.time_signatures.iter().enumerate() {
        let exp = ts.denominator.max(1).trailing_zeros() as u8;
        events.push((
            ts.tick,
            0,
            score.tempo_events.len() + i,
            alloc::vec![0xff, 0x58, 4, ts.numerator, exp, 24, 8],
        ));
    }
    for (i, n) in score.notes.iter().enumerate() {
        assert!(n.velocity > 0, "velocity 0 cannot be written as a note-on");
        let ch = n.channel & 0x0f;
        events.push((n.onset_ticks, 2, i, alloc::vec![0x90 | ch, n.pitch, n.velocity]));
        events.push((n.onset_ticks + n.duration_ticks, 1, i, alloc::vec![0x80 | ch, n.pitch, 64]));
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));

    let mut track = Vec::new();
    let mut last = 0u64;
    for (tick, _, _, bytes) in &events {
        let delta = u32::try_from(tick - last).expect("delta time overflow");
        assert!(delta < (1 << 28), "delta time overflow");
        push_varlen(&mut track, delta);
        track.extend_from_slice(bytes);
        last = *tick;
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&score.ppq.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn smf(ppq: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&(if tracks.len() > 1 { 1u16 } else { 0 }).to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&ppq.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn single_note_on_off() {
        // delta 0 note-on C4 vel 64; delta 480 (0x83 0x60) note-off; end of track
        let track = [0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let s = parse_midi(&smf(480, &[&track])).unwrap();
        assert_eq!(s.ppq, 480);
        assert_eq!(
            s.notes,
            vec![NoteEvent { onset_ticks: 0, duration_ticks: 480, pitch: 60, velocity: 64, channel: 0 }]
        );
    }

    #[test]
    fn empty_track() {
        let track = [0x00, 0xff, 0x2f, 0x00];
        let s = parse_midi(&smf(96, &[&track])).unwrap();
        assert!(s.notes.is_empty());
    }

    #[test]
    fn running_status_velocity_zero_is_note_off() {
        // note-on, then running-status note-on with velocity 0 at tick 240
        let track = [0x00, 0x90, 60, 64, 0x81, 0x70, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let s = parse_midi(&smf(480, &[&track])).unwrap();
        assert_eq!(s.notes.len(), 1);
        assert_eq!(s.notes[0].duration_ticks, 240);
        assert_eq!(s.notes[0].velocity, 64);
    }

    #[test]
    fn unterminated_note_closed_at_end_of_track() {
        let track = [0x00, 0x90, 62, 100, 0x83, 0x60, 0xff, 0x2f, 0x00];
        let mut diags = Vec::new();
        let s = parse_midi_with_diagnostics(&smf(480, &[&track]), &mut diags).unwrap();
        assert_eq!(s.notes[0].duration_ticks, 480);
        assert!(matches!(diags[0], Diagnostic::UnterminatedNote { pitch: 62, onset: 0, .. }));
    }

    #[test]
    fn multi_track_merge_and_meta() {
        let conductor = [
            0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // 500000 us/qn
            0x00, 0xff, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08, // 3/4
            0x00, 0xff, 0x2f, 0x00,
        ];
        let a = [0x60, 0x90, 64, 80, 0x60, 0x80, 64, 0, 0x00, 0xff, 0x2f, 0x00];
        let b = [0x00, 0x91, 48, 70, 0x81, 0x40, 0x81, 48, 0, 0x00, 0xff, 0x2f, 0x00];
        let s = parse_midi(&smf(96, &[&conductor, &a, &b])).unwrap();
        assert_eq!(s.tempo_events, vec![TempoEvent { tick: 0, micros_per_quarter: 500_000 }]);
        assert_eq!(s.time_signatures, vec![TimeSignature { tick: 0, numerator: 3, denominator: 4 }]);
        let got: Vec<_> = s.notes.iter().map(|n| (n.onset_ticks, n.duration_ticks, n.pitch, n.channel)).collect();
        assert_eq!(got, vec![(0, 192, 48, 1), (96, 96, 64, 0)]);
    }

    #[test]
    fn bad_header_reports_offset() {
        assert_eq!(parse_midi(b"RIFF\0\0\0\x06"), Err(MidiError::BadHeader { offset: 0 }));
    }

    #[test]
    fn truncated_track_reports_offset() {
        let mut bytes = smf(480, &[&[0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0]]);
        // claim a longer chunk than present
        bytes[18..22].copy_from_slice(&100u32.to_be_bytes());
        match parse_midi(&bytes) {
            Err(MidiError::Truncated { offset, .. }) => assert_eq!(offset, 22),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_event_inside_track() {
        let bytes = smf(480, &[&[0x00, 0x90, 60]]);
        assert!(matches!(parse_midi(&bytes), Err(MidiError::Truncated { offset: 25, .. })));
    }

    #[test]
    fn format_two_rejected() {
        let mut bytes = smf(480, &[&[0x00, 0xff, 0x2f, 0x00]]);
        bytes[9] = 2;
        assert!(matches!(parse_midi(&bytes), Err(MidiError::UnsupportedFormat { format: 2, .. })));
    }

    #[test]
    fn varlen_encoding() {
        for (v, expect) in [(0u32, vec![0x00]), (0x7f, vec![0x7f]), (0x80, vec![0x81, 0x00]), (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f])] {
            let mut out = Vec::new();
            push_varlen(&mut out, v);
            assert_eq!(out, expect);
        }
    }
}
