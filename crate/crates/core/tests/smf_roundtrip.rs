use proptest::prelude::*;
use smer_core::midi::{parse_midi, write_midi, NoteEvent, Score, TempoEvent, TimeSignature};

/// Notes on a few (channel, pitch) lanes. Within a lane notes never overlap,
/// which is the condition for note-on/off pairing to be unambiguous.
fn arb_score() -> impl Strategy<Value = Score> {
    let lane = (0u8..16, 0u8..128, prop::collection::vec((0u64..400, 1u64..600, 1u8..128), 0..8));
    let tempos = prop::collection::btree_map(0u64..5000, 1u32..0x00ff_ffff, 0..3);
    let meters = prop::collection::btree_map(0u64..5000, (1u8..16, 0u32..5), 0..3);
    (1u16..2000, prop::collection::vec(lane, 0..6), tempos, meters).prop_map(|(ppq, lanes, tempos, meters)| {
        let mut notes = Vec::new();
        let mut used = std::collections::BTreeSet::new();
        for (channel, pitch, events) in lanes {
            if !used.insert((channel, pitch)) {
                continue;
            }
            let mut t = 0;
            for (gap, duration_ticks, velocity) in events {
                let onset_ticks = t + gap;
                notes.push(NoteEvent { onset_ticks, duration_ticks, pitch, velocity, channel });
                t = onset_ticks + duration_ticks;
            }
        }
        let tempo_events = tempos.into_iter().map(|(tick, micros_per_quarter)| TempoEvent { tick, micros_per_quarter }).collect();
        let time_signatures = meters
            .into_iter()
            .map(|(tick, (numerator, e))| TimeSignature { tick, numerator, denominator: 1 << e })
            .collect();
        Score::new(ppq, notes, tempo_events, time_signatures)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn write_then_parse_is_identity(score in arb_score()) {
        let bytes = write_midi(&score);
        prop_assert_eq!(parse_midi(&bytes).unwrap(), score);
    }
}

#[test]
fn back_to_back_repeated_pitch() {
    let notes = vec![
        NoteEvent { onset_ticks: 0, duration_ticks: 240, pitch: 60, velocity: 90, channel: 0 },
        NoteEvent { onset_ticks: 240, duration_ticks: 240, pitch: 60, velocity: 40, channel: 0 },
    ];
    let s = Score::new(480, notes, vec![], vec![]);
    assert_eq!(parse_midi(&write_midi(&s)).unwrap(), s);
}
