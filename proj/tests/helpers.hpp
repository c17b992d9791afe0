/// Shared generators for property-style tests.
#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <vector>

#include "maestro/midi.hpp"
#include "maestro/tokenizer.hpp"

namespace maestro::testing {

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// A track already in canonical quantized form: grid-aligned times,
/// bucket-midpoint velocities, no overlapping notes of equal pitch.
inline Track random_quantized_track(std::mt19937_64& rng, int max_notes = 40) {
  const int grid = grid_ticks();
  int n = uniform_int(rng, 0, max_notes);
  std::vector<NoteEvent> notes;
  std::map<int, int> pitch_end;  // last end unit per pitch
  for (int i = 0; i < n; ++i) {
    NoteEvent note;
    note.pitch = uniform_int(rng, 21, 108);
    int start_unit = uniform_int(rng, 0, 300);
    int dur_units = uniform_int(rng, 1, 32);
    auto it = pitch_end.find(note.pitch);
    if (it != pitch_end.end() && start_unit < it->second) start_unit = it->second;
    pitch_end[note.pitch] = start_unit + dur_units;
    note.start = start_unit * grid;
    note.duration = dur_units * grid;
    note.velocity = bucket_velocity(uniform_int(rng, 0, kVelocityBuckets - 1));
    notes.push_back(note);
  }
  return Track(uniform_int(rng, 0, 127), uniform_int(rng, 0, 15), std::move(notes));
}

/// A normalized piece with arbitrary (not grid-aligned) note timing.
inline Piece random_piece(std::mt19937_64& rng, int max_tracks = 4) {
  Piece piece;
  piece.tempo_us_per_quarter = static_cast<uint32_t>(uniform_int(rng, 200000, 1000000));
  int n_tracks = uniform_int(rng, 0, max_tracks);
  for (int t = 0; t < n_tracks; ++t) {
    int n = uniform_int(rng, 0, 30);
    std::vector<NoteEvent> notes;
    std::map<int, int> pitch_end;
    for (int i = 0; i < n; ++i) {
      NoteEvent note;
      note.pitch = uniform_int(rng, 0, 127);
      int start = uniform_int(rng, 0, 8000);
      int dur = uniform_int(rng, 1, 2000);
      auto it = pitch_end.find(note.pitch);
      if (it != pitch_end.end() && start < it->second) start = it->second;
      pitch_end[note.pitch] = start + dur;
      note.start = start;
      note.duration = dur;
      note.velocity = uniform_int(rng, 1, 127);
      notes.push_back(note);
    }
    piece.tracks.emplace_back(uniform_int(rng, 0, 127), t % 16, std::move(notes));
  }
  piece.duration_ticks = piece.last_event_tick();
  return piece;
}

}  // namespace maestro::testing
