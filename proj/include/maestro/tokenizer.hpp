/**
 * @file tokenizer.hpp
 * @brief Performance-event tokenization of tracks.
 *
 * Vocabulary layout (388 ids):
 *   [0, 128)    NOTE_ON(pitch)
 *   [128, 256)  NOTE_OFF(pitch)
 *   [256, 356)  TIME_SHIFT(k), k = 1..100 grid units, one unit = 1/8 quarter
 *   [356, 388)  VELOCITY(bucket), 32 buckets of 4 velocity values
 *
 * Decoding is total: any id sequence in [0, 388) yields a playable track.
 */
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maestro/midi.hpp"

namespace maestro {

using TokenSequence = std::vector<int32_t>;

inline constexpr int32_t kVocabSize = 388;
inline constexpr int32_t kNoteOffBase = 128;
inline constexpr int32_t kTimeShiftBase = 255;  // TIME_SHIFT(k) = 255 + k
inline constexpr int32_t kVelocityBase = 356;
inline constexpr int32_t kMaxTimeShift = 100;
inline constexpr int32_t kDefaultVelocityBucket = 16;

/// One time-shift unit in ticks at the given resolution (1/8 quarter).
inline int grid_ticks(int ticks_per_quarter = kTicksPerQuarter) {
  int g = ticks_per_quarter / 8;
  return g > 0 ? g : 1;
}

inline int32_t note_on_token(int pitch) { return pitch; }
inline int32_t note_off_token(int pitch) { return kNoteOffBase + pitch; }
inline int32_t time_shift_token(int units) { return kTimeShiftBase + units; }
inline int32_t velocity_token(int bucket) { return kVelocityBase + bucket; }

inline bool is_note_on(int32_t id) { return id >= 0 && id < kNoteOffBase; }
inline bool is_note_off(int32_t id) { return id >= kNoteOffBase && id <= kTimeShiftBase; }
inline bool is_time_shift(int32_t id) { return id > kTimeShiftBase && id < kVelocityBase; }
inline bool is_velocity(int32_t id) { return id >= kVelocityBase && id < kVocabSize; }

/// Encode a quantized track. A VELOCITY token is emitted before a NOTE_ON
/// only when the velocity bucket changes (the first note always gets one).
/// Gaps longer than 100 units become multiple TIME_SHIFT tokens.
TokenSequence encode_tokens(const Track& track, int ticks_per_quarter = kTicksPerQuarter);

/// Decode ids into a track at 480 ticks per quarter. Lenient: NOTE_OFF for
/// a pitch that is not open is skipped; notes still open at the end are
/// closed at the final clock with a minimum duration of one grid unit.
Track decode_tokens(std::span<const int32_t> tokens, int program = 0, int channel = 0);

}  // namespace maestro
