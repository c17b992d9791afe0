/**
 * @file midi.hpp
 * @brief Symbolic music data model, Standard MIDI File I/O and grid quantization.
 *
 * Every Piece produced by this library is normalized to 480 ticks per quarter
 * note. Tempo is stored as the SMF set-tempo payload (microseconds per quarter)
 * so that write/read round trips are exact.
 */
#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace maestro {

/// Internal tick resolution of all normalized pieces.
inline constexpr int kTicksPerQuarter = 480;

/// Velocity is grouped into 32 buckets of 4 values; decoding uses the
/// bucket midpoint 4*b + 2.
inline constexpr int kVelocityBucketWidth = 4;
inline constexpr int kVelocityBuckets = 32;

inline int velocity_bucket(int velocity) { return velocity / kVelocityBucketWidth; }
inline int bucket_velocity(int bucket) { return bucket * kVelocityBucketWidth + 2; }

/// One sounding note. Times are ticks at the owning Piece's resolution.
struct NoteEvent {
  int pitch = 60;     ///< MIDI semitone, 0..127
  int start = 0;      ///< onset tick, >= 0
  int duration = 1;   ///< ticks, >= 1
  int velocity = 64;  ///< MIDI velocity, 0..127

  int end() const { return start + duration; }
  auto operator<=>(const NoteEvent&) const = default;
};

/// A single instrumental voice. Construction sorts notes by (start, pitch).
struct Track {
  int program = 0;  ///< General MIDI program, 0..127
  int channel = 0;  ///< MIDI channel, 0..15
  std::vector<NoteEvent> notes;

  Track() = default;
  Track(int program, int channel, std::vector<NoteEvent> notes);

  void normalize();
  int end_tick() const;
  bool operator==(const Track&) const = default;
};

/// A complete piece: up to 16 tracks sharing one tempo and resolution.
struct Piece {
  int ticks_per_quarter = kTicksPerQuarter;
  uint32_t tempo_us_per_quarter = 500000;  ///< SMF set-tempo payload; 500000 = 120 BPM
  int duration_ticks = 0;                  ///< end-of-track position, >= last note end
  std::vector<Track> tracks;

  double tempo_bpm() const { return 60e6 / static_cast<double>(tempo_us_per_quarter); }
  static uint32_t bpm_to_us_per_quarter(double bpm);

  /// Largest note end across tracks.
  int last_event_tick() const;
  bool operator==(const Piece&) const = default;
};

/// Parse or capacity failure in SMF handling. Carries the byte offset for
/// read errors.
class MidiError : public std::runtime_error {
 public:
  MidiError(const std::string& what, size_t offset);
  explicit MidiError(const std::string& what);
  size_t offset() const { return offset_; }

 private:
  size_t offset_ = 0;
};

/// Read a Standard MIDI File (format 0 or 1). The result is normalized to
/// 480 ticks per quarter; tempo comes from the first set-tempo event
/// (default 120 BPM). Recoverable oddities (dangling note-ons, excess
/// tracks) are appended to `warnings` when given.
Piece read_midi(std::span<const uint8_t> bytes, std::vector<std::string>* warnings = nullptr);

/// Emit SMF format 1: track 0 carries the tempo meta-event, then one chunk
/// per Track with a program-change before the first note. Throws MidiError
/// on more than 16 tracks.
std::vector<uint8_t> write_midi(const Piece& piece);

/// Round every start and duration to the nearest grid multiple (ties round
/// up), with a one-grid-unit duration floor, and snap velocities to their
/// bucket midpoint. Idempotent.
Piece quantize(const Piece& piece, int grid_ticks);
Track quantize(const Track& track, int grid_ticks);

}  // namespace maestro
