#include "maestro/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <deque>

namespace maestro {

TokenSequence encode_tokens(const Track& track, int ticks_per_quarter) {
  const int grid = grid_ticks(ticks_per_quarter);
  struct Event {
    long unit;  // time in grid units
    int kind;   // 0 = off, 1 = on
    int pitch;
    int velocity;
  };
  std::vector<Event> events;
  events.reserve(track.notes.size() * 2);
  for (const auto& n : track.notes) {
    events.push_back({n.start / grid, 1, n.pitch, n.velocity});
    events.push_back({(n.start + static_cast<long>(n.duration)) / grid, 0, n.pitch, 0});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.unit != b.unit) return a.unit < b.unit;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.pitch < b.pitch;
  });

  TokenSequence tokens;
  tokens.reserve(events.size() * 2);
  long cursor = 0;
  int bucket = -1;  // unset, so the first note always carries a VELOCITY token
  for (const auto& e : events) {
    long gap = e.unit - cursor;
    while (gap > 0) {
      long step = std::min<long>(gap, kMaxTimeShift);
      tokens.push_back(time_shift_token(static_cast<int>(step)));
      gap -= step;
    }
    cursor = e.unit;
    if (e.kind == 1) {
      int b = velocity_bucket(e.velocity);
      if (b != bucket) {
        tokens.push_back(velocity_token(b));
        bucket = b;
      }
      tokens.push_back(note_on_token(e.pitch));
    } else {
      tokens.push_back(note_off_token(e.pitch));
    }
  }
  return tokens;
}

Track decode_tokens(std::span<const int32_t> tokens, int program, int channel) {
  const int grid = grid_ticks(kTicksPerQuarter);
  std::vector<NoteEvent> notes;
  std::array<std::deque<std::pair<long, int>>, 128> open;  // pitch -> (start unit, velocity)
  long cursor = 0;
  int bucket = kDefaultVelocityBucket;

  auto close = [&](int pitch, long end_unit) {
    auto& queue = open[pitch];
    if (queue.empty()) return;  // NOTE_OFF without an open note: skipped
    auto [start, velocity] = queue.front();
    queue.pop_front();
    long duration = std::max<long>(1, end_unit - start);
    notes.push_back({pitch, static_cast<int>(start * grid), static_cast<int>(duration * grid),
                     velocity});
  };

  for (int32_t id : tokens) {
    if (is_note_on(id)) {
      open[id].push_back({cursor, bucket_velocity(bucket)});
    } else if (is_note_off(id)) {
      close(id - kNoteOffBase, cursor);
    } else if (is_time_shift(id)) {
      cursor += id - kTimeShiftBase;
    } else if (is_velocity(id)) {
      bucket = id - kVelocityBase;
    }
    // ids outside [0, 388) are ignored: decoding is total
  }
  for (int pitch = 0; pitch < 128; ++pitch) {
    while (!open[pitch].empty()) close(pitch, cursor);
  }
  return Track(program, channel, std::move(notes));
}

}  // namespace maestro
