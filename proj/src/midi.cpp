#include "maestro/midi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <optional>

namespace maestro {

Track::Track(int program_in, int channel_in, std::vector<NoteEvent> notes_in)
    : program(program_in), channel(channel_in), notes(std::move(notes_in)) {
  normalize();
}

void Track::normalize() {
  std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    if (a.start != b.start) return a.start < b.start;
    if (a.pitch != b.pitch) return a.pitch < b.pitch;
    return a.duration < b.duration;
  });
}

int Track::end_tick() const {
  int end = 0;
  for (const auto& n : notes) end = std::max(end, n.end());
  return end;
}

int Piece::last_event_tick() const {
  int end = 0;
  for (const auto& t : tracks) end = std::max(end, t.end_tick());
  return end;
}

uint32_t Piece::bpm_to_us_per_quarter(double bpm) {
  return static_cast<uint32_t>(std::llround(60e6 / bpm));
}

MidiError::MidiError(const std::string& what, size_t offset)
    : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

MidiError::MidiError(const std::string& what) : std::runtime_error(what) {}

namespace {

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

class ByteCursor {
 public:
  ByteCursor(std::span<const uint8_t> bytes, size_t pos, size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  size_t pos() const { return pos_; }
  bool at_end() const { return pos_ >= end_; }

  uint8_t peek() const {
    require(1, "unexpected end of data");
    return bytes_[pos_];
  }

  uint8_t u8() {
    require(1, "unexpected end of data");
    return bytes_[pos_++];
  }

  uint16_t be16() {
    require(2, "unexpected end of data");
    uint16_t v = static_cast<uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }

  uint32_t be32() {
    require(4, "unexpected end of data");
    uint32_t v = (static_cast<uint32_t>(bytes_[pos_]) << 24) |
                 (static_cast<uint32_t>(bytes_[pos_ + 1]) << 16) |
                 (static_cast<uint32_t>(bytes_[pos_ + 2]) << 8) |
                 static_cast<uint32_t>(bytes_[pos_ + 3]);
    pos_ += 4;
    return v;
  }

  /// Variable-length quantity, at most 4 bytes per the SMF spec.
  uint32_t vlq() {
    uint32_t value = 0;
    for (int i = 0; i < 4; ++i) {
      uint8_t b = u8();
      value = (value << 7) | (b & 0x7f);
      if ((b & 0x80) == 0) return value;
    }
    throw MidiError("variable-length quantity longer than 4 bytes", pos_);
  }

  void skip(size_t n) {
    require(n, "chunk data truncated");
    pos_ += n;
  }

  void require(size_t n, const char* message) const {
    if (pos_ + n > end_) throw MidiError(message, pos_);
  }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_;
  size_t end_;
};

struct RawNote {
  int channel;
  NoteEvent note;
};

struct ChunkContent {
  std::vector<RawNote> notes;
  std::array<int, 16> channel_program;  // program active at the channel's first note
  std::array<bool, 16> program_seen{};
  bool has_tempo = false;
  bool has_program_change = false;
  int first_program_channel = 0;
  int first_program = 0;
  long end_tick = 0;
};

ChunkContent parse_track_chunk(ByteCursor& cur, std::optional<uint32_t>& first_tempo,
                               std::vector<std::string>* warnings) {
  ChunkContent out;
  out.channel_program.fill(0);

  long tick = 0;
  int running_status = -1;
  // Open notes per (channel, pitch), closed first-in-first-out.
  std::map<std::pair<int, int>, std::deque<std::pair<long, int>>> open;
  std::array<int, 16> current_program{};
  current_program.fill(0);
  std::array<bool, 16> channel_started{};

  auto open_count = [&] {
    size_t n = 0;
    for (const auto& [k, q] : open) n += q.size();
    return n;
  };

  auto close_note = [&](int channel, int pitch, long end) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;  // dangling note-off: skip
    auto [start, velocity] = it->second.front();
    it->second.pop_front();
    long duration = std::max<long>(1, end - start);
    out.notes.push_back({channel, NoteEvent{pitch, static_cast<int>(start),
                                            static_cast<int>(duration), velocity}});
  };

  while (!cur.at_end()) {
    tick += cur.vlq();
    uint8_t b = cur.peek();
    int status;
    if (b & 0x80) {
      status = cur.u8();
      if (status < 0xf0) running_status = status;
    } else {
      if (running_status < 0) throw MidiError("data byte without running status", cur.pos());
      status = running_status;
    }

    if (status == 0xff) {  // meta event
      uint8_t type = cur.u8();
      uint32_t len = cur.vlq();
      if (type == 0x2f) {  // end of track
        cur.skip(len);
        out.end_tick = tick;
        break;
      }
      if (type == 0x51 && len == 3) {
        uint32_t tempo = (static_cast<uint32_t>(cur.u8()) << 16);
        tempo |= static_cast<uint32_t>(cur.u8()) << 8;
        tempo |= cur.u8();
        out.has_tempo = true;
        if (!first_tempo && tempo > 0) first_tempo = tempo;
      } else {
        cur.skip(len);
      }
      continue;
    }
    if (status == 0xf0 || status == 0xf7) {  // sysex
      uint32_t len = cur.vlq();
      cur.skip(len);
      continue;
    }

    int kind = status & 0xf0;
    int channel = status & 0x0f;
    switch (kind) {
      case 0x80: {  // note off
        int pitch = cur.u8() & 0x7f;
        cur.u8();  // release velocity
        close_note(channel, pitch, tick);
        break;
      }
      case 0x90: {  // note on (velocity 0 means note off)
        int pitch = cur.u8() & 0x7f;
        int velocity = cur.u8() & 0x7f;
        if (velocity == 0) {
          close_note(channel, pitch, tick);
        } else {
          if (!channel_started[channel]) {
            out.channel_program[channel] = current_program[channel];
            out.program_seen[channel] = true;
            channel_started[channel] = true;
          }
          open[{channel, pitch}].push_back({tick, velocity});
        }
        break;
      }
      case 0xc0: {  // program change
        int program = cur.u8() & 0x7f;
        current_program[channel] = program;
        if (!out.has_program_change) {
          out.first_program_channel = channel;
          out.first_program = program;
        }
        out.has_program_change = true;
        break;
      }
      case 0xd0:  // channel aftertouch
        cur.u8();
        break;
      case 0xa0:  // polyphonic aftertouch
      case 0xb0:  // control change
      case 0xe0:  // pitch bend
        cur.u8();
        cur.u8();
        break;
      default:
        throw MidiError("unknown status byte " + std::to_string(status), cur.pos());
    }
  }

  if (out.end_tick == 0) out.end_tick = tick;
  if (open_count() > 0) {
    if (warnings)
      warnings->push_back("track has " + std::to_string(open_count()) +
                          " note-on event(s) without a matching note-off; closed at end of track");
    for (auto& [key, queue] : open) {
      while (!queue.empty()) {
        auto [start, velocity] = queue.front();
        queue.pop_front();
        long duration = std::max<long>(1, tick - start);
        out.notes.push_back({key.first, NoteEvent{key.second, static_cast<int>(start),
                                                  static_cast<int>(duration), velocity}});
      }
    }
  }
  return out;
}

long rescale_tick(long tick, int division) {
  if (division == kTicksPerQuarter) return tick;
  return std::llround(static_cast<double>(tick) * kTicksPerQuarter / division);
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

void put_be16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

void put_vlq(std::vector<uint8_t>& out, uint32_t value) {
  uint8_t stack[5];
  int n = 0;
  stack[n++] = static_cast<uint8_t>(value & 0x7f);
  value >>= 7;
  while (value > 0) {
    stack[n++] = static_cast<uint8_t>((value & 0x7f) | 0x80);
    value >>= 7;
  }
  while (n > 0) out.push_back(stack[--n]);
}

void put_chunk(std::vector<uint8_t>& out, const char* tag, const std::vector<uint8_t>& body) {
  out.insert(out.end(), tag, tag + 4);
  put_be32(out, static_cast<uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

}  // namespace

Piece read_midi(std::span<const uint8_t> bytes, std::vector<std::string>* warnings) {
  ByteCursor cur(bytes, 0, bytes.size());
  if (bytes.size() < 14 || bytes[0] != 'M' || bytes[1] != 'T' || bytes[2] != 'h' || bytes[3] != 'd')
    throw MidiError("missing MThd header", 0);
  cur.skip(4);
  uint32_t header_len = cur.be32();
  if (header_len < 6) throw MidiError("MThd length too small", cur.pos());
  uint16_t format = cur.be16();
  uint16_t declared_tracks = cur.be16();
  uint16_t division = cur.be16();
  cur.skip(header_len - 6);
  if (format > 1) throw MidiError("unsupported SMF format " + std::to_string(format), 8);
  if (division & 0x8000) throw MidiError("SMPTE time division is not supported", 12);
  if (division == 0) throw MidiError("time division is zero", 12);
  (void)declared_tracks;  // trust the chunks actually present

  std::optional<uint32_t> first_tempo;
  std::vector<ChunkContent> chunks;
  while (!cur.at_end()) {
    size_t chunk_start = cur.pos();
    cur.require(8, "truncated chunk header");
    char tag[4] = {static_cast<char>(cur.u8()), static_cast<char>(cur.u8()),
                   static_cast<char>(cur.u8()), static_cast<char>(cur.u8())};
    uint32_t len = cur.be32();
    cur.require(len, "chunk data truncated");
    if (std::string_view(tag, 4) != "MTrk") {
      cur.skip(len);  // alien chunk, skipped per the SMF spec
      continue;
    }
    ByteCursor body(bytes, cur.pos(), cur.pos() + len);
    chunks.push_back(parse_track_chunk(body, first_tempo, warnings));
    cur.skip(len);
    (void)chunk_start;
  }

  Piece piece;
  piece.ticks_per_quarter = kTicksPerQuarter;
  piece.tempo_us_per_quarter = first_tempo.value_or(500000);

  long duration = 0;
  for (const auto& c : chunks) duration = std::max(duration, rescale_tick(c.end_tick, division));
  piece.duration_ticks = static_cast<int>(duration);

  for (const auto& chunk : chunks) {
    if (chunk.notes.empty()) {
      // A note-less chunk that only sets tempo is a conductor track; anything
      // else is kept as one empty Track.
      if (chunk.has_tempo && !chunk.has_program_change) continue;
      Track t;
      t.channel = chunk.has_program_change ? chunk.first_program_channel : 0;
      t.program = chunk.has_program_change ? chunk.first_program : 0;
      piece.tracks.push_back(std::move(t));
      continue;
    }
    std::array<std::vector<NoteEvent>, 16> by_channel;
    for (const auto& raw : chunk.notes) {
      NoteEvent n = raw.note;
      long start = rescale_tick(n.start, division);
      long end = rescale_tick(n.start + static_cast<long>(n.duration), division);
      n.start = static_cast<int>(start);
      n.duration = static_cast<int>(std::max<long>(1, end - start));
      by_channel[raw.channel].push_back(n);
    }
    for (int ch = 0; ch < 16; ++ch) {
      if (by_channel[ch].empty()) continue;
      piece.tracks.emplace_back(chunk.channel_program[ch], ch, std::move(by_channel[ch]));
    }
  }

  if (piece.tracks.size() > 16) {
    if (warnings)
      warnings->push_back("file contains " + std::to_string(piece.tracks.size()) +
                          " tracks; keeping the first 16");
    piece.tracks.resize(16);
  }
  piece.duration_ticks = std::max(piece.duration_ticks, piece.last_event_tick());
  return piece;
}

std::vector<uint8_t> write_midi(const Piece& piece) {
  if (piece.tracks.size() > 16)
    throw MidiError("piece has " + std::to_string(piece.tracks.size()) +
                    " tracks; SMF output is capped at 16");

  std::vector<uint8_t> out;
  out.reserve(64);
  std::vector<uint8_t> header;
  put_be16(header, 1);  // format 1
  put_be16(header, static_cast<uint16_t>(piece.tracks.size() + 1));
  put_be16(header, static_cast<uint16_t>(piece.ticks_per_quarter));
  put_chunk(out, "MThd", header);

  long piece_end = std::max<long>(piece.duration_ticks, piece.last_event_tick());

  {  // conductor track: tempo only
    std::vector<uint8_t> body;
    put_vlq(body, 0);
    body.push_back(0xff);
    body.push_back(0x51);
    body.push_back(0x03);
    body.push_back(static_cast<uint8_t>((piece.tempo_us_per_quarter >> 16) & 0xff));
    body.push_back(static_cast<uint8_t>((piece.tempo_us_per_quarter >> 8) & 0xff));
    body.push_back(static_cast<uint8_t>(piece.tempo_us_per_quarter & 0xff));
    put_vlq(body, static_cast<uint32_t>(piece_end));
    body.push_back(0xff);
    body.push_back(0x2f);
    body.push_back(0x00);
    put_chunk(out, "MTrk", body);
  }

  for (const auto& track : piece.tracks) {
    std::vector<uint8_t> body;
    int ch = track.channel & 0x0f;
    put_vlq(body, 0);
    body.push_back(static_cast<uint8_t>(0xc0 | ch));
    body.push_back(static_cast<uint8_t>(track.program & 0x7f));

    // (tick, kind, pitch, velocity); note-offs sort before note-ons at a tick
    struct Event {
      long tick;
      int kind;  // 0 = off, 1 = on
      int pitch;
      int velocity;
    };
    std::vector<Event> events;
    events.reserve(track.notes.size() * 2);
    for (const auto& n : track.notes) {
      events.push_back({n.start, 1, n.pitch, n.velocity});
      events.push_back({n.start + static_cast<long>(n.duration), 0, n.pitch, 0});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
      if (a.tick != b.tick) return a.tick < b.tick;
      if (a.kind != b.kind) return a.kind < b.kind;
      return a.pitch < b.pitch;
    });

    long cursor = 0;
    for (const auto& e : events) {
      put_vlq(body, static_cast<uint32_t>(e.tick - cursor));
      cursor = e.tick;
      if (e.kind == 1) {
        body.push_back(static_cast<uint8_t>(0x90 | ch));
        body.push_back(static_cast<uint8_t>(e.pitch & 0x7f));
        body.push_back(static_cast<uint8_t>(e.velocity & 0x7f));
      } else {
        body.push_back(static_cast<uint8_t>(0x80 | ch));
        body.push_back(static_cast<uint8_t>(e.pitch & 0x7f));
        body.push_back(0x00);
      }
    }
    put_vlq(body, static_cast<uint32_t>(piece_end - cursor));
    body.push_back(0xff);
    body.push_back(0x2f);
    body.push_back(0x00);
    put_chunk(out, "MTrk", body);
  }
  return out;
}

namespace {

int round_to_grid(int value, int grid) {
  // nearest multiple, ties round up
  return static_cast<int>((2L * value + grid) / (2L * grid) * grid);
}

}  // namespace

Track quantize(const Track& track, int grid_ticks) {
  std::vector<NoteEvent> notes;
  notes.reserve(track.notes.size());
  for (const auto& n : track.notes) {
    NoteEvent q = n;
    q.start = round_to_grid(n.start, grid_ticks);
    q.duration = std::max(grid_ticks, round_to_grid(n.duration, grid_ticks));
    q.velocity = bucket_velocity(velocity_bucket(n.velocity));
    notes.push_back(q);
  }
  return Track(track.program, track.channel, std::move(notes));
}

Piece quantize(const Piece& piece, int grid_ticks) {
  Piece out = piece;
  out.tracks.clear();
  for (const auto& t : piece.tracks) out.tracks.push_back(quantize(t, grid_ticks));
  out.duration_ticks = std::max(round_to_grid(piece.duration_ticks, grid_ticks), out.last_event_tick());
  return out;
}

}  // namespace maestro
