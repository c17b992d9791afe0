#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "maestro/midi.hpp"

using namespace maestro;

namespace {

// Minimal SMF built by hand from the byte layout: format 0, division 480,
// one track holding note-on C4 velocity 64 at tick 0 and note-off at 480.
const std::vector<uint8_t> kHandBuiltFile = {
    'M', 'T', 'h', 'd', 0x00, 0x00, 0x00, 0x06,  // header chunk, length 6
    0x00, 0x00,                                  // format 0
    0x00, 0x01,                                  // one track
    0x01, 0xe0,                                  // division 480
    'M', 'T', 'r', 'k', 0x00, 0x00, 0x00, 0x0d,  // track chunk, length 13
    0x00, 0x90, 0x3c, 0x40,                      // delta 0, note-on ch0 C4 vel 64
    0x83, 0x60, 0x80, 0x3c, 0x00,                // delta 480, note-off C4
    0x00, 0xff, 0x2f, 0x00,                      // end of track
};

}  // namespace

TEST_SUITE("midi") {

TEST_CASE("hand-built file reads to the expected piece") {
  Piece p = read_midi(kHandBuiltFile);
  CHECK(p.ticks_per_quarter == 480);
  CHECK(p.tempo_us_per_quarter == 500000);  // default 120 BPM, no set-tempo event
  CHECK(p.tempo_bpm() == doctest::Approx(120.0));
  CHECK(p.duration_ticks == 480);
  REQUIRE(p.tracks.size() == 1);
  const Track& t = p.tracks[0];
  CHECK(t.program == 0);
  CHECK(t.channel == 0);
  REQUIRE(t.notes.size() == 1);
  CHECK(t.notes[0] == NoteEvent{60, 0, 480, 64});
}

TEST_CASE("writer emits hand-computed bytes for the one-note piece") {
  Piece p = read_midi(kHandBuiltFile);
  // Expected output, computed by hand from the SMF layout: format 1 with a
  // conductor track carrying the tempo, then the note track.
  const std::vector<uint8_t> expected = {
      'M', 'T', 'h', 'd', 0x00, 0x00, 0x00, 0x06,
      0x00, 0x01,              // format 1
      0x00, 0x02,              // two chunks
      0x01, 0xe0,              // division 480
      'M', 'T', 'r', 'k', 0x00, 0x00, 0x00, 0x0c,
      0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20,  // tempo 500000
      0x83, 0x60, 0xff, 0x2f, 0x00,              // end of track at tick 480
      'M', 'T', 'r', 'k', 0x00, 0x00, 0x00, 0x10,
      0x00, 0xc0, 0x00,                          // program change 0
      0x00, 0x90, 0x3c, 0x40,                    // note-on C4 vel 64
      0x83, 0x60, 0x80, 0x3c, 0x00,              // note-off C4 at 480
      0x00, 0xff, 0x2f, 0x00,
  };
  CHECK(write_midi(p) == expected);
}

TEST_CASE("write/read round trip is the identity on normalized pieces") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    Piece p = testing::random_piece(rng);
    Piece back = read_midi(write_midi(p));
    CHECK(back == p);
  }
}

TEST_CASE("zero-track piece round trips through a tempo-only file") {
  Piece p;
  p.tempo_us_per_quarter = 750000;
  auto bytes = write_midi(p);
  Piece back = read_midi(bytes);
  CHECK(back.tracks.empty());
  CHECK(back == p);
}

TEST_CASE("empty track chunk becomes one empty track") {
  std::vector<uint8_t> file = {
      'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
      'M', 'T', 'r', 'k', 0, 0, 0, 4, 0x00, 0xff, 0x2f, 0x00,
  };
  Piece p = read_midi(file);
  REQUIRE(p.tracks.size() == 1);
  CHECK(p.tracks[0].notes.empty());
}

TEST_CASE("tempo comes from the first set-tempo event") {
  Piece p;
  p.tempo_us_per_quarter = 600000;  // 100 BPM
  p.tracks.emplace_back(5, 0, std::vector<NoteEvent>{{64, 0, 240, 90}});
  p.duration_ticks = 240;
  Piece back = read_midi(write_midi(p));
  CHECK(back.tempo_us_per_quarter == 600000);
  CHECK(back.tempo_bpm() == doctest::Approx(100.0));
}

TEST_CASE("note-on without note-off closes at end of track with a warning") {
  std::vector<uint8_t> file = {
      'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
      'M', 'T', 'r', 'k', 0, 0, 0, 9,
      0x00, 0x90, 0x3c, 0x40,        // note-on, never released
      0x83, 0x60, 0xff, 0x2f, 0x00,  // end of track at 480
  };
  std::vector<std::string> warnings;
  Piece p = read_midi(file, &warnings);
  REQUIRE(p.tracks.size() == 1);
  REQUIRE(p.tracks[0].notes.size() == 1);
  CHECK(p.tracks[0].notes[0].duration == 480);
  CHECK(warnings.size() == 1);
}

TEST_CASE("malformed input reports a byte offset") {
  SUBCASE("bad magic") {
    std::vector<uint8_t> junk = {'X', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 0, 0, 96};
    CHECK_THROWS_AS(read_midi(junk), MidiError);
  }
  SUBCASE("truncated chunk") {
    std::vector<uint8_t> file(kHandBuiltFile.begin(), kHandBuiltFile.end() - 4);
    try {
      read_midi(file);
      FAIL("expected MidiError");
    } catch (const MidiError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  SUBCASE("SMPTE division unsupported") {
    auto file = kHandBuiltFile;
    file[12] = 0xe8;  // negative division byte
    CHECK_THROWS_AS(read_midi(file), MidiError);
  }
  SUBCASE("format 2 rejected") {
    auto file = kHandBuiltFile;
    file[9] = 2;
    CHECK_THROWS_AS(read_midi(file), MidiError);
  }
}

TEST_CASE("format 0 chunks split by channel") {
  // One chunk interleaving notes on channels 0 and 3.
  std::vector<uint8_t> body = {
      0x00, 0xc3, 0x20,              // program 32 on channel 3
      0x00, 0x90, 0x3c, 0x40,        // ch0 C4 on
      0x00, 0x93, 0x30, 0x50,        // ch3 C3 on
      0x83, 0x60, 0x80, 0x3c, 0x00,  // ch0 C4 off at 480
      0x00, 0x83, 0x30, 0x00,        // ch3 C3 off
      0x00, 0xff, 0x2f, 0x00,
  };
  std::vector<uint8_t> file = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
                               'M', 'T', 'r', 'k', 0, 0, 0, static_cast<uint8_t>(body.size())};
  file.insert(file.end(), body.begin(), body.end());
  Piece p = read_midi(file);
  REQUIRE(p.tracks.size() == 2);
  CHECK(p.tracks[0].channel == 0);
  CHECK(p.tracks[0].program == 0);
  CHECK(p.tracks[1].channel == 3);
  CHECK(p.tracks[1].program == 32);
  CHECK(p.tracks[1].notes[0].velocity == 80);
}

TEST_CASE("more than 16 tracks is a write capacity error") {
  Piece p;
  for (int i = 0; i < 17; ++i) p.tracks.emplace_back();
  CHECK_THROWS_AS(write_midi(p), MidiError);
}

TEST_CASE("quantize rounds to the grid") {
  Piece p;
  p.tracks.emplace_back(0, 0, std::vector<NoteEvent>{{60, 7, 3, 64}});
  Piece q = quantize(p, 10);
  CHECK(q.tracks[0].notes[0].start == 10);     // nearest multiple, ties up
  CHECK(q.tracks[0].notes[0].duration == 10);  // duration floor of one grid unit
  CHECK(q.tracks[0].notes[0].velocity == 66);  // bucket midpoint

  SUBCASE("ties round up") {
    Piece h;
    h.tracks.emplace_back(0, 0, std::vector<NoteEvent>{{60, 5, 15, 64}});
    Piece hq = quantize(h, 10);
    CHECK(hq.tracks[0].notes[0].start == 10);
    CHECK(hq.tracks[0].notes[0].duration == 20);
  }
}

TEST_CASE("quantize is idempotent") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    Piece p = testing::random_piece(rng);
    Piece once = quantize(p, 60);
    CHECK(quantize(once, 60) == once);
  }
}

}  // TEST_SUITE
