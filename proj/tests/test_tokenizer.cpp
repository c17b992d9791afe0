#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "maestro/tokenizer.hpp"

using namespace maestro;

TEST_SUITE("tokenizer") {

TEST_CASE("vocabulary layout") {
  CHECK(kVocabSize == 388);
  CHECK(kVocabSize == 128 + 128 + 100 + 32);
  CHECK(note_on_token(60) == 60);
  CHECK(note_off_token(60) == 188);
  CHECK(time_shift_token(8) == 263);
  CHECK(velocity_token(16) == 372);
  CHECK(grid_ticks(480) == 60);
}

TEST_CASE("single note encodes to the hand-computed ids") {
  Track t(0, 0, {{60, 0, 480, 64}});
  TokenSequence ids = encode_tokens(t);
  CHECK(ids == TokenSequence{372, 60, 263, 188});
}

TEST_CASE("empty track encodes to an empty sequence") {
  CHECK(encode_tokens(Track{}).empty());
}

TEST_CASE("decode uses the default velocity bucket midpoint") {
  TokenSequence ids = {60, 263, 188};
  Track t = decode_tokens(ids);
  REQUIRE(t.notes.size() == 1);
  CHECK(t.notes[0] == NoteEvent{60, 0, 480, 66});
}

TEST_CASE("dangling note-off is skipped") {
  TokenSequence ids = {188};
  CHECK(decode_tokens(ids).notes.empty());
}

TEST_CASE("open note closes at the final clock with minimum duration") {
  TokenSequence ids = {60};
  Track t = decode_tokens(ids);
  REQUIRE(t.notes.size() == 1);
  CHECK(t.notes[0].duration == 60);  // one grid unit
}

TEST_CASE("gaps longer than 100 units split into several time shifts") {
  Track t(0, 0, {{72, 150 * 60, 60, 66}});
  TokenSequence ids = encode_tokens(t);
  REQUIRE(ids.size() == 5);
  CHECK(ids[0] == time_shift_token(100));
  CHECK(ids[1] == time_shift_token(50));
  CHECK(decode_tokens(ids) == t);
}

TEST_CASE("velocity token appears only on bucket changes") {
  Track t(0, 0, {{60, 0, 60, 66}, {62, 60, 60, 66}, {64, 120, 60, 90}});
  TokenSequence ids = encode_tokens(t);
  int velocity_tokens = 0;
  for (auto id : ids) velocity_tokens += is_velocity(id) ? 1 : 0;
  CHECK(velocity_tokens == 2);  // first note and the bucket change
}

TEST_CASE("decode is total over arbitrary id sequences") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    TokenSequence ids;
    int n = testing::uniform_int(rng, 0, 200);
    for (int j = 0; j < n; ++j) ids.push_back(testing::uniform_int(rng, 0, kVocabSize - 1));
    CHECK_NOTHROW(decode_tokens(ids));
  }
}

TEST_CASE("encode/decode round trip on random quantized tracks") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 300; ++i) {
    Track t = testing::random_quantized_track(rng);
    Track back = decode_tokens(encode_tokens(t), t.program, t.channel);
    CHECK(back == t);
  }
}

}  // TEST_SUITE
