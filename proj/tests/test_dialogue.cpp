#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "avtok/dialogue.hpp"
#include "avtok/errors.hpp"
#include "avtok/tokenstream.hpp"

using namespace avtok;

TEST_CASE("face-to-speech map is injective over the face vocabulary") {
  std::set<int> seen;
  for (int f = 0; f < VocabLayout::kFaceVocab; ++f) {
    int s = speech_for_face(f);
    CHECK(s == (7 * f + 13) % VocabLayout::kSpeechVocab);
    CHECK(s >= 0);
    CHECK(s < VocabLayout::kSpeechVocab);
    CHECK(seen.insert(s).second);
  }
  CHECK_THROWS_AS(speech_for_face(-1), ValidationError);
  CHECK_THROWS_AS(speech_for_face(VocabLayout::kFaceVocab), ValidationError);
}

TEST_CASE("speaker embeddings are unit norm and keyed by name") {
  SpeakerSlot a1 = speaker_embedding("spk_007");
  SpeakerSlot a2 = speaker_embedding("spk_007");
  SpeakerSlot b = speaker_embedding("spk_008");
  a1.validate();
  b.validate();
  CHECK(a1.embedding == a2.embedding);
  CHECK((a1.embedding - b.embedding).norm() > 1e-3);
}

TEST_CASE("config validation") {
  DialogueSynthConfig ok;
  ok.validate();

  DialogueSynthConfig c = ok;
  c.n_turns = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.span_lo = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.span_hi = c.span_lo - 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.n_face_states = VocabLayout::kFaceVocab + 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.noise_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.speaker_pool = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.words_lo = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("make(index) is deterministic and index-sensitive") {
  DialogueSynthConfig cfg;
  DialogueSynth s1(99, cfg);
  DialogueSynth s2(99, cfg);
  DialogueSynth s3(100, cfg);

  DialogueContext a = s1.make(5);
  DialogueContext b = s2.make(5);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].text == b.history[i].text);
    CHECK(a.history[i].emotion == b.history[i].emotion);
    CHECK(a.history[i].face_tokens == b.history[i].face_tokens);
    CHECK(a.history[i].speech_tokens == b.history[i].speech_tokens);
    CHECK(a.history[i].speaker.embedding == b.history[i].speaker.embedding);
  }
  CHECK(a.current.text == b.current.text);

  // Different index or different seed changes the content.
  DialogueContext c = s1.make(6);
  DialogueContext d = s3.make(5);
  bool differs_c = (a.history[0].face_tokens != c.history[0].face_tokens) ||
                   (a.history[0].text != c.history[0].text);
  bool differs_d = (a.history[0].face_tokens != d.history[0].face_tokens) ||
                   (a.history[0].text != d.history[0].text);
  CHECK(differs_c);
  CHECK(differs_d);
}

TEST_CASE("generated dialogues satisfy structural bounds") {
  DialogueSynthConfig cfg;
  cfg.n_turns = 3;
  DialogueSynth synth(7, cfg);
  std::set<int> support(synth.face_support().begin(),
                        synth.face_support().end());
  REQUIRE(static_cast<int>(support.size()) == cfg.n_face_states);

  for (int idx = 0; idx < 50; ++idx) {
    DialogueContext ctx = synth.make(idx);
    ctx.validate();
    REQUIRE(static_cast<int>(ctx.history.size()) == cfg.n_turns);
    std::set<std::string> speaker_keys;
    for (const DialogueTurn& t : ctx.history) {
      int k = static_cast<int>(t.face_tokens.size());
      CHECK(k >= cfg.span_lo);
      CHECK(k <= cfg.span_hi);
      CHECK(t.speech_tokens.size() == t.face_tokens.size());
      for (std::size_t i = 0; i < t.face_tokens.size(); ++i) {
        CHECK(support.count(t.face_tokens[i]) == 1);
        CHECK(t.speech_tokens[i] == speech_for_face(t.face_tokens[i]));
      }
      int words = 1;
      for (char ch : t.text)
        if (ch == ' ') ++words;
      CHECK(words >= cfg.words_lo);
      CHECK(words <= cfg.words_hi);
    }
    // Exactly two speakers alternate through history and current.
    CHECK((ctx.history[0].speaker.embedding -
           ctx.history[2].speaker.embedding)
              .norm() < 1e-12);
    CHECK((ctx.history[1].speaker.embedding -
           ctx.current.speaker.embedding)
              .norm() < 1e-12);
    CHECK((ctx.history[0].speaker.embedding -
           ctx.history[1].speaker.embedding)
              .norm() > 1e-3);
  }
}

TEST_CASE("emotion marginal is near uniform") {
  DialogueSynthConfig cfg;
  cfg.n_turns = 1;
  DialogueSynth synth(31, cfg);
  std::vector<int> counts(7, 0);
  const int n = 10000;
  for (int idx = 0; idx < n; ++idx) {
    const std::string& emo = synth.make(idx).history[0].emotion;
    const auto& labels = emotion_labels();
    bool found = false;
    for (int e = 0; e < 7; ++e) {
      if (labels[static_cast<std::size_t>(e)] == emo) {
        ++counts[static_cast<std::size_t>(e)];
        found = true;
        break;
      }
    }
    REQUIRE(found);
  }
  for (int e = 0; e < 7; ++e) {
    double p = counts[static_cast<std::size_t>(e)] / static_cast<double>(n);
    CHECK(p > 1.0 / 7.0 - 0.02);
    CHECK(p < 1.0 / 7.0 + 0.02);
  }
}

TEST_CASE("noise corrupts speech tokens at roughly the configured rate") {
  DialogueSynthConfig cfg;
  cfg.noise_prob = 0.3;
  cfg.n_turns = 2;
  DialogueSynth synth(55, cfg);
  int total = 0, corrupted = 0;
  for (int idx = 0; idx < 400; ++idx) {
    DialogueContext ctx = synth.make(idx);
    for (const DialogueTurn& t : ctx.history)
      for (std::size_t i = 0; i < t.face_tokens.size(); ++i) {
        ++total;
        if (t.speech_tokens[i] != speech_for_face(t.face_tokens[i]))
          ++corrupted;
      }
  }
  double rate = corrupted / static_cast<double>(total);
  CHECK(rate > 0.22);
  CHECK(rate < 0.38);
}
