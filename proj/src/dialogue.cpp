#include "avtok/dialogue.hpp"

#include <cmath>
#include <cstdio>

#include "avtok/errors.hpp"
#include "avtok/rng.hpp"

namespace avtok {

void DialogueSynthConfig::validate() const {
  if (n_turns < 1) throw ValidationError("dialogue synth: n_turns must be >= 1");
  if (span_lo < 0 || span_hi < span_lo)
    throw ValidationError("dialogue synth: bad span range");
  if (words_lo < 1 || words_hi < words_lo)
    throw ValidationError("dialogue synth: bad word range");
  if (n_face_states < 1 || n_face_states > VocabLayout::kFaceVocab)
    throw ValidationError("dialogue synth: n_face_states outside [1, 1000]");
  if (noise_prob < 0.0 || noise_prob > 1.0)
    throw ValidationError("dialogue synth: noise_prob outside [0, 1]");
  if (speaker_pool < 2)
    throw ValidationError("dialogue synth: need at least 2 speakers");
}

SpeakerSlot speaker_embedding(const std::string& name) {
  Rng rng = Rng::stream(0x5eedf00ddeadbeefULL, "speaker/" + name);
  SpeakerSlot s;
  s.embedding.resize(SpeakerSlot::kDim);
  for (int i = 0; i < SpeakerSlot::kDim; ++i) s.embedding[i] = rng.normal();
  double n = s.embedding.norm();
  if (n == 0) s.embedding[0] = 1.0;  // unreachable in practice
  else s.embedding /= n;
  return s;
}

int speech_for_face(int face_raw) {
  if (face_raw < 0 || face_raw >= VocabLayout::kFaceVocab)
    throw ValidationError("speech_for_face: face id outside vocab");
  return (7 * face_raw + 13) % VocabLayout::kSpeechVocab;
}

namespace {

const std::vector<std::string>& word_list() {
  static const std::vector<std::string> kWords = {
      "again",  "air",    "blue",   "bring",  "calm",  "chair",  "close",
      "cloud",  "cold",   "come",   "dark",   "day",   "dream",  "early",
      "evening", "fast",  "fine",   "fire",   "glad",  "good",   "green",
      "hand",   "happy",  "hear",   "heavy",  "hello", "home",   "hope",
      "house",  "kind",   "late",   "light",  "listen", "long",  "look",
      "loud",   "morning", "move",  "music",  "near",  "night",  "open",
      "quiet",  "rain",   "ready",  "rest",   "river", "road",   "see",
      "sing",   "slow",   "small",  "smile",  "soft",  "soon",   "stay",
      "stone",  "story",  "sun",    "take",   "talk",  "tell",   "thanks",
      "time",   "today",  "warm",   "water",  "wait",  "walk",   "wind"};
  return kWords;
}

}  // namespace

DialogueSynth::DialogueSynth(std::uint64_t seed,
                             const DialogueSynthConfig& cfg)
    : cfg_(cfg), seed_(seed), words_(word_list()) {
  cfg_.validate();

  // Support: the first n_face_states entries of a partial shuffle of the
  // face vocabulary.
  Rng sup_rng = Rng::stream(seed, "dialogue/chain/support");
  std::vector<int> all(VocabLayout::kFaceVocab);
  for (int i = 0; i < VocabLayout::kFaceVocab; ++i) all[i] = i;
  for (int i = 0; i < cfg_.n_face_states; ++i) {
    int j = i + static_cast<int>(sup_rng.uniform_int(
                    static_cast<std::uint64_t>(all.size() - i)));
    std::swap(all[i], all[j]);
  }
  support_.assign(all.begin(), all.begin() + cfg_.n_face_states);

  // Row-stochastic transitions, stored cumulative for categorical draws.
  Rng tr_rng = Rng::stream(seed, "dialogue/chain/trans");
  cum_trans_.assign(cfg_.n_face_states,
                    std::vector<double>(cfg_.n_face_states, 0.0));
  for (int i = 0; i < cfg_.n_face_states; ++i) {
    double total = 0.0;
    std::vector<double> w(cfg_.n_face_states);
    for (int j = 0; j < cfg_.n_face_states; ++j) {
      w[j] = -std::log(1.0 - tr_rng.uniform());  // exponential weights
      total += w[j];
    }
    double acc = 0.0;
    for (int j = 0; j < cfg_.n_face_states; ++j) {
      acc += w[j] / total;
      cum_trans_[i][j] = acc;
    }
    cum_trans_[i].back() = 1.0;
  }
}

DialogueContext DialogueSynth::make(int index) const {
  if (index < 0) throw ValidationError("dialogue synth: negative index");
  Rng rng = Rng::stream(seed_, "dialogue/" + std::to_string(index));

  auto speaker_name = [&](std::uint64_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "spk%03d", static_cast<int>(id));
    return std::string(buf);
  };
  std::uint64_t a = rng.uniform_int(cfg_.speaker_pool);
  std::uint64_t b = rng.uniform_int(cfg_.speaker_pool - 1);
  if (b >= a) ++b;  // distinct pair
  std::string names[2] = {speaker_name(a), speaker_name(b)};

  auto sentence = [&]() {
    int n = cfg_.words_lo +
            static_cast<int>(rng.uniform_int(cfg_.words_hi - cfg_.words_lo + 1));
    std::string s;
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += words_[rng.uniform_int(words_.size())];
    }
    return s;
  };

  int state = static_cast<int>(rng.uniform_int(cfg_.n_face_states));
  auto step_chain = [&]() {
    double u = rng.uniform();
    const auto& row = cum_trans_[state];
    int next = 0;
    while (next + 1 < static_cast<int>(row.size()) && row[next] < u) ++next;
    state = next;
    return support_[state];
  };

  DialogueContext ctx;
  const auto& labels = emotion_labels();
  for (int t = 0; t < cfg_.n_turns; ++t) {
    DialogueTurn turn;
    turn.speaker = speaker_embedding(names[t % 2]);
    turn.text = sentence();
    turn.emotion = labels[rng.uniform_int(labels.size())];
    int span = cfg_.span_lo +
               static_cast<int>(rng.uniform_int(cfg_.span_hi - cfg_.span_lo + 1));
    for (int k = 0; k < span; ++k) {
      int face = step_chain();
      turn.face_tokens.push_back(face);
      int speech = (cfg_.noise_prob > 0 && rng.uniform() < cfg_.noise_prob)
                       ? static_cast<int>(rng.uniform_int(VocabLayout::kSpeechVocab))
                       : speech_for_face(face);
      turn.speech_tokens.push_back(speech);
    }
    ctx.history.push_back(std::move(turn));
  }
  ctx.current.speaker = speaker_embedding(names[cfg_.n_turns % 2]);
  ctx.current.text = sentence();
  return ctx;
}

}  // namespace avtok
