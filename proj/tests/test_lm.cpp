#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "avtok/bpe.hpp"
#include "avtok/dialogue.hpp"
#include "avtok/errors.hpp"
#include "avtok/lm.hpp"
#include "avtok/rng.hpp"
#include "avtok/tokenstream.hpp"

using namespace avtok;

namespace {

LmConfig tiny_config() {
  LmConfig cfg;
  cfg.model_dim = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 64;
  cfg.layout.text_vocab_size = 256;
  return cfg;
}

/// B, speaker, two text tokens, emotion, one bracketed pair, current
/// speaker, one text token, then target: emotion, two pairs, D.
TokenStream handmade_stream(const VocabLayout& L) {
  TokenStream ts;
  ts.items.push_back(special_token(L, L.B()));
  ts.items.push_back(speaker_embedding("p1"));
  ts.items.push_back(text_token(L, 5));
  ts.items.push_back(text_token(L, 9));
  ts.items.push_back(emotion_to_token(L, "Happy"));
  ts.items.push_back(special_token(L, L.S()));
  ts.items.push_back(face_token(L, 10));
  ts.items.push_back(speech_token(L, 20));
  ts.items.push_back(special_token(L, L.E()));
  ts.items.push_back(speaker_embedding("p2"));
  ts.items.push_back(text_token(L, 3));
  ts.items.push_back(emotion_to_token(L, "Fear"));
  ts.items.push_back(face_token(L, 30));
  ts.items.push_back(speech_token(L, 40));
  ts.items.push_back(face_token(L, 31));
  ts.items.push_back(speech_token(L, 41));
  ts.items.push_back(special_token(L, L.D()));
  return ts;
}

TokenStream tiny_prompt(const VocabLayout& L) {
  TokenStream ts;
  ts.items.push_back(special_token(L, L.B()));
  ts.items.push_back(speaker_embedding("p1"));
  ts.items.push_back(text_token(L, 1));
  return ts;
}

}  // namespace

TEST_CASE("config validation") {
  LmConfig ok = tiny_config();
  ok.validate();

  LmConfig c = ok;
  c.model_dim = 15;  // not divisible by heads
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ok;
  c.max_seq_len = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  SamplerConfig s;
  s.top_k = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SamplerConfig{};
  s.top_p = 0.0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SamplerConfig{};
  s.top_p = 1.0 + 1e-9;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SamplerConfig{};
  s.repetition_threshold = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);

  // Architecture block round trips.
  nlohmann::json j = ok.to_json();
  LmConfig back = LmConfig::from_json(j);
  CHECK(back.model_dim == ok.model_dim);
  CHECK(back.n_layers == ok.n_layers);
  CHECK(back.n_heads == ok.n_heads);
  CHECK(back.max_seq_len == ok.max_seq_len);
  CHECK(back.layout.text_vocab_size == ok.layout.text_vocab_size);
}

TEST_CASE("decode phase machine") {
  VocabLayout L;
  DecodeState st;
  CHECK(st.phase == DecodeState::Phase::AwaitEmotion);

  // Only emotion legal first.
  CHECK_THROWS_AS(DecodeState{}.advance(L, L.face_base()), ValidationError);
  CHECK_THROWS_AS(DecodeState{}.advance(L, L.D()), ValidationError);

  st.advance(L, L.emo_base() + 3);
  CHECK(st.phase == DecodeState::Phase::ExpectFace);

  // Speech before face is illegal; face moves to ExpectSpeech.
  DecodeState bad = st;
  CHECK_THROWS_AS(bad.advance(L, L.speech_base()), ValidationError);
  st.advance(L, L.face_base() + 7);
  CHECK(st.phase == DecodeState::Phase::ExpectSpeech);
  CHECK(st.n_face == 1);

  // D mid-pair is illegal.
  bad = st;
  CHECK_THROWS_AS(bad.advance(L, L.D()), ValidationError);
  st.advance(L, L.speech_base() + 100);
  CHECK(st.phase == DecodeState::Phase::ExpectFace);
  CHECK(st.n_speech == 1);

  // D between pairs finishes.
  st.advance(L, L.D());
  CHECK(st.phase == DecodeState::Phase::Done);
  bad = st;
  CHECK_THROWS_AS(bad.advance(L, L.emo_base()), ValidationError);

  // S/E/B are never legal while decoding.
  DecodeState fresh;
  fresh.advance(L, L.emo_base());
  CHECK_THROWS_AS(fresh.advance(L, L.S()), ValidationError);
}

TEST_CASE("type mask sizes per phase") {
  VocabLayout L;
  auto count = [](const std::vector<bool>& m) {
    int n = 0;
    for (bool b : m)
      if (b) ++n;
    return n;
  };

  DecodeState st;
  std::vector<bool> m = type_mask(st, L);
  REQUIRE(static_cast<int>(m.size()) == L.total_vocab());
  CHECK(count(m) == 7);
  for (int e = 0; e < 7; ++e) CHECK(m[static_cast<std::size_t>(L.emo_base() + e)]);

  st.advance(L, L.emo_base());
  m = type_mask(st, L);
  CHECK(count(m) == 1001);  // face region plus D
  CHECK(m[static_cast<std::size_t>(L.D())]);
  CHECK(m[static_cast<std::size_t>(L.face_base())]);
  CHECK_FALSE(m[static_cast<std::size_t>(L.speech_base())]);

  st.advance(L, L.face_base());
  m = type_mask(st, L);
  CHECK(count(m) == 6561);
  CHECK_FALSE(m[static_cast<std::size_t>(L.D())]);

  st.advance(L, L.speech_base());
  st.advance(L, L.D());
  m = type_mask(st, L);
  CHECK(count(m) == 0);
}

TEST_CASE("loss targets pick multimodal positions only") {
  VocabLayout L;
  TokenStream ts = handmade_stream(L);
  std::vector<std::pair<int, int>> targets = loss_targets(ts, L);

  // Next-item targets: emotion at 4, face at 6, speech at 7, emotion at 11,
  // face 12, speech 13, face 14, speech 15, final D at 16.  Inputs are the
  // preceding positions.
  std::vector<std::pair<int, int>> want = {
      {3, emotion_to_token(L, "Happy").id},
      {5, face_token(L, 10).id},
      {6, speech_token(L, 20).id},
      {10, emotion_to_token(L, "Fear").id},
      {11, face_token(L, 30).id},
      {12, speech_token(L, 40).id},
      {13, face_token(L, 31).id},
      {14, speech_token(L, 41).id},
      {15, L.D()}};
  CHECK(targets == want);

  // A D that is not final is not a target.
  TokenStream prefix;
  prefix.items.assign(ts.items.begin(), ts.items.begin() + 9);
  std::vector<std::pair<int, int>> t2 = loss_targets(prefix, L);
  for (const auto& [pos, id] : t2) CHECK(id != L.D());
}

TEST_CASE("uniform logits give ln(total_vocab) loss") {
  LmConfig cfg = tiny_config();
  LmModel model(cfg);
  model.init(1);
  // Zero every parameter: logits become exactly uniform.
  for (const std::string& name : model.params().names())
    model.params().at(name).setZero();

  TokenStream ts = handmade_stream(cfg.layout);
  double loss = lm_loss(model, {ts});
  CHECK(loss == doctest::Approx(std::log(cfg.layout.total_vocab()))
                    .epsilon(1e-9));
}

TEST_CASE("causal masking: suffix edits leave earlier logits unchanged") {
  LmConfig cfg = tiny_config();
  LmModel model(cfg);
  model.init(3);

  TokenStream a = handmade_stream(cfg.layout);
  TokenStream b = a;
  // Change the last two items.
  b.items[b.items.size() - 2] = speech_token(cfg.layout, 4000);
  b.items[b.items.size() - 1] = face_token(cfg.layout, 999);

  Eigen::MatrixXd la = model.forward(a);
  Eigen::MatrixXd lb = model.forward(b);
  REQUIRE(la.rows() == lb.rows());
  for (int t = 0; t + 2 < static_cast<int>(a.items.size()); ++t)
    CHECK((la.row(t) - lb.row(t)).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((la.row(la.rows() - 1) - lb.row(lb.rows() - 1))
            .lpNorm<Eigen::Infinity>() > 1e-8);
}

TEST_CASE("incremental cache matches whole-stream forward") {
  LmConfig cfg = tiny_config();
  LmModel model(cfg);
  model.init(5);

  TokenStream ts = handmade_stream(cfg.layout);
  Eigen::MatrixXd full = model.forward(ts);

  LmCache cache(model);
  std::vector<EmbedSlot> slots = stream_to_slots(ts);
  for (std::size_t t = 0; t < slots.size(); ++t) {
    Eigen::RowVectorXd row = cache.feed(slots[t]);
    CHECK((row - full.row(static_cast<int>(t))).lpNorm<Eigen::Infinity>() <
          1e-9);
  }
  CHECK(cache.length() == static_cast<int>(slots.size()));
}

TEST_CASE("cache refuses to exceed the positional table") {
  LmConfig cfg = tiny_config();
  cfg.max_seq_len = 4;
  LmModel model(cfg);
  model.init(2);
  LmCache cache(model);
  for (int t = 0; t < 4; ++t) cache.feed(EmbedSlot::token(t));
  CHECK_THROWS_AS(cache.feed(EmbedSlot::token(0)), ValidationError);

  TokenStream five;
  for (int t = 0; t < 5; ++t) five.items.push_back(text_token(cfg.layout, t));
  CHECK_THROWS_AS(model.forward(five), ValidationError);
}

TEST_CASE("generation obeys the grammar for random models") {
  for (std::uint64_t seed : {11ULL, 47ULL, 90210ULL}) {
    LmConfig cfg = tiny_config();
    cfg.sampler.max_pairs = 8;
    LmModel model(cfg);
    model.init(seed);

    TokenStream prompt = tiny_prompt(cfg.layout);
    GenerationResult gen =
        lm_generate(model, prompt, cfg.sampler, seed * 31 + 7);

    CHECK(gen.face.size() == gen.speech.size());
    CHECK(!gen.emotion.empty());
    CHECK(gen.terminated_by_d);
    CHECK(validate_stream(gen.stream, cfg.layout).empty());
    // The emitted ids reconstruct the stream tail.
    std::size_t tail = 1 + 2 * gen.face.size() + 1;
    REQUIRE(gen.stream.items.size() == prompt.items.size() + tail);
    CHECK(std::get<Token>(gen.stream.items.back()).id == cfg.layout.D());
  }
}

TEST_CASE("greedy decoding is deterministic") {
  LmConfig cfg = tiny_config();
  cfg.sampler.top_k = 1;
  cfg.sampler.max_pairs = 6;
  LmModel model(cfg);
  model.init(21);

  TokenStream prompt = tiny_prompt(cfg.layout);
  GenerationResult a = lm_generate(model, prompt, cfg.sampler, 123);
  GenerationResult b = lm_generate(model, prompt, cfg.sampler, 456);
  CHECK(a.emotion == b.emotion);
  CHECK(a.face == b.face);
  CHECK(a.speech == b.speech);

  // Same seed, default sampler: still reproducible.
  SamplerConfig wide;
  wide.max_pairs = 6;
  GenerationResult c = lm_generate(model, prompt, wide, 999);
  GenerationResult d = lm_generate(model, prompt, wide, 999);
  CHECK(c.face == d.face);
  CHECK(c.speech == d.speech);
  CHECK(c.emotion == d.emotion);
}

TEST_CASE("pair budget forces the terminator") {
  LmConfig cfg = tiny_config();
  cfg.sampler.max_pairs = 2;
  LmModel model(cfg);
  model.init(8);

  TokenStream prompt = tiny_prompt(cfg.layout);
  GenerationResult gen = lm_generate(model, prompt, cfg.sampler, 5);
  CHECK(gen.terminated_by_d);
  CHECK(gen.face.size() <= 2);

  // Position budget: room for emotion + one pair + D only.
  LmConfig snug = tiny_config();
  snug.max_seq_len = static_cast<int>(prompt.items.size()) + 4;
  LmModel small(snug);
  small.init(8);
  SamplerConfig roomy;
  roomy.max_pairs = 64;
  GenerationResult g2 = lm_generate(small, prompt, roomy, 5);
  CHECK(g2.terminated_by_d);
  CHECK(g2.face.size() == 1);
  CHECK(validate_stream(g2.stream, snug.layout).empty());

  // No room for even emotion + D: refused up front.
  LmConfig zero = tiny_config();
  zero.max_seq_len = static_cast<int>(prompt.items.size()) + 1;
  LmModel none(zero);
  none.init(8);
  CHECK_THROWS_WITH_AS(lm_generate(none, prompt, roomy, 5),
                       doctest::Contains("overlength"), ValidationError);
}

TEST_CASE("generate validates the prompt") {
  LmConfig cfg = tiny_config();
  LmModel model(cfg);
  model.init(4);

  TokenStream bad;
  bad.items.push_back(emotion_to_token(cfg.layout, "Happy"));
  CHECK_THROWS_AS(lm_generate(model, bad, cfg.sampler, 1), ValidationError);

  TokenStream done = tiny_prompt(cfg.layout);
  done.items.push_back(emotion_to_token(cfg.layout, "Happy"));
  done.items.push_back(special_token(cfg.layout, cfg.layout.D()));
  CHECK_THROWS_AS(lm_generate(model, done, cfg.sampler, 1), ValidationError);
}

namespace {

double lm_ce_value(const LmModel& model, const std::vector<EmbedSlot>& slots,
                   const std::vector<std::pair<int, int>>& targets) {
  Tape tape;
  std::function<Var(const std::string&)> lookup =
      [&](const std::string& name) {
        return tape.constant(model.params().at(name));
      };
  Var loss = tape.ce_loss_sum(model.build_logits(tape, slots, lookup),
                              targets);
  return tape.val(loss)(0, 0);
}

}  // namespace

TEST_CASE("loss gradients match finite differences through the transformer") {
  LmConfig cfg;
  cfg.model_dim = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 32;
  cfg.layout.text_vocab_size = 256;
  LmModel model(cfg);
  model.init(17);

  TokenStream ts;
  ts.items.push_back(special_token(cfg.layout, cfg.layout.B()));
  ts.items.push_back(speaker_embedding("fd"));
  ts.items.push_back(text_token(cfg.layout, 2));
  ts.items.push_back(emotion_to_token(cfg.layout, "Neutral"));
  ts.items.push_back(face_token(cfg.layout, 1));
  ts.items.push_back(speech_token(cfg.layout, 2));
  ts.items.push_back(special_token(cfg.layout, cfg.layout.D()));

  std::vector<EmbedSlot> slots = stream_to_slots(ts);
  std::vector<std::pair<int, int>> targets = loss_targets(ts, cfg.layout);
  REQUIRE(!targets.empty());

  Tape tape;
  std::map<std::string, Var> var_of;
  std::function<Var(const std::string&)> lookup =
      [&](const std::string& name) {
        auto it = var_of.find(name);
        if (it != var_of.end()) return it->second;
        Var v = tape.leaf(model.params().at(name));
        var_of.emplace(name, v);
        return v;
      };
  Var loss = tape.ce_loss_sum(model.build_logits(tape, slots, lookup),
                              targets);
  tape.backward(loss);

  Rng rng(1234);
  const double eps = 1e-5;
  int checked = 0;
  for (const std::string& name : model.params().names()) {
    Eigen::MatrixXd& p = model.params().at(name);
    const Eigen::MatrixXd& g = tape.grad(var_of.at(name));
    // Two random entries per parameter.
    for (int probe = 0; probe < 2; ++probe) {
      int r = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(p.rows())));
      int c = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(p.cols())));
      double keep = p(r, c);
      p(r, c) = keep + eps;
      double up = lm_ce_value(model, slots, targets);
      p(r, c) = keep - eps;
      double dn = lm_ce_value(model, slots, targets);
      p(r, c) = keep;
      double fd = (up - dn) / (2 * eps);
      double an = g(r, c);
      double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      CHECK(rel < 1e-3);
      ++checked;
    }
  }
  CHECK(checked >= 2 * static_cast<int>(model.params().names().size()));
}

TEST_CASE("save/load preserves logits bit-exactly") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "avtok_lm_ckpt";
  fs::create_directories(dir);
  std::string path = (dir / "lm.ckpt").string();

  LmConfig cfg = tiny_config();
  LmModel model(cfg);
  model.init(77);
  model.save(path);
  LmModel back = LmModel::load(path);

  TokenStream ts = handmade_stream(cfg.layout);
  Eigen::MatrixXd la = model.forward(ts);
  Eigen::MatrixXd lb = back.forward(ts);
  CHECK(la == lb);
  CHECK(back.config().model_dim == cfg.model_dim);
  CHECK(back.config().layout.text_vocab_size ==
        cfg.layout.text_vocab_size);
  fs::remove_all(dir);
}

TEST_CASE("short training run lowers the loss") {
  LmConfig cfg = tiny_config();
  LmModel model(cfg);
  model.init(13);

  BpeModel bpe = bpe_train({"look there see the light come home"}, 256);
  DialogueSynthConfig dcfg;
  dcfg.n_turns = 1;
  dcfg.span_lo = 2;
  dcfg.span_hi = 3;
  dcfg.n_face_states = 4;
  DialogueSynth synth(9, dcfg);

  std::vector<TokenStream> streams;
  for (int i = 0; i < 8; ++i) {
    auto [head, target] = split_last_turn(synth.make(i));
    streams.push_back(
        build_training_stream(head, target, bpe, cfg.layout));
  }

  LmTrainHyper hyper;
  hyper.steps = 30;
  hyper.batch = 2;
  hyper.seed = 13;
  LmTrainReport rep = lm_train(model, streams, {streams.back()}, hyper);
  CHECK(rep.loss_trace.size() == 31);
  CHECK(rep.final_loss < rep.initial_loss);
  CHECK(rep.speech_accuracy >= 0.0);
  CHECK(rep.speech_accuracy <= 1.0);

  LmTrainHyper bad;
  bad.steps = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = LmTrainHyper{};
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  // Streams that do not end with D are rejected before any training.
  TokenStream unterminated = streams[0];
  unterminated.items.pop_back();
  LmModel fresh(cfg);
  fresh.init(13);
  CHECK_THROWS_AS(lm_train(fresh, {unterminated}, {}, hyper),
                  ValidationError);
}
