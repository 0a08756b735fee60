#include "avtok/lm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "avtok/errors.hpp"
#include "avtok/rng.hpp"

namespace avtok {

void SamplerConfig::validate() const {
  if (top_k < 1) throw ValidationError("sampler: top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0))
    throw ValidationError("sampler: top_p must lie in (0, 1]");
  if (repetition_window < 1 || repetition_threshold < 1 ||
      repetition_threshold > repetition_window)
    throw ValidationError("sampler: bad repetition window/threshold");
  if (max_pairs < 0) throw ValidationError("sampler: max_pairs must be >= 0");
}

void LmConfig::validate() const {
  if (model_dim < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 2)
    throw ValidationError("lm: bad architecture sizes");
  if (model_dim % n_heads != 0)
    throw ValidationError("lm: model_dim must be divisible by n_heads");
  layout.validate();
  sampler.validate();
}

nlohmann::ordered_json LmConfig::to_json() const {
  return {{"model_dim", model_dim},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"max_seq_len", max_seq_len},
          {"text_vocab_size", layout.text_vocab_size}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig cfg;
  cfg.model_dim = j.at("model_dim").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.layout.text_vocab_size = j.at("text_vocab_size").get<int>();
  cfg.validate();
  return cfg;
}

void DecodeState::advance(const VocabLayout& layout, int id) {
  TokenKind kind = kind_of(layout, id);
  switch (phase) {
    case Phase::AwaitEmotion:
      if (kind != TokenKind::Emotion)
        throw ValidationError("decode: expected an emotion token");
      phase = Phase::ExpectFace;
      return;
    case Phase::ExpectFace:
      if (id == layout.D()) {
        phase = Phase::Done;
        return;
      }
      if (kind != TokenKind::Face)
        throw ValidationError("decode: expected a face token or D");
      ++n_face;
      phase = Phase::ExpectSpeech;
      return;
    case Phase::ExpectSpeech:
      if (kind != TokenKind::Speech)
        throw ValidationError("decode: expected a speech token");
      ++n_speech;
      phase = Phase::ExpectFace;
      return;
    case Phase::Done:
      throw ValidationError("decode: already terminated");
  }
}

std::vector<bool> type_mask(const DecodeState& state,
                            const VocabLayout& layout) {
  std::vector<bool> mask(static_cast<std::size_t>(layout.total_vocab()), false);
  switch (state.phase) {
    case DecodeState::Phase::AwaitEmotion:
      for (int i = 0; i < VocabLayout::kEmotionCount; ++i)
        mask[layout.emo_base() + i] = true;
      break;
    case DecodeState::Phase::ExpectFace:
      for (int i = 0; i < VocabLayout::kFaceVocab; ++i)
        mask[layout.face_base() + i] = true;
      mask[layout.D()] = true;
      break;
    case DecodeState::Phase::ExpectSpeech:
      for (int i = 0; i < VocabLayout::kSpeechVocab; ++i)
        mask[layout.speech_base() + i] = true;
      break;
    case DecodeState::Phase::Done:
      break;
  }
  return mask;
}

LmModel::LmModel(const LmConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int D = cfg_.model_dim;
  int V = cfg_.layout.total_vocab();
  params_.add("tok_embed", V, D);
  params_.add("pos_embed", cfg_.max_seq_len, D);
  params_.add("spk_proj", SpeakerSlot::kDim, D);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    std::string l = "l" + std::to_string(i) + ".";
    params_.add(l + "ln1.g", 1, D);
    params_.add(l + "ln1.b", 1, D);
    params_.add(l + "attn.wq", D, D);
    params_.add(l + "attn.bq", 1, D);
    params_.add(l + "attn.wk", D, D);
    params_.add(l + "attn.bk", 1, D);
    params_.add(l + "attn.wv", D, D);
    params_.add(l + "attn.bv", 1, D);
    params_.add(l + "attn.wo", D, D);
    params_.add(l + "attn.bo", 1, D);
    params_.add(l + "ln2.g", 1, D);
    params_.add(l + "ln2.b", 1, D);
    params_.add(l + "mlp.w1", D, 4 * D);
    params_.add(l + "mlp.b1", 1, 4 * D);
    params_.add(l + "mlp.w2", 4 * D, D);
    params_.add(l + "mlp.b2", 1, D);
  }
  params_.add("ln_f.g", 1, D);
  params_.add("ln_f.b", 1, D);
  params_.add("out.w", D, V);
  params_.add("out.b", 1, V);
}

void LmModel::init(std::uint64_t seed) {
  for (const auto& name : params_.names()) {
    if (name.ends_with(".g")) {
      params_.at(name).setOnes();
    } else if (name.ends_with(".b")) {
      params_.at(name).setZero();
    } else if (name == "tok_embed" || name == "pos_embed" || name == "out.w") {
      init_gaussian(params_, name, seed, 0.02);
    } else {
      double fan_in = static_cast<double>(params_.at(name).rows());
      init_gaussian(params_, name, seed, 1.0 / std::sqrt(fan_in));
    }
  }
  params_.round_to_f32();
}

Var LmModel::build_logits(
    Tape& tape, const std::vector<EmbedSlot>& slots,
    const std::function<Var(const std::string&)>& lookup) const {
  if (static_cast<int>(slots.size()) > cfg_.max_seq_len)
    throw ValidationError("lm: stream length " + std::to_string(slots.size()) +
                          " exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
  Var h = tape.mixed_embed(slots, lookup("tok_embed"), lookup("pos_embed"),
                           lookup("spk_proj"));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    std::string l = "l" + std::to_string(i) + ".";
    Var a = tape.layernorm(h, lookup(l + "ln1.g"), lookup(l + "ln1.b"));
    a = tape.causal_self_attention(
        a, lookup(l + "attn.wq"), lookup(l + "attn.bq"), lookup(l + "attn.wk"),
        lookup(l + "attn.bk"), lookup(l + "attn.wv"), lookup(l + "attn.bv"),
        lookup(l + "attn.wo"), lookup(l + "attn.bo"), cfg_.n_heads);
    h = tape.add(h, a);
    Var m = tape.layernorm(h, lookup(l + "ln2.g"), lookup(l + "ln2.b"));
    m = tape.add_rowvec(tape.matmul(m, lookup(l + "mlp.w1")),
                        lookup(l + "mlp.b1"));
    m = tape.gelu(m);
    m = tape.add_rowvec(tape.matmul(m, lookup(l + "mlp.w2")),
                        lookup(l + "mlp.b2"));
    h = tape.add(h, m);
  }
  Var hf = tape.layernorm(h, lookup("ln_f.g"), lookup("ln_f.b"));
  return tape.add_rowvec(tape.matmul(hf, lookup("out.w")), lookup("out.b"));
}

std::vector<EmbedSlot> stream_to_slots(const TokenStream& stream) {
  std::vector<EmbedSlot> slots;
  slots.reserve(stream.items.size());
  for (const StreamItem& item : stream.items) {
    if (const Token* t = std::get_if<Token>(&item))
      slots.push_back(EmbedSlot::token(t->id));
    else
      slots.push_back(
          EmbedSlot::vector(std::get<SpeakerSlot>(item).embedding));
  }
  return slots;
}

Eigen::MatrixXd LmModel::forward(const TokenStream& stream) const {
  if (stream.items.empty()) throw ValidationError("lm: empty stream");
  Tape tape;
  auto P = [&](const std::string& n) { return tape.constant(params_.at(n)); };
  Var logits = build_logits(tape, stream_to_slots(stream), P);
  Eigen::MatrixXd out = tape.val(logits);
  if (!out.allFinite()) throw NumericError("lm: non-finite logits");
  return out;
}

void LmModel::save(const std::string& path) const {
  save_checkpoint(path, "lm", cfg_.to_json(), params_);
}

LmModel LmModel::load(const std::string& path) {
  ParamStore loaded;
  nlohmann::json meta = load_checkpoint(path, "lm", loaded);
  LmModel model(LmConfig::from_json(meta));
  for (const auto& name : model.params_.names()) {
    if (!loaded.has(name))
      throw FormatError("lm checkpoint: missing parameter " + name);
    Eigen::MatrixXd& dst = model.params_.at(name);
    const Eigen::MatrixXd& src = loaded.at(name);
    if (dst.rows() != src.rows() || dst.cols() != src.cols())
      throw FormatError("lm checkpoint: shape mismatch for " + name);
    dst = src;
  }
  if (loaded.names().size() != model.params_.names().size())
    throw FormatError("lm checkpoint: unexpected extra parameters");
  return model;
}

namespace {

Eigen::RowVectorXd layernorm_row(const Eigen::RowVectorXd& x,
                                 const Eigen::MatrixXd& gain,
                                 const Eigen::MatrixXd& bias) {
  double mu = x.mean();
  double var = (x.array() - mu).square().mean();
  double is = 1.0 / std::sqrt(var + kLayerNormEps);
  return (((x.array() - mu) * is) * gain.row(0).array() +
          bias.row(0).array())
      .matrix();
}

}  // namespace

LmCache::LmCache(const LmModel& model) : model_(model) {
  k_.resize(model.cfg_.n_layers);
  v_.resize(model.cfg_.n_layers);
  for (int i = 0; i < model.cfg_.n_layers; ++i) {
    k_[i].resize(model.cfg_.max_seq_len, model.cfg_.model_dim);
    v_[i].resize(model.cfg_.max_seq_len, model.cfg_.model_dim);
  }
}

Eigen::RowVectorXd LmCache::feed(const EmbedSlot& slot) {
  const LmConfig& cfg = model_.cfg_;
  const ParamStore& P = model_.params_;
  if (t_ >= cfg.max_seq_len)
    throw ValidationError("lm: generation exceeded max_seq_len");
  int D = cfg.model_dim;
  int heads = cfg.n_heads;
  int dh = D / heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::RowVectorXd x;
  if (slot.token_id >= 0) {
    if (slot.token_id >= P.at("tok_embed").rows())
      throw ValidationError("lm: token id outside embedding table");
    x = P.at("tok_embed").row(slot.token_id) + P.at("pos_embed").row(t_);
  } else {
    if (slot.vec.size() != SpeakerSlot::kDim)
      throw ValidationError("lm: bad speaker vector length");
    x = slot.vec.transpose() * P.at("spk_proj") + P.at("pos_embed").row(t_);
  }

  for (int i = 0; i < cfg.n_layers; ++i) {
    std::string l = "l" + std::to_string(i) + ".";
    Eigen::RowVectorXd a =
        layernorm_row(x, P.at(l + "ln1.g"), P.at(l + "ln1.b"));
    Eigen::RowVectorXd q = a * P.at(l + "attn.wq") + P.at(l + "attn.bq");
    k_[i].row(t_) = a * P.at(l + "attn.wk") + P.at(l + "attn.bk");
    v_[i].row(t_) = a * P.at(l + "attn.wv") + P.at(l + "attn.bv");
    Eigen::RowVectorXd o(D);
    for (int h = 0; h < heads; ++h) {
      auto qh = q.segment(h * dh, dh);
      auto Kh = k_[i].block(0, h * dh, t_ + 1, dh);
      auto Vh = v_[i].block(0, h * dh, t_ + 1, dh);
      Eigen::VectorXd s = (Kh * qh.transpose()) * inv_sqrt;
      double m = s.maxCoeff();
      Eigen::VectorXd p = (s.array() - m).exp();
      p /= p.sum();
      o.segment(h * dh, dh) = (p.transpose() * Vh);
    }
    x += o * P.at(l + "attn.wo") + P.at(l + "attn.bo");

    Eigen::RowVectorXd m2 =
        layernorm_row(x, P.at(l + "ln2.g"), P.at(l + "ln2.b"));
    Eigen::RowVectorXd u = m2 * P.at(l + "mlp.w1") + P.at(l + "mlp.b1");
    for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = gelu_one(u[j]);
    x += u * P.at(l + "mlp.w2") + P.at(l + "mlp.b2");
  }
  Eigen::RowVectorXd hf = layernorm_row(x, P.at("ln_f.g"), P.at("ln_f.b"));
  Eigen::RowVectorXd logits = hf * P.at("out.w") + P.at("out.b");
  if (!logits.allFinite()) throw NumericError("lm: non-finite logits");
  ++t_;
  return logits;
}

std::vector<std::pair<int, int>> loss_targets(const TokenStream& stream,
                                              const VocabLayout& layout) {
  std::vector<std::pair<int, int>> targets;
  if (stream.items.size() < 2) return targets;
  for (std::size_t t = 0; t + 1 < stream.items.size(); ++t) {
    const Token* tok = std::get_if<Token>(&stream.items[t + 1]);
    if (!tok) continue;
    if (tok->kind == TokenKind::Emotion || tok->kind == TokenKind::Face ||
        tok->kind == TokenKind::Speech) {
      targets.emplace_back(static_cast<int>(t), tok->id);
    } else if (tok->kind == TokenKind::Special && tok->id == layout.D() &&
               t + 2 == stream.items.size()) {
      targets.emplace_back(static_cast<int>(t), tok->id);
    }
  }
  return targets;
}

namespace {

TokenStream inputs_of(const TokenStream& stream) {
  TokenStream in;
  in.items.assign(stream.items.begin(), stream.items.end() - 1);
  return in;
}

}  // namespace

double lm_loss(const LmModel& model, const std::vector<TokenStream>& streams) {
  double total = 0.0;
  long long count = 0;
  for (const TokenStream& s : streams) {
    auto targets = loss_targets(s, model.config().layout);
    if (targets.empty()) continue;
    Eigen::MatrixXd logits = model.forward(inputs_of(s));
    for (auto [pos, id] : targets) {
      double m = logits.row(pos).maxCoeff();
      double lse = m + std::log((logits.row(pos).array() - m).exp().sum());
      total += lse - logits(pos, id);
    }
    count += static_cast<long long>(targets.size());
  }
  if (count == 0) throw ValidationError("lm_loss: no target positions");
  return total / static_cast<double>(count);
}

double speech_token_accuracy(const LmModel& model,
                             const std::vector<TokenStream>& streams) {
  const VocabLayout& layout = model.config().layout;
  long long correct = 0, total = 0;
  for (const TokenStream& s : streams) {
    auto targets = loss_targets(s, layout);
    bool any = false;
    for (auto [pos, id] : targets)
      any = any || kind_of(layout, id) == TokenKind::Speech;
    if (!any) continue;
    Eigen::MatrixXd logits = model.forward(inputs_of(s));
    for (auto [pos, id] : targets) {
      if (kind_of(layout, id) != TokenKind::Speech) continue;
      Eigen::Index best;
      logits.row(pos).maxCoeff(&best);
      correct += (static_cast<int>(best) == id) ? 1 : 0;
      ++total;
    }
  }
  if (total == 0)
    throw ValidationError("speech_token_accuracy: no speech targets");
  return static_cast<double>(correct) / static_cast<double>(total);
}

void LmTrainHyper::validate() const {
  if (lr <= 0 || steps < 0 || batch < 1 || grad_clip <= 0)
    throw ValidationError("lm_train: hyperparameters must be positive");
}

nlohmann::ordered_json LmTrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["initial_loss"] = initial_loss;
  j["final_loss"] = final_loss;
  j["speech_accuracy"] = speech_accuracy;
  j["wall_time"] = wall_time;
  auto trace = nlohmann::ordered_json::array();
  for (const auto& [step, v] : loss_trace) trace.push_back({step, v});
  j["loss_trace"] = trace;
  return j;
}

LmTrainReport lm_train(LmModel& model, const std::vector<TokenStream>& train,
                       const std::vector<TokenStream>& holdout,
                       const LmTrainHyper& hyper) {
  hyper.validate();
  if (train.empty()) throw ValidationError("lm_train: empty dataset");
  const VocabLayout& layout = model.config().layout;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const TokenStream& s = train[i];
    const Token* last =
        s.items.empty() ? nullptr : std::get_if<Token>(&s.items.back());
    if (!last || last->id != layout.D())
      throw ValidationError("lm_train: stream " + std::to_string(i) +
                            " does not end with D");
    auto diags = validate_stream(s, layout);
    if (!diags.empty())
      throw ValidationError("lm_train: stream " + std::to_string(i) +
                            " malformed: " + diags.front());
  }
  auto t0 = std::chrono::steady_clock::now();

  LmTrainReport report;
  int eval_n = std::min<int>(16, static_cast<int>(train.size()));
  std::vector<TokenStream> eval_set(train.begin(), train.begin() + eval_n);
  report.initial_loss = lm_loss(model, eval_set);
  report.loss_trace.emplace_back(0, report.initial_loss);

  AdamState opt;
  Rng batch_rng = Rng::stream(hyper.seed, "lm/train/batch");
  for (int step = 1; step <= hyper.steps; ++step) {
    GradMap grads;
    double ce_sum = 0.0;
    long long n_targets = 0;
    for (int b = 0; b < hyper.batch; ++b) {
      const TokenStream& s = train[batch_rng.uniform_int(train.size())];
      auto targets = loss_targets(s, layout);
      if (targets.empty()) continue;
      Tape tape;
      TapeParams tp;
      auto P = [&](const std::string& n) {
        return tp.bind(tape, model.params(), n);
      };
      Var logits = model.build_logits(tape, stream_to_slots(inputs_of(s)), P);
      Var loss = tape.ce_loss_sum(logits, targets);
      double lv = tape.val(loss)(0, 0);
      if (!std::isfinite(lv))
        throw NumericError("lm_train: non-finite loss at step " +
                           std::to_string(step));
      ce_sum += lv;
      n_targets += static_cast<long long>(targets.size());
      tape.backward(loss);
      tp.grads_into(tape, grads);
    }
    if (n_targets == 0) continue;
    scale_grads(grads, 1.0 / static_cast<double>(n_targets));
    clip_grads(grads, hyper.grad_clip);
    adam_step(model.params(), grads, opt, hyper.lr);
    report.loss_trace.emplace_back(step,
                                   ce_sum / static_cast<double>(n_targets));
  }

  model.params().round_to_f32();
  report.final_loss = lm_loss(model, eval_set);
  if (!holdout.empty())
    report.speech_accuracy = speech_token_accuracy(model, holdout);
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

namespace {

/// One constrained sampling step over the masked distribution.
int sample_masked(const Eigen::RowVectorXd& logits,
                  const std::vector<bool>& mask, const SamplerConfig& cfg,
                  Rng& rng, bool repetition_fallback) {
  std::vector<int> ids;
  ids.reserve(64);
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[i]) ids.push_back(i);
  if (ids.empty()) throw ValidationError("sampler: empty mask");

  double m = -std::numeric_limits<double>::infinity();
  for (int id : ids) m = std::max(m, logits[id]);
  std::vector<double> probs(ids.size());
  double z = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    probs[i] = std::exp(logits[ids[i]] - m);
    z += probs[i];
  }
  for (double& p : probs) p /= z;

  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (!repetition_fallback) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (probs[a] != probs[b]) return probs[a] > probs[b];
      return ids[a] < ids[b];
    });
    std::size_t keep = std::min<std::size_t>(cfg.top_k, order.size());
    order.resize(keep);
    double cum = 0.0;
    std::size_t cut = order.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
      cum += probs[order[i]];
      if (cum >= cfg.top_p - 1e-12) {
        cut = i + 1;
        break;
      }
    }
    order.resize(cut);
  }

  double total = 0.0;
  for (std::size_t i : order) total += probs[i];
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i : order) {
    acc += probs[i];
    if (u < acc) return ids[i];
  }
  return ids[order.back()];
}

bool repetition_triggered(const std::vector<int>& history,
                          const SamplerConfig& cfg) {
  if (static_cast<int>(history.size()) < cfg.repetition_window) return false;
  std::unordered_map<int, int> counts;
  int best = 0;
  for (std::size_t i = history.size() - cfg.repetition_window;
       i < history.size(); ++i)
    best = std::max(best, ++counts[history[i]]);
  return best >= cfg.repetition_threshold;
}

}  // namespace

GenerationResult lm_generate(const LmModel& model, const TokenStream& prompt,
                             const SamplerConfig& sampler,
                             std::uint64_t seed) {
  sampler.validate();
  const LmConfig& cfg = model.config();
  const VocabLayout& layout = cfg.layout;
  {
    auto diags = validate_stream(prompt, layout);
    if (!diags.empty())
      throw ValidationError("lm_generate: malformed context: " + diags.front());
    if (!prompt.items.empty())
      if (const Token* last = std::get_if<Token>(&prompt.items.back());
          last && last->id == layout.D())
        throw ValidationError("lm_generate: context already terminated by D");
  }
  int prompt_len = static_cast<int>(prompt.items.size());
  // Room for at least the emotion token and D.
  if (prompt_len + 2 > cfg.max_seq_len)
    throw ValidationError("lm_generate: context overlength (" +
                          std::to_string(prompt_len) + " of " +
                          std::to_string(cfg.max_seq_len) + " positions)");
  int budget_pairs = std::min(
      sampler.max_pairs, (cfg.max_seq_len - prompt_len - 2) / 2);

  LmCache cache(model);
  Eigen::RowVectorXd logits;
  for (const StreamItem& item : prompt.items) {
    if (const Token* t = std::get_if<Token>(&item))
      logits = cache.feed(EmbedSlot::token(t->id));
    else
      logits =
          cache.feed(EmbedSlot::vector(std::get<SpeakerSlot>(item).embedding));
  }

  Rng rng = Rng::stream(seed, "lm/generate");
  GenerationResult result;
  result.stream = prompt;
  DecodeState state;
  std::vector<int> face_hist, speech_hist;

  while (state.phase != DecodeState::Phase::Done) {
    std::vector<bool> mask = type_mask(state, layout);
    bool fallback = false;
    if (state.phase == DecodeState::Phase::ExpectFace) {
      if (state.n_speech >= budget_pairs) {
        // Budget exhausted: force termination so alignment always holds.
        std::fill(mask.begin(), mask.end(), false);
        mask[layout.D()] = true;
      } else {
        fallback = repetition_triggered(face_hist, sampler);
      }
    } else if (state.phase == DecodeState::Phase::ExpectSpeech) {
      fallback = repetition_triggered(speech_hist, sampler);
    }
    int id = sample_masked(logits, mask, sampler, rng, fallback);
    state.advance(layout, id);

    Token tok{kind_of(layout, id), id};
    result.stream.items.push_back(tok);
    switch (tok.kind) {
      case TokenKind::Emotion:
        result.emotion = token_to_emotion(layout, tok);
        break;
      case TokenKind::Face:
        result.face.push_back(raw_id(layout, tok));
        face_hist.push_back(id);
        break;
      case TokenKind::Speech:
        result.speech.push_back(raw_id(layout, tok));
        speech_hist.push_back(id);
        break;
      default:
        break;
    }
    if (state.phase == DecodeState::Phase::Done) {
      result.terminated_by_d = true;
      break;
    }
    logits = cache.feed(EmbedSlot::token(id));
  }
  return result;
}

}  // namespace avtok
