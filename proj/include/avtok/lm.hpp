#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "avtok/autodiff.hpp"
#include "avtok/params.hpp"
#include "avtok/tokenstream.hpp"

namespace avtok {

struct SamplerConfig {
  int top_k = 25;
  double top_p = 0.8;
  int repetition_window = 10;     // same-region emissions inspected
  int repetition_threshold = 10;  // identical ids triggering the fallback
  int max_pairs = 64;             // face/speech pair budget per generation

  void validate() const;
};

/// Decoder-only transformer over the unified vocabulary: mixed token/vector
/// embedding with learned positions, pre-norm blocks with causal multi-head
/// attention and a GELU MLP, final norm, linear head.
struct LmConfig {
  int model_dim = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 512;
  VocabLayout layout;
  SamplerConfig sampler;

  void validate() const;
  nlohmann::ordered_json to_json() const;  // architecture block only
  static LmConfig from_json(const nlohmann::json& j);
};

/// Phase machine for constrained decoding: emotion first, then strictly
/// alternating face/speech pairs, D only between pairs.
struct DecodeState {
  enum class Phase { AwaitEmotion, ExpectFace, ExpectSpeech, Done };
  Phase phase = Phase::AwaitEmotion;
  int n_face = 0;
  int n_speech = 0;

  /// Advance with an emitted unified id; throws on an id the current phase
  /// does not allow.
  void advance(const VocabLayout& layout, int id);
};

/// Allowed next ids for a phase: AwaitEmotion -> emotion region; ExpectFace
/// -> face region plus D; ExpectSpeech -> speech region; Done -> nothing.
std::vector<bool> type_mask(const DecodeState& state,
                            const VocabLayout& layout);

class LmModel {
 public:
  explicit LmModel(const LmConfig& cfg);

  void init(std::uint64_t seed);

  const LmConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Causal logits for every position, built on a tape.
  Var build_logits(Tape& tape, const std::vector<EmbedSlot>& slots,
                   const std::function<Var(const std::string&)>& lookup) const;

  /// Forward-only logits for a whole stream (positions x total vocab).
  Eigen::MatrixXd forward(const TokenStream& stream) const;

  void save(const std::string& path) const;
  static LmModel load(const std::string& path);

  friend class LmCache;

 private:
  LmConfig cfg_;
  ParamStore params_;
};

/// Incremental decoding state: cached keys/values per layer.  feed() returns
/// the logits row for the newly appended item.
class LmCache {
 public:
  explicit LmCache(const LmModel& model);

  Eigen::RowVectorXd feed(const EmbedSlot& slot);
  int length() const { return t_; }

 private:
  const LmModel& model_;
  int t_ = 0;
  std::vector<Eigen::MatrixXd> k_, v_;  // per layer, grows by one row per feed
};

/// Map stream items to embedding slots (tokens keep unified ids, speaker
/// slots carry their vector).
std::vector<EmbedSlot> stream_to_slots(const TokenStream& stream);

/// Teacher-forcing target set: pairs (input position, target id) for every
/// position whose next item is an emotion, face, or speech token, or the
/// terminating D.  Text and speaker-slot targets are excluded.
std::vector<std::pair<int, int>> loss_targets(const TokenStream& stream,
                                              const VocabLayout& layout);

/// Mean cross-entropy per target position over the given streams.
double lm_loss(const LmModel& model, const std::vector<TokenStream>& streams);

struct LmTrainHyper {
  double lr = 1e-3;
  int steps = 600;
  int batch = 4;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LmTrainReport {
  std::vector<std::pair<int, double>> loss_trace;  // (step, mean target CE)
  double initial_loss = 0;
  double final_loss = 0;
  double speech_accuracy = 0;  // held-out next-speech-token accuracy
  double wall_time = 0;

  nlohmann::ordered_json to_json() const;
};

LmTrainReport lm_train(LmModel& model, const std::vector<TokenStream>& train,
                       const std::vector<TokenStream>& holdout,
                       const LmTrainHyper& hyper);

/// Teacher-forced argmax accuracy at speech-target positions (argmax over
/// the full vocabulary, no mask assistance).
double speech_token_accuracy(const LmModel& model,
                             const std::vector<TokenStream>& streams);

struct GenerationResult {
  std::string emotion;
  std::vector<int> face;    // raw ids
  std::vector<int> speech;  // raw ids
  bool terminated_by_d = false;
  /// Full stream: prompt plus everything emitted.
  TokenStream stream;
};

/// Constrained sampling: restrict to the phase mask, keep top_k, then the
/// top_p nucleus, renormalize, sample.  If the last repetition_window
/// same-region emissions contain repetition_threshold identical ids, that
/// step samples from the full masked distribution instead.  When the pair
/// budget (or the position budget) is exhausted the mask collapses to {D}.
GenerationResult lm_generate(const LmModel& model, const TokenStream& prompt,
                             const SamplerConfig& sampler, std::uint64_t seed);

}  // namespace avtok
