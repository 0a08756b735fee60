#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "avtok/autodiff.hpp"
#include "avtok/fsq.hpp"
#include "avtok/params.hpp"

namespace avtok {

/// Landmark codec: input linear, residual causal-convolution blocks, a linear
/// bottleneck into the quantizer, and a mirrored decoder back to frame space.
/// One token per input frame.
struct CodecConfig {
  int frame_dim = 190;
  int hidden_dim = 128;
  int n_blocks = 3;
  int kernel = 3;
  FsqConfig fsq = FsqConfig::face();

  void validate() const;
  /// Frames of history one output frame can depend on (including itself).
  int receptive_field() const { return 2 * n_blocks * (kernel - 1) + 1; }

  nlohmann::ordered_json to_json() const;
  static CodecConfig from_json(const nlohmann::json& j);
};

class LmkCodec {
 public:
  /// How the quantization bottleneck behaves when building the graph.
  enum class Bottleneck {
    kQuantized,  // straight-through rounding (training and inference)
    kSmooth      // bounded-only surrogate whose true derivative equals the
                 // straight-through backward (used by gradient checks)
  };

  explicit LmkCodec(const CodecConfig& cfg);

  void init(std::uint64_t seed);

  const CodecConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Encoder output, one hidden_dim latent row per frame.
  Eigen::MatrixXd encode(const Eigen::MatrixXd& frames) const;
  /// One token id in [0, fsq vocab) per frame.
  std::vector<std::int64_t> tokenize(const Eigen::MatrixXd& frames) const;
  /// Frames reconstructed from token ids.
  Eigen::MatrixXd decode(const std::vector<std::int64_t>& tokens) const;
  /// decode(tokenize(frames)) in one pass.
  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& frames) const;

  /// Build the full reconstruction graph on a tape.  `lookup` resolves a
  /// parameter name to a tape Var (leaf for training, constant for
  /// inference).  Returns the reconstruction node.
  Var build_recon(Tape& tape, Var input,
                  const std::function<Var(const std::string&)>& lookup,
                  Bottleneck bn) const;
  /// Encoder followed by the bottleneck projection (pre-quantization).
  Var build_latent(Tape& tape, Var input,
                   const std::function<Var(const std::string&)>& lookup) const;
  /// Decoder from dequantized bottleneck values.
  Var build_decode(Tape& tape, Var values,
                   const std::function<Var(const std::string&)>& lookup) const;

  void save(const std::string& path) const;
  static LmkCodec load(const std::string& path);

 private:
  void check_frames(const Eigen::MatrixXd& frames) const;

  CodecConfig cfg_;
  ParamStore params_;
};

struct CodecTrainHyper {
  double lr = 0.05;
  int steps = 2000;
  int batch = 4;
  std::uint64_t seed = 1;
  int eval_subset = 32;  // leading training sequences used for the MSE evals
};

struct CodecTrainReport {
  std::vector<std::pair<int, double>> loss_trace;  // (step, MSE)
  double initial_mse = 0;   // eval-subset MSE before training
  double final_mse = 0;     // eval-subset MSE after training
  double smoothed_final = 0;  // mean of the last min(100, steps) batch losses
  double final_lmd = 0;     // mean holdout LMD of decode(tokenize(.))
  double wall_time = 0;     // seconds

  nlohmann::ordered_json to_json() const;
};

/// Fixed-step gradient descent on the reconstruction MSE.  `holdout` feeds
/// the report's final_lmd and may be empty (reported as 0).
CodecTrainReport train_codec(LmkCodec& model,
                             const std::vector<Eigen::MatrixXd>& train_set,
                             const std::vector<Eigen::MatrixXd>& holdout,
                             const CodecTrainHyper& hyper);

struct GradCheckReport {
  double max_rel_error = 0;
  int n_checked = 0;
  std::string worst_param;
};

/// Central-difference check of the analytic gradients on a small probe.  The
/// hard rounding is bypassed with its smooth surrogate; the surrogate's true
/// derivative is exactly the straight-through backward factor, so every
/// backward formula in the graph is exercised.
GradCheckReport grad_check(const LmkCodec& model, const Eigen::MatrixXd& probe,
                           double eps, int samples_per_param = 6,
                           std::uint64_t seed = 0,
                           LmkCodec::Bottleneck bn = LmkCodec::Bottleneck::kSmooth,
                           const std::string& param_prefix = "");

}  // namespace avtok
