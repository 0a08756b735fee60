#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "avtok/autodiff.hpp"
#include "avtok/rng.hpp"

namespace avtok {

/// Named parameter matrices with a stable insertion order (the order defines
/// checkpoint layout and traversal).
class ParamStore {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::Index rows,
                       Eigen::Index cols);
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t scalar_count() const;
  void set_all_zero();
  /// Snap every value to its float32 representation.  Called after init and
  /// after training so that the in-memory model equals its checkpoint exactly
  /// (the blob stores float32).
  void round_to_f32();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Eigen::MatrixXd> map_;
};

/// Fill a matrix with N(0, std^2) draws from a stream derived from the seed
/// and the parameter name, so initialization is order-independent.
void init_gaussian(ParamStore& params, const std::string& name,
                   std::uint64_t seed, double stddev);

using GradMap = std::unordered_map<std::string, Eigen::MatrixXd>;

/// Leaves created on a tape for a store's parameters, preserving names.
struct TapeParams {
  std::vector<std::pair<std::string, Var>> items;

  Var bind(Tape& tape, const ParamStore& store, const std::string& name);
  Var operator[](const std::string& name) const;
  /// Accumulate tape gradients into a grad map keyed by parameter name.
  void grads_into(const Tape& tape, GradMap& out) const;
};

double grad_global_norm(const GradMap& grads);
void scale_grads(GradMap& grads, double factor);
/// Rescale so the global norm is at most max_norm.  Returns the pre-clip norm.
double clip_grads(GradMap& grads, double max_norm);

/// Plain fixed-step gradient descent.
void sgd_step(ParamStore& params, const GradMap& grads, double lr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  GradMap m, v;
};

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state,
               double lr);

/// Checkpoint container: magic "AVCK", u32 header length, JSON header
/// {version, kind, meta, params:[{name, rows, cols}], checksum}, then a raw
/// little-endian float32 blob with every parameter row-major in header order.
void save_checkpoint(const std::string& path, const std::string& kind,
                     const nlohmann::ordered_json& meta,
                     const ParamStore& params);

/// Loads into a fresh store; returns the meta block.  The kind must match.
nlohmann::json load_checkpoint(const std::string& path,
                               const std::string& expected_kind,
                               ParamStore& params);

}  // namespace avtok
