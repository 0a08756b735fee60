#include "avtok/codec.hpp"

#include <chrono>
#include <cmath>

#include "avtok/errors.hpp"
#include "avtok/geometry.hpp"

namespace avtok {

void CodecConfig::validate() const {
  if (frame_dim < 2 || frame_dim % 2 != 0)
    throw ValidationError("codec: frame_dim must be even and >= 2");
  if (hidden_dim < 1) throw ValidationError("codec: hidden_dim must be >= 1");
  if (n_blocks < 0) throw ValidationError("codec: n_blocks must be >= 0");
  if (kernel < 1) throw ValidationError("codec: kernel must be >= 1");
  fsq.validate();
}

nlohmann::ordered_json CodecConfig::to_json() const {
  return {{"frame_dim", frame_dim},
          {"hidden_dim", hidden_dim},
          {"n_blocks", n_blocks},
          {"kernel", kernel},
          {"fsq_levels", fsq.levels}};
}

CodecConfig CodecConfig::from_json(const nlohmann::json& j) {
  CodecConfig cfg;
  cfg.frame_dim = j.at("frame_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.n_blocks = j.at("n_blocks").get<int>();
  cfg.kernel = j.at("kernel").get<int>();
  cfg.fsq.levels = j.at("fsq_levels").get<std::vector<int>>();
  cfg.validate();
  return cfg;
}

LmkCodec::LmkCodec(const CodecConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int H = cfg_.hidden_dim, F = cfg_.frame_dim, K = cfg_.kernel;
  int Z = cfg_.fsq.dims();
  params_.add("enc.in.w", F, H);
  params_.add("enc.in.b", 1, H);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    params_.add("enc.blk" + std::to_string(i) + ".conv.w", K * H, H);
    params_.add("enc.blk" + std::to_string(i) + ".conv.b", 1, H);
  }
  params_.add("down.w", H, Z);
  params_.add("down.b", 1, Z);
  params_.add("up.w", Z, H);
  params_.add("up.b", 1, H);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    params_.add("dec.blk" + std::to_string(i) + ".conv.w", K * H, H);
    params_.add("dec.blk" + std::to_string(i) + ".conv.b", 1, H);
  }
  params_.add("dec.out.w", H, F);
  params_.add("dec.out.b", 1, F);
}

void LmkCodec::init(std::uint64_t seed) {
  for (const auto& name : params_.names()) {
    if (name.ends_with(".b")) continue;  // biases stay zero
    double fan_in = static_cast<double>(params_.at(name).rows());
    init_gaussian(params_, name, seed, 1.0 / std::sqrt(fan_in));
  }
  params_.round_to_f32();
}

void LmkCodec::check_frames(const Eigen::MatrixXd& frames) const {
  if (frames.rows() < 1)
    throw ValidationError("codec: need at least one frame");
  if (frames.cols() != cfg_.frame_dim)
    throw ValidationError("codec: frame dim " + std::to_string(frames.cols()) +
                          " does not match configured " +
                          std::to_string(cfg_.frame_dim));
  if (!frames.allFinite())
    throw NumericError("codec: non-finite input frames");
}

namespace {

Var residual_blocks(Tape& tape, Var h, const std::string& prefix, int n_blocks,
                    int kernel,
                    const std::function<Var(const std::string&)>& P) {
  for (int i = 0; i < n_blocks; ++i) {
    std::string base = prefix + ".blk" + std::to_string(i) + ".conv";
    Var a = tape.softplus(h);
    Var c = tape.causal_conv1d(a, P(base + ".w"), P(base + ".b"), kernel);
    h = tape.add(h, c);
  }
  return h;
}

}  // namespace

Var LmkCodec::build_latent(
    Tape& tape, Var input,
    const std::function<Var(const std::string&)>& lookup) const {
  Var h = tape.add_rowvec(tape.matmul(input, lookup("enc.in.w")),
                          lookup("enc.in.b"));
  h = residual_blocks(tape, h, "enc", cfg_.n_blocks, cfg_.kernel, lookup);
  return tape.add_rowvec(tape.matmul(h, lookup("down.w")), lookup("down.b"));
}

Var LmkCodec::build_decode(
    Tape& tape, Var values,
    const std::function<Var(const std::string&)>& lookup) const {
  Var u = tape.add_rowvec(tape.matmul(values, lookup("up.w")), lookup("up.b"));
  u = residual_blocks(tape, u, "dec", cfg_.n_blocks, cfg_.kernel, lookup);
  return tape.add_rowvec(tape.matmul(u, lookup("dec.out.w")),
                         lookup("dec.out.b"));
}

Var LmkCodec::build_recon(Tape& tape, Var input,
                          const std::function<Var(const std::string&)>& lookup,
                          Bottleneck bn) const {
  Var z = build_latent(tape, input, lookup);
  Var v = (bn == Bottleneck::kQuantized) ? tape.fsq_ste(z, cfg_.fsq)
                                         : tape.tanh(z);
  return build_decode(tape, v, lookup);
}

Eigen::MatrixXd LmkCodec::encode(const Eigen::MatrixXd& frames) const {
  check_frames(frames);
  Tape tape;
  auto P = [&](const std::string& n) { return tape.constant(params_.at(n)); };
  Var x = tape.constant(frames);
  Var h = tape.add_rowvec(tape.matmul(x, P("enc.in.w")), P("enc.in.b"));
  h = residual_blocks(tape, h, "enc", cfg_.n_blocks, cfg_.kernel, P);
  Eigen::MatrixXd out = tape.val(h);
  if (!out.allFinite())
    throw NumericError("codec: non-finite encoder activations");
  return out;
}

std::vector<std::int64_t> LmkCodec::tokenize(
    const Eigen::MatrixXd& frames) const {
  check_frames(frames);
  Tape tape;
  auto P = [&](const std::string& n) { return tape.constant(params_.at(n)); };
  Var z = build_latent(tape, tape.constant(frames), P);
  const Eigen::MatrixXd& Z = tape.val(z);
  if (!Z.allFinite()) throw NumericError("codec: non-finite latents");
  std::vector<std::int64_t> tokens;
  tokens.reserve(Z.rows());
  for (Eigen::Index t = 0; t < Z.rows(); ++t)
    tokens.push_back(
        fsq_code_to_index(cfg_.fsq, fsq_quantize(cfg_.fsq, Z.row(t).transpose())));
  return tokens;
}

Eigen::MatrixXd LmkCodec::decode(const std::vector<std::int64_t>& tokens) const {
  if (tokens.empty()) throw ValidationError("codec: empty token list");
  Eigen::MatrixXd v(static_cast<Eigen::Index>(tokens.size()), cfg_.fsq.dims());
  for (std::size_t t = 0; t < tokens.size(); ++t)
    v.row(static_cast<Eigen::Index>(t)) =
        fsq_dequantize(cfg_.fsq, fsq_index_to_code(cfg_.fsq, tokens[t]))
            .transpose();
  Tape tape;
  auto P = [&](const std::string& n) { return tape.constant(params_.at(n)); };
  Var y = build_decode(tape, tape.constant(std::move(v)), P);
  Eigen::MatrixXd out = tape.val(y);
  if (!out.allFinite())
    throw NumericError("codec: non-finite decoder activations");
  return out;
}

Eigen::MatrixXd LmkCodec::reconstruct(const Eigen::MatrixXd& frames) const {
  check_frames(frames);
  Tape tape;
  auto P = [&](const std::string& n) { return tape.constant(params_.at(n)); };
  Var y = build_recon(tape, tape.constant(frames), P, Bottleneck::kQuantized);
  Eigen::MatrixXd out = tape.val(y);
  if (!out.allFinite()) throw NumericError("codec: non-finite reconstruction");
  return out;
}

void LmkCodec::save(const std::string& path) const {
  save_checkpoint(path, "codec", cfg_.to_json(), params_);
}

LmkCodec LmkCodec::load(const std::string& path) {
  ParamStore loaded;
  nlohmann::json meta = load_checkpoint(path, "codec", loaded);
  LmkCodec model(CodecConfig::from_json(meta));
  for (const auto& name : model.params_.names()) {
    if (!loaded.has(name))
      throw FormatError("codec checkpoint: missing parameter " + name);
    Eigen::MatrixXd& dst = model.params_.at(name);
    const Eigen::MatrixXd& src = loaded.at(name);
    if (dst.rows() != src.rows() || dst.cols() != src.cols())
      throw FormatError("codec checkpoint: shape mismatch for " + name);
    dst = src;
  }
  if (loaded.names().size() != model.params_.names().size())
    throw FormatError("codec checkpoint: unexpected extra parameters");
  return model;
}

namespace {

double eval_mse(const LmkCodec& model,
                const std::vector<Eigen::MatrixXd>& seqs, int limit) {
  double err = 0.0;
  double n = 0.0;
  int count = std::min<int>(limit, static_cast<int>(seqs.size()));
  for (int i = 0; i < count; ++i) {
    Eigen::MatrixXd recon = model.reconstruct(seqs[i]);
    err += (recon - seqs[i]).squaredNorm();
    n += static_cast<double>(seqs[i].size());
  }
  return n > 0 ? err / n : 0.0;
}

}  // namespace

nlohmann::ordered_json CodecTrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["initial_mse"] = initial_mse;
  j["final_mse"] = final_mse;
  j["smoothed_final"] = smoothed_final;
  j["final_lmd"] = final_lmd;
  j["wall_time"] = wall_time;
  auto trace = nlohmann::ordered_json::array();
  for (const auto& [step, v] : loss_trace) trace.push_back({step, v});
  j["loss_trace"] = trace;
  return j;
}

CodecTrainReport train_codec(LmkCodec& model,
                             const std::vector<Eigen::MatrixXd>& train_set,
                             const std::vector<Eigen::MatrixXd>& holdout,
                             const CodecTrainHyper& hyper) {
  if (train_set.empty()) throw ValidationError("train_codec: empty dataset");
  if (hyper.lr <= 0 || hyper.steps < 0 || hyper.batch < 1 ||
      hyper.eval_subset < 1)
    throw ValidationError("train_codec: hyperparameters must be positive");
  auto t0 = std::chrono::steady_clock::now();

  CodecTrainReport report;
  report.initial_mse = eval_mse(model, train_set, hyper.eval_subset);
  report.loss_trace.emplace_back(0, report.initial_mse);

  Rng batch_rng = Rng::stream(hyper.seed, "codec/train/batch");
  for (int step = 1; step <= hyper.steps; ++step) {
    GradMap grads;
    double batch_loss = 0.0;
    for (int b = 0; b < hyper.batch; ++b) {
      const Eigen::MatrixXd& seq =
          train_set[batch_rng.uniform_int(train_set.size())];
      Tape tape;
      TapeParams tp;
      auto P = [&](const std::string& n) { return tp.bind(tape, model.params(), n); };
      Var x = tape.constant(seq);
      Var recon =
          model.build_recon(tape, x, P, LmkCodec::Bottleneck::kQuantized);
      Var loss = tape.mse_loss(recon, x);
      double lv = tape.val(loss)(0, 0);
      if (!std::isfinite(lv))
        throw NumericError("train_codec: non-finite loss at step " +
                           std::to_string(step));
      batch_loss += lv / hyper.batch;
      tape.backward(loss);
      tp.grads_into(tape, grads);
    }
    scale_grads(grads, 1.0 / hyper.batch);
    sgd_step(model.params(), grads, hyper.lr);
    report.loss_trace.emplace_back(step, batch_loss);
  }

  model.params().round_to_f32();
  report.final_mse = eval_mse(model, train_set, hyper.eval_subset);
  int window = std::min<int>(100, hyper.steps);
  if (window > 0) {
    double s = 0.0;
    for (int i = 0; i < window; ++i)
      s += report.loss_trace[report.loss_trace.size() - 1 - i].second;
    report.smoothed_final = s / window;
  } else {
    report.smoothed_final = report.initial_mse;
  }

  if (!holdout.empty()) {
    double s = 0.0;
    for (const auto& seq : holdout) {
      Eigen::MatrixXd recon = model.decode(model.tokenize(seq));
      s += lmd(seq, recon);
    }
    report.final_lmd = s / static_cast<double>(holdout.size());
  }
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

GradCheckReport grad_check(const LmkCodec& model, const Eigen::MatrixXd& probe,
                           double eps, int samples_per_param,
                           std::uint64_t seed, LmkCodec::Bottleneck bn,
                           const std::string& param_prefix) {
  if (probe.rows() < 1 || probe.rows() > 8)
    throw ValidationError("grad_check: probe must have 1..8 frames");
  if (eps < 1e-6 || eps > 1e-3)
    throw ValidationError("grad_check: eps outside [1e-6, 1e-3]");

  // Analytic gradients.
  GradMap grads;
  {
    Tape tape;
    TapeParams tp;
    auto P = [&](const std::string& n) {
      return tp.bind(tape, model.params(), n);
    };
    Var x = tape.constant(probe);
    Var loss = tape.mse_loss(model.build_recon(tape, x, P, bn), x);
    tape.backward(loss);
    tp.grads_into(tape, grads);
  }

  auto loss_at = [&](const ParamStore& params) {
    Tape tape;
    auto P = [&](const std::string& n) { return tape.constant(params.at(n)); };
    Var x = tape.constant(probe);
    Var loss = tape.mse_loss(model.build_recon(tape, x, P, bn), x);
    return tape.val(loss)(0, 0);
  };

  // Scratch copy for the perturbations.
  LmkCodec scratch(model.config());
  for (const auto& name : model.params().names())
    scratch.params().at(name) = model.params().at(name);

  Rng rng = Rng::stream(seed, "gradcheck/sample");
  GradCheckReport report;
  for (const auto& name : model.params().names()) {
    if (!param_prefix.empty() && name.rfind(param_prefix, 0) != 0) continue;
    Eigen::MatrixXd& p = scratch.params().at(name);
    const Eigen::MatrixXd& g = grads.at(name);
    int n = std::min<int>(samples_per_param, static_cast<int>(p.size()));
    for (int s = 0; s < n; ++s) {
      Eigen::Index idx =
          static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(p.size())));
      double orig = p.data()[idx];
      p.data()[idx] = orig + eps;
      double lp = loss_at(scratch.params());
      p.data()[idx] = orig - eps;
      double lm = loss_at(scratch.params());
      p.data()[idx] = orig;
      double fd = (lp - lm) / (2.0 * eps);
      double an = g.data()[idx];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      ++report.n_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
      }
    }
  }
  return report;
}

}  // namespace avtok
