#include "avtok/params.hpp"

#include <cmath>
#include <cstring>

#include "avtok/binio.hpp"
#include "avtok/errors.hpp"
#include "avtok/hash.hpp"

namespace avtok {

Eigen::MatrixXd& ParamStore::add(const std::string& name, Eigen::Index rows,
                                 Eigen::Index cols) {
  if (map_.count(name))
    throw ValidationError("params: duplicate name " + name);
  if (rows < 1 || cols < 1)
    throw ValidationError("params: empty shape for " + name);
  order_.push_back(name);
  return map_[name] = Eigen::MatrixXd::Zero(rows, cols);
}

Eigen::MatrixXd& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw ValidationError("params: unknown name " + name);
  return it->second;
}

const Eigen::MatrixXd& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ValidationError("params: unknown name " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const {
  return map_.count(name) != 0;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& name : order_)
    n += static_cast<std::size_t>(map_.at(name).size());
  return n;
}

void ParamStore::set_all_zero() {
  for (const auto& name : order_) map_.at(name).setZero();
}

void ParamStore::round_to_f32() {
  for (const auto& name : order_) {
    Eigen::MatrixXd& m = map_.at(name);
    m = m.cast<float>().cast<double>();
  }
}

void init_gaussian(ParamStore& params, const std::string& name,
                   std::uint64_t seed, double stddev) {
  Eigen::MatrixXd& m = params.at(name);
  Rng rng = Rng::stream(seed, "init/" + name);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0, stddev);
}

Var TapeParams::bind(Tape& tape, const ParamStore& store,
                     const std::string& name) {
  Var v = tape.leaf(store.at(name));
  items.emplace_back(name, v);
  return v;
}

Var TapeParams::operator[](const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return v;
  throw ValidationError("tape params: unbound name " + name);
}

void TapeParams::grads_into(const Tape& tape, GradMap& out) const {
  for (const auto& [name, var] : items) {
    const Eigen::MatrixXd& g = tape.grad(var);
    auto it = out.find(name);
    if (it == out.end())
      out.emplace(name, g);
    else
      it->second += g;
  }
}

double grad_global_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

void scale_grads(GradMap& grads, double factor) {
  for (auto& [name, g] : grads) g *= factor;
}

double clip_grads(GradMap& grads, double max_norm) {
  double norm = grad_global_norm(grads);
  if (norm > max_norm && norm > 0) scale_grads(grads, max_norm / norm);
  return norm;
}

void sgd_step(ParamStore& params, const GradMap& grads, double lr) {
  for (const auto& [name, g] : grads) {
    Eigen::MatrixXd& p = params.at(name);
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ValidationError("sgd: gradient shape mismatch for " + name);
    p -= lr * g;
  }
}

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state,
               double lr) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Eigen::MatrixXd& p = params.at(name);
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ValidationError("adam: gradient shape mismatch for " + name);
    auto mi = state.m.find(name);
    if (mi == state.m.end()) {
      state.m[name] = Eigen::MatrixXd::Zero(g.rows(), g.cols());
      state.v[name] = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    }
    Eigen::MatrixXd& m = state.m[name];
    Eigen::MatrixXd& v = state.v[name];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v.array().matrix() +
        (1.0 - state.beta2) * g.array().square().matrix();
    Eigen::ArrayXXd mhat = m.array() / bc1;
    Eigen::ArrayXXd vhat = v.array() / bc2;
    p.array() -= lr * mhat / (vhat.sqrt() + state.eps);
  }
}

namespace {
constexpr char kCkptMagic[4] = {'A', 'V', 'C', 'K'};
constexpr int kCkptVersion = 1;

std::vector<float> store_to_blob(const ParamStore& params) {
  std::vector<float> blob;
  blob.reserve(params.scalar_count());
  for (const auto& name : params.names()) {
    const Eigen::MatrixXd& m = params.at(name);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        blob.push_back(static_cast<float>(m(i, j)));
  }
  return blob;
}
}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const nlohmann::ordered_json& meta,
                     const ParamStore& params) {
  if (params.names().empty())
    throw ValidationError("checkpoint: empty parameter store");
  std::vector<float> blob = store_to_blob(params);
  std::uint64_t checksum =
      fnv1a64(blob.data(), blob.size() * sizeof(float));

  nlohmann::ordered_json header;
  header["version"] = kCkptVersion;
  header["kind"] = kind;
  header["meta"] = meta;
  auto plist = nlohmann::ordered_json::array();
  for (const auto& name : params.names()) {
    const Eigen::MatrixXd& m = params.at(name);
    plist.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  header["params"] = plist;
  header["checksum"] = hex64(checksum);
  std::string hs = header.dump();

  auto os = open_out(path);
  write_bytes(os, kCkptMagic, 4);
  write_u32(os, static_cast<std::uint32_t>(hs.size()));
  write_bytes(os, hs.data(), hs.size());
  write_bytes(os, blob.data(), blob.size() * sizeof(float));
  if (!os) throw FormatError("checkpoint: failed writing " + path);
}

nlohmann::json load_checkpoint(const std::string& path,
                               const std::string& expected_kind,
                               ParamStore& params) {
  auto is = open_in(path);
  char magic[4];
  read_bytes(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  std::uint32_t hlen = read_u32(is, "checkpoint header length");
  std::string hs(hlen, '\0');
  read_bytes(is, hs.data(), hlen, "checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header JSON: ") + e.what());
  }
  if (!header.contains("version") || !header["version"].is_number_integer())
    throw FormatError("checkpoint: missing version");
  if (header["version"].get<int>() != kCkptVersion)
    throw FormatError("checkpoint: unsupported version " +
                      header["version"].dump());
  if (header.value("kind", std::string()) != expected_kind)
    throw FormatError("checkpoint: kind '" +
                      header.value("kind", std::string()) + "' where '" +
                      expected_kind + "' expected");
  if (!header.contains("params") || !header["params"].is_array() ||
      !header.contains("checksum"))
    throw FormatError("checkpoint: incomplete header");

  std::size_t total = 0;
  for (const auto& p : header["params"]) {
    if (!p.contains("name") || !p.contains("rows") || !p.contains("cols"))
      throw FormatError("checkpoint: malformed param entry");
    total += p["rows"].get<std::size_t>() * p["cols"].get<std::size_t>();
  }
  std::vector<float> blob(total);
  read_bytes(is, blob.data(), total * sizeof(float), "checkpoint blob");
  char extra;
  if (is.read(&extra, 1))
    throw FormatError("checkpoint: trailing bytes in " + path);
  std::uint64_t checksum = fnv1a64(blob.data(), blob.size() * sizeof(float));
  if (hex64(checksum) != header["checksum"].get<std::string>())
    throw FormatError("checkpoint: checksum mismatch in " + path);

  std::size_t off = 0;
  for (const auto& p : header["params"]) {
    Eigen::Index rows = p["rows"].get<Eigen::Index>();
    Eigen::Index cols = p["cols"].get<Eigen::Index>();
    Eigen::MatrixXd& m =
        params.add(p["name"].get<std::string>(), rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = blob[off++];
  }
  return header["meta"];
}

}  // namespace avtok
