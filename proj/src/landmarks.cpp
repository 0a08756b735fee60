#include "avtok/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include <json.hpp>

#include "avtok/binio.hpp"
#include "avtok/errors.hpp"

namespace avtok {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Sample n points along an ellipse arc.
void ellipse(std::vector<Eigen::Vector2d>& out, int n, double cx, double cy,
             double rx, double ry, double a0 = 0.0, double a1 = 2.0 * kPi) {
  for (int i = 0; i < n; ++i) {
    double a = a0 + (a1 - a0) * i / std::max(1, n);
    out.emplace_back(cx + rx * std::cos(a), cy + ry * std::sin(a));
  }
}

// Sample n points along a polyline given as a few anchor vertices.
void polyline(std::vector<Eigen::Vector2d>& out, int n,
              const std::vector<Eigen::Vector2d>& anchors) {
  double total = 0.0;
  for (std::size_t i = 1; i < anchors.size(); ++i)
    total += (anchors[i] - anchors[i - 1]).norm();
  for (int i = 0; i < n; ++i) {
    double want = total * i / std::max(1, n - 1);
    double acc = 0.0;
    Eigen::Vector2d p = anchors.back();
    for (std::size_t j = 1; j < anchors.size(); ++j) {
      double seg = (anchors[j] - anchors[j - 1]).norm();
      if (acc + seg >= want || j + 1 == anchors.size()) {
        double u = seg > 0 ? (want - acc) / seg : 0.0;
        if (u > 1.0) u = 1.0;
        p = anchors[j - 1] + u * (anchors[j] - anchors[j - 1]);
        break;
      }
      acc += seg;
    }
    out.push_back(p);
  }
}

}  // namespace

Eigen::MatrixXd base_face(int n_points) {
  if (n_points < 12)
    throw ValidationError("base_face: need at least 12 points");
  // Feature budget: jaw outline, two brows, two eyes, nose, mouth.
  int outline = n_points * 30 / 100;
  int brow = n_points * 8 / 100;
  int eye = n_points * 10 / 100;
  int nose = n_points * 12 / 100;
  int mouth = n_points - outline - 2 * brow - 2 * eye - nose;

  std::vector<Eigen::Vector2d> pts;
  pts.reserve(n_points);
  ellipse(pts, outline, 0.5, 0.5, 0.30, 0.38);
  polyline(pts, brow,
           {{0.28, 0.36}, {0.335, 0.325}, {0.39, 0.315}, {0.44, 0.335}});
  polyline(pts, brow,
           {{0.56, 0.335}, {0.61, 0.315}, {0.665, 0.325}, {0.72, 0.36}});
  ellipse(pts, eye, 0.365, 0.45, 0.055, 0.025);
  ellipse(pts, eye, 0.635, 0.45, 0.055, 0.025);
  polyline(pts, nose,
           {{0.5, 0.44}, {0.5, 0.58}, {0.445, 0.615}, {0.5, 0.635},
            {0.555, 0.615}, {0.5, 0.58}});
  ellipse(pts, mouth, 0.5, 0.73, 0.095, 0.038);

  Eigen::MatrixXd out(n_points, 2);
  for (int i = 0; i < n_points; ++i) out.row(i) = pts[i].transpose();
  return out;
}

Eigen::MatrixXd synth_landmark_sequence(const LmkSynthConfig& cfg, Rng& rng,
                                        int n_frames) {
  if (n_frames < 1)
    throw ValidationError("synth_landmark_sequence: n_frames must be >= 1");
  if (cfg.n_modes < 1 || cfg.fps <= 0 || cfg.amplitude < 0 ||
      cfg.freq_lo <= 0 || cfg.freq_hi < cfg.freq_lo)
    throw ValidationError("synth_landmark_sequence: bad config");

  Eigen::MatrixXd base = base_face(cfg.n_points);

  struct Mode {
    double freq, phase, amp;
    Eigen::MatrixXd pattern;  // n_points x 2, max row norm 1
  };
  std::vector<Mode> modes(cfg.n_modes);
  for (Mode& m : modes) {
    m.freq = rng.uniform(cfg.freq_lo, cfg.freq_hi);
    m.phase = rng.uniform(0.0, 2.0 * kPi);
    m.amp = cfg.amplitude / cfg.n_modes * rng.uniform(0.5, 1.0);
    // Gaussian spatial envelope around a random template point, pushing all
    // affected points along one random direction.
    Eigen::Vector2d center =
        base.row(static_cast<Eigen::Index>(rng.uniform_int(cfg.n_points)))
            .transpose();
    double sigma = rng.uniform(0.08, 0.25);
    double ang = rng.uniform(0.0, 2.0 * kPi);
    Eigen::RowVector2d dir(std::cos(ang), std::sin(ang));
    m.pattern.resize(cfg.n_points, 2);
    double max_norm = 0.0;
    for (int i = 0; i < cfg.n_points; ++i) {
      double d2 = (base.row(i).transpose() - center).squaredNorm();
      double w = std::exp(-d2 / (2.0 * sigma * sigma));
      m.pattern.row(i) = w * dir;
      max_norm = std::max(max_norm, m.pattern.row(i).norm());
    }
    if (max_norm > 0) m.pattern /= max_norm;
  }

  Eigen::MatrixXd frames(n_frames, 2 * cfg.n_points);
  for (int t = 0; t < n_frames; ++t) {
    Eigen::MatrixXd pts = base;
    for (const Mode& m : modes) {
      double g = std::sin(2.0 * kPi * m.freq * t / cfg.fps + m.phase);
      pts += m.amp * g * m.pattern;
    }
    for (int i = 0; i < cfg.n_points; ++i) {
      frames(t, 2 * i) = pts(i, 0);
      frames(t, 2 * i + 1) = pts(i, 1);
    }
  }
  return frames;
}

namespace {
constexpr char kLmkMagic[4] = {'L', 'M', 'K', '1'};
constexpr std::uint32_t kLmkVersion = 1;
}  // namespace

void write_lmk(const std::string& path, const Eigen::MatrixXf& frames) {
  if (frames.rows() < 1 || frames.cols() < 2)
    throw ValidationError("write_lmk: need at least one non-empty frame");
  auto os = open_out(path);
  write_bytes(os, kLmkMagic, 4);
  write_u32(os, kLmkVersion);
  write_u32(os, static_cast<std::uint32_t>(frames.rows()));
  write_u32(os, static_cast<std::uint32_t>(frames.cols()));
  // Row-major on disk so frames are contiguous.
  std::vector<float> row(static_cast<std::size_t>(frames.cols()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    for (Eigen::Index j = 0; j < frames.cols(); ++j) row[j] = frames(t, j);
    write_bytes(os, row.data(), row.size() * sizeof(float));
  }
  if (!os) throw FormatError("write_lmk: failed writing " + path);
}

Eigen::MatrixXf read_lmk(const std::string& path) {
  auto is = open_in(path);
  char magic[4];
  read_bytes(is, magic, 4, "lmk magic");
  if (std::memcmp(magic, kLmkMagic, 4) != 0)
    throw FormatError("read_lmk: bad magic in " + path);
  std::uint32_t version = read_u32(is, "lmk version");
  if (version != kLmkVersion)
    throw FormatError("read_lmk: unsupported version " +
                      std::to_string(version));
  std::uint32_t k = read_u32(is, "lmk frame count");
  std::uint32_t dim = read_u32(is, "lmk frame dim");
  if (k == 0 || dim == 0 || dim % 2 != 0)
    throw FormatError("read_lmk: bad header counts in " + path);
  Eigen::MatrixXf frames(k, dim);
  std::vector<float> row(dim);
  for (std::uint32_t t = 0; t < k; ++t) {
    read_bytes(is, row.data(), row.size() * sizeof(float), "lmk frame data");
    for (std::uint32_t j = 0; j < dim; ++j) frames(t, j) = row[j];
  }
  char extra;
  if (is.read(&extra, 1))
    throw FormatError("read_lmk: trailing bytes in " + path);
  return frames;
}

void write_frames_jsonl(const std::string& path,
                        const Eigen::MatrixXd& frames) {
  auto os = open_out(path, /*binary=*/false);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index j = 0; j < frames.cols(); ++j) arr.push_back(frames(t, j));
    os << arr.dump() << "\n";
  }
  if (!os) throw FormatError("write_frames_jsonl: failed writing " + path);
}

Eigen::MatrixXd read_frames_jsonl(const std::string& path) {
  auto is = open_in(path, /*binary=*/false);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("read_frames_jsonl: " + path + ":" +
                        std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_array())
      throw FormatError("read_frames_jsonl: " + path + ":" +
                        std::to_string(lineno) + ": expected an array");
    std::vector<double> row;
    row.reserve(j.size());
    for (const auto& v : j) {
      if (!v.is_number())
        throw FormatError("read_frames_jsonl: " + path + ":" +
                          std::to_string(lineno) + ": non-numeric entry");
      row.push_back(v.get<double>());
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError("read_frames_jsonl: " + path + ":" +
                        std::to_string(lineno) + ": inconsistent frame dim");
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw FormatError("read_frames_jsonl: no frames in " + path);
  Eigen::MatrixXd frames(rows.size(), rows.front().size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t j = 0; j < rows[t].size(); ++j)
      frames(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
          rows[t][j];
  return frames;
}

}  // namespace avtok
