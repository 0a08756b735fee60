#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "avtok/binio.hpp"
#include "avtok/errors.hpp"
#include "avtok/landmarks.hpp"
#include "avtok/rng.hpp"

using namespace avtok;

namespace {

struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    dir = std::filesystem::temp_directory_path() /
          ("avtok_io_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
  }
  ~TempDir() { std::filesystem::remove_all(dir); }
  std::string path(const char* name) const { return (dir / name).string(); }
};

Eigen::MatrixXf random_frames(Rng& rng, int rows, int cols) {
  Eigen::MatrixXf m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = static_cast<float>(rng.uniform());
  return m;
}

}  // namespace

TEST_CASE("lmk round trip is bit exact") {
  TempDir tmp;
  Rng rng(4);
  Eigen::MatrixXf frames = random_frames(rng, 50, 190);
  write_lmk(tmp.path("a.lmk"), frames);
  Eigen::MatrixXf back = read_lmk(tmp.path("a.lmk"));
  REQUIRE(back.rows() == 50);
  REQUIRE(back.cols() == 190);
  CHECK((back - frames).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("lmk corruption raises format errors") {
  TempDir tmp;
  Rng rng(4);
  Eigen::MatrixXf frames = random_frames(rng, 5, 8);
  std::string good = tmp.path("g.lmk");
  write_lmk(good, frames);
  std::string bytes = read_file(good);

  auto write_variant = [&](const char* name, std::string b) {
    std::string p = tmp.path(name);
    write_file(p, b);
    return p;
  };

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(read_lmk(write_variant("magic.lmk", magic)), FormatError);

  std::string version = bytes;
  version[4] = 9;  // version field follows the magic
  CHECK_THROWS_AS(read_lmk(write_variant("ver.lmk", version)), FormatError);

  std::string truncated = bytes.substr(0, bytes.size() - 7);
  CHECK_THROWS_AS(read_lmk(write_variant("trunc.lmk", truncated)),
                  FormatError);

  std::string trailing = bytes + "xx";
  CHECK_THROWS_AS(read_lmk(write_variant("trail.lmk", trailing)),
                  FormatError);

  CHECK_THROWS_AS(read_lmk(tmp.path("missing.lmk")), FormatError);
}

TEST_CASE("frames jsonl round trip and diagnostics") {
  TempDir tmp;
  Eigen::MatrixXd frames(3, 4);
  frames << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  std::string p = tmp.path("f.jsonl");
  write_frames_jsonl(p, frames);
  Eigen::MatrixXd back = read_frames_jsonl(p);
  CHECK((back - frames).cwiseAbs().maxCoeff() == 0.0);

  write_file(tmp.path("bad.jsonl"), "[1,2]\n[1,2,3]\n");
  try {
    read_frames_jsonl(tmp.path("bad.jsonl"));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write_file(tmp.path("notjson.jsonl"), "[1,2]\nnope\n");
  CHECK_THROWS_AS(read_frames_jsonl(tmp.path("notjson.jsonl")), FormatError);
}

TEST_CASE("landmark synthesis is deterministic and in range") {
  LmkSynthConfig cfg;
  Rng r1 = Rng::stream(42, "synth/lmk/0");
  Rng r2 = Rng::stream(42, "synth/lmk/0");
  Eigen::MatrixXd a = synth_landmark_sequence(cfg, r1, 40);
  Eigen::MatrixXd b = synth_landmark_sequence(cfg, r2, 40);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.rows() == 40);
  CHECK(a.cols() == 190);
  CHECK(a.minCoeff() > 0.0);
  CHECK(a.maxCoeff() < 1.0);

  Rng r3 = Rng::stream(43, "synth/lmk/0");
  Eigen::MatrixXd c = synth_landmark_sequence(cfg, r3, 40);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);

  // Motion exists but stays within the configured amplitude budget.
  Eigen::RowVectorXd spread =
      a.colwise().maxCoeff() - a.colwise().minCoeff();
  CHECK(spread.maxCoeff() > 1e-4);
  CHECK(spread.maxCoeff() <= 2 * cfg.amplitude + 1e-9);
}

TEST_CASE("base face needs enough points") {
  CHECK_THROWS_AS(base_face(11), ValidationError);
  Eigen::MatrixXd f = base_face(95);
  CHECK(f.rows() == 95);
  CHECK(f.minCoeff() >= 0.12 - 1e-12);
  CHECK(f.maxCoeff() <= 0.88 + 1e-12);
}
