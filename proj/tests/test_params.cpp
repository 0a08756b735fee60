#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "avtok/binio.hpp"
#include "avtok/errors.hpp"
#include "avtok/params.hpp"

using namespace avtok;

namespace {

struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    dir = std::filesystem::temp_directory_path() /
          ("avtok_params_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
  }
  ~TempDir() { std::filesystem::remove_all(dir); }
  std::string path(const char* name) const { return (dir / name).string(); }
};

ParamStore make_store() {
  ParamStore s;
  s.add("w", 3, 4);
  s.add("b", 1, 4);
  init_gaussian(s, "w", 7, 0.5);
  init_gaussian(s, "b", 7, 0.5);
  s.round_to_f32();
  return s;
}

}  // namespace

TEST_CASE("store ordering and duplicate protection") {
  ParamStore s;
  s.add("z", 1, 1);
  s.add("a", 2, 2);
  CHECK(s.names() == std::vector<std::string>{"z", "a"});  // insertion order
  CHECK(s.scalar_count() == 5);
  CHECK_THROWS_AS(s.add("z", 1, 1), ValidationError);
  CHECK_THROWS_AS(s.at("missing"), ValidationError);
}

TEST_CASE("gaussian init is seeded per name") {
  ParamStore a, b;
  for (auto* s : {&a, &b}) {
    s->add("w", 4, 4);
    s->add("v", 4, 4);
    init_gaussian(*s, "w", 9, 1.0);
    init_gaussian(*s, "v", 9, 1.0);
  }
  CHECK((a.at("w") - b.at("w")).cwiseAbs().maxCoeff() == 0.0);
  // Different names draw from independent streams.
  CHECK((a.at("w") - a.at("v")).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("f32 rounding is idempotent") {
  ParamStore s = make_store();
  Eigen::MatrixXd w = s.at("w");
  s.round_to_f32();
  CHECK((s.at("w") - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sgd and adam steps move parameters") {
  ParamStore s = make_store();
  GradMap g;
  g["w"] = Eigen::MatrixXd::Ones(3, 4);
  g["b"] = Eigen::MatrixXd::Ones(1, 4);
  Eigen::MatrixXd w0 = s.at("w");
  sgd_step(s, g, 0.1);
  CHECK((s.at("w") - (w0.array() - 0.1).matrix()).cwiseAbs().maxCoeff() <
        1e-12);

  AdamState adam;
  Eigen::MatrixXd w1 = s.at("w");
  adam_step(s, g, adam, 0.01);
  // First Adam step moves every coordinate by exactly lr (bias-corrected
  // m-hat / sqrt(v-hat) = 1 up to eps).
  CHECK((s.at("w") - w1).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("grad clipping scales the global norm") {
  GradMap g;
  g["a"] = Eigen::MatrixXd::Constant(2, 2, 3.0);
  g["b"] = Eigen::MatrixXd::Constant(1, 2, 4.0);
  double norm = grad_global_norm(g);
  CHECK(norm == doctest::Approx(std::sqrt(4 * 9.0 + 2 * 16.0)));
  double pre = clip_grads(g, 1.0);
  CHECK(pre == doctest::Approx(norm));
  CHECK(grad_global_norm(g) == doctest::Approx(1.0));
  // Already-small gradients are untouched.
  GradMap h;
  h["a"] = Eigen::MatrixXd::Constant(1, 1, 0.5);
  clip_grads(h, 1.0);
  CHECK(h["a"](0, 0) == doctest::Approx(0.5));
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir tmp;
  ParamStore s = make_store();
  nlohmann::ordered_json meta;
  meta["note"] = 1;
  save_checkpoint(tmp.path("m.ckpt"), "test", meta, s);

  ParamStore loaded;
  nlohmann::json got = load_checkpoint(tmp.path("m.ckpt"), "test", loaded);
  CHECK(got.at("note") == 1);
  CHECK(loaded.names() == s.names());
  for (const auto& n : s.names())
    CHECK((loaded.at(n) - s.at(n)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint corruption and kind mismatch") {
  TempDir tmp;
  ParamStore s = make_store();
  save_checkpoint(tmp.path("m.ckpt"), "test", nlohmann::ordered_json{}, s);
  std::string bytes = read_file(tmp.path("m.ckpt"));
  ParamStore sink;

  CHECK_THROWS_AS(load_checkpoint(tmp.path("m.ckpt"), "other", sink),
                  FormatError);

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;  // corrupt the blob -> checksum fails
  write_file(tmp.path("flip.ckpt"), flipped);
  CHECK_THROWS_AS(load_checkpoint(tmp.path("flip.ckpt"), "test", sink),
                  FormatError);

  write_file(tmp.path("trail.ckpt"), bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(tmp.path("trail.ckpt"), "test", sink),
                  FormatError);

  std::string magic = bytes;
  magic[0] = 'Z';
  write_file(tmp.path("magic.ckpt"), magic);
  CHECK_THROWS_AS(load_checkpoint(tmp.path("magic.ckpt"), "test", sink),
                  FormatError);

  write_file(tmp.path("short.ckpt"), bytes.substr(0, 10));
  CHECK_THROWS_AS(load_checkpoint(tmp.path("short.ckpt"), "test", sink),
                  FormatError);
}
