#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "avtok/binio.hpp"
#include "avtok/config.hpp"
#include "avtok/errors.hpp"
#include "avtok/hash.hpp"
#include "avtok/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path,
                  "JSON run configuration (defaults apply when omitted)");
  cmd->add_option("--out", flags.out, "output directory");
  cmd->add_option("--seed", flags.seed, "override the config seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"landmark codec and interleaved audiovisual token pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  CLI::App* c_synth = app.add_subcommand(
      "synth", "write synthetic landmark sequences and dialogues");
  CLI::App* c_codec_train =
      app.add_subcommand("codec-train", "train the landmark codec");
  CLI::App* c_codec_eval = app.add_subcommand(
      "codec-eval", "held-out reconstruction and utilization report");
  CLI::App* c_ctx = app.add_subcommand(
      "ctx-build", "tokenize dialogues into training streams");
  CLI::App* c_lm_train =
      app.add_subcommand("lm-train", "train the dialogue token model");
  CLI::App* c_lm_gen = app.add_subcommand(
      "lm-generate", "sample aligned face/speech responses");
  CLI::App* c_metrics =
      app.add_subcommand("metrics", "numeric metric report");
  CLI::App* c_fsq = app.add_subcommand(
      "fsq-selftest", "structural quantizer checks, writes nothing");
  for (CLI::App* cmd :
       {c_synth, c_codec_train, c_codec_eval, c_ctx, c_lm_train, c_lm_gen,
        c_metrics})
    add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    avtok::RunConfig cfg;
    std::string config_text;
    if (!flags.config_path.empty()) {
      config_text = avtok::read_file(flags.config_path);
      cfg = avtok::RunConfig::load_file(flags.config_path);
    } else {
      config_text = cfg.to_json().dump(2) + "\n";
    }
    CLI::App* sub = app.get_subcommands().front();
    const CLI::Option* seed_opt = sub->get_option_no_throw("--seed");
    if (seed_opt && seed_opt->count() > 0) cfg.seed = flags.seed;
    cfg.validate();
    avtok::RunPaths paths{flags.out};

    if (sub == c_synth) {
      avtok::cmd_synth(cfg, paths);
    } else if (sub == c_codec_train) {
      avtok::cmd_codec_train(cfg, paths);
    } else if (sub == c_codec_eval) {
      avtok::cmd_codec_eval(cfg, paths);
    } else if (sub == c_ctx) {
      avtok::cmd_ctx_build(cfg, paths);
    } else if (sub == c_lm_train) {
      avtok::cmd_lm_train(cfg, paths);
    } else if (sub == c_lm_gen) {
      avtok::cmd_lm_generate(cfg, paths);
    } else if (sub == c_metrics) {
      avtok::cmd_metrics(cfg, paths,
                         avtok::hex64(avtok::fnv1a64(config_text)));
    } else {
      avtok::cmd_fsq_selftest();
    }
  } catch (const avtok::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const avtok::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const avtok::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 4;
  }
  return 0;
}
