#pragma once

#include <cstdio>
#include <string>

#include "avtok/config.hpp"

namespace avtok {

/// Output-directory layout shared by all commands.  Files are addressed by
/// index, never by directory scan, so ordering is deterministic.
struct RunPaths {
  std::string out = "out";

  std::string lmk_dir() const { return out + "/lmk"; }
  std::string lmk_file(int i) const;
  std::string dialogues() const { return out + "/dialogues.jsonl"; }
  std::string manifest() const { return out + "/manifest.json"; }
  std::string codec_ckpt() const { return out + "/codec.ckpt"; }
  std::string codec_train_report() const {
    return out + "/codec_train_report.json";
  }
  std::string codec_eval_report() const {
    return out + "/codec_eval_report.json";
  }
  std::string bpe() const { return out + "/bpe.json"; }
  std::string streams_dir() const { return out + "/streams"; }
  std::string stream_file(int i) const;
  std::string lm_ckpt() const { return out + "/lm.ckpt"; }
  std::string lm_train_report() const { return out + "/lm_train_report.json"; }
  std::string gen_dir() const { return out + "/gen"; }
  std::string gen_file(int i) const;
  std::string generations() const { return out + "/generations.jsonl"; }
  std::string metrics_report() const { return out + "/metrics_report.json"; }
};

/// Each command validates its inputs fully before creating or replacing any
/// file; a thrown error leaves the output directory untouched.  All print
/// through `log` (stdout by default) so tests can silence them.

void cmd_synth(const RunConfig& cfg, const RunPaths& paths,
               std::FILE* log = stdout);
void cmd_codec_train(const RunConfig& cfg, const RunPaths& paths,
                     std::FILE* log = stdout);
void cmd_codec_eval(const RunConfig& cfg, const RunPaths& paths,
                    std::FILE* log = stdout);
void cmd_ctx_build(const RunConfig& cfg, const RunPaths& paths,
                   std::FILE* log = stdout);
void cmd_lm_train(const RunConfig& cfg, const RunPaths& paths,
                  std::FILE* log = stdout);
void cmd_lm_generate(const RunConfig& cfg, const RunPaths& paths,
                     std::FILE* log = stdout);
/// `config_checksum` identifies the exact config bytes the run used.
void cmd_metrics(const RunConfig& cfg, const RunPaths& paths,
                 const std::string& config_checksum, std::FILE* log = stdout);
/// Structural quantizer checks; throws on any violation, writes nothing.
void cmd_fsq_selftest(std::FILE* log = stdout);

}  // namespace avtok
