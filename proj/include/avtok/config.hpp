#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>

#include "avtok/codec.hpp"
#include "avtok/dialogue.hpp"
#include "avtok/landmarks.hpp"
#include "avtok/lm.hpp"

namespace avtok {

inline constexpr int kRunConfigVersion = 1;

/// Dataset sizes produced by synth and the holdout splits every downstream
/// command agrees on (the last holdout_* items of each corpus).
struct DatasetConfig {
  int n_sequences = 500;       // landmark sequences
  int n_frames = 50;           // frames per sequence
  int holdout_sequences = 32;  // held out of codec training
  int n_dialogues = 384;
  int holdout_dialogues = 64;  // held out of model training

  void validate() const;
};

/// Root configuration shared by every command.  Parsing is strict: unknown
/// keys anywhere are hard errors, so a stale or misspelled config fails
/// instead of silently running with defaults.  Every block is optional and
/// overrides defaults key by key; `version` is required.
struct RunConfig {
  std::uint64_t seed = 1;
  LmkSynthConfig landmarks;
  DatasetConfig dataset;
  DialogueSynthConfig dialogue;
  CodecConfig codec;
  CodecTrainHyper codec_train;  // seed field is filled from the root seed
  LmConfig lm;                  // carries the vocab layout and sampler
  LmTrainHyper lm_train;        // seed field is filled from the root seed
  int n_generations = 16;

  void validate() const;

  nlohmann::ordered_json to_json() const;  // canonical full form
  static RunConfig from_json(const nlohmann::json& j);
  /// Parse a config file.  Unreadable file or malformed JSON or a version
  /// mismatch is a FormatError; bad values are ValidationErrors.
  static RunConfig load_file(const std::string& path);
};

}  // namespace avtok
