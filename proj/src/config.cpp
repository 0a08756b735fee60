#include "avtok/config.hpp"

#include <initializer_list>

#include "avtok/binio.hpp"
#include "avtok/errors.hpp"

namespace avtok {

namespace {

void check_keys(const nlohmann::json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ValidationError("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known)
      throw ValidationError("config: unknown key \"" + it.key() + "\" in " +
                            where);
  }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void DatasetConfig::validate() const {
  if (n_sequences < 1 || n_frames < 1 || n_dialogues < 1)
    throw ValidationError("config: dataset sizes must be positive");
  if (holdout_sequences < 1 || holdout_sequences >= n_sequences)
    throw ValidationError(
        "config: holdout_sequences must be in [1, n_sequences)");
  if (holdout_dialogues < 1 || holdout_dialogues >= n_dialogues)
    throw ValidationError(
        "config: holdout_dialogues must be in [1, n_dialogues)");
}

void RunConfig::validate() const {
  if (landmarks.n_points < 12)
    throw ValidationError("config: landmarks.n_points must be >= 12");
  if (landmarks.fps <= 0 || landmarks.n_modes < 1 || landmarks.amplitude <= 0)
    throw ValidationError("config: bad landmark synthesis parameters");
  if (!(landmarks.freq_lo > 0 && landmarks.freq_hi >= landmarks.freq_lo))
    throw ValidationError("config: bad landmark frequency range");
  dataset.validate();
  dialogue.validate();
  codec.validate();
  if (codec.frame_dim != 2 * landmarks.n_points)
    throw ValidationError(
        "config: codec.frame_dim must equal 2 * landmarks.n_points");
  if (codec_train.lr <= 0 || codec_train.steps < 0 || codec_train.batch < 1 ||
      codec_train.eval_subset < 1)
    throw ValidationError("config: bad codec_train hyperparameters");
  lm.validate();
  lm_train.validate();
  if (n_generations < 1)
    throw ValidationError("config: n_generations must be >= 1");
  if (n_generations > dataset.n_dialogues)
    throw ValidationError(
        "config: n_generations exceeds the number of dialogues");
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = kRunConfigVersion;
  j["seed"] = seed;
  j["landmarks"] = {{"n_points", landmarks.n_points},
                    {"fps", landmarks.fps},
                    {"n_modes", landmarks.n_modes},
                    {"amplitude", landmarks.amplitude},
                    {"freq_lo", landmarks.freq_lo},
                    {"freq_hi", landmarks.freq_hi}};
  j["dataset"] = {{"n_sequences", dataset.n_sequences},
                  {"n_frames", dataset.n_frames},
                  {"holdout_sequences", dataset.holdout_sequences},
                  {"n_dialogues", dataset.n_dialogues},
                  {"holdout_dialogues", dataset.holdout_dialogues}};
  j["dialogue"] = {{"n_turns", dialogue.n_turns},
                   {"span_lo", dialogue.span_lo},
                   {"span_hi", dialogue.span_hi},
                   {"words_lo", dialogue.words_lo},
                   {"words_hi", dialogue.words_hi},
                   {"n_face_states", dialogue.n_face_states},
                   {"noise_prob", dialogue.noise_prob},
                   {"speaker_pool", dialogue.speaker_pool}};
  j["codec"] = codec.to_json();
  j["codec_train"] = {{"lr", codec_train.lr},
                      {"steps", codec_train.steps},
                      {"batch", codec_train.batch},
                      {"eval_subset", codec_train.eval_subset}};
  j["layout"] = {{"text_vocab_size", lm.layout.text_vocab_size}};
  j["lm"] = {{"model_dim", lm.model_dim},
             {"n_layers", lm.n_layers},
             {"n_heads", lm.n_heads},
             {"max_seq_len", lm.max_seq_len}};
  j["lm_train"] = {{"lr", lm_train.lr},
                   {"steps", lm_train.steps},
                   {"batch", lm_train.batch},
                   {"grad_clip", lm_train.grad_clip}};
  j["sampler"] = {{"top_k", lm.sampler.top_k},
                  {"top_p", lm.sampler.top_p},
                  {"repetition_window", lm.sampler.repetition_window},
                  {"repetition_threshold", lm.sampler.repetition_threshold},
                  {"max_pairs", lm.sampler.max_pairs}};
  j["generate"] = {{"n_generations", n_generations}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  check_keys(j, "the top level",
             {"version", "seed", "landmarks", "dataset", "dialogue", "codec",
              "codec_train", "layout", "lm", "lm_train", "sampler",
              "generate"});
  if (!j.contains("version"))
    throw FormatError("config: missing required key \"version\"");
  if (!j.at("version").is_number_integer() ||
      j.at("version").get<int>() != kRunConfigVersion)
    throw FormatError("config: unsupported version (expected " +
                      std::to_string(kRunConfigVersion) + ")");

  RunConfig cfg;
  take(j, "seed", cfg.seed);
  if (j.contains("landmarks")) {
    const auto& b = j.at("landmarks");
    check_keys(b, "landmarks",
               {"n_points", "fps", "n_modes", "amplitude", "freq_lo",
                "freq_hi"});
    take(b, "n_points", cfg.landmarks.n_points);
    take(b, "fps", cfg.landmarks.fps);
    take(b, "n_modes", cfg.landmarks.n_modes);
    take(b, "amplitude", cfg.landmarks.amplitude);
    take(b, "freq_lo", cfg.landmarks.freq_lo);
    take(b, "freq_hi", cfg.landmarks.freq_hi);
  }
  if (j.contains("dataset")) {
    const auto& b = j.at("dataset");
    check_keys(b, "dataset",
               {"n_sequences", "n_frames", "holdout_sequences", "n_dialogues",
                "holdout_dialogues"});
    take(b, "n_sequences", cfg.dataset.n_sequences);
    take(b, "n_frames", cfg.dataset.n_frames);
    take(b, "holdout_sequences", cfg.dataset.holdout_sequences);
    take(b, "n_dialogues", cfg.dataset.n_dialogues);
    take(b, "holdout_dialogues", cfg.dataset.holdout_dialogues);
  }
  if (j.contains("dialogue")) {
    const auto& b = j.at("dialogue");
    check_keys(b, "dialogue",
               {"n_turns", "span_lo", "span_hi", "words_lo", "words_hi",
                "n_face_states", "noise_prob", "speaker_pool"});
    take(b, "n_turns", cfg.dialogue.n_turns);
    take(b, "span_lo", cfg.dialogue.span_lo);
    take(b, "span_hi", cfg.dialogue.span_hi);
    take(b, "words_lo", cfg.dialogue.words_lo);
    take(b, "words_hi", cfg.dialogue.words_hi);
    take(b, "n_face_states", cfg.dialogue.n_face_states);
    take(b, "noise_prob", cfg.dialogue.noise_prob);
    take(b, "speaker_pool", cfg.dialogue.speaker_pool);
  }
  if (j.contains("codec")) {
    const auto& b = j.at("codec");
    check_keys(b, "codec",
               {"frame_dim", "hidden_dim", "n_blocks", "kernel", "fsq_levels"});
    take(b, "frame_dim", cfg.codec.frame_dim);
    take(b, "hidden_dim", cfg.codec.hidden_dim);
    take(b, "n_blocks", cfg.codec.n_blocks);
    take(b, "kernel", cfg.codec.kernel);
    take(b, "fsq_levels", cfg.codec.fsq.levels);
  }
  if (j.contains("codec_train")) {
    const auto& b = j.at("codec_train");
    check_keys(b, "codec_train", {"lr", "steps", "batch", "eval_subset"});
    take(b, "lr", cfg.codec_train.lr);
    take(b, "steps", cfg.codec_train.steps);
    take(b, "batch", cfg.codec_train.batch);
    take(b, "eval_subset", cfg.codec_train.eval_subset);
  }
  if (j.contains("layout")) {
    const auto& b = j.at("layout");
    check_keys(b, "layout", {"text_vocab_size"});
    take(b, "text_vocab_size", cfg.lm.layout.text_vocab_size);
  }
  if (j.contains("lm")) {
    const auto& b = j.at("lm");
    check_keys(b, "lm", {"model_dim", "n_layers", "n_heads", "max_seq_len"});
    take(b, "model_dim", cfg.lm.model_dim);
    take(b, "n_layers", cfg.lm.n_layers);
    take(b, "n_heads", cfg.lm.n_heads);
    take(b, "max_seq_len", cfg.lm.max_seq_len);
  }
  if (j.contains("lm_train")) {
    const auto& b = j.at("lm_train");
    check_keys(b, "lm_train", {"lr", "steps", "batch", "grad_clip"});
    take(b, "lr", cfg.lm_train.lr);
    take(b, "steps", cfg.lm_train.steps);
    take(b, "batch", cfg.lm_train.batch);
    take(b, "grad_clip", cfg.lm_train.grad_clip);
  }
  if (j.contains("sampler")) {
    const auto& b = j.at("sampler");
    check_keys(b, "sampler",
               {"top_k", "top_p", "repetition_window", "repetition_threshold",
                "max_pairs"});
    take(b, "top_k", cfg.lm.sampler.top_k);
    take(b, "top_p", cfg.lm.sampler.top_p);
    take(b, "repetition_window", cfg.lm.sampler.repetition_window);
    take(b, "repetition_threshold", cfg.lm.sampler.repetition_threshold);
    take(b, "max_pairs", cfg.lm.sampler.max_pairs);
  }
  if (j.contains("generate")) {
    const auto& b = j.at("generate");
    check_keys(b, "generate", {"n_generations"});
    take(b, "n_generations", cfg.n_generations);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::string text = read_file(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw FormatError("config: " + path + " is not valid JSON");
  return from_json(j);
}

}  // namespace avtok
