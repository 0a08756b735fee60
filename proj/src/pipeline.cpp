#include "avtok/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <vector>

#include "avtok/binio.hpp"
#include "avtok/bpe.hpp"
#include "avtok/errors.hpp"
#include "avtok/geometry.hpp"
#include "avtok/hash.hpp"
#include "avtok/rng.hpp"

namespace avtok {

namespace {

std::string indexed(const std::string& dir, const char* stem, int i,
                    const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d%s", stem, i, ext);
  return dir + "/" + buf;
}

std::string rel(const RunPaths& paths, const std::string& abs) {
  return abs.substr(paths.out.size() + 1);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw ValidationError("cannot create directory " + dir + ": " +
                          ec.message());
}

/// Landmark sequences in index order, cast back to double.  Shape-checks
/// every file against the config.
std::vector<Eigen::MatrixXd> load_sequences(const RunConfig& cfg,
                                            const RunPaths& paths, int first,
                                            int count) {
  std::vector<Eigen::MatrixXd> seqs;
  seqs.reserve(count);
  for (int i = first; i < first + count; ++i) {
    std::string path = paths.lmk_file(i);
    Eigen::MatrixXd m = read_lmk(path).cast<double>();
    if (m.rows() != cfg.dataset.n_frames || m.cols() != cfg.codec.frame_dim)
      throw ValidationError(path + ": expected " +
                            std::to_string(cfg.dataset.n_frames) + " x " +
                            std::to_string(cfg.codec.frame_dim) + " frames");
    seqs.push_back(std::move(m));
  }
  return seqs;
}

std::vector<DialogueContext> load_dialogues(const RunConfig& cfg,
                                            const RunPaths& paths) {
  std::string text = read_file(paths.dialogues());
  std::vector<DialogueContext> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(dialogue_from_json(line));
    } catch (const std::exception& e) {
      throw FormatError(paths.dialogues() + " line " +
                        std::to_string(line_no) + ": " + e.what());
    }
  }
  if (static_cast<int>(out.size()) != cfg.dataset.n_dialogues)
    throw ValidationError(paths.dialogues() + ": expected " +
                          std::to_string(cfg.dataset.n_dialogues) +
                          " dialogues, found " + std::to_string(out.size()));
  return out;
}

std::string checksum_of_file(const std::string& path) {
  return hex64(fnv1a64(read_file(path)));
}

}  // namespace

std::string RunPaths::lmk_file(int i) const {
  return indexed(lmk_dir(), "seq", i, ".lmk");
}
std::string RunPaths::stream_file(int i) const {
  return indexed(streams_dir(), "stream", i, ".jsonl");
}
std::string RunPaths::gen_file(int i) const {
  return indexed(gen_dir(), "gen", i, ".jsonl");
}

void cmd_synth(const RunConfig& cfg, const RunPaths& paths, std::FILE* log) {
  cfg.validate();

  std::vector<Eigen::MatrixXf> seqs;
  seqs.reserve(cfg.dataset.n_sequences);
  for (int i = 0; i < cfg.dataset.n_sequences; ++i) {
    Rng rng = Rng::stream(cfg.seed, "synth/lmk/" + std::to_string(i));
    seqs.push_back(
        synth_landmark_sequence(cfg.landmarks, rng, cfg.dataset.n_frames)
            .cast<float>());
  }
  DialogueSynth synth(cfg.seed, cfg.dialogue);
  std::string dlg_lines;
  for (int i = 0; i < cfg.dataset.n_dialogues; ++i)
    dlg_lines += dialogue_to_json(synth.make(i)) + "\n";

  ensure_dir(paths.lmk_dir());
  auto files = nlohmann::ordered_json::array();
  for (int i = 0; i < cfg.dataset.n_sequences; ++i) {
    write_lmk(paths.lmk_file(i), seqs[i]);
    files.push_back({{"path", rel(paths, paths.lmk_file(i))},
                     {"fnv1a64", checksum_of_file(paths.lmk_file(i))}});
  }
  write_file(paths.dialogues(), dlg_lines);
  files.push_back({{"path", rel(paths, paths.dialogues())},
                   {"fnv1a64", checksum_of_file(paths.dialogues())}});

  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["files"] = files;
  write_file(paths.manifest(), manifest.dump(2) + "\n");

  for (const auto& f : files)
    std::fprintf(log, "%s  %s\n", f.at("fnv1a64").get<std::string>().c_str(),
                 f.at("path").get<std::string>().c_str());
  std::fprintf(log, "synth: %d sequences, %d dialogues -> %s\n",
               cfg.dataset.n_sequences, cfg.dataset.n_dialogues,
               paths.out.c_str());
}

void cmd_codec_train(const RunConfig& cfg, const RunPaths& paths,
                     std::FILE* log) {
  cfg.validate();
  int n_train = cfg.dataset.n_sequences - cfg.dataset.holdout_sequences;
  std::vector<Eigen::MatrixXd> train = load_sequences(cfg, paths, 0, n_train);
  std::vector<Eigen::MatrixXd> holdout =
      load_sequences(cfg, paths, n_train, cfg.dataset.holdout_sequences);

  LmkCodec model(cfg.codec);
  model.init(cfg.seed);
  CodecTrainHyper hyper = cfg.codec_train;
  hyper.seed = cfg.seed;
  CodecTrainReport report = train_codec(model, train, holdout, hyper);

  model.save(paths.codec_ckpt());
  write_file(paths.codec_train_report(), report.to_json().dump(2) + "\n");
  std::fprintf(log,
               "codec-train: mse %.6f -> %.6f (smoothed %.6f), holdout lmd "
               "%.6f, %.1fs\n",
               report.initial_mse, report.final_mse, report.smoothed_final,
               report.final_lmd, report.wall_time);
}

void cmd_codec_eval(const RunConfig& cfg, const RunPaths& paths,
                    std::FILE* log) {
  cfg.validate();
  LmkCodec model = LmkCodec::load(paths.codec_ckpt());
  int n_train = cfg.dataset.n_sequences - cfg.dataset.holdout_sequences;
  std::vector<Eigen::MatrixXd> holdout =
      load_sequences(cfg, paths, n_train, cfg.dataset.holdout_sequences);

  double lmd_sum = 0, mse_sum = 0;
  std::vector<std::int64_t> all_tokens;
  for (const Eigen::MatrixXd& seq : holdout) {
    std::vector<std::int64_t> tokens = model.tokenize(seq);
    all_tokens.insert(all_tokens.end(), tokens.begin(), tokens.end());
    Eigen::MatrixXd recon = model.decode(tokens);
    lmd_sum += lmd(seq, recon);
    mse_sum += (seq - recon).array().square().mean();
  }
  int n = static_cast<int>(holdout.size());
  nlohmann::ordered_json report;
  report["n_sequences"] = n;
  report["n_frames"] = cfg.dataset.n_frames;
  report["lmd"] = lmd_sum / n;
  report["mse"] = mse_sum / n;
  report["codebook_utilization"] =
      codebook_utilization(all_tokens, model.config().fsq.vocab());
  write_file(paths.codec_eval_report(), report.dump(2) + "\n");
  std::fprintf(log, "codec-eval: lmd %.6f, mse %.6f, utilization %.4f\n",
               report.at("lmd").get<double>(), report.at("mse").get<double>(),
               report.at("codebook_utilization").get<double>());
}

void cmd_ctx_build(const RunConfig& cfg, const RunPaths& paths,
                   std::FILE* log) {
  cfg.validate();
  std::vector<DialogueContext> dialogues = load_dialogues(cfg, paths);

  bool bpe_cached = std::filesystem::exists(paths.bpe());
  BpeModel bpe;
  if (bpe_cached) {
    bpe = BpeModel::load(paths.bpe());
  } else {
    std::vector<std::string> corpus;
    for (const DialogueContext& ctx : dialogues) {
      for (const DialogueTurn& turn : ctx.history) corpus.push_back(turn.text);
      corpus.push_back(ctx.current.text);
    }
    bpe = bpe_train(corpus, cfg.lm.layout.text_vocab_size);
  }
  if (bpe.vocab() > cfg.lm.layout.text_vocab_size)
    throw ValidationError("ctx-build: text tokenizer vocabulary exceeds the "
                          "layout's text region");

  const VocabLayout& layout = cfg.lm.layout;
  std::vector<std::string> stream_texts;
  stream_texts.reserve(dialogues.size());
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    auto [head, target] = split_last_turn(dialogues[i]);
    TokenStream ts = build_training_stream(head, target, bpe, layout);
    auto diags = validate_stream(ts, layout);
    if (!diags.empty())
      throw ValidationError("ctx-build: dialogue " + std::to_string(i) +
                            " produced a malformed stream: " + diags.front());
    if (static_cast<int>(ts.size()) > cfg.lm.max_seq_len)
      throw ValidationError("ctx-build: dialogue " + std::to_string(i) +
                            " stream length " + std::to_string(ts.size()) +
                            " exceeds lm.max_seq_len");
    stream_texts.push_back(stream_to_jsonl(ts, layout));
  }

  if (!bpe_cached) bpe.save(paths.bpe());
  ensure_dir(paths.streams_dir());
  for (std::size_t i = 0; i < stream_texts.size(); ++i)
    write_file(paths.stream_file(static_cast<int>(i)), stream_texts[i]);
  std::fprintf(log, "ctx-build: %zu streams, text vocab %d (%zu merges)\n",
               stream_texts.size(), bpe.vocab(), bpe.merges.size());
}

void cmd_lm_train(const RunConfig& cfg, const RunPaths& paths,
                  std::FILE* log) {
  cfg.validate();
  const VocabLayout& layout = cfg.lm.layout;
  std::vector<TokenStream> all;
  all.reserve(cfg.dataset.n_dialogues);
  for (int i = 0; i < cfg.dataset.n_dialogues; ++i)
    all.push_back(stream_from_jsonl(read_file(paths.stream_file(i)), layout));
  int n_train = cfg.dataset.n_dialogues - cfg.dataset.holdout_dialogues;
  std::vector<TokenStream> train(all.begin(), all.begin() + n_train);
  std::vector<TokenStream> holdout(all.begin() + n_train, all.end());

  LmModel model(cfg.lm);
  model.init(cfg.seed);
  LmTrainHyper hyper = cfg.lm_train;
  hyper.seed = cfg.seed;
  LmTrainReport report = lm_train(model, train, holdout, hyper);

  model.save(paths.lm_ckpt());
  write_file(paths.lm_train_report(), report.to_json().dump(2) + "\n");
  std::fprintf(log,
               "lm-train: loss %.4f -> %.4f, holdout speech accuracy %.4f, "
               "%.1fs\n",
               report.initial_loss, report.final_loss, report.speech_accuracy,
               report.wall_time);
}

void cmd_lm_generate(const RunConfig& cfg, const RunPaths& paths,
                     std::FILE* log) {
  cfg.validate();
  LmModel model = LmModel::load(paths.lm_ckpt());
  const VocabLayout& layout = model.config().layout;
  if (layout.text_vocab_size != cfg.lm.layout.text_vocab_size)
    throw ValidationError(
        "lm-generate: checkpoint vocab layout differs from the config");
  BpeModel bpe = BpeModel::load(paths.bpe());
  std::vector<DialogueContext> dialogues = load_dialogues(cfg, paths);

  // Prompts come from the holdout end of the corpus.
  int first = cfg.dataset.n_dialogues - cfg.n_generations;
  std::string summary;
  std::vector<std::string> stream_texts;
  for (int k = 0; k < cfg.n_generations; ++k) {
    auto [head, target] = split_last_turn(dialogues[first + k]);
    TokenStream prompt = build_context(head, bpe, layout);
    std::uint64_t gseed =
        Rng::stream(cfg.seed, "generate/" + std::to_string(k)).next_u64();
    GenerationResult res =
        lm_generate(model, prompt, model.config().sampler, gseed);

    auto diags = validate_stream(res.stream, layout);
    if (!diags.empty())
      throw ValidationError("lm-generate: generation " + std::to_string(k) +
                            " failed validation: " + diags.front());
    if (res.face.size() != res.speech.size())
      throw ValidationError("lm-generate: generation " + std::to_string(k) +
                            " broke face/speech alignment");

    nlohmann::ordered_json rec;
    rec["index"] = k;
    rec["dialogue"] = first + k;
    rec["seed"] = gseed;
    rec["emotion"] = res.emotion;
    rec["n_face"] = res.face.size();
    rec["n_speech"] = res.speech.size();
    rec["terminated_by_d"] = res.terminated_by_d;
    rec["face"] = res.face;
    rec["speech"] = res.speech;
    summary += rec.dump() + "\n";
    stream_texts.push_back(stream_to_jsonl(res.stream, layout));
  }

  ensure_dir(paths.gen_dir());
  for (int k = 0; k < cfg.n_generations; ++k)
    write_file(paths.gen_file(k), stream_texts[k]);
  write_file(paths.generations(), summary);
  std::fprintf(log, "lm-generate: %d generations -> %s\n", cfg.n_generations,
               paths.generations().c_str());
}

void cmd_metrics(const RunConfig& cfg, const RunPaths& paths,
                 const std::string& config_checksum, std::FILE* log) {
  cfg.validate();
  LmkCodec model = LmkCodec::load(paths.codec_ckpt());
  int n_train = cfg.dataset.n_sequences - cfg.dataset.holdout_sequences;
  std::vector<Eigen::MatrixXd> holdout =
      load_sequences(cfg, paths, n_train, cfg.dataset.holdout_sequences);

  int n_points = cfg.codec.frame_dim / 2;
  auto records = nlohmann::ordered_json::array();
  auto add = [&](const char* metric, double value, int n_frames, int np) {
    records.push_back({{"metric", metric},
                       {"value", value},
                       {"n_frames", n_frames},
                       {"n_points", np}});
  };

  double lmd_sum = 0;
  std::vector<std::int64_t> all_tokens;
  for (const Eigen::MatrixXd& seq : holdout) {
    std::vector<std::int64_t> tokens = model.tokenize(seq);
    all_tokens.insert(all_tokens.end(), tokens.begin(), tokens.end());
    lmd_sum += lmd(seq, model.decode(tokens));
  }
  int total_frames = static_cast<int>(holdout.size()) * cfg.dataset.n_frames;
  add("lmd", lmd_sum / static_cast<double>(holdout.size()), total_frames,
      n_points);
  add("codebook_utilization",
      codebook_utilization(all_tokens, model.config().fsq.vocab()),
      total_frames, n_points);

  // Fit-residual checks on the first holdout frame: apply a known transform,
  // fit it back, report the worst point error.
  Eigen::MatrixXd src = frame_to_points(holdout.front().row(0));
  {
    SimilarityTransform ref{1.3, 0.4, 0.07, -0.03};
    Eigen::MatrixXd dst = apply_similarity(ref, src);
    SimilarityTransform fit = fit_similarity(src, dst);
    double resid =
        (apply_similarity(fit, src) - dst).rowwise().norm().maxCoeff();
    add("similarity_fit_residual", resid, 1, n_points);
  }
  {
    AffineTransform ref;
    ref.A << 1.1, 0.2, -0.1, 0.9;
    ref.t << 0.05, -0.02;
    Eigen::MatrixXd dst = apply_affine(ref, src);
    AffineTransform fit = fit_affine(src, dst);
    double resid = (apply_affine(fit, src) - dst).rowwise().norm().maxCoeff();
    add("affine_fit_residual", resid, 1, n_points);
  }

  nlohmann::ordered_json report;
  report["version"] = 1;
  report["config_checksum"] = config_checksum;
  report["records"] = records;
  write_file(paths.metrics_report(), report.dump(2) + "\n");
  for (const auto& r : records)
    std::fprintf(log, "%-24s %.8f\n", r.at("metric").get<std::string>().c_str(),
                 r.at("value").get<double>());
}

void cmd_fsq_selftest(std::FILE* log) {
  FsqConfig face = FsqConfig::face();
  FsqConfig speech = FsqConfig::speech();
  if (face.vocab() != 1000 || speech.vocab() != 6561)
    throw NumericError("fsq-selftest: implied vocabulary sizes wrong");
  std::fprintf(log, "[ok] implied vocab: face %lld, speech %lld\n",
               static_cast<long long>(face.vocab()),
               static_cast<long long>(speech.vocab()));

  for (std::int64_t idx = 0; idx < face.vocab(); ++idx) {
    std::vector<int> code = fsq_index_to_code(face, idx);
    if (fsq_code_to_index(face, code) != idx)
      throw NumericError("fsq-selftest: index/code round trip failed at " +
                         std::to_string(idx));
    Eigen::VectorXd v = fsq_dequantize(face, code);
    if (v.minCoeff() < -1.0 || v.maxCoeff() > 1.0)
      throw NumericError("fsq-selftest: dequantized value outside [-1, 1]");
    if (fsq_quantize(face, fsq_preimage(face, code)) != code)
      throw NumericError("fsq-selftest: preimage round trip failed at " +
                         std::to_string(idx));
  }
  std::fprintf(log, "[ok] face index<->code bijection and preimage round "
                    "trip over all 1000 codes\n");

  for (const FsqConfig& cfg : {face, speech}) {
    for (int d = 0; d < cfg.dims(); ++d) {
      std::vector<bool> hit(cfg.levels[d], false);
      for (double z = -8.0; z <= 8.0; z += 1e-3)
        hit[fsq_quantize_one(z, cfg.levels[d])] = true;
      for (int l = 0; l < cfg.levels[d]; ++l)
        if (!hit[l])
          throw NumericError("fsq-selftest: level " + std::to_string(l) +
                             " of dim " + std::to_string(d) + " unreachable");
    }
  }
  std::fprintf(log, "[ok] every level reachable in both configurations\n");
}

}  // namespace avtok
