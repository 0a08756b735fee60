#include "avtok/bpe.hpp"

#include <cstdint>
#include <json.hpp>
#include <limits>
#include <unordered_map>

#include "avtok/binio.hpp"
#include "avtok/errors.hpp"

namespace avtok {

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<int, int>& p) const {
    return std::hash<std::uint64_t>()(
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
        static_cast<std::uint32_t>(p.second));
  }
};

std::vector<int> to_bytes(const std::string& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (unsigned char c : s) out.push_back(static_cast<int>(c));
  return out;
}

// Replace every non-overlapping (a, b) occurrence with id, left to right.
void apply_merge(std::vector<int>& seq, int a, int b, int id) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = id;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}

}  // namespace

std::vector<std::string> BpeModel::token_bytes() const {
  std::vector<std::string> bytes;
  bytes.reserve(vocab());
  for (int i = 0; i < 256; ++i)
    bytes.push_back(std::string(1, static_cast<char>(i)));
  for (std::size_t i = 0; i < merges.size(); ++i) {
    auto [a, b] = merges[i];
    int limit = 256 + static_cast<int>(i);
    if (a < 0 || a >= limit || b < 0 || b >= limit)
      throw FormatError("bpe: merge " + std::to_string(i) +
                        " references undefined token");
    bytes.push_back(bytes[a] + bytes[b]);
  }
  return bytes;
}

BpeModel bpe_train(const std::vector<std::string>& corpus, int target_vocab) {
  if (corpus.empty()) throw ValidationError("bpe_train: empty corpus");
  if (target_vocab < 256)
    throw ValidationError("bpe_train: target vocab " +
                          std::to_string(target_vocab) +
                          " below the 256-byte base alphabet");
  BpeModel model;
  model.target_vocab = target_vocab;

  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& s : corpus) seqs.push_back(to_bytes(s));
  std::vector<std::string> bytes = model.token_bytes();

  while (model.vocab() < target_vocab) {
    std::unordered_map<std::pair<int, int>, std::int64_t, PairHash> counts;
    for (const auto& seq : seqs)
      for (std::size_t i = 0; i + 1 < seq.size(); ++i)
        ++counts[{seq[i], seq[i + 1]}];

    std::pair<int, int> best{-1, -1};
    std::int64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count < best_count) continue;
      if (count > best_count) {
        best_count = count;
        best = pair;
        continue;
      }
      // Tie: lexicographically smallest (left bytes, right bytes).
      const auto& cand_l = bytes[pair.first];
      const auto& cand_r = bytes[pair.second];
      const auto& best_l = bytes[best.first];
      const auto& best_r = bytes[best.second];
      if (cand_l < best_l || (cand_l == best_l && cand_r < best_r))
        best = pair;
    }
    if (best_count < 2) break;  // nothing left worth merging

    int id = model.vocab();
    model.merges.push_back(best);
    bytes.push_back(bytes[best.first] + bytes[best.second]);
    for (auto& seq : seqs) apply_merge(seq, best.first, best.second, id);
  }
  return model;
}

std::vector<int> bpe_encode(const BpeModel& model, const std::string& text) {
  std::vector<int> seq = to_bytes(text);
  if (seq.empty()) return seq;
  // Priority of each merge is its index; repeatedly apply the lowest-index
  // merge present anywhere in the sequence.
  std::unordered_map<std::pair<int, int>, int, PairHash> rank;
  for (std::size_t i = 0; i < model.merges.size(); ++i)
    rank[model.merges[i]] = static_cast<int>(i);
  for (;;) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = rank.find({seq[i], seq[i + 1]});
      if (it != rank.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    auto [a, b] = model.merges[best_rank];
    apply_merge(seq, a, b, 256 + best_rank);
  }
  return seq;
}

std::string bpe_decode(const BpeModel& model, const std::vector<int>& ids) {
  std::vector<std::string> bytes = model.token_bytes();
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= model.vocab())
      throw ValidationError("bpe_decode: id " + std::to_string(id) +
                            " outside vocab " + std::to_string(model.vocab()));
    out += bytes[id];
  }
  return out;
}

void BpeModel::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["target_vocab"] = target_vocab;
  auto arr = nlohmann::ordered_json::array();
  for (auto [a, b] : merges) arr.push_back({a, b});
  j["merges"] = arr;
  write_file(path, j.dump(2) + "\n");
}

BpeModel BpeModel::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bpe: bad model JSON in " + path + ": " + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw FormatError("bpe: unsupported model version in " + path);
  BpeModel model;
  model.target_vocab = j.at("target_vocab").get<int>();
  if (model.target_vocab < 256)
    throw FormatError("bpe: target vocab below base alphabet");
  for (const auto& m : j.at("merges")) {
    if (!m.is_array() || m.size() != 2)
      throw FormatError("bpe: malformed merge entry");
    model.merges.emplace_back(m[0].get<int>(), m[1].get<int>());
  }
  model.token_bytes();  // validates merge references
  if (model.vocab() > model.target_vocab)
    throw FormatError("bpe: more merges than target vocab allows");
  return model;
}

}  // namespace avtok
