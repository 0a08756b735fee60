#pragma once

#include <string>
#include <utility>
#include <vector>

namespace avtok {

/// Byte-level BPE: the base alphabet is all 256 byte values; merges append
/// new ids starting at 256.  Lossless on arbitrary byte strings.
struct BpeModel {
  int target_vocab = 256;
  std::vector<std::pair<int, int>> merges;  // (left id, right id), in order

  int vocab() const { return 256 + static_cast<int>(merges.size()); }
  /// Byte string for every token id.
  std::vector<std::string> token_bytes() const;

  void save(const std::string& path) const;
  static BpeModel load(const std::string& path);
};

/// Greedy highest-count pair merging.  Ties break toward the pair whose
/// (left bytes, right bytes) is lexicographically smallest.  Stops early when
/// no adjacent pair occurs at least twice.
BpeModel bpe_train(const std::vector<std::string>& corpus, int target_vocab);

std::vector<int> bpe_encode(const BpeModel& model, const std::string& text);
std::string bpe_decode(const BpeModel& model, const std::vector<int>& ids);

}  // namespace avtok
