#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avtok/tokenstream.hpp"

namespace avtok {

/// Synthetic dialogue generator.  Face tokens follow a dataset-level Markov
/// chain over a small support set; each speech token is a fixed function of
/// its paired face token (optionally corrupted with seeded noise), which
/// gives a model something cross-modal to learn.  Emotions are uniform over
/// the seven labels.
struct DialogueSynthConfig {
  int n_turns = 2;       // history turns per dialogue
  int span_lo = 6;       // aligned face/speech pairs per turn, inclusive range
  int span_hi = 10;
  int words_lo = 3;      // words per utterance text
  int words_hi = 8;
  int n_face_states = 32;   // Markov support size, <= face vocab
  double noise_prob = 0.0;  // probability a speech token ignores the map
  int speaker_pool = 100;   // synthetic speaker identities to draw from

  void validate() const;
};

/// Deterministic unit-norm speaker vector keyed by name only, so one name
/// maps to the same vector in every dataset.
SpeakerSlot speaker_embedding(const std::string& name);

/// The fixed face-to-speech map.  Injective over the face vocabulary.
int speech_for_face(int face_raw);

class DialogueSynth {
 public:
  DialogueSynth(std::uint64_t seed, const DialogueSynthConfig& cfg);

  /// Dialogue number `index`; deterministic in (seed, cfg, index).
  DialogueContext make(int index) const;

  const std::vector<int>& face_support() const { return support_; }

 private:
  DialogueSynthConfig cfg_;
  std::uint64_t seed_;
  std::vector<int> support_;                 // face ids in the chain
  std::vector<std::vector<double>> cum_trans_;  // cumulative transition rows
  std::vector<std::string> words_;
};

}  // namespace avtok
