#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <variant>
#include <vector>

#include "avtok/bpe.hpp"

namespace avtok {

/// One id space covering every modality, laid out as contiguous regions:
/// text | speech | face | emotion | specials (B, S, E, D).
struct VocabLayout {
  int text_vocab_size = 4096;
  static constexpr int kSpeechVocab = 6561;
  static constexpr int kFaceVocab = 1000;
  static constexpr int kEmotionCount = 7;
  static constexpr int kSpecialCount = 4;

  void validate() const;

  int speech_base() const { return text_vocab_size; }
  int face_base() const { return speech_base() + kSpeechVocab; }
  int emo_base() const { return face_base() + kFaceVocab; }
  int special_base() const { return emo_base() + kEmotionCount; }
  int total_vocab() const { return special_base() + kSpecialCount; }

  int B() const { return special_base() + 0; }  // context begin
  int S() const { return special_base() + 1; }  // audiovisual span begin
  int E() const { return special_base() + 2; }  // audiovisual span end
  int D() const { return special_base() + 3; }  // context end / terminator
};

enum class TokenKind { Text, Speech, Face, Emotion, Special };

const char* kind_name(TokenKind k);
TokenKind kind_of(const VocabLayout& layout, int id);

struct Token {
  TokenKind kind;
  int id;  // unified id
};

Token text_token(const VocabLayout& layout, int raw);
Token speech_token(const VocabLayout& layout, int raw);
Token face_token(const VocabLayout& layout, int raw);
Token special_token(const VocabLayout& layout, int unified_id);
/// Raw in-region id of a token (e.g. face 0..999).
int raw_id(const VocabLayout& layout, const Token& t);

/// The seven emotion labels in their fixed id order.
const std::array<std::string, 7>& emotion_labels();
Token emotion_to_token(const VocabLayout& layout, const std::string& label);
std::string token_to_emotion(const VocabLayout& layout, const Token& t);

/// Continuous speaker-embedding slot occupying one stream position.
struct SpeakerSlot {
  static constexpr int kDim = 192;
  Eigen::VectorXd embedding;

  void validate() const;  // dimension 192, unit norm to 1e-6
};

using StreamItem = std::variant<Token, SpeakerSlot>;

struct TokenStream {
  std::vector<StreamItem> items;

  std::size_t size() const { return items.size(); }
};

/// Pairwise face/speech interleaving: <face_1, speech_1, ..., face_k,
/// speech_k>.  Inputs are raw per-modality ids; output tokens carry unified
/// ids.  Lengths must match (hard alignment).
std::vector<Token> interleave(const VocabLayout& layout,
                              const std::vector<int>& face,
                              const std::vector<int>& speech);

/// Exact inverse; raises on broken alternation or odd length, naming the
/// offending position.
std::pair<std::vector<int>, std::vector<int>> deinterleave(
    const VocabLayout& layout, const std::vector<Token>& items);

struct DialogueTurn {
  SpeakerSlot speaker;
  std::string text;
  std::vector<int> speech_tokens;  // raw ids, aligned with face_tokens
  std::vector<int> face_tokens;    // raw ids
  std::string emotion;
};

struct CurrentTurn {
  SpeakerSlot speaker;
  std::string text;
};

struct DialogueContext {
  std::vector<DialogueTurn> history;
  CurrentTurn current;

  void validate() const;
};

/// The response content a model is trained to produce for the current turn.
struct TargetTurn {
  std::string emotion;
  std::vector<int> face;    // raw ids
  std::vector<int> speech;  // raw ids
};

/// Prompt serialization: B, then per history turn (speaker slot, text
/// tokens, emotion, S, interleaved face/speech, E), then the current turn's
/// speaker slot and text tokens.
TokenStream build_context(const DialogueContext& ctx, const BpeModel& bpe,
                          const VocabLayout& layout);

/// Prompt plus the target: emotion, interleaved face/speech pairs (no S/E
/// brackets, matching the decoding grammar), and the terminator D.
TokenStream build_training_stream(const DialogueContext& ctx,
                                  const TargetTurn& target,
                                  const BpeModel& bpe,
                                  const VocabLayout& layout);

/// Reinterpret the last history turn as the current turn plus its target,
/// leaving the remaining turns as history.
std::pair<DialogueContext, TargetTurn> split_last_turn(
    const DialogueContext& ctx);

/// Grammar diagnostics; empty means well-formed.  Checks the B prefix, S/E
/// span bracketing with strict face/speech alternation inside, pairing of
/// face/speech runs outside spans, kind/region consistency, single trailing
/// D, and speaker-slot placement.
std::vector<std::string> validate_stream(const TokenStream& stream,
                                         const VocabLayout& layout);

/// JSONL round trip: {"t":"tok","kind":"face","id":123} per token line,
/// {"t":"spk","v":[...]} per speaker line.
std::string stream_to_jsonl(const TokenStream& stream,
                            const VocabLayout& layout);
TokenStream stream_from_jsonl(const std::string& text,
                              const VocabLayout& layout);

/// DialogueContext (de)serialization with field names mirroring the type.
std::string dialogue_to_json(const DialogueContext& ctx);
DialogueContext dialogue_from_json(const std::string& text);

}  // namespace avtok
