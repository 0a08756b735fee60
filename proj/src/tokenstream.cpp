#include "avtok/tokenstream.hpp"

#include <cmath>
#include <json.hpp>
#include <sstream>

#include "avtok/errors.hpp"

namespace avtok {

void VocabLayout::validate() const {
  if (text_vocab_size < 256)
    throw ValidationError(
        "layout: text vocab must cover the byte alphabet (>= 256)");
}

const char* kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::Text: return "text";
    case TokenKind::Speech: return "speech";
    case TokenKind::Face: return "face";
    case TokenKind::Emotion: return "emotion";
    case TokenKind::Special: return "special";
  }
  return "?";
}

TokenKind kind_of(const VocabLayout& layout, int id) {
  if (id < 0 || id >= layout.total_vocab())
    throw ValidationError("layout: id " + std::to_string(id) +
                          " outside vocab " +
                          std::to_string(layout.total_vocab()));
  if (id < layout.speech_base()) return TokenKind::Text;
  if (id < layout.face_base()) return TokenKind::Speech;
  if (id < layout.emo_base()) return TokenKind::Face;
  if (id < layout.special_base()) return TokenKind::Emotion;
  return TokenKind::Special;
}

namespace {
Token region_token(const VocabLayout& layout, TokenKind kind, int raw,
                   int base, int size, const char* what) {
  if (raw < 0 || raw >= size)
    throw ValidationError(std::string(what) + " id " + std::to_string(raw) +
                          " outside [0, " + std::to_string(size) + ")");
  (void)layout;
  return Token{kind, base + raw};
}
}  // namespace

Token text_token(const VocabLayout& layout, int raw) {
  return region_token(layout, TokenKind::Text, raw, 0, layout.text_vocab_size,
                      "text");
}

Token speech_token(const VocabLayout& layout, int raw) {
  return region_token(layout, TokenKind::Speech, raw, layout.speech_base(),
                      VocabLayout::kSpeechVocab, "speech");
}

Token face_token(const VocabLayout& layout, int raw) {
  return region_token(layout, TokenKind::Face, raw, layout.face_base(),
                      VocabLayout::kFaceVocab, "face");
}

Token special_token(const VocabLayout& layout, int unified_id) {
  if (unified_id < layout.special_base() ||
      unified_id >= layout.total_vocab())
    throw ValidationError("special id " + std::to_string(unified_id) +
                          " outside the special region");
  return Token{TokenKind::Special, unified_id};
}

int raw_id(const VocabLayout& layout, const Token& t) {
  switch (t.kind) {
    case TokenKind::Text: return t.id;
    case TokenKind::Speech: return t.id - layout.speech_base();
    case TokenKind::Face: return t.id - layout.face_base();
    case TokenKind::Emotion: return t.id - layout.emo_base();
    case TokenKind::Special: return t.id - layout.special_base();
  }
  throw ValidationError("raw_id: bad token kind");
}

const std::array<std::string, 7>& emotion_labels() {
  static const std::array<std::string, 7> kLabels = {
      "Angry", "Disgust", "Fear", "Happy", "Neutral", "Sadness", "Surprise"};
  return kLabels;
}

Token emotion_to_token(const VocabLayout& layout, const std::string& label) {
  const auto& labels = emotion_labels();
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label)
      return Token{TokenKind::Emotion, layout.emo_base() + static_cast<int>(i)};
  throw ValidationError("unknown emotion label '" + label + "'");
}

std::string token_to_emotion(const VocabLayout& layout, const Token& t) {
  if (t.kind != TokenKind::Emotion)
    throw ValidationError("token_to_emotion: not an emotion token");
  int raw = t.id - layout.emo_base();
  if (raw < 0 || raw >= VocabLayout::kEmotionCount)
    throw ValidationError("token_to_emotion: id outside emotion region");
  return emotion_labels()[static_cast<std::size_t>(raw)];
}

void SpeakerSlot::validate() const {
  if (embedding.size() != kDim)
    throw ValidationError("speaker slot: dimension " +
                          std::to_string(embedding.size()) + ", expected " +
                          std::to_string(kDim));
  double n = embedding.norm();
  if (std::abs(n - 1.0) > 1e-6)
    throw ValidationError("speaker slot: norm " + std::to_string(n) +
                          " not unit");
}

std::vector<Token> interleave(const VocabLayout& layout,
                              const std::vector<int>& face,
                              const std::vector<int>& speech) {
  if (face.size() != speech.size())
    throw ValidationError("interleave: alignment broken, " +
                          std::to_string(face.size()) + " face tokens vs " +
                          std::to_string(speech.size()) + " speech tokens");
  std::vector<Token> out;
  out.reserve(2 * face.size());
  for (std::size_t i = 0; i < face.size(); ++i) {
    out.push_back(face_token(layout, face[i]));
    out.push_back(speech_token(layout, speech[i]));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> deinterleave(
    const VocabLayout& layout, const std::vector<Token>& items) {
  if (items.size() % 2 != 0)
    throw ValidationError("deinterleave: odd length " +
                          std::to_string(items.size()));
  std::vector<int> face, speech;
  face.reserve(items.size() / 2);
  speech.reserve(items.size() / 2);
  for (std::size_t i = 0; i < items.size(); ++i) {
    TokenKind want = (i % 2 == 0) ? TokenKind::Face : TokenKind::Speech;
    if (items[i].kind != want || kind_of(layout, items[i].id) != want)
      throw ValidationError("deinterleave: position " + std::to_string(i) +
                            " expected a " + kind_name(want) + " token, got " +
                            kind_name(items[i].kind));
    if (want == TokenKind::Face)
      face.push_back(raw_id(layout, items[i]));
    else
      speech.push_back(raw_id(layout, items[i]));
  }
  return {std::move(face), std::move(speech)};
}

void DialogueContext::validate() const {
  for (std::size_t i = 0; i < history.size(); ++i) {
    const DialogueTurn& t = history[i];
    t.speaker.validate();
    if (t.face_tokens.size() != t.speech_tokens.size())
      throw ValidationError("dialogue turn " + std::to_string(i) +
                            ": alignment broken, " +
                            std::to_string(t.face_tokens.size()) +
                            " face tokens vs " +
                            std::to_string(t.speech_tokens.size()) +
                            " speech tokens");
    (void)emotion_to_token(VocabLayout{}, t.emotion);
  }
  current.speaker.validate();
}

namespace {
void append_text(TokenStream& out, const std::string& text,
                 const BpeModel& bpe, const VocabLayout& layout) {
  for (int raw : bpe_encode(bpe, text))
    out.items.push_back(text_token(layout, raw));
}
}  // namespace

TokenStream build_context(const DialogueContext& ctx, const BpeModel& bpe,
                          const VocabLayout& layout) {
  ctx.validate();
  TokenStream out;
  out.items.push_back(special_token(layout, layout.B()));
  for (const DialogueTurn& turn : ctx.history) {
    out.items.push_back(turn.speaker);
    append_text(out, turn.text, bpe, layout);
    out.items.push_back(emotion_to_token(layout, turn.emotion));
    out.items.push_back(special_token(layout, layout.S()));
    for (const Token& t :
         interleave(layout, turn.face_tokens, turn.speech_tokens))
      out.items.push_back(t);
    out.items.push_back(special_token(layout, layout.E()));
  }
  out.items.push_back(ctx.current.speaker);
  append_text(out, ctx.current.text, bpe, layout);
  return out;
}

TokenStream build_training_stream(const DialogueContext& ctx,
                                  const TargetTurn& target,
                                  const BpeModel& bpe,
                                  const VocabLayout& layout) {
  TokenStream out = build_context(ctx, bpe, layout);
  out.items.push_back(emotion_to_token(layout, target.emotion));
  for (const Token& t : interleave(layout, target.face, target.speech))
    out.items.push_back(t);
  out.items.push_back(special_token(layout, layout.D()));
  return out;
}

std::pair<DialogueContext, TargetTurn> split_last_turn(
    const DialogueContext& ctx) {
  if (ctx.history.empty())
    throw ValidationError("split_last_turn: no history turn to split");
  const DialogueTurn& last = ctx.history.back();
  DialogueContext head;
  head.history.assign(ctx.history.begin(), ctx.history.end() - 1);
  head.current = CurrentTurn{last.speaker, last.text};
  TargetTurn target{last.emotion, last.face_tokens, last.speech_tokens};
  return {std::move(head), std::move(target)};
}

std::vector<std::string> validate_stream(const TokenStream& stream,
                                         const VocabLayout& layout) {
  std::vector<std::string> diags;
  auto report = [&](std::size_t pos, const std::string& msg) {
    diags.push_back("pos " + std::to_string(pos) + ": " + msg);
  };
  if (stream.items.empty()) {
    diags.push_back("empty stream");
    return diags;
  }

  bool in_span = false;
  bool span_expect_face = true;
  std::size_t span_start = 0;
  bool pending_speech = false;  // face emitted outside a span, speech due

  for (std::size_t i = 0; i < stream.items.size(); ++i) {
    const StreamItem& item = stream.items[i];
    bool is_last = (i + 1 == stream.items.size());

    if (std::holds_alternative<SpeakerSlot>(item)) {
      if (i == 0) report(i, "stream must begin with B");
      try {
        std::get<SpeakerSlot>(item).validate();
      } catch (const ValidationError& e) {
        report(i, e.what());
      }
      if (in_span) report(i, "speaker slot inside span");
      if (pending_speech) {
        report(i, "face token not followed by its speech token");
        pending_speech = false;
      }
      continue;
    }

    const Token& t = std::get<Token>(item);
    TokenKind region;
    try {
      region = kind_of(layout, t.id);
    } catch (const ValidationError&) {
      report(i, "id " + std::to_string(t.id) + " outside vocab");
      continue;
    }
    if (region != t.kind) {
      report(i, std::string("region mismatch: kind ") + kind_name(t.kind) +
                    " but id " + std::to_string(t.id) + " lies in the " +
                    kind_name(region) + " region");
      continue;
    }

    if (i == 0) {
      if (!(t.kind == TokenKind::Special && t.id == layout.B()))
        report(i, "stream must begin with B");
      continue;
    }

    switch (t.kind) {
      case TokenKind::Special:
        if (t.id == layout.B()) {
          report(i, "B only legal at position 0");
        } else if (t.id == layout.S()) {
          if (in_span) {
            report(i, "nested span");
          } else {
            if (pending_speech) {
              report(i, "face token not followed by its speech token");
              pending_speech = false;
            }
            in_span = true;
            span_expect_face = true;
            span_start = i;
          }
        } else if (t.id == layout.E()) {
          if (!in_span) {
            report(i, "E without matching S");
          } else {
            if (!span_expect_face)
              report(i, "span closed between a face token and its speech token");
            in_span = false;
          }
        } else if (t.id == layout.D()) {
          if (in_span) report(i, "D inside span");
          if (pending_speech) {
            report(i, "D between a face token and its speech token");
            pending_speech = false;
          }
          if (!is_last) report(i, "D must terminate the stream");
        }
        break;
      case TokenKind::Face:
        if (in_span) {
          if (!span_expect_face) report(i, "expected a speech token in span");
          span_expect_face = false;
        } else {
          if (pending_speech)
            report(i, "consecutive face tokens without a speech token");
          pending_speech = true;
        }
        break;
      case TokenKind::Speech:
        if (in_span) {
          if (span_expect_face) report(i, "expected a face token in span");
          span_expect_face = true;
        } else {
          if (!pending_speech)
            report(i, "speech token without a preceding face token");
          pending_speech = false;
        }
        break;
      case TokenKind::Text:
      case TokenKind::Emotion:
        if (in_span)
          report(i, std::string(kind_name(t.kind)) + " token inside span");
        if (pending_speech) {
          report(i, "face token not followed by its speech token");
          pending_speech = false;
        }
        break;
    }
  }
  if (in_span) report(span_start, "unclosed span");
  if (pending_speech)
    report(stream.items.size() - 1,
           "stream ends between a face token and its speech token");
  return diags;
}

std::string stream_to_jsonl(const TokenStream& stream,
                            const VocabLayout& layout) {
  std::ostringstream os;
  for (const StreamItem& item : stream.items) {
    nlohmann::ordered_json j;
    if (const Token* t = std::get_if<Token>(&item)) {
      (void)kind_of(layout, t->id);
      j["t"] = "tok";
      j["kind"] = kind_name(t->kind);
      j["id"] = t->id;
    } else {
      const SpeakerSlot& s = std::get<SpeakerSlot>(item);
      j["t"] = "spk";
      auto arr = nlohmann::ordered_json::array();
      for (Eigen::Index k = 0; k < s.embedding.size(); ++k)
        arr.push_back(s.embedding[k]);
      j["v"] = arr;
    }
    os << j.dump() << "\n";
  }
  return os.str();
}

TokenStream stream_from_jsonl(const std::string& text,
                              const VocabLayout& layout) {
  TokenStream out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("stream line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    std::string t = j.value("t", std::string());
    if (t == "tok") {
      if (!j.contains("kind") || !j.contains("id") ||
          !j["id"].is_number_integer())
        throw FormatError("stream line " + std::to_string(lineno) +
                          ": token needs kind and integer id");
      int id = j["id"].get<int>();
      TokenKind region;
      try {
        region = kind_of(layout, id);
      } catch (const ValidationError& e) {
        throw FormatError("stream line " + std::to_string(lineno) + ": " +
                          e.what());
      }
      if (j["kind"].get<std::string>() != kind_name(region))
        throw FormatError("stream line " + std::to_string(lineno) +
                          ": region mismatch, id " + std::to_string(id) +
                          " lies in the " + kind_name(region) + " region");
      out.items.push_back(Token{region, id});
    } else if (t == "spk") {
      if (!j.contains("v") || !j["v"].is_array())
        throw FormatError("stream line " + std::to_string(lineno) +
                          ": speaker slot needs an array v");
      SpeakerSlot s;
      s.embedding.resize(static_cast<Eigen::Index>(j["v"].size()));
      for (std::size_t k = 0; k < j["v"].size(); ++k)
        s.embedding[static_cast<Eigen::Index>(k)] = j["v"][k].get<double>();
      try {
        s.validate();
      } catch (const ValidationError& e) {
        throw FormatError("stream line " + std::to_string(lineno) + ": " +
                          e.what());
      }
      out.items.push_back(std::move(s));
    } else {
      throw FormatError("stream line " + std::to_string(lineno) +
                        ": unknown item type '" + t + "'");
    }
  }
  return out;
}

namespace {
nlohmann::ordered_json speaker_json(const SpeakerSlot& s) {
  auto arr = nlohmann::ordered_json::array();
  for (Eigen::Index k = 0; k < s.embedding.size(); ++k)
    arr.push_back(s.embedding[k]);
  return {{"embedding", arr}};
}

SpeakerSlot speaker_from_json(const nlohmann::json& j) {
  if (!j.contains("embedding") || !j["embedding"].is_array())
    throw FormatError("dialogue: speaker needs an embedding array");
  SpeakerSlot s;
  s.embedding.resize(static_cast<Eigen::Index>(j["embedding"].size()));
  for (std::size_t k = 0; k < j["embedding"].size(); ++k)
    s.embedding[static_cast<Eigen::Index>(k)] = j["embedding"][k].get<double>();
  return s;
}
}  // namespace

std::string dialogue_to_json(const DialogueContext& ctx) {
  nlohmann::ordered_json j;
  auto hist = nlohmann::ordered_json::array();
  for (const DialogueTurn& t : ctx.history) {
    hist.push_back({{"speaker", speaker_json(t.speaker)},
                    {"text", t.text},
                    {"speech_tokens", t.speech_tokens},
                    {"face_tokens", t.face_tokens},
                    {"emotion", t.emotion}});
  }
  j["history"] = hist;
  j["current"] = {{"speaker", speaker_json(ctx.current.speaker)},
                  {"text", ctx.current.text}};
  return j.dump();
}

DialogueContext dialogue_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dialogue: bad JSON: ") + e.what());
  }
  DialogueContext ctx;
  if (!j.contains("history") || !j["history"].is_array() ||
      !j.contains("current"))
    throw FormatError("dialogue: needs history array and current turn");
  for (const auto& h : j["history"]) {
    DialogueTurn turn;
    turn.speaker = speaker_from_json(h.at("speaker"));
    turn.text = h.at("text").get<std::string>();
    turn.speech_tokens = h.at("speech_tokens").get<std::vector<int>>();
    turn.face_tokens = h.at("face_tokens").get<std::vector<int>>();
    turn.emotion = h.at("emotion").get<std::string>();
    ctx.history.push_back(std::move(turn));
  }
  ctx.current.speaker = speaker_from_json(j["current"].at("speaker"));
  ctx.current.text = j["current"].at("text").get<std::string>();
  try {
    ctx.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("dialogue: ") + e.what());
  }
  return ctx;
}

}  // namespace avtok
