#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpfl/transformer.hpp"

namespace dpfl {

enum class Label : std::uint8_t { kNegative = 0, kNeutral = 1, kPositive = 2 };
inline constexpr std::size_t kLabelCount = 3;

std::string_view label_name(Label label);
// Trims surrounding whitespace and lowercases before matching.
std::optional<Label> parse_label(std::string_view text);

struct SentimentRecord {
  std::string instruction;
  std::string input;
  Label output = Label::kNeutral;
  friend bool operator==(const SentimentRecord&, const SentimentRecord&) = default;
};

inline constexpr std::string_view kSentimentInstruction =
    "What is the sentiment of this news? Please choose an answer from "
    "{negative/neutral/positive}";

// Byte-level vocabulary: PAD=0, BOS=1, EOS=2, SEP=3, byte b -> b + 4.
class Tokenizer {
 public:
  static std::vector<int> encode(std::string_view text);
  // Special tokens are dropped.
  static std::string decode(std::span<const int> ids);
  static constexpr std::size_t vocab_size() { return 260; }
};

// One JSON object per line with string fields instruction, input, output.
// Blank lines are skipped. Throws SchemaError / LabelError with the 1-based
// line number, IoError when the file cannot be read.
std::vector<SentimentRecord> load_jsonl(const std::string& path);
std::vector<SentimentRecord> parse_jsonl(std::string_view text);
void write_jsonl(const std::string& path, const std::vector<SentimentRecord>& records);
std::string to_jsonl(const std::vector<SentimentRecord>& records);

struct RenderedPrompt {
  std::string prompt;
  std::string answer;
};

// prompt = "Instruction: {instruction}\nInput: {input}\nAnswer: ", answer = label.
RenderedPrompt render_prompt(const SentimentRecord& record);

// Room kept after the prompt for the answer and EOS: the longest label plus
// EOS. Truncating every prompt to the same budget keeps the prompt window
// independent of the answer, which would otherwise leak through its length.
inline constexpr std::size_t kAnswerReserve = 9;

// [BOS] + bytes(prompt) + bytes(answer) + [EOS], mask set on the answer bytes
// and EOS. The prompt is cut from the left to at most
// max_seq_len - 1 - max(reserve, |answer| + 1) bytes.
TokenizedExample tokenize_example(std::string_view prompt, std::string_view answer,
                                  std::size_t max_seq_len,
                                  std::size_t reserve = kAnswerReserve);

// Prompt ids for generation ([BOS] + bytes(prompt)), left-truncated so that
// `reserve` tokens still fit.
std::vector<int> prompt_ids(std::string_view prompt, std::size_t max_seq_len,
                            std::size_t reserve = kAnswerReserve);

// Balanced corpus of templated headlines with class-indicative phrases and
// neutral distractor clauses; deterministic per seed. Records are shuffled.
std::vector<SentimentRecord> synth_dataset(std::size_t n_per_class, std::uint64_t seed);

// Same headlines with labels drawn uniformly at random, independent of the
// text. Carries the answer format but no sentiment signal.
std::vector<SentimentRecord> synth_format_corpus(std::size_t n, std::uint64_t seed);

inline constexpr std::string_view kDirectionInstruction =
    "What is the price direction after this news? Please choose an answer from "
    "{up/down/flat}";

// Public corpus of a related task in the same template: the same headlines
// with the price direction (up/down/flat) the headline implies. Carries no
// sentiment label words; used for non-private base pretraining.
std::vector<RenderedPrompt> synth_public_corpus(std::size_t n, std::uint64_t seed);

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Assigns index i to test when hash(i, seed) falls below test_fraction.
DataSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

}  // namespace dpfl
