#include "dpfl/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dpfl/rng.hpp"

namespace dpfl {

std::string_view label_name(Label label) {
  switch (label) {
    case Label::kNegative:
      return "negative";
    case Label::kNeutral:
      return "neutral";
    case Label::kPositive:
      return "positive";
  }
  return "neutral";
}

std::optional<Label> parse_label(std::string_view text) {
  auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return std::nullopt;
  auto e = text.find_last_not_of(" \t\r\n");
  std::string t(text.substr(b, e - b + 1));
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Label l : {Label::kNegative, Label::kNeutral, Label::kPositive})
    if (t == label_name(l)) return l;
  return std::nullopt;
}

std::vector<int> Tokenizer::encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c) + kByteOffset);
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id >= kByteOffset && id < kByteOffset + 256)
      out.push_back(static_cast<char>(static_cast<unsigned char>(id - kByteOffset)));
  }
  return out;
}

std::vector<SentimentRecord> parse_jsonl(std::string_view text) {
  std::vector<SentimentRecord> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw SchemaError(line_no, "expected a JSON object");
    SentimentRecord rec;
    for (const char* key : {"instruction", "input", "output"}) {
      auto it = obj.find(key);
      if (it == obj.end()) throw SchemaError(line_no, std::string("missing key \"") + key + "\"");
      if (!it->is_string())
        throw SchemaError(line_no, std::string("key \"") + key + "\" is not a string");
    }
    rec.instruction = obj["instruction"].get<std::string>();
    rec.input = obj["input"].get<std::string>();
    const std::string raw = obj["output"].get<std::string>();
    auto label = parse_label(raw);
    if (!label) throw LabelError(line_no, raw);
    rec.output = *label;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SentimentRecord> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str());
}

std::string to_jsonl(const std::vector<SentimentRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json obj;
    obj["instruction"] = r.instruction;
    obj["input"] = r.input;
    obj["output"] = std::string(label_name(r.output));
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<SentimentRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << to_jsonl(records);
  if (!out) throw IoError("write failed for '" + path + "'");
}

RenderedPrompt render_prompt(const SentimentRecord& record) {
  RenderedPrompt r;
  r.prompt = "Instruction: " + record.instruction + "\nInput: " + record.input + "\nAnswer: ";
  r.answer = std::string(label_name(record.output));
  return r;
}

TokenizedExample tokenize_example(std::string_view prompt, std::string_view answer,
                                  std::size_t max_seq_len, std::size_t reserve) {
  if (answer.size() + 2 > max_seq_len) {
    throw InputError("answer of " + std::to_string(answer.size()) +
                     " bytes does not fit max_seq_len " + std::to_string(max_seq_len));
  }
  const std::size_t tail = std::min(max_seq_len - 1, std::max(reserve, answer.size() + 1));
  const std::size_t prompt_room = max_seq_len - 1 - tail;
  if (prompt.size() > prompt_room) prompt = prompt.substr(prompt.size() - prompt_room);
  TokenizedExample ex;
  ex.token_ids.reserve(prompt.size() + answer.size() + 2);
  ex.token_ids.push_back(kBosId);
  for (int id : Tokenizer::encode(prompt)) ex.token_ids.push_back(id);
  ex.loss_mask.assign(ex.token_ids.size(), 0);
  for (int id : Tokenizer::encode(answer)) {
    ex.token_ids.push_back(id);
    ex.loss_mask.push_back(1);
  }
  ex.token_ids.push_back(kEosId);
  ex.loss_mask.push_back(1);
  return ex;
}

std::vector<int> prompt_ids(std::string_view prompt, std::size_t max_seq_len,
                            std::size_t reserve) {
  if (reserve + 2 > max_seq_len) throw InputError("no room for a prompt");
  const std::size_t room = max_seq_len - reserve - 1;
  if (prompt.size() > room) prompt = prompt.substr(prompt.size() - room);
  std::vector<int> ids{kBosId};
  for (int id : Tokenizer::encode(prompt)) ids.push_back(id);
  return ids;
}

namespace {

constexpr std::array<std::string_view, 12> kCompanies = {
    "Acme Corp",    "Nordbank",     "Helix Energy", "Orion Retail",
    "Vega Motors",  "Kappa Foods",  "Zenith Telecom", "Atlas Mining",
    "Lumen Software", "Cobalt Airlines", "Polar Pharma", "Summit Steel"};

constexpr std::array<std::string_view, 8> kPositive = {
    "profits surged",       "shares soared",          "revenue beat forecasts",
    "stock rallied to a record high", "earnings jumped", "margins improved sharply",
    "raised its full-year outlook", "won a major new contract"};

constexpr std::array<std::string_view, 8> kNegative = {
    "profits collapsed",     "shares plunged",      "revenue missed forecasts",
    "stock tumbled to a record low", "earnings slumped", "posted heavy losses",
    "cut its full-year outlook", "was hit by a costly recall"};

constexpr std::array<std::string_view, 8> kNeutral = {
    "kept its outlook unchanged", "shares were flat",   "held its annual meeting",
    "confirmed its meeting date", "named a new auditor", "trading was steady",
    "filed a routine report",     "moved its head office"};

constexpr std::array<std::string_view, 6> kWhen = {
    "in the third quarter", "on Tuesday", "this week", "in early trading",
    "after the report", "last month"};

constexpr std::array<std::string_view, 6> kDistractors = {
    "analysts said",         "according to a filing", "the company said",
    "as markets opened",     "sources noted",         "a spokesperson said"};

template <std::size_t N>
std::string_view pick(RngStream& rng, const std::array<std::string_view, N>& items) {
  return items[rng.below(N)];
}

std::string headline(RngStream& rng, Label label) {
  std::string_view phrase = label == Label::kPositive   ? pick(rng, kPositive)
                            : label == Label::kNegative ? pick(rng, kNegative)
                                                        : pick(rng, kNeutral);
  std::string s(pick(rng, kCompanies));
  s += ' ';
  s += phrase;
  s += ' ';
  s += pick(rng, kWhen);
  s += ", ";
  s += pick(rng, kDistractors);
  s += '.';
  return s;
}

template <typename V>
void shuffle(V& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<SentimentRecord> synth_dataset(std::size_t n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw ParameterError("n_per_class must be at least 1");
  RngStream rng(seed, static_cast<std::uint64_t>(Stream::kData));
  std::vector<SentimentRecord> out;
  out.reserve(3 * n_per_class);
  for (Label l : {Label::kNegative, Label::kNeutral, Label::kPositive}) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      out.push_back({std::string(kSentimentInstruction), headline(rng, l), l});
    }
  }
  shuffle(out, rng);
  return out;
}

std::vector<SentimentRecord> synth_format_corpus(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, static_cast<std::uint64_t>(Stream::kData) + 100);
  std::vector<SentimentRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Label shown = static_cast<Label>(rng.below(kLabelCount));
    Label answer = static_cast<Label>(rng.below(kLabelCount));
    out.push_back({std::string(kSentimentInstruction), headline(rng, shown), answer});
  }
  return out;
}

std::vector<RenderedPrompt> synth_public_corpus(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, static_cast<std::uint64_t>(Stream::kData) + 200);
  std::vector<RenderedPrompt> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Label tone = static_cast<Label>(rng.below(kLabelCount));
    RenderedPrompt r;
    r.prompt = "Instruction: " + std::string(kDirectionInstruction) +
               "\nInput: " + headline(rng, tone) + "\nAnswer: ";
    r.answer = tone == Label::kPositive ? "up" : tone == Label::kNegative ? "down" : "flat";
    out.push_back(std::move(r));
  }
  return out;
}

DataSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0))
    throw ParameterError("test fraction must lie in [0, 1]");
  DataSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    double u = static_cast<double>(splitmix64(splitmix64(seed) ^ (i * 0x9E3779B97F4A7C15ULL)) >> 11) *
               0x1.0p-53;
    (u < test_fraction ? s.test : s.train).push_back(i);
  }
  return s;
}

}  // namespace dpfl
