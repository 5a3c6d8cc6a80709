#include "dpfl/experiment.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dpfl/errors.hpp"
#include "dpfl/parallel.hpp"
#include "dpfl/pretrain.hpp"
#include "dpfl/rng.hpp"

namespace dpfl {

namespace {

using nlohmann::ordered_json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (value.empty() || end != begin + value.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(begin, &end, 10);
  if (value.empty() || value[0] == '-' || end != begin + value.size() || errno == ERANGE) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

ordered_json model_json(const ModelConfig& m) {
  return ordered_json{{"vocab_size", m.vocab_size},   {"d_model", m.d_model},
                      {"n_layers", m.n_layers},       {"n_heads", m.n_heads},
                      {"n_kv_groups", m.n_kv_groups}, {"ffn_hidden", m.ffn_hidden},
                      {"max_seq_len", m.max_seq_len}, {"rope_base", m.rope_base},
                      {"rmsnorm_eps", m.rmsnorm_eps}};
}

ModelConfig model_from_json(const ordered_json& j) {
  ModelConfig m;
  m.vocab_size = j.at("vocab_size").get<std::size_t>();
  m.d_model = j.at("d_model").get<std::size_t>();
  m.n_layers = j.at("n_layers").get<std::size_t>();
  m.n_heads = j.at("n_heads").get<std::size_t>();
  m.n_kv_groups = j.at("n_kv_groups").get<std::size_t>();
  m.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
  m.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  m.rope_base = j.at("rope_base").get<double>();
  m.rmsnorm_eps = j.at("rmsnorm_eps").get<double>();
  return m;
}

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "d_model") model.d_model = to_uint(key, value);
  else if (key == "n_layers") model.n_layers = to_uint(key, value);
  else if (key == "n_heads") model.n_heads = to_uint(key, value);
  else if (key == "n_kv_groups") model.n_kv_groups = to_uint(key, value);
  else if (key == "ffn_hidden") model.ffn_hidden = to_uint(key, value);
  else if (key == "max_seq_len") model.max_seq_len = to_uint(key, value);
  else if (key == "rope_base") model.rope_base = to_double(key, value);
  else if (key == "rmsnorm_eps") model.rmsnorm_eps = to_double(key, value);
  else if (key == "lora_rank") lora.rank = to_uint(key, value);
  else if (key == "lora_alpha") lora.alpha = to_double(key, value);
  else if (key == "lora_targets") {
    lora.targets = split_list(value);
    if (lora.targets.empty()) throw ConfigError("key 'lora_targets': empty target list");
  } else if (key == "epsilon") {
    if (value.empty() || value == "none") epsilon.reset();
    else epsilon = to_double(key, value);
  } else if (key == "sigma") {
    if (value.empty() || value == "none") sigma.reset();
    else sigma = to_double(key, value);
  } else if (key == "clip") clip = to_double(key, value);
  else if (key == "lot_size") lot_size = to_double(key, value);
  else if (key == "microbatch") microbatch = to_uint(key, value);
  else if (key == "steps") steps = to_uint(key, value);
  else if (key == "learning_rate") learning_rate = to_double(key, value);
  else if (key == "delta") {
    if (value == "auto") delta.reset();
    else delta = to_double(key, value);
  } else if (key == "accountant") {
    try {
      accountant = parse_accountant_mode(value);
    } catch (const Error&) {
      throw ConfigError("key 'accountant': expected numerical or closed_form, got '" + value + "'");
    }
  } else if (key == "epsilon_ceiling") {
    if (value.empty() || value == "none") epsilon_ceiling.reset();
    else epsilon_ceiling = to_double(key, value);
  } else if (key == "seed") seed = to_uint(key, value);
  else if (key == "data") data = value;
  else if (key == "test_data") test_data = value;
  else if (key == "out") out = value;
  else if (key == "base") base = value;
  else if (key == "base_seed") base_seed = to_uint(key, value);
  else if (key == "pretrain_steps") pretrain_steps = to_uint(key, value);
  else if (key == "pretrain_records") pretrain_records = to_uint(key, value);
  else if (key == "merged") merged = to_bool(key, value);
  else throw ConfigError("unknown key '" + key + "'");
}

void RunConfig::validate(bool need_privacy) const {
  try {
    model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + (e.what() + 14));
  }
  if (need_privacy && epsilon.has_value() == sigma.has_value()) {
    throw ConfigError("exactly one of 'epsilon' and 'sigma' must be set");
  }
  if (epsilon && !(*epsilon > 0.0)) throw ConfigError("key 'epsilon': must be positive");
  if (sigma && !(*sigma >= 0.0)) throw ConfigError("key 'sigma': must be >= 0");
  if (!(clip > 0.0)) throw ConfigError("key 'clip': must be positive");
  if (!(lot_size > 0.0)) throw ConfigError("key 'lot_size': must be positive");
  if (microbatch == 0) throw ConfigError("key 'microbatch': must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("key 'learning_rate': must be >= 0");
  if (delta && !(*delta > 0.0 && *delta < 1.0)) throw ConfigError("key 'delta': must lie in (0, 1)");
  if (epsilon_ceiling && !(*epsilon_ceiling > 0.0)) {
    throw ConfigError("key 'epsilon_ceiling': must be positive");
  }
  if (lora.rank == 0) throw ConfigError("key 'lora_rank': must be at least 1");
  if (!(lora.alpha > 0.0)) throw ConfigError("key 'lora_alpha': must be positive");
  try {
    resolve_targets(model, lora.targets);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key 'lora_targets': ") + (e.what() + 14));
  }
}

void RunConfig::check_paths() const {
  for (const std::string* p : {&data, &test_data, &base}) {
    if (p->empty()) continue;
    std::ifstream in(*p);
    if (!in) throw IoError("cannot open '" + *p + "'");
  }
}

double RunConfig::resolved_delta(std::size_t dataset_size) const {
  return delta ? *delta : default_delta(dataset_size);
}

AccountantConfig RunConfig::accountant_config(std::size_t dataset_size) const {
  AccountantConfig a;
  a.delta = resolved_delta(dataset_size);
  a.mode = accountant;
  return a;
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["model"] = model_json(model);
  j["lora_rank"] = lora.rank;
  j["lora_alpha"] = lora.alpha;
  j["lora_targets"] = lora.targets;
  j["epsilon"] = optional_json(epsilon);
  j["sigma"] = optional_json(sigma);
  j["clip"] = clip;
  j["lot_size"] = lot_size;
  j["microbatch"] = microbatch;
  j["steps"] = steps;
  j["learning_rate"] = learning_rate;
  j["delta"] = delta ? ordered_json(*delta) : ordered_json("auto");
  j["accountant"] = to_string(accountant);
  j["epsilon_ceiling"] = optional_json(epsilon_ceiling);
  j["seed"] = seed;
  j["data"] = data;
  j["test_data"] = test_data;
  j["base"] = base;
  j["base_seed"] = base_seed;
  j["pretrain_steps"] = pretrain_steps;
  j["pretrain_records"] = pretrain_records;
  j["merged"] = merged;
  return j.dump();
}

RunConfig parse_config(std::string_view text, RunConfig config) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line(text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return config;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::vector<SentimentRecord> drop_overlap(const std::vector<SentimentRecord>& test,
                                          const std::vector<SentimentRecord>& train) {
  std::set<std::string> seen;
  for (const auto& r : train) seen.insert(r.input);
  std::vector<SentimentRecord> out;
  for (const auto& r : test) {
    if (!seen.count(r.input)) out.push_back(r);
  }
  return out;
}

std::vector<TokenizedExample> tokenize_records(const std::vector<SentimentRecord>& records,
                                               std::size_t max_seq_len) {
  std::vector<TokenizedExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto p = render_prompt(r);
    out.push_back(tokenize_example(p.prompt, p.answer, max_seq_len));
  }
  return out;
}

ModelWeights<float> build_base(const RunConfig& config, const ProgressFn& progress) {
  if (!config.base.empty()) {
    LoadedModel loaded = load_model(config.base);
    const ModelConfig& m = loaded.weights.config;
    if (model_json(m) != model_json(config.model)) {
      throw ConfigError("base checkpoint '" + config.base +
                        "' was built with different model hyperparameters");
    }
    return std::move(loaded.weights);
  }
  config.model.validate();
  RngState rng(config.base_seed);
  auto weights = ModelWeights<float>::init(config.model, rng.stream(Stream::kInit));
  if (config.pretrain_steps == 0 || config.pretrain_records == 0) return weights;

  // Interleave the random-label answer-format corpus with the public
  // price-direction corpus, one record of each per pair.
  const auto format = synth_format_corpus(config.pretrain_records, config.base_seed + 1);
  const auto direction = synth_public_corpus(config.pretrain_records, config.base_seed + 2);
  std::vector<TokenizedExample> corpus;
  corpus.reserve(2 * config.pretrain_records);
  for (std::size_t i = 0; i < config.pretrain_records; ++i) {
    const auto p = render_prompt(format[i]);
    corpus.push_back(tokenize_example(p.prompt, p.answer, config.model.max_seq_len));
    corpus.push_back(
        tokenize_example(direction[i].prompt, direction[i].answer, config.model.max_seq_len));
  }
  PretrainParams params;
  params.steps = config.pretrain_steps;
  pretrain(weights, corpus, params, config.base_seed + 3, worker_count(),
           [&](std::size_t step, double loss) {
             if (progress && (step % 100 == 0 || step == params.steps)) {
               progress("pretrain step " + std::to_string(step) + " loss " + fmt(loss));
             }
           });
  return weights;
}

RunResult run_training(const RunConfig& config, const ModelWeights<float>& base,
                       const std::vector<SentimentRecord>& records,
                       const TrainOptions& extra) {
  config.validate(true);
  if (records.empty()) throw InputError("training set is empty");
  const std::size_t n = records.size();
  RunResult r;
  r.delta = config.resolved_delta(n);
  r.q = config.lot_size / static_cast<double>(n);
  const AccountantConfig acct = config.accountant_config(n);
  r.sigma = config.sigma ? *config.sigma : calibrate_sigma(*config.epsilon, r.q, config.steps, acct);

  RngState rng(config.seed);
  r.adapters = attach(base, config.lora, rng.stream(Stream::kInit));

  PrivacyParams params;
  params.clip_norm = config.clip;
  params.noise_scale = r.sigma;
  params.lot_size = config.lot_size;
  params.microbatch_size = config.microbatch;
  params.steps = config.steps;
  params.learning_rate = config.learning_rate;
  params.delta = r.delta;
  params.dataset_size = n;

  TrainOptions options = extra;
  options.accountant = acct;
  if (config.epsilon_ceiling) options.epsilon_ceiling = config.epsilon_ceiling;
  if (options.workers <= 1) options.workers = worker_count();
  r.train = train(base, r.adapters, tokenize_records(records, base.config.max_seq_len), params,
                  config.seed, options);
  return r;
}

std::string run_metadata(const RunConfig& config, const RunResult& result,
                         std::size_t dataset_size) {
  const AccountantConfig acct = config.accountant_config(dataset_size);
  ordered_json j;
  j["kind"] = "dpfl-run";
  j["config"] = ordered_json::parse(config.to_json());
  j["model"] = model_json(config.model);
  ordered_json targets = ordered_json::array();
  for (const auto& t : result.adapters.targets()) targets.push_back(t);
  j["lora"] = {{"rank", config.lora.rank}, {"alpha", config.lora.alpha}, {"targets", targets}};
  j["privacy"] = {{"epsilon", result.train.state.ledger.epsilon(acct).epsilon},
                  {"delta", acct.delta},
                  {"sigma", result.sigma},
                  {"q", result.q},
                  {"clip", config.clip},
                  {"accountant", to_string(acct.mode)},
                  {"dataset_size", dataset_size}};
  j["steps"] = result.train.state.step;
  return j.dump(2);
}

Checkpoint make_checkpoint(const RunConfig& config, const ModelWeights<float>& base,
                           const RunResult& result, std::size_t dataset_size) {
  Checkpoint ckpt;
  add_base(ckpt, base);
  add_adapters(ckpt, result.adapters);
  if (config.merged) add_merged(ckpt, base, result.adapters);
  ckpt.metadata_json = run_metadata(config, result, dataset_size);
  return ckpt;
}

Checkpoint make_base_checkpoint(const ModelWeights<float>& base) {
  Checkpoint ckpt;
  add_base(ckpt, base);
  ordered_json j;
  j["kind"] = "dpfl-base";
  j["model"] = model_json(base.config);
  ckpt.metadata_json = j.dump(2);
  return ckpt;
}

LoadedModel load_model(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  ordered_json meta;
  ModelConfig config;
  double alpha = 0.0;
  try {
    meta = ordered_json::parse(ckpt.metadata_json);
    config = model_from_json(meta.at("model"));
    if (meta.contains("lora")) alpha = meta.at("lora").at("alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": unreadable metadata (" + e.what() + ")");
  }
  LoadedModel m{read_base<float>(ckpt, config), read_adapters<float>(ckpt, alpha), {}, {}};
  if (meta.contains("privacy")) {
    const auto& p = meta["privacy"];
    if (p.contains("epsilon") && p["epsilon"].is_number()) m.epsilon = p["epsilon"].get<double>();
    if (p.contains("sigma") && p["sigma"].is_number()) m.sigma = p["sigma"].get<double>();
  }
  return m;
}

std::vector<SweepRow> run_sweep(const RunConfig& config, const ModelWeights<float>& base,
                                const std::vector<SentimentRecord>& train_records,
                                const std::vector<SentimentRecord>& test,
                                const std::vector<double>& epsilons,
                                const ProgressFn& progress) {
  if (epsilons.size() < 2) throw UsageError("a sweep needs at least two epsilon values");
  std::vector<SweepRow> rows;
  for (double eps : epsilons) {
    SweepRow row;
    row.epsilon = eps;
    try {
      RunConfig c = config;
      c.epsilon = eps;
      c.sigma.reset();
      RunResult r = run_training(c, base, train_records);
      row.sigma = r.sigma;
      row.report = evaluate(base, &r.adapters, test).report;
    } catch (const Error& e) {
      row.error = e.what();
    }
    if (progress) {
      progress("epsilon " + fmt(eps) +
               (row.report ? " accuracy " + fmt(row.report->accuracy) : " failed: " + row.error));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "epsilon,sigma,accuracy,f1_macro,f1_micro,f1_weighted\n";
  for (const auto& r : rows) {
    out += fmt(r.epsilon) + ",";
    if (r.report) {
      out += fmt(*r.sigma) + "," + fmt(r.report->accuracy) + "," + fmt(r.report->f1_macro) +
             "," + fmt(r.report->f1_micro) + "," + fmt(r.report->f1_weighted);
    } else {
      out += ",,,,";
    }
    out += "\n";
  }
  return out;
}

}  // namespace dpfl
