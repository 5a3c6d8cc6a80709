#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "dpfl/checkpoint.hpp"
#include "dpfl/errors.hpp"
#include "dpfl/experiment.hpp"
#include "test_util.hpp"

namespace dpfl {
namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("dpfl_test_" + name)).string();
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(T)) == 0;
}

TEST(Checkpoint, SerializeRoundTripIsBitExact) {
  RngStream rng(1, 0);
  auto f = testing::random_tensor<float>(rng, {3, 5});
  f[0] = -0.0f;
  f[1] = std::numeric_limits<float>::denorm_min();
  auto d = testing::random_tensor<double>(rng, {7});
  d[2] = std::numeric_limits<double>::infinity();
  Checkpoint c;
  c.tensors.push_back(CheckpointTensor::from("f", f));
  c.tensors.push_back(CheckpointTensor::from("d", d));
  c.tensors.push_back(CheckpointTensor::from("s", Tensor<double>::scalar(3.5)));
  c.metadata_json = R"({"k": 1})";
  const auto bytes = serialize_checkpoint(c);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DPFL");
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.metadata_json, c.metadata_json);
  EXPECT_TRUE(bit_equal(back.find("f")->as<float>(), f));
  EXPECT_TRUE(bit_equal(back.find("d")->as<double>(), d));
  EXPECT_EQ(back.find("s")->as<double>().item(), 3.5);
  EXPECT_EQ(back.find("missing"), nullptr);
  EXPECT_THROW(back.find("f")->as<double>(), CheckpointError);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptInputIsDiagnosed) {
  Checkpoint c;
  c.tensors.push_back(CheckpointTensor::from("x", Tensor<float>::vector({1, 2, 3})));
  auto bytes = serialize_checkpoint(c);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    deserialize_checkpoint(bad_magic);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 2);
  }

  auto bad_version = bytes;
  bad_version[4] = 99;
  try {
    deserialize_checkpoint(bad_version);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
  }

  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut)),
                 CheckpointError)
        << cut;
  }
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.dpfl"), IoError);
}

class RunTest : public ::testing::Test {
 protected:
  void SetUp() override {
    config.model = testing::micro_config(2, 1, 1);
    config.model.max_seq_len = 48;
    config.lora = LoraConfig{2, 4.0, {"wq", "wv"}};
    config.sigma = 1.2;
    config.clip = 0.5;
    config.lot_size = 6;
    config.microbatch = 4;
    config.steps = 4;
    config.learning_rate = 0.5;
    config.pretrain_steps = 0;
    records = synth_dataset(8, 4);
    base = build_base(config);
  }
  RunConfig config;
  std::vector<SentimentRecord> records;
  ModelWeights<float> base;
};

TEST_F(RunTest, SavedModelReloadsBitExactWithLedgerEpsilon) {
  const auto result = run_training(config, base, records);
  const auto ckpt = make_checkpoint(config, base, result, records.size());
  const auto path = temp_path("roundtrip.dpfl");
  save_checkpoint(path, ckpt);
  const auto loaded = load_model(path);
  fs::remove(path);

  auto base_named = base.named();
  auto loaded_named = loaded.weights.named();
  ASSERT_EQ(base_named.size(), loaded_named.size());
  for (std::size_t i = 0; i < base_named.size(); ++i) {
    EXPECT_EQ(base_named[i].first, loaded_named[i].first);
    EXPECT_TRUE(bit_equal(*base_named[i].second, *loaded_named[i].second)) << base_named[i].first;
  }
  auto ad_named = result.adapters.named();
  auto loaded_ad = loaded.adapters.named();
  ASSERT_EQ(ad_named.size(), loaded_ad.size());
  for (std::size_t i = 0; i < ad_named.size(); ++i) {
    EXPECT_EQ(ad_named[i].first, loaded_ad[i].first);
    EXPECT_TRUE(bit_equal(*ad_named[i].second, *loaded_ad[i].second)) << ad_named[i].first;
  }
  for (const auto& [name, ad] : loaded.adapters) EXPECT_EQ(ad.alpha, 4.0);

  ASSERT_TRUE(loaded.epsilon.has_value());
  EXPECT_EQ(*loaded.epsilon, result.train.epsilon);
  const double q = config.lot_size / static_cast<double>(records.size());
  EXPECT_NEAR(*loaded.epsilon,
              epsilon_spent(q, 1.2, config.steps, config.accountant_config(records.size())).epsilon,
              1e-12);
  EXPECT_EQ(loaded.sigma, std::optional<double>(1.2));

  const auto meta = nlohmann::json::parse(ckpt.metadata_json);
  EXPECT_EQ(meta["privacy"]["delta"].get<double>(), 1.0 / records.size());
  EXPECT_EQ(meta["privacy"]["epsilon"].get<double>(), result.train.epsilon);
}

TEST_F(RunTest, CheckpointBytesAreDeterministic) {
  const auto a = serialize_checkpoint(
      make_checkpoint(config, base, run_training(config, base, records), records.size()));
  const auto b = serialize_checkpoint(
      make_checkpoint(config, base, run_training(config, base, records), records.size()));
  EXPECT_EQ(a, b);
}

TEST_F(RunTest, MergedCheckpointCarriesMergedMatrices) {
  config.merged = true;
  const auto result = run_training(config, base, records);
  const auto ckpt = make_checkpoint(config, base, result, records.size());
  const auto* m = ckpt.find("merged/layers.0.wq");
  ASSERT_NE(m, nullptr);
  const auto expect = merged_weights(base, result.adapters);
  EXPECT_TRUE(bit_equal(m->as<float>(), expect.layers[0].wq));
}

TEST(Config, ParsesKeysCommentsAndOverrides) {
  const auto c = parse_config(
      "# comment\n"
      "epsilon = 4   # trailing\n"
      "\n"
      "lora_targets = wq, wk ,wv\n"
      "delta = auto\n"
      "accountant = closed_form\n"
      "steps=12\n");
  EXPECT_EQ(c.epsilon, std::optional<double>(4.0));
  EXPECT_EQ(c.lora.targets, (std::vector<std::string>{"wq", "wk", "wv"}));
  EXPECT_FALSE(c.delta.has_value());
  EXPECT_EQ(c.resolved_delta(600), 1.0 / 600);
  EXPECT_EQ(c.accountant, AccountantMode::kClosedForm);
  EXPECT_EQ(c.steps, 12u);
  c.validate();
}

TEST(Config, ErrorsNameTheKeyOrLine) {
  try {
    parse_config("epsilom = 8\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epsilom"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 1);
  }
  try {
    parse_config("steps = many\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("steps"), std::string::npos);
  }
  try {
    parse_config("clip 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  EXPECT_THROW(load_config("/nonexistent/x.conf"), IoError);
}

TEST(Config, ExactlyOneOfEpsilonAndSigma) {
  RunConfig c;
  EXPECT_THROW(c.validate(), ConfigError);
  c.validate(false);
  c.epsilon = 8.0;
  c.validate();
  c.sigma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.set("epsilon", "none");
  c.validate();
}

TEST(Config, DropOverlapRemovesSharedInputs) {
  const std::vector<SentimentRecord> train{{"i", "a", Label::kNeutral}, {"i", "b", Label::kNeutral}};
  const std::vector<SentimentRecord> test{{"i", "b", Label::kPositive}, {"i", "c", Label::kNeutral}};
  const auto kept = drop_overlap(test, train);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].input, "c");
}

TEST(Sweep, CsvLayout) {
  MetricsReport r;
  r.accuracy = 0.5;
  r.f1_macro = 0.25;
  r.f1_micro = 0.5;
  r.f1_weighted = 0.125;
  std::vector<SweepRow> rows{{2.0, 3.5, r, ""}, {4.0, std::nullopt, std::nullopt, "failed"}};
  EXPECT_EQ(sweep_to_csv(rows),
            "epsilon,sigma,accuracy,f1_macro,f1_micro,f1_weighted\n"
            "2,3.5,0.5,0.25,0.5,0.125\n"
            "4,,,,,\n");
}

TEST(Sweep, NeedsAtLeastTwoEpsilons) {
  RunConfig c;
  c.model = testing::micro_config();
  c.pretrain_steps = 0;
  const auto base = build_base(c);
  const auto recs = synth_dataset(2, 1);
  EXPECT_THROW(run_sweep(c, base, recs, recs, {8.0}), UsageError);
}

}  // namespace
}  // namespace dpfl
