#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include "gazemil/config.hpp"
#include "gazemil/errors.hpp"

namespace gazemil {
namespace {

TEST(RunConfig, DeskAndPaperDefaults) {
  const RunConfig desk = default_run_config(false);
  EXPECT_EQ(desk.data.preset, "desk-dr");
  EXPECT_EQ(desk.train.epochs, 30);
  EXPECT_EQ(desk.train.encoder.preset, EncoderPreset::small_cnn);
  const RunConfig paper = default_run_config(true);
  EXPECT_EQ(paper.data.preset, "paper-dr");
  EXPECT_EQ(paper.train.epochs, 100);
  EXPECT_EQ(paper.train.learning_rate, 1e-4);
  EXPECT_EQ(paper.train.encoder.preset, EncoderPreset::resnet18);
  EXPECT_EQ(desk.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(desk.k_values, (std::vector<int>{10, 20, 30, 40, 50}));
}

TEST(ParseRunConfig, ParsesTypedValues) {
  const RunConfig c = parse_run_config(
      "# comment\n"
      "\n"
      "epochs = 7\n"
      "learning_rate=0.002\n"
      "  dn = off\n"
      "cl = 0\n"
      "ca = false\n"
      "encoder = resnet18\n"
      "small_channels = 4,5,6\n"
      "seeds = 3,9\n"
      "k_values = 4, 8\n"
      "attend_prob = 0.25\n"
      "train_positive = 12\n"
      "data_seed = 99\n",
      default_run_config(false));
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.train.learning_rate, 0.002);
  EXPECT_FALSE(c.train.flags.dn);
  EXPECT_FALSE(c.train.flags.cl);
  EXPECT_FALSE(c.train.flags.ca);
  EXPECT_TRUE(c.train.flags.sa);
  EXPECT_EQ(c.train.encoder.preset, EncoderPreset::resnet18);
  EXPECT_EQ(c.train.encoder.small_channels, (std::vector<int>{4, 5, 6}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 9}));
  EXPECT_EQ(c.k_values, (std::vector<int>{4, 8}));
  EXPECT_EQ(c.data.attend_prob, 0.25);
  EXPECT_EQ(c.data.train.positive, 12);
  EXPECT_EQ(c.data.seed, 99u);
}

TEST(ParseRunConfig, PresetIsAppliedBeforeOtherKeys) {
  const RunConfig c = parse_run_config("window = 120\npreset = paper-amd\n",
                                       default_run_config(false));
  EXPECT_EQ(c.data.preset, "paper-amd");
  EXPECT_EQ(c.data.train.negative, 357);
  EXPECT_EQ(c.data.window, 120);
}

TEST(ParseRunConfig, UnknownKeyNamesTheLine) {
  try {
    parse_run_config("epochs = 3\nlearnign_rate = 0.1\n", default_run_config(false));
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learnign_rate"), std::string::npos) << msg;
  }
}

TEST(ParseRunConfig, MalformedValuesAreRejected) {
  const RunConfig base = default_run_config(false);
  EXPECT_THROW(parse_run_config("epochs = many\n", base), InputError);
  EXPECT_THROW(parse_run_config("epochs = 3x\n", base), InputError);
  EXPECT_THROW(parse_run_config("dn = maybe\n", base), InputError);
  EXPECT_THROW(parse_run_config("just a line\n", base), InputError);
  EXPECT_THROW(parse_run_config("seeds = \n", base), InputError);
  EXPECT_THROW(parse_run_config("encoder = vgg\n", base), InputError);
  EXPECT_THROW(parse_run_config("preset = nowhere\n", base), InputError);
}

TEST(Finalize, CopiesBagGeometryAndValidates) {
  RunConfig c = parse_run_config("window = 100\nbag_size = 6\n", default_run_config(false));
  finalize(c);
  EXPECT_EQ(c.train.window, 100);
  EXPECT_EQ(c.train.bag_size, 6);

  RunConfig bad = parse_run_config("dn = 0\n", default_run_config(false));
  EXPECT_THROW(finalize(bad), InputError);
  bad = parse_run_config("attend_prob = 1.5\n", default_run_config(false));
  EXPECT_THROW(finalize(bad), InputError);
  bad = parse_run_config("epochs = 0\n", default_run_config(false));
  EXPECT_THROW(finalize(bad), InputError);
}

TEST(LoadRunConfig, ReadsFileAndReportsMissing) {
  const auto path = std::filesystem::temp_directory_path() / "gazemil_test.cfg";
  { std::ofstream(path) << "epochs = 4\n"; }
  EXPECT_EQ(load_run_config(path, default_run_config(false)).train.epochs, 4);
  std::filesystem::remove(path);
  EXPECT_THROW(load_run_config(path, default_run_config(false)), IoError);
}

TEST(ConfigKeys, SortedAndComplete) {
  const auto keys = config_keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  for (const char* k : {"epochs", "learning_rate", "alpha", "beta", "gamma", "tau", "lambda_grl",
                        "dn", "cl", "ca", "sa", "da", "window", "bag_size", "preset", "seeds"}) {
    EXPECT_TRUE(std::binary_search(keys.begin(), keys.end(), std::string(k))) << k;
  }
}

}  // namespace
}  // namespace gazemil
