// Drives the installed binary end to end over a scaled-down config.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "consis/dataset.hpp"
#include "consis/serialize.hpp"
#include "testutil.hpp"

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CONSIS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string tiny_config_json() {
  return R"({
    "seed": 7,
    "dataset": {"families": 3, "classes_per_family": 2, "image_size": 16,
                 "train_per_class": 60, "val_per_class": 10, "dissect_per_class": 5},
    "train": {"epochs": 2, "batch_size": 32, "learning_rate": 0.05,
               "base_channels": 8, "mode": "normal", "seed": 5},
    "least_likely": {"epsilon": 0.05, "steps": 3, "step_size": 0.0125},
    "gallery_neurons": 2, "gallery_topk": 4
  })";
}

TEST(Cli, HelpExitsZeroUnknownFlagExitsTwo) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("analyze --help"), 0);
  EXPECT_EQ(run_cli("--definitely-not-a-flag"), 2);
  EXPECT_EQ(run_cli("analyze --no-such-flag x"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli(""), 2);  // a subcommand is required
}

TEST(Cli, MissingInputsExitOne) {
  EXPECT_EQ(run_cli("analyze --store /nonexistent.cas --taxonomy /nonexistent.json"),
            1);
  EXPECT_EQ(run_cli("train --dataset /nonexistent --out /tmp/x.ckpt"), 1);
}

TEST(Cli, FullStageFlowProducesArtifacts) {
  testutil::TempDir tmp("cli_flow");
  const std::string dir = tmp.dir();
  consis::write_text_file(tmp.file("config.json"), tiny_config_json());

  ASSERT_EQ(run_cli("generate --out " + dir + "/data --seed 7 --config " +
                    tmp.file("config.json")),
            0);
  ASSERT_TRUE(std::filesystem::exists(dir + "/data/train.cds"));
  ASSERT_TRUE(std::filesystem::exists(dir + "/data/taxonomy.json"));

  ASSERT_EQ(run_cli("train --config " + tmp.file("config.json") + " --dataset " +
                    dir + "/data --out " + dir + "/model.ckpt"),
            0);
  ASSERT_TRUE(std::filesystem::exists(dir + "/model.ckpt"));

  ASSERT_EQ(run_cli("attack --mode fgsm --epsilon 0.0157 --checkpoint " + dir +
                    "/model.ckpt --dataset " + dir + "/data/val.cds --out " + dir +
                    "/adv_val.cds"),
            0);
  const auto adv = consis::load_dataset(dir + "/adv_val.cds");
  EXPECT_EQ(adv.kind, "adversarial");
  EXPECT_EQ(adv.provenance.at("mode"), "fgsm");

  ASSERT_EQ(run_cli("attack --mode least-likely --epsilon 0.05 --steps 3 "
                    "--step-size 0.0125 --checkpoint " +
                    dir + "/model.ckpt --dataset " + dir + "/data/dissect.cds --out " +
                    dir + "/adv_dissect.cds"),
            0);

  ASSERT_EQ(run_cli("record --checkpoint " + dir + "/model.ckpt --dataset " + dir +
                    "/data/val.cds --adv " + dir + "/adv_val.cds --tap conv3 --out " +
                    dir + "/store.cas"),
            0);

  ASSERT_EQ(run_cli("analyze --store " + dir + "/store.cas --taxonomy " + dir +
                    "/data/taxonomy.json --sigma 2.0 --out " + dir + "/consis.csv"),
            0);
  const std::string csv = consis::read_text_file(dir + "/consis.csv");
  EXPECT_NE(csv.find("neuron,consis"), std::string::npos);

  ASSERT_EQ(run_cli("dissect --checkpoint " + dir + "/model.ckpt --dataset " + dir +
                    "/data/dissect.cds --adv " + dir + "/adv_dissect.cds --out " +
                    dir + "/dissect.txt"),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir + "/dissect.txt"));

  ASSERT_EQ(run_cli("figures --store " + dir + "/store.cas --taxonomy " + dir +
                    "/data/taxonomy.json --dataset " + dir + "/data/val.cds --adv " +
                    dir + "/adv_val.cds --out " + dir + "/figs"),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir + "/figs/figures/hist_conv3.png"));
}

TEST(Cli, ReproduceWritesManifest) {
  testutil::TempDir tmp("cli_repro");
  consis::write_text_file(tmp.file("config.json"), tiny_config_json());
  ASSERT_EQ(run_cli("reproduce --seed 7 --out " + tmp.dir() + "/run --config " +
                    tmp.file("config.json")),
            0);
  EXPECT_TRUE(std::filesystem::exists(tmp.dir() + "/run/manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(tmp.dir() + "/run/summary.csv"));
}

}  // namespace
