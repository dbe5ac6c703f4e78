#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "cli_support.hpp"

namespace fs = std::filesystem;

namespace {

const char* kTiny = "--set t_max=6 --set hidden=16 --set feat=8 --set batch_source=16 "
                    "--set batch_target=16 --set eval_every=3";

fs::path tiny_data() {
  static const fs::path dir = [] {
    const fs::path d = cli::scratch("cli_data");
    cli::run("synth --classes 3 --dim 6 --per-class 12 --out " + d.string());
    return d;
  }();
  return dir;
}

std::string train_args(const fs::path& out, const std::string& extra = "") {
  return "train --source " + (tiny_data() / "source.csv").string() + " --target " +
         (tiny_data() / "target.csv").string() + " " + kTiny + " --quiet --out " + out.string() + " " + extra;
}

}  // namespace

TEST(CliSynth, WritesDeterministicFiles) {
  const fs::path a = cli::scratch("synth_a"), b = cli::scratch("synth_b");
  ASSERT_EQ(cli::run("synth --per-class 5 --out " + a.string()).code, 0);
  ASSERT_EQ(cli::run("synth --per-class 5 --out " + b.string()).code, 0);
  for (const char* f : {"source.csv", "target.csv", "spec.json"})
    EXPECT_EQ(cli::slurp(a / f), cli::slurp(b / f)) << f;
  const std::string src = cli::slurp(a / "source.csv");
  EXPECT_EQ(std::count(src.begin(), src.end(), '\n'), 2 + 4 * 5);
}

TEST(CliSynth, UsageErrorsExitTwo) {
  EXPECT_EQ(cli::run("synth --classes 1 --out " + cli::scratch("synth_bad").string()).code, 2);
  EXPECT_EQ(cli::run("synth --no-such-flag").code, 2);
  EXPECT_EQ(cli::run("").code, 2);
}

TEST(CliTrain, WritesArtifactsAndIsDeterministic) {
  const fs::path a = cli::scratch("train_a"), b = cli::scratch("train_b");
  ASSERT_EQ(cli::run(train_args(a)).code, 0);
  ASSERT_EQ(cli::run(train_args(b)).code, 0);
  EXPECT_EQ(cli::slurp(a / "metrics.jsonl"), cli::slurp(b / "metrics.jsonl"));
  EXPECT_EQ(cli::slurp(a / "model.bin"), cli::slurp(b / "model.bin"));

  const auto summary = nlohmann::json::parse(cli::slurp(a / "summary.json"));
  EXPECT_EQ(summary["iterations"], 6);
  EXPECT_TRUE(summary["final_target_accuracy"].is_number());
  EXPECT_EQ(summary["config"]["hidden"], 16);

  const std::string metrics = cli::slurp(a / "metrics.jsonl");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 6);
  const auto first = nlohmann::json::parse(metrics.substr(0, metrics.find('\n')));
  for (const char* k : {"iter", "l_cls", "l_da", "l_dmc", "total", "target_acc", "pl_accept"})
    EXPECT_TRUE(first.contains(k)) << k;

  const auto eval = cli::run("eval --model " + (a / "model.bin").string() + " --data " +
                             (tiny_data() / "target.csv").string());
  EXPECT_EQ(eval.code, 0);
  EXPECT_EQ(eval.out.rfind("accuracy ", 0), 0u);
}

TEST(CliTrain, ZeroWeightsMatchSourceOnlyMetrics) {
  const fs::path a = cli::scratch("train_zero"), b = cli::scratch("train_src");
  ASSERT_EQ(cli::run(train_args(a, "--set lambda1=0 --set lambda2=0")).code, 0);
  ASSERT_EQ(cli::run(train_args(b, "--set variant=source_only")).code, 0);
  EXPECT_EQ(cli::slurp(a / "metrics.jsonl"), cli::slurp(b / "metrics.jsonl"));
}

TEST(CliTrain, ErrorExitCodes) {
  const fs::path out = cli::scratch("train_err");
  EXPECT_EQ(cli::run("train --source /nonexistent.csv --target /nonexistent.csv --out " + out.string()).code, 3);
  EXPECT_EQ(cli::run(train_args(out, "--set bogus=1")).code, 2);
  cli::write_text(out / "bad.csv", "label,f0\n0,1\n0,x\n");
  EXPECT_EQ(cli::run("train --source " + (out / "bad.csv").string() + " --target " +
                     (out / "bad.csv").string() + " --out " + out.string())
                .code,
            3);
}

TEST(CliDistance, HandValues) {
  const fs::path d = cli::scratch("distance");
  cli::write_text(d / "a.csv", "label,f0\n0,0\n0,1\n");
  cli::write_text(d / "b.csv", "label,f0\n0,1\n0,2\n");
  cli::write_text(d / "c.csv", "label,f0\n0,1\n0,2\n0,3\n");
  const std::string a = (d / "a.csv").string(), b = (d / "b.csv").string();
  const auto ot = cli::run("distance --a " + a + " --b " + b + " --kind ot");
  EXPECT_EQ(ot.code, 0);
  EXPECT_EQ(ot.out, "ot_squared_cost 1.000000000000\n");

  const std::string src = (tiny_data() / "source.csv").string();
  const auto self = cli::run("distance --a " + src + " --b " + src + " --kind kbw");
  EXPECT_EQ(self.code, 0);
  EXPECT_LT(std::stod(self.out.substr(self.out.find(' '))), 1e-4);
  const auto bures = cli::run("distance --a " + src + " --b " + src + " --kind bures");
  EXPECT_LT(std::stod(bures.out.substr(bures.out.find(' '))), 1e-4);

  EXPECT_EQ(cli::run("distance --a " + a + " --b " + (d / "c.csv").string() + " --kind ot").code, 2);
  EXPECT_EQ(cli::run("distance --a " + a + " --b " + b + " --kind cosine").code, 2);
}

TEST(CliGradcheck, PassesAndDetectsCorruption) {
  const auto ok = cli::run("gradcheck");
  EXPECT_EQ(ok.code, 0);
  EXPECT_NE(ok.out.find("nuclear_norm"), std::string::npos);
  EXPECT_EQ(cli::run("gradcheck --corrupt").code, 1);
}

TEST(CliSuite, WritesTables) {
  const fs::path out = cli::scratch("suite");
  const auto r = cli::run("suite --source " + (tiny_data() / "source.csv").string() + " --target " +
                          (tiny_data() / "target.csv").string() + " " + kTiny +
                          " --variants full,no_da --seeds 0,1 --jobs 2 --out " + out.string());
  ASSERT_EQ(r.code, 0);
  const std::string cells = cli::slurp(out / "cells.csv");
  EXPECT_EQ(cells.rfind("variant,seed,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(cells.begin(), cells.end(), '\n'), 5);
  EXPECT_EQ(cli::slurp(out / "summary.csv").rfind("variant,mean,std\n", 0), 0u);
}
