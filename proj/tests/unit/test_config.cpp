#include <doctest.h>

#include <fstream>

#include "cravl/config.hpp"
#include "test_helpers.hpp"

using namespace cravl;
using cravl::testing::TempDir;

TEST_CASE("config: defaults, parsing, echo round-trip") {
  const RunConfig def = RunConfig::parse("", "<empty>");
  CHECK(def.n_train_apps == 2000);
  CHECK(def.n_test_apps == 500);
  CHECK(def.dims.d == 64);
  CHECK(def.dims.heads == 4);
  CHECK(def.train.batch == 64);
  CHECK(def.train.epochs == 30);
  CHECK(def.train.warmup_epochs == 10);
  CHECK(def.train.weight_decay == 0.02);
  CHECK(def.train.lambda == 5.0);
  CHECK(def.train.alpha == 0.1);
  CHECK(def.train.ema_decay == 0.996);
  CHECK(def.loss == LossVariant::SigCL);
  CHECK(def.min_severity == 2);

  const std::string text = R"(
# comment
[data]
n_train_apps = 12
class_balance = 1, 2, 3, 4, 5

[model]
embed_dim = 32
heads = 4
style_encoder = false

[train]
epochs = 3
warmup_epochs = 1
loss = sce
precision = f64
seed = 7
)";
  const RunConfig cfg = RunConfig::parse(text, "<test>");
  CHECK(cfg.n_train_apps == 12);
  CHECK(cfg.data.class_balance[4] == 5.0);
  CHECK(cfg.dims.d == 32);
  CHECK(!cfg.style_encoder);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.loss == LossVariant::SCE);
  CHECK(cfg.train.f64);
  CHECK(cfg.train.seed == 7);

  // echo parses back to the same effective configuration
  const RunConfig echoed = RunConfig::parse(cfg.echo(), "<echo>");
  CHECK(echoed.echo() == cfg.echo());
}

TEST_CASE("config: rejection of unknown keys, sections, and bad values") {
  CHECK_THROWS_WITH_AS(RunConfig::parse("[data]\nn_apps = 3\n", "<t>"),
                       doctest::Contains("unknown key"), UsageError);
  CHECK_THROWS_WITH_AS(RunConfig::parse("[dataa]\n", "<t>"), doctest::Contains("unknown section"),
                       UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[train]\nprecision = f16\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[train]\nloss = focal\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[train]\nbatch = 1\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[train]\nepochs = 5\nwarmup_epochs = 9\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[model]\nembed_dim = 30\nheads = 4\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[data]\nclass_balance = 1,2\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("key_outside = 1\n", "<t>"), UsageError);
  CHECK_THROWS_AS(RunConfig::parse("[data]\nn_train_apps = 1\nn_train_apps = 2\n", "<t>"),
                  UsageError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/path.ini"), UsageError);
}

TEST_CASE("config echo lands next to artifacts") {
  TempDir dir("echo");
  const RunConfig cfg = RunConfig::parse("[train]\nepochs = 1\nwarmup_epochs = 0\n", "<t>");
  const std::string path = dir.str() + "/config_echo.ini";
  echo_config(cfg, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  const RunConfig loaded = RunConfig::load(path);
  CHECK(loaded.train.epochs == 1);
}
