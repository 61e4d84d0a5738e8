#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "pano/config.hpp"
#include "pano/model.hpp"
#include "pano/tape.hpp"

using namespace pano;
using doctest::Contains;

namespace {

std::string fresh_dir(const std::string& tag) {
  const std::string d = "/tmp/pano_model_" + tag;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

ParamRegistry small_reg(uint64_t seed) {
  Rng rng(seed);
  ParamRegistry r;
  r.add("enc.w", init_conv(4, 3, 3, 3, rng));
  r.add("enc.g", init_ones({4}));
  r.add("head.w", init_linear(2, 8, rng));
  r.add("head.b", init_zeros({2}));
  return r;
}

}  // namespace

TEST_CASE("registry add get and total params") {
  ParamRegistry r = small_reg(1);
  CHECK(r.names.size() == 4);
  CHECK(r.total_params() == 4 * 3 * 3 * 3 + 4 + 2 * 8 + 2);
  CHECK(r.has("enc.w"));
  CHECK(!r.has("enc.missing"));
  r.get("head.b")[0] = 7.0f;
  CHECK(r.values[3][0] == 7.0f);
  CHECK_THROWS_WITH_AS(r.add("enc.w", init_zeros({1})), Contains("duplicate"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(r.get("nope"), Contains("nope"), std::out_of_range);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const std::string dir = fresh_dir("ckpt");
  ParamRegistry a = small_reg(42);
  a.save(dir);

  ParamRegistry b = small_reg(99);  // same structure, different values
  bool any_diff = false;
  for (size_t i = 0; i < a.values.size(); ++i)
    for (int64_t j = 0; j < a.values[i].numel(); ++j)
      if (a.values[i][j] != b.values[i][j]) any_diff = true;
  CHECK(any_diff);

  b.load(dir);
  for (size_t i = 0; i < a.values.size(); ++i) {
    REQUIRE(a.values[i].dims == b.values[i].dims);
    for (int64_t j = 0; j < a.values[i].numel(); ++j) CHECK(a.values[i][j] == b.values[i][j]);
  }
}

TEST_CASE("checkpoint load rejects mismatches") {
  const std::string dir = fresh_dir("ckpt_bad");
  ParamRegistry a = small_reg(5);
  a.save(dir);

  ParamRegistry wrong_shape;
  {
    Rng rng(1);
    wrong_shape.add("enc.w", init_conv(4, 3, 3, 3, rng));
    wrong_shape.add("enc.g", init_ones({8}));  // was [4]
    wrong_shape.add("head.w", init_linear(2, 8, rng));
    wrong_shape.add("head.b", init_zeros({2}));
  }
  CHECK_THROWS_WITH_AS(wrong_shape.load(dir), Contains("shape mismatch"), std::runtime_error);

  ParamRegistry extra = small_reg(6);
  extra.add("extra.p", init_zeros({3}));
  CHECK_THROWS_WITH_AS(extra.load(dir), Contains("parameters"), std::runtime_error);

  ParamRegistry renamed;
  {
    Rng rng(2);
    renamed.add("enc.w2", init_conv(4, 3, 3, 3, rng));
    renamed.add("enc.g", init_ones({4}));
    renamed.add("head.w", init_linear(2, 8, rng));
    renamed.add("head.b", init_zeros({2}));
  }
  CHECK_THROWS_WITH_AS(renamed.load(dir), Contains("unknown parameter"), std::runtime_error);

  ParamRegistry r = small_reg(7);
  CHECK_THROWS_WITH_AS(r.load("/tmp/pano_model_does_not_exist"), Contains("manifest"),
                       std::runtime_error);
}

TEST_CASE("adam drives a quadratic to its target and is deterministic") {
  auto run = [](std::vector<float>* out) {
    ParamRegistry reg;
    reg.add("w", init_zeros({4}));
    TensorF target({4});
    target.data = {1.0f, -2.0f, 0.5f, 3.0f};
    Adam opt;
    opt.lr = 0.05;
    opt.init(reg);
    for (int step = 0; step < 400; ++step) {
      Tape<float> t;
      Val w = t.param(&reg.get("w"), "w");
      Val loss = t.mse(w, t.leaf(target, "target"));
      t.backward(loss);
      opt.step(reg, {t.grad(w)});
    }
    *out = reg.get("w").data;
  };
  std::vector<float> w1, w2;
  run(&w1);
  run(&w2);
  CHECK(std::fabs(w1[0] - 1.0f) < 1e-2);
  CHECK(std::fabs(w1[1] + 2.0f) < 1e-2);
  CHECK(std::fabs(w1[2] - 0.5f) < 1e-2);
  CHECK(std::fabs(w1[3] - 3.0f) < 1e-2);
  for (int i = 0; i < 4; ++i) CHECK(w1[i] == w2[i]);
}

TEST_CASE("adam rejects wrong-sized gradient lists") {
  ParamRegistry reg;
  reg.add("w", init_zeros({4}));
  Adam opt;
  opt.init(reg);
  CHECK_THROWS_AS(opt.step(reg, {}), std::invalid_argument);
  CHECK_THROWS_AS(opt.step(reg, {TensorF({3}, 0.0f)}), std::invalid_argument);
}

TEST_CASE("adam frozen prefixes leave parameters bit unchanged") {
  ParamRegistry reg;
  reg.add("ae.w", TensorF({3}, 1.0f));
  reg.add("net.w", TensorF({3}, 1.0f));
  Adam opt;
  opt.init(reg);
  std::vector<TensorF> grads = {TensorF({3}, 0.5f), TensorF({3}, 0.5f)};
  opt.step(reg, grads, {"ae."});
  for (int i = 0; i < 3; ++i) {
    CHECK(reg.get("ae.w")[i] == 1.0f);
    CHECK(reg.get("net.w")[i] != 1.0f);
  }
}

TEST_CASE("graph params bind once and pad gradients with zeros") {
  ParamRegistry reg = small_reg(3);
  Tape<float> t;
  GraphParams p(t, reg);
  Val g1 = p("enc.g");
  Val g2 = p("enc.g");
  CHECK(g1.id == g2.id);

  // only enc.g participates in the loss
  Val loss = t.mse(g1, t.leaf(TensorF({4}, 0.0f), "zero"));
  t.backward(loss);
  std::vector<TensorF> grads = p.collect_grads();
  REQUIRE(grads.size() == 4);
  for (size_t i = 0; i < grads.size(); ++i) REQUIRE(grads[i].dims == reg.values[i].dims);
  bool g_nonzero = false;
  for (int i = 0; i < 4; ++i)
    if (grads[1][i] != 0.0f) g_nonzero = true;
  CHECK(g_nonzero);
  for (int64_t j = 0; j < grads[0].numel(); ++j) CHECK(grads[0][j] == 0.0f);
  for (int64_t j = 0; j < grads[2].numel(); ++j) CHECK(grads[2][j] == 0.0f);
}

TEST_CASE("init helpers are deterministic in the seed") {
  Rng r1(11), r2(11);
  TensorF a = init_conv(8, 4, 3, 3, r1);
  TensorF b = init_conv(8, 4, 3, 3, r2);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  double s2 = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s2 += static_cast<double>(a[i]) * a[i];
  const double want = 2.0 / (4 * 3 * 3);
  CHECK(s2 / static_cast<double>(a.numel()) == doctest::Approx(want).epsilon(0.25));
}

TEST_CASE("config parses sections comments and typed getters") {
  Config c = Config::from_string(
      "# a comment\n"
      "steps = 100\n"
      "[train]\n"
      "lr = 2e-4   ; trailing comment\n"
      "batch = 16\n"
      "resume = yes\n"
      "\n"
      "[data]\n"
      "name = streets\n");
  CHECK(c.get_int("steps", -1) == 100);
  CHECK(c.get_double("train.lr", 0) == doctest::Approx(2e-4));
  CHECK(c.get_int("train.batch", 0) == 16);
  CHECK(c.get_bool("train.resume", false));
  CHECK(c.get_str("data.name", "") == "streets");
  CHECK(c.get_int("absent", 77) == 77);
  CHECK(c.get_str("absent", "dflt") == "dflt");
  CHECK(!c.has("absent"));
}

TEST_CASE("config rejects malformed input and bad typed values") {
  CHECK_THROWS_WITH_AS(Config::from_string("[sec\nk = v\n"), Contains("line 1"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(Config::from_string("k = v\njust words\n"), Contains("line 2"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(Config::from_string("= v\n"), Contains("empty key"),
                       std::invalid_argument);

  Config c = Config::from_string("a = 12x\nb = 1.5.2\nc = maybe\n");
  CHECK_THROWS_WITH_AS(c.get_int("a", 0), Contains("not an integer"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(c.get_double("b", 0), Contains("not a number"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(c.get_bool("c", false), Contains("not a boolean"), std::invalid_argument);
  CHECK_THROWS_AS(Config::from_file("/tmp/pano_model_no_such.cfg"), std::runtime_error);
}

TEST_CASE("config overrides win and hash tracks content") {
  Config base = Config::from_string("a = 1\nb = 2\n");
  Config flags;
  flags.set("b", "20");
  flags.set("c", "3");
  base.merge_overrides(flags);
  CHECK(base.get_int("a", 0) == 1);
  CHECK(base.get_int("b", 0) == 20);
  CHECK(base.get_int("c", 0) == 3);

  CHECK(base.canonical() == "a=1\nb=20\nc=3\n");
  Config same = Config::from_string("b=20\nc = 3\na =1\n");
  CHECK(base.hash() == same.hash());
  same.set("c", "4");
  CHECK(base.hash() != same.hash());

  Config empty;
  CHECK(empty.hash() == 0xcbf29ce484222325ull);
}

TEST_CASE("experiment manifest round trips") {
  const std::string dir = fresh_dir("manifest");
  ExperimentManifest m;
  m.kind = "train";
  m.seed = 1234567890123ull;
  m.config_hash = 0xdeadbeefcafe1234ull;
  m.config_text = "a=1\n";
  m.dataset_path = "/data/ds";
  m.checkpoint_path = "/ck/pt";
  m.revision = build_revision();
  m.metrics_path = "metrics.json";
  m.write(dir);

  ExperimentManifest r = ExperimentManifest::read(dir);
  CHECK(r.kind == m.kind);
  CHECK(r.seed == m.seed);
  CHECK(r.config_hash == m.config_hash);
  CHECK(r.config_text == m.config_text);
  CHECK(r.dataset_path == m.dataset_path);
  CHECK(r.checkpoint_path == m.checkpoint_path);
  CHECK(r.revision == m.revision);
  CHECK(r.metrics_path == m.metrics_path);
  CHECK_THROWS_WITH_AS(ExperimentManifest::read("/tmp/pano_model_no_manifest"),
                       Contains("experiment.json"), std::runtime_error);
}
