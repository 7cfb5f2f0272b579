#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "moescope/corpus.hpp"
#include "moescope/forward.hpp"
#include "moescope/report_io.hpp"
#include "test_util.hpp"

using namespace moescope;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("moescope_io_" + name);
}

}  // namespace

TEST_CASE("corpus round-trip") {
  Corpus c = {{0, 5, 17}, {0, 1}, {4294967295u}};
  const auto p = temp_path("corpus.txt");
  save_corpus(c, p.string());
  CHECK(load_corpus(p.string()) == c);

  std::ifstream in(p);
  std::string first;
  std::getline(in, first);
  CHECK(first == "0 5 17");
  std::filesystem::remove(p);
}

TEST_CASE("corpus parse errors carry the line number") {
  const auto p = temp_path("bad_corpus.txt");
  {
    std::ofstream out(p);
    out << "0 1 2\n3 x 4\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(p.string()), doctest::Contains("line 2"),
                       std::runtime_error);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(load_corpus(p.string()), std::runtime_error);
}

TEST_CASE("write_text_atomic leaves no temp file behind") {
  const auto p = temp_path("atomic.txt");
  write_text_atomic(p.string(), "hello\n");
  CHECK(std::filesystem::exists(p));
  CHECK_FALSE(std::filesystem::exists(p.string() + ".tmp"));
  std::ifstream in(p);
  std::string s((std::istreambuf_iterator<char>(in)), {});
  CHECK(s == "hello\n");
  std::filesystem::remove(p);
}

TEST_CASE("prune spec JSON round-trip") {
  PruneSpec spec;
  spec.mode = PruneMode::kZeroOutput;
  spec.seed = 77;
  spec.targets = {{0, 3}, {2, kSharedSlot}};
  PruneSpec r = prune_spec_from_json(prune_spec_to_json(spec));
  CHECK(r.mode == spec.mode);
  CHECK(r.seed == spec.seed);
  CHECK(r.targets == spec.targets);

  ordered_json j = prune_spec_to_json(spec);
  CHECK(j["mode"] == "zero-output");
  CHECK(j["targets"][1]["expert"] == "shared");

  j["mode"] = "bogus";
  CHECK_THROWS_AS(prune_spec_from_json(j), std::runtime_error);
}

TEST_CASE("report JSON structure") {
  SuperExpertReport r;
  r.thresholds.p_top = 60.0;
  r.thresholds.a_max = 100.0;
  r.thresholds.magnitude_floor = 10.0;
  r.thresholds.window = {1, 2};
  r.super_experts = {{1, 4, 100.0}, {2, kSharedSlot, 60.0}};
  r.excluded_outliers = {{3, 0, 95.0}};
  ordered_json j = report_to_json(r);
  CHECK(j["thresholds"]["p_top"] == 60.0);
  CHECK(j["thresholds"]["window"] == ordered_json({1, 2}));
  REQUIRE(j["super_experts"].size() == 2);
  CHECK(j["super_experts"][0]["expert"] == 4);
  CHECK(j["super_experts"][1]["expert"] == "shared");
  CHECK(j["excluded_outliers"][0]["layer"] == 3);
}

TEST_CASE("trace JSON and heatmap CSV agree with the trace") {
  testutil::ModelParams p;
  MoEModel m = testutil::random_model(p, 211);
  TraceHooks t(m.config, false);
  model_forward(testutil::random_tokens(6, p.vocab, 3), m, &t);

  ordered_json j = trace_to_json(t);
  CHECK(j["num_layers"] == p.layers);
  CHECK(j["num_slots"] == p.experts + 1);
  CHECK(j["magnitudes"].size() == p.layers);
  CHECK(j["hidden"].size() == p.layers);
  CHECK(j["magnitudes"][0][1] == t.magnitudes().mag(0, 1));
  CHECK(j["counts"][1][2] == t.magnitudes().count(1, 2));

  const std::string csv = heatmap_csv(t);
  CHECK(csv.rfind("layer,expert_0,expert_1,expert_2,expert_3,shared\n", 0) == 0);
  // One header plus one line per layer.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == p.layers + 1);
}

TEST_CASE("sink decay CSV headers") {
  SinkDecayReport r;
  LayerSinkDecay l;
  l.layer = 0;
  l.d_sink = 0.25;
  HeadDecay h;
  h.head = 1;
  h.decay = 0.5;
  h.min_ratio = 0.1;
  h.skipped = 2;
  l.heads.push_back(h);
  r.layers.push_back(l);

  CHECK(sink_decay_csv(r) == "layer,head,decay,min_ratio,skipped\n0,1,0.5,0.1,2\n");
  CHECK(sink_curve_csv(r) == "layer,d_sink\n0,0.25\n");
}

TEST_CASE("ablation summary JSON") {
  AblationSummary s;
  s.baseline = {10.0, 2};
  s.se_pruned = {30.0, 0};
  s.random_runs = {{10.5, 2}};
  s.random_mean_ppl = 10.5;
  s.se_drop_rate = 2.0;
  s.random_drop_rate = 0.05;
  ordered_json j = ablation_to_json(s);
  CHECK(j["baseline"]["ppl"] == 10.0);
  CHECK(j["se_pruned"]["massive_layers"] == 0);
  CHECK(j["random_runs"][0]["ppl"] == 10.5);
  CHECK(j["se_drop_rate"] == 2.0);
}

TEST_CASE("massive summary CSV") {
  std::vector<LayerMassiveSummary> s = {{0, 1000.0, 0.5, 2000.0, true},
                                        {1, 2.0, 1.0, 2.0, false}};
  CHECK(massive_summary_csv(s) ==
        "layer,max_abs,median_at_max,ratio,is_massive\n"
        "0,1000,0.5,2000,1\n"
        "1,2,1,2,0\n");
}
