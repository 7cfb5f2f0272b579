#include <doctest.h>

#include "moescope/forward.hpp"
#include "moescope/trace.hpp"
#include "test_util.hpp"

using namespace moescope;

namespace {

ModelConfig small_cfg() {
  testutil::ModelParams p;
  return testutil::random_model(p, 1).config;
}

}  // namespace

TEST_CASE("record_expert_output keeps the running max and counts tokens") {
  ModelConfig cfg = small_cfg();
  TraceHooks t(cfg, false);
  t.record_expert_output(0, 1, 3.0f);
  t.record_expert_output(0, 1, 1.5f);
  t.record_expert_output(0, 1, 7.25f);
  CHECK(t.magnitudes().mag(0, 1) == 7.25f);
  CHECK(t.magnitudes().count(0, 1) == 3);
  CHECK(t.magnitudes().mag(0, 0) == 0.0f);
  CHECK(t.magnitudes().count(0, 0) == 0);
}

TEST_CASE("shared slot maps to the final column") {
  ModelConfig cfg = small_cfg();
  TraceHooks t(cfg, false);
  t.record_expert_output(1, kSharedSlot, 2.0f);
  CHECK(t.magnitudes().mag(1, t.magnitudes().num_slots - 1) == 2.0f);
}

TEST_CASE("record_hidden_row keeps the median of the row achieving the max") {
  ModelConfig cfg = small_cfg();
  TraceHooks t(cfg, false);
  t.record_hidden_row(0, RowStats{10.0f, 0.5f});
  t.record_hidden_row(0, RowStats{3.0f, 2.0f});   // smaller max: ignored
  t.record_hidden_row(0, RowStats{40.0f, 0.25f});  // new max: adopts its median
  CHECK(t.hidden_stats().layers[0].max_abs == 40.0f);
  CHECK(t.hidden_stats().layers[0].median_at_max == 0.25f);
  CHECK(t.hidden_stats().layers[0].rows_seen == 3);
}

TEST_CASE("merge is elementwise max of magnitudes and sum of counts") {
  ModelConfig cfg = small_cfg();
  TraceHooks a(cfg, false), b(cfg, false);
  a.record_expert_output(0, 0, 5.0f);
  a.record_expert_output(1, 2, 1.0f);
  b.record_expert_output(0, 0, 3.0f);
  b.record_expert_output(0, 0, 9.0f);
  a.merge(b);
  CHECK(a.magnitudes().mag(0, 0) == 9.0f);
  CHECK(a.magnitudes().count(0, 0) == 3);
  CHECK(a.magnitudes().mag(1, 2) == 1.0f);
  CHECK(a.magnitudes().count(1, 2) == 1);
}

TEST_CASE("merge order invariance on real traces") {
  testutil::ModelParams p;
  MoEModel m = testutil::random_model(p, 131);
  std::vector<TraceHooks> traces;
  for (int i = 0; i < 4; ++i) {
    TraceHooks t(m.config, false);
    model_forward(testutil::random_tokens(5, p.vocab, 100 + i), m, &t);
    traces.push_back(std::move(t));
  }
  auto merged_in = [&](const std::vector<std::size_t>& order) {
    TraceHooks out(m.config, false);
    for (std::size_t i : order) out.merge(traces[i]);
    return out;
  };
  TraceHooks m1 = merged_in({0, 1, 2, 3});
  TraceHooks m2 = merged_in({3, 2, 1, 0});
  TraceHooks m3 = merged_in({2, 0, 3, 1});
  CHECK(m1.magnitudes().magnitudes == m2.magnitudes().magnitudes);
  CHECK(m1.magnitudes().magnitudes == m3.magnitudes().magnitudes);
  CHECK(m1.magnitudes().counts == m2.magnitudes().counts);
  CHECK(m1.magnitudes().counts == m3.magnitudes().counts);
  for (std::size_t l = 0; l < p.layers; ++l) {
    CHECK(m1.hidden_stats().layers[l].max_abs == m2.hidden_stats().layers[l].max_abs);
    CHECK(m1.hidden_stats().layers[l].max_abs == m3.hidden_stats().layers[l].max_abs);
  }
}

TEST_CASE("merge rejects shape mismatch") {
  testutil::ModelParams p;
  ModelConfig a = testutil::random_model(p, 1).config;
  p.experts = 8;
  p.ffn_hidden = 8;
  ModelConfig b = testutil::random_model(p, 1).config;
  TraceHooks ta(a, false), tb(b, false);
  CHECK_THROWS_AS(ta.merge(tb), std::invalid_argument);
}

TEST_CASE("attention capture records one map per layer and head") {
  testutil::ModelParams p;
  MoEModel m = testutil::random_model(p, 137);
  TraceHooks t(m.config, true);
  std::vector<std::uint32_t> probe = testutil::random_tokens(6, p.vocab, 2);
  model_forward(probe, m, &t);
  REQUIRE(t.attention().captured);
  REQUIRE(t.attention().maps.size() == p.layers);
  for (std::size_t l = 0; l < p.layers; ++l) {
    REQUIRE(t.attention().maps[l].size() == p.heads);
    const Tensor2D& a = t.attention().maps[l][0];
    CHECK(a.rows() == probe.size());
    CHECK(a.cols() == probe.size());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) sum += a.at(i, j);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("a second pass does not overwrite the probe capture") {
    const float first = t.attention().maps[0][0].at(1, 0);
    model_forward(testutil::random_tokens(6, p.vocab, 999), m, &t);
    CHECK(t.attention().maps[0][0].at(1, 0) == first);
  }
}

TEST_CASE("heatmap_matrix mirrors the magnitude matrix") {
  ModelConfig cfg = small_cfg();
  TraceHooks t(cfg, false);
  t.record_expert_output(0, 3, 4.5f);
  t.record_expert_output(1, kSharedSlot, 2.0f);
  Tensor2D h = heatmap_matrix(t);
  CHECK(h.rows() == cfg.num_layers);
  CHECK(h.cols() == cfg.max_experts() + 1);
  CHECK(h.at(0, 3) == 4.5f);
  CHECK(h.at(1, h.cols() - 1) == 2.0f);
}
