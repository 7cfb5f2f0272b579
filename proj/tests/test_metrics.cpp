#include <doctest.h>

#include <cmath>
#include <random>

#include "moescope/corpus.hpp"
#include "moescope/metrics.hpp"
#include "test_util.hpp"

using namespace moescope;

namespace {

// Row-stochastic causal attention matrix for positions 0..n-1.
Tensor2D random_stochastic(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.01, 1.0);
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) sum += (t.at(i, j) = static_cast<float>(dist(rng)));
    for (std::size_t j = 0; j <= i; ++j) t.at(i, j) = static_cast<float>(t.at(i, j) / sum);
  }
  return t;
}

AttentionCapture capture_of(std::vector<std::vector<Tensor2D>> maps) {
  AttentionCapture c;
  c.maps = std::move(maps);
  c.captured = true;
  return c;
}

}  // namespace

TEST_CASE("perplexity equals vocab size for uniform logits") {
  testutil::ModelParams p;
  p.vocab = 256;
  p.hidden = 8;
  MoEModel m = testutil::zero_model(p);  // all logits identically zero
  Corpus corpus = {testutil::random_tokens(12, p.vocab, 1),
                   testutil::random_tokens(9, p.vocab, 2)};
  CHECK(perplexity(m, corpus) == doctest::Approx(256.0).epsilon(1e-9));
}

TEST_CASE("perplexity matches an independent cross-entropy oracle") {
  testutil::ModelParams p;
  MoEModel m = testutil::random_model(p, 149);
  Corpus corpus = {testutil::random_tokens(8, p.vocab, 3),
                   testutil::random_tokens(5, p.vocab, 4)};
  const double got = perplexity(m, corpus);

  long double nll = 0.0L;
  std::uint64_t n = 0;
  for (const auto& seq : corpus) {
    DecoderState st = model_forward(seq, m, nullptr);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      long double z = 0.0L;
      for (std::size_t v = 0; v < p.vocab; ++v) {
        z += std::exp(static_cast<long double>(st.logits.at(i, v)));
      }
      nll += std::log(z) - static_cast<long double>(st.logits.at(i, seq[i + 1]));
      ++n;
    }
  }
  const double want = static_cast<double>(std::exp(nll / n));
  CHECK(std::fabs(got - want) <= 1e-6 * want);
}

TEST_CASE("perplexity input validation") {
  testutil::ModelParams p;
  MoEModel m = testutil::random_model(p, 151);
  CHECK_THROWS_AS(perplexity(m, {}), std::invalid_argument);
  CHECK_THROWS_AS(perplexity(m, {{1}}), std::invalid_argument);
}

TEST_CASE("sink decay is zero for identical captures") {
  std::mt19937_64 rng(157);
  std::vector<std::vector<Tensor2D>> maps(2);
  for (auto& layer : maps) {
    for (int h = 0; h < 2; ++h) layer.push_back(random_stochastic(8, rng));
  }
  AttentionCapture c = capture_of(maps);
  SinkDecayReport r = attention_sink_decay(c, c, SinkSpec{});
  for (const LayerSinkDecay& l : r.layers) {
    CHECK(std::fabs(l.d_sink) <= 1e-12);
  }
}

TEST_CASE("sink decay equals 1 when all sink mass vanishes") {
  std::mt19937_64 rng(163);
  Tensor2D before = random_stochastic(6, rng);
  Tensor2D after = before;
  for (std::size_t t = 1; t < 6; ++t) {
    // Move column-0 mass onto the diagonal; rows stay stochastic.
    after.at(t, t) += after.at(t, 0);
    after.at(t, 0) = 0.0f;
  }
  AttentionCapture b = capture_of({{before}});
  AttentionCapture a = capture_of({{after}});
  SinkDecayReport r = attention_sink_decay(b, a, SinkSpec{});
  CHECK(r.layers[0].d_sink == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.layers[0].heads[0].min_ratio == 0.0);
}

TEST_CASE("sink decay matches brute-force evaluation") {
  std::mt19937_64 rng(167);
  const std::size_t n = 10, H = 3, L = 2;
  std::vector<std::vector<Tensor2D>> mb(L), ma(L);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t h = 0; h < H; ++h) {
      mb[l].push_back(random_stochastic(n, rng));
      ma[l].push_back(random_stochastic(n, rng));
    }
  }
  SinkSpec spec;
  spec.sink_positions = {0, 1};
  SinkDecayReport r =
      attention_sink_decay(capture_of(mb), capture_of(ma), spec);
  for (std::size_t l = 0; l < L; ++l) {
    double head_sum = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      double rsum = 0.0;
      std::size_t cnt = 0;
      for (std::size_t t = 2; t < n; ++t) {
        const double denom = double(mb[l][h].at(t, 0)) + mb[l][h].at(t, 1);
        if (denom <= 0.0) continue;
        rsum += (double(ma[l][h].at(t, 0)) + ma[l][h].at(t, 1)) / denom;
        ++cnt;
      }
      const double mean = rsum / static_cast<double>(cnt);
      CHECK(std::fabs(r.layers[l].heads[h].decay - (1.0 - mean)) <= 1e-9);
      head_sum += mean;
    }
    CHECK(std::fabs(r.layers[l].d_sink - (1.0 - head_sum / H)) <= 1e-9);
  }
}

TEST_CASE("zero-baseline query positions are skipped and counted") {
  Tensor2D before(3, 3, {1, 0, 0,
                         0, 1, 0,      // no mass on the sink at t=1
                         0.5f, 0.5f, 0});
  Tensor2D after(3, 3, {1, 0, 0,
                        0.5f, 0.5f, 0,
                        0.25f, 0.75f, 0});
  SinkDecayReport r =
      attention_sink_decay(capture_of({{before}}), capture_of({{after}}), SinkSpec{});
  CHECK(r.layers[0].heads[0].skipped == 1);
  CHECK(r.layers[0].heads[0].counted == 1);
  CHECK(r.layers[0].heads[0].decay == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sink decay error cases") {
  std::mt19937_64 rng(173);
  Tensor2D m = random_stochastic(4, rng);
  AttentionCapture a = capture_of({{m}});

  SUBCASE("layer count mismatch") {
    AttentionCapture b = capture_of({{m}, {m}});
    CHECK_THROWS_AS(attention_sink_decay(a, b, SinkSpec{}), std::invalid_argument);
  }
  SUBCASE("probe length mismatch") {
    AttentionCapture b = capture_of({{random_stochastic(5, rng)}});
    CHECK_THROWS_AS(attention_sink_decay(a, b, SinkSpec{}), std::invalid_argument);
  }
  SUBCASE("empty sink set") {
    SinkSpec s;
    s.sink_positions.clear();
    CHECK_THROWS_AS(attention_sink_decay(a, a, s), std::invalid_argument);
  }
  SUBCASE("query position inside the sink set") {
    SinkSpec s;
    s.query_range = {0};
    CHECK_THROWS_AS(attention_sink_decay(a, a, s), std::invalid_argument);
  }
  SUBCASE("no baseline sink mass anywhere") {
    Tensor2D dead(2, 2, {1, 0, 0, 1});  // t=1 puts nothing on position 0
    AttentionCapture c = capture_of({{dead}});
    CHECK_THROWS_AS(attention_sink_decay(c, c, SinkSpec{}), std::invalid_argument);
  }
}

TEST_CASE("massive activation summary flags only qualifying layers") {
  HiddenStatsTrace t;
  t.layers = {LayerHiddenStats{1000.0f, 0.5f, 1},   // ratio 2000, above floor
              LayerHiddenStats{4.0f, 0.001f, 1},    // huge ratio, below floor
              LayerHiddenStats{200.0f, 100.0f, 1},  // big but ratio 2
              LayerHiddenStats{0.0f, 0.0f, 1}};
  MassiveActivationRule rule;
  std::vector<LayerMassiveSummary> s = massive_activation_summary(t, rule);
  CHECK(s[0].is_massive);
  CHECK_FALSE(s[1].is_massive);
  CHECK_FALSE(s[2].is_massive);
  CHECK_FALSE(s[3].is_massive);
  CHECK(count_massive_layers(s) == 1);
  CHECK(s[0].ratio == doctest::Approx(2000.0));
}
