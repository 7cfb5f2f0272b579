// Command-line surface: generate synthetic checkpoints, profile expert
// magnitudes, emit prune specs, run pruning ablations, measure sink
// decay, and evaluate perplexity.
//
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moescope/ablate.hpp"
#include "moescope/checkpoint.hpp"
#include "moescope/corpus.hpp"
#include "moescope/forward.hpp"
#include "moescope/metrics.hpp"
#include "moescope/model.hpp"
#include "moescope/profiler.hpp"
#include "moescope/prune.hpp"
#include "moescope/report_io.hpp"
#include "moescope/synth.hpp"

namespace {

using namespace moescope;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Plant parse_plant(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() < 3 || parts.size() > 4) {
    throw UsageError("--plant expects layer:expert:scale[:dim], got \"" + text + "\"");
  }
  Plant p;
  try {
    p.layer = std::stoul(parts[0]);
    p.expert = parts[1] == "shared" ? kSharedSlot : std::stoi(parts[1]);
    p.injection_scale = std::stod(parts[2]);
    if (parts.size() == 4) {
      p.injection_dim = std::stoul(parts[3]);
    } else {
      p.injection_dim = 0;  // auto-assigned later
    }
  } catch (const std::exception&) {
    throw UsageError("--plant has a non-numeric field: \"" + text + "\"");
  }
  return p;
}

PruneSpec load_prune_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prune spec: " + path);
  ordered_json j;
  in >> j;
  return prune_spec_from_json(j);
}

// Traced passes over the corpus, optionally on a worker pool. Merging
// is associative and commutative, so chunk order does not matter.
TraceHooks traced_profile(const MoEModel& model, const Corpus& corpus,
                          const PruneSpec& prune, std::size_t threads) {
  TraceHooks merged(model.config, false);
  if (threads <= 1 || corpus.size() < 2) {
    for (const auto& seq : corpus) {
      TraceHooks t(model.config, false);
      model_forward(seq, model, &t, prune);
      merged.merge(t);
    }
    return merged;
  }
  threads = std::min(threads, corpus.size());
  std::vector<TraceHooks> partial(threads, TraceHooks(model.config, false));
  std::vector<std::exception_ptr> errs(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < corpus.size(); i += threads) {
          TraceHooks t(model.config, false);
          model_forward(corpus[i], model, &t, prune);
          partial[w].merge(t);
        }
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  for (const TraceHooks& t : partial) merged.merge(t);
  return merged;
}

AttentionCapture capture_probe(const MoEModel& model,
                               const std::vector<std::uint32_t>& probe,
                               const PruneSpec& prune) {
  TraceHooks t(model.config, true);
  model_forward(probe, model, &t, prune);
  return t.attention();
}

int run(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts activation forensics"};
  app.require_subcommand(1);

  bool json_only = false;
  app.add_flag("--json", json_only, "machine output only");

  // ---- gen-synth -------------------------------------------------------
  auto* gen = app.add_subcommand("gen-synth",
                                 "generate a synthetic checkpoint with planted experts");
  std::size_t g_layers = 0, g_experts = 0, g_hidden = 16, g_heads = 2,
              g_ffn = 8, g_vocab = 32, g_topk = 2;
  bool g_shared = false, g_cascade = false, g_sink = false;
  std::uint64_t g_seed = 0;
  std::vector<std::string> g_plants;
  std::string g_out, g_corpus_out;
  std::size_t g_cseqs = 16, g_clen = 32;
  std::uint64_t g_cseed = 0;
  std::size_t g_cvocab = 0;
  gen->add_option("--layers", g_layers, "decoder layers")->required();
  gen->add_option("--experts", g_experts, "routed experts per layer")->required();
  gen->add_option("--hidden", g_hidden, "hidden dimension");
  gen->add_option("--heads", g_heads, "attention heads");
  gen->add_option("--ffn-hidden", g_ffn, "expert FFN hidden dimension");
  gen->add_option("--vocab", g_vocab, "vocabulary size");
  gen->add_option("--top-k", g_topk, "router top-k");
  gen->add_flag("--shared", g_shared, "add a shared expert to every layer");
  gen->add_option("--plant", g_plants,
                  "planted expert as layer:expert:scale[:dim]; expert may be "
                  "'shared'; repeatable");
  gen->add_flag("--cascade", g_cascade, "later plants key on earlier injections");
  gen->add_flag("--sink-coupling", g_sink,
                "wire attention so position 0 becomes a sink");
  gen->add_option("--seed", g_seed, "weight seed");
  gen->add_option("--out", g_out, "checkpoint output path")->required();
  gen->add_option("--corpus-out", g_corpus_out, "also write a corpus here");
  gen->add_option("--corpus-seqs", g_cseqs, "corpus sequences");
  gen->add_option("--corpus-len", g_clen, "corpus sequence length");
  gen->add_option("--corpus-seed", g_cseed, "corpus seed");
  gen->add_option("--corpus-vocab", g_cvocab,
                  "corpus vocabulary cap (default: model vocab)");

  // ---- profile ---------------------------------------------------------
  auto* prof = app.add_subcommand("profile",
                                  "profile expert magnitudes and classify super experts");
  std::string p_model, p_corpus, p_prune, p_out, p_heatmap, p_trace;
  double p_fraction = 0.005, p_floor_div = 10.0;
  double p_ratio = 100.0, p_abs_floor = 5.0, p_plateau = 0.9;
  std::size_t p_threads = 1;
  prof->add_option("--model", p_model, "MOEC1 checkpoint")->required();
  prof->add_option("--corpus", p_corpus, "corpus file")->required();
  prof->add_option("--fraction", p_fraction, "top-percentile fraction");
  prof->add_option("--floor-divisor", p_floor_div, "a_max divisor for the floor");
  prof->add_option("--ratio-threshold", p_ratio, "max/median massive ratio");
  prof->add_option("--absolute-floor", p_abs_floor, "massive magnitude floor");
  prof->add_option("--plateau-fraction", p_plateau, "window plateau fraction");
  prof->add_option("--prune", p_prune, "prune spec JSON applied during profiling");
  prof->add_option("--out", p_out, "report JSON output path");
  prof->add_option("--heatmap", p_heatmap, "heatmap CSV output path");
  prof->add_option("--trace", p_trace, "raw trace JSON output path");
  prof->add_option("--threads", p_threads, "worker pool size");

  // ---- prune -----------------------------------------------------------
  auto* pr = app.add_subcommand("prune", "emit a prune spec from a report");
  std::string x_report, x_out, x_mode = "route-exclusion";
  pr->add_option("--report", x_report, "profile report JSON")->required();
  pr->add_option("--out", x_out, "prune spec output path")->required();
  pr->add_option("--mode", x_mode, "route-exclusion | zero-output")
      ->check(CLI::IsMember({"route-exclusion", "zero-output"}));

  // ---- ablate ----------------------------------------------------------
  auto* ab = app.add_subcommand("ablate",
                                "compare baseline vs SE-pruned vs random pruning");
  std::string a_model, a_corpus, a_out;
  std::vector<std::uint64_t> a_seeds = {1, 2, 3, 4, 5};
  double a_fraction = 0.005, a_floor_div = 10.0;
  double a_ratio = 100.0, a_abs_floor = 5.0, a_plateau = 0.9;
  ab->add_option("--model", a_model, "MOEC1 checkpoint")->required();
  ab->add_option("--corpus", a_corpus, "corpus file")->required();
  ab->add_option("--seeds", a_seeds, "random-baseline seeds");
  ab->add_option("--fraction", a_fraction, "top-percentile fraction");
  ab->add_option("--floor-divisor", a_floor_div, "a_max divisor for the floor");
  ab->add_option("--ratio-threshold", a_ratio, "max/median massive ratio");
  ab->add_option("--absolute-floor", a_abs_floor, "massive magnitude floor");
  ab->add_option("--plateau-fraction", a_plateau, "window plateau fraction");
  ab->add_option("--out", a_out, "summary JSON output path");

  // ---- sink-decay ------------------------------------------------------
  auto* sd = app.add_subcommand("sink-decay",
                                "attention sink decay between intact and pruned runs");
  std::string s_model, s_probe, s_prune, s_heads_out, s_curve_out;
  std::vector<std::size_t> s_sinks = {0};
  sd->add_option("--model", s_model, "MOEC1 checkpoint")->required();
  sd->add_option("--probe", s_probe,
                 "corpus file; the first sequence is the probe")->required();
  sd->add_option("--prune", s_prune, "prune spec JSON for the 'after' run")
      ->required();
  sd->add_option("--sink-positions", s_sinks, "sink position set");
  sd->add_option("--out-heads", s_heads_out, "per-head CSV output path");
  sd->add_option("--out-curve", s_curve_out, "per-layer CSV output path");

  // ---- eval-ppl --------------------------------------------------------
  auto* ev = app.add_subcommand("eval-ppl", "teacher-forced perplexity");
  std::string e_model, e_corpus, e_prune;
  ev->add_option("--model", e_model, "MOEC1 checkpoint")->required();
  ev->add_option("--corpus", e_corpus, "corpus file")->required();
  ev->add_option("--prune", e_prune, "prune spec JSON");

  // Let --json appear after the subcommand name.
  for (CLI::App* sc : {gen, prof, pr, ab, sd, ev}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  if (gen->parsed()) {
    PlantSpec spec;
    spec.config.num_layers = g_layers;
    spec.config.hidden_dim = g_hidden;
    spec.config.num_heads = g_heads;
    if (g_heads == 0 || g_hidden % g_heads != 0) {
      throw UsageError("--hidden must be a multiple of --heads");
    }
    spec.config.head_dim = g_hidden / g_heads;
    spec.config.vocab_size = g_vocab;
    spec.config.ffn_hidden_dim = g_ffn;
    spec.config.top_k = g_topk;
    spec.config.layers.assign(g_layers, LayerKind{g_experts, g_shared});
    spec.cascade = g_cascade;
    spec.sink_coupling = g_sink;
    spec.seed = g_seed;
    std::size_t next_dim = 2;
    std::set<std::size_t> taken = {0, g_hidden - 2, g_hidden - 1};
    for (const std::string& s : g_plants) {
      Plant p = parse_plant(s);
      if (p.injection_dim == 0) {
        while (taken.count(next_dim)) ++next_dim;
        p.injection_dim = next_dim;
      }
      taken.insert(p.injection_dim);
      spec.planted.push_back(p);
    }
    MoEModel model = build_planted_model(spec);
    save_checkpoint(model, g_out);
    if (!g_corpus_out.empty()) {
      const std::size_t cv = g_cvocab == 0 ? g_vocab : g_cvocab;
      save_corpus(gen_corpus(cv, g_cseqs, g_clen, g_cseed), g_corpus_out);
    }
    ordered_json truth;
    truth["checkpoint"] = g_out;
    truth["seed"] = g_seed;
    truth["plants"] = ordered_json::array();
    for (const Plant& p : spec.planted) {
      ordered_json pj;
      pj["layer"] = p.layer;
      pj["expert"] = p.expert == kSharedSlot ? ordered_json("shared")
                                             : ordered_json(p.expert);
      pj["injection_dim"] = p.injection_dim;
      pj["injection_scale"] = p.injection_scale;
      truth["plants"].push_back(pj);
    }
    std::cout << truth.dump(json_only ? -1 : 2) << "\n";
    return 0;
  }

  if (prof->parsed()) {
    MoEModel model = load_checkpoint(p_model);
    Corpus corpus = load_corpus(p_corpus);
    PruneSpec prune;
    if (!p_prune.empty()) prune = load_prune_spec(p_prune);
    MassiveActivationRule rule{p_ratio, p_abs_floor, p_plateau};
    TraceHooks trace = traced_profile(model, corpus, prune, p_threads);
    const std::set<std::size_t> window =
        detect_formation_window(trace.hidden_stats(), rule);
    SuperExpertReport report =
        classify_super_experts(trace.magnitudes(), window, p_fraction, p_floor_div);

    const ordered_json rj = report_to_json(report);
    if (!p_out.empty()) write_text_atomic(p_out, rj.dump(2) + "\n");
    if (!p_heatmap.empty()) write_text_atomic(p_heatmap, heatmap_csv(trace));
    if (!p_trace.empty()) {
      write_text_atomic(p_trace, trace_to_json(trace).dump(2) + "\n");
    }
    if (json_only) {
      std::cout << rj.dump() << "\n";
    } else {
      std::cout << "super experts: " << report.super_experts.size()
                << " (p_top=" << report.thresholds.p_top
                << ", floor=" << report.thresholds.magnitude_floor << ")\n";
      for (const ClassifiedExpert& ce : report.super_experts) {
        std::cout << "  layer " << ce.layer << " expert ";
        if (ce.expert == kSharedSlot) {
          std::cout << "shared";
        } else {
          std::cout << ce.expert;
        }
        std::cout << "  magnitude " << ce.magnitude << "\n";
      }
      std::cout << "excluded outliers: " << report.excluded_outliers.size() << "\n";
    }
    return 0;
  }

  if (pr->parsed()) {
    std::ifstream in(x_report);
    if (!in) throw std::runtime_error("cannot open report: " + x_report);
    ordered_json rj;
    in >> rj;
    PruneSpec spec;
    spec.mode = x_mode == "zero-output" ? PruneMode::kZeroOutput
                                        : PruneMode::kRouteExclusion;
    for (const auto& ce : rj.at("super_experts")) {
      PruneTarget t;
      t.layer = ce.at("layer").get<std::size_t>();
      const auto& e = ce.at("expert");
      t.expert = e.is_string() ? kSharedSlot : e.get<int>();
      spec.targets.push_back(t);
    }
    const ordered_json sj = prune_spec_to_json(spec);
    write_text_atomic(x_out, sj.dump(2) + "\n");
    std::cout << (json_only ? sj.dump()
                            : "prune spec with " +
                                  std::to_string(spec.targets.size()) + " targets")
              << "\n";
    return 0;
  }

  if (ab->parsed()) {
    MoEModel model = load_checkpoint(a_model);
    Corpus corpus = load_corpus(a_corpus);
    MassiveActivationRule rule{a_ratio, a_abs_floor, a_plateau};
    SuperExpertReport report =
        profile(model, corpus, rule, a_fraction, a_floor_div);
    AblationSummary summary =
        ablation_compare(model, corpus, report, a_seeds, rule);
    const ordered_json j = ablation_to_json(summary);
    if (!a_out.empty()) write_text_atomic(a_out, j.dump(2) + "\n");
    if (json_only) {
      std::cout << j.dump() << "\n";
    } else {
      std::cout << "baseline ppl " << summary.baseline.ppl << " ("
                << summary.baseline.massive_layers << " massive layers)\n"
                << "SE-pruned ppl " << summary.se_pruned.ppl << " ("
                << summary.se_pruned.massive_layers << " massive layers)\n"
                << "random mean ppl " << summary.random_mean_ppl << " over "
                << summary.random_runs.size() << " seeds\n";
    }
    return 0;
  }

  if (sd->parsed()) {
    MoEModel model = load_checkpoint(s_model);
    Corpus probe_corpus = load_corpus(s_probe);
    if (probe_corpus.empty()) {
      throw std::runtime_error("probe corpus is empty: " + s_probe);
    }
    const std::vector<std::uint32_t>& probe = probe_corpus.front();
    PruneSpec prune = load_prune_spec(s_prune);
    SinkSpec sink;
    sink.sink_positions.clear();
    sink.sink_positions.insert(s_sinks.begin(), s_sinks.end());
    AttentionCapture before = capture_probe(model, probe, {});
    AttentionCapture after = capture_probe(model, probe, prune);
    SinkDecayReport report = attention_sink_decay(before, after, sink);
    if (!s_heads_out.empty()) write_text_atomic(s_heads_out, sink_decay_csv(report));
    if (!s_curve_out.empty()) write_text_atomic(s_curve_out, sink_curve_csv(report));
    if (json_only) {
      ordered_json j = ordered_json::array();
      for (const LayerSinkDecay& l : report.layers) {
        ordered_json lj;
        lj["layer"] = l.layer;
        lj["d_sink"] = l.d_sink;
        j.push_back(lj);
      }
      std::cout << j.dump() << "\n";
    } else {
      std::cout << sink_curve_csv(report);
    }
    return 0;
  }

  if (ev->parsed()) {
    MoEModel model = load_checkpoint(e_model);
    Corpus corpus = load_corpus(e_corpus);
    PruneSpec prune;
    if (!e_prune.empty()) prune = load_prune_spec(e_prune);
    const double ppl = perplexity(model, corpus, prune);
    if (json_only) {
      ordered_json j;
      j["ppl"] = ppl;
      std::cout << j.dump() << "\n";
    } else {
      std::cout << "ppl " << ppl << "\n";
    }
    return 0;
  }

  return 2;  // unreachable: a subcommand is required
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
