// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grad_fixture.hpp"
#include "semirnet/ablation.hpp"
#include "semirnet/conceptnet_client.hpp"
#include "semirnet/encoders.hpp"
#include "semirnet/gradcheck.hpp"
#include "semirnet/model_io.hpp"
#include "semirnet/similarity.hpp"
#include "semirnet/synthetic.hpp"
#include "semirnet/training.hpp"
#include "test_util.hpp"

using namespace semirnet;
using semirnet::testing::data_path;
using semirnet::testing::GradFixture;
using semirnet::testing::slurp;
using semirnet::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

/// Collects failed sub-checks so a criterion reports its first problem.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failure_.empty()) failure_ = what;
  }
  template <class E, class F>
  void expect_throw(F&& f, const std::string& what) {
    try {
      f();
    } catch (const E&) {
      return;
    } catch (const std::exception& e) {
      expect(false, what + " threw the wrong error: " + e.what());
      return;
    }
    expect(false, what + " did not throw");
  }
  Outcome outcome(const std::string& ok_detail) const { return {failure_.empty(), failure_.empty() ? ok_detail : failure_}; }

 private:
  std::string failure_;
};

Tensor random_matrix(Rng& rng, std::size_t n, std::size_t d, double lo, double hi) {
  Tensor t({n, d});
  for (double& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const GradFixture fx;
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const FrozenLoss fl = fx.loss(seed);
    if (GradFixture::kink_margin(fl) < GradFixture::kMinKinkMargin) {
      ++skipped;
      continue;
    }
    worst = std::max(worst, grad_check(fl.fn, fl.values, GradFixture::kStep, GradFixture::kFloor).max_relative_error);
    ++checked;
  }
  const double secs = seconds_since(t0);
  std::string detail = "max rel err " + fmt(worst) + " over " + std::to_string(checked) + " seeds (" +
                       std::to_string(skipped) + " skipped near a kink), " + fmt(secs) + " s";
  return {worst < 1e-4 && checked >= 50 && secs < 30.0, detail};
}

Outcome whitening() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Tensor z = random_matrix(rng, 32, 8, -2.0, 3.0);
    const MappingState s = fit_mapping(z, MappingState::initial(8, 1.0, 1e-5));
    Tensor mapped({32, 8});
    for (std::size_t i = 0; i < 32; ++i) {
      for (std::size_t a = 0; a < 8; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < 8; ++b) acc += s.mapping(a, b) * (z(i, b) - s.running_mean[b]);
        mapped(i, a) = acc;
      }
    }
    worst = std::max(worst, max_abs_diff(covariance(mapped), Tensor::identity(8)));
  }
  return {worst < 1e-3, "max |cov - I| " + fmt(worst) + " over 20 seeds"};
}

Outcome similarity_bounds() {
  Checks c;
  Rng rng(2024);
  MappingState mapping = MappingState::initial(6);
  mapping.mapping = fit_mapping(random_matrix(rng, 12, 6, -1, 1), MappingState::initial(6, 1.0)).mapping;
  double drift = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(5), d = 2 + rng.below(8);
    const Tensor a = random_matrix(rng, m, d, -1, 1), b = random_matrix(rng, n, d, -1, 1);
    const WordSimilarity ab = word_level_similarity(a, b);
    c.expect(ab.max >= -1.0 && ab.max <= 1.0 && ab.mean >= -1.0 && ab.mean <= 1.0, "word similarity out of [-1,1]");
    c.expect(ab.mean <= ab.max + 1e-15, "mean exceeds max");

    const double k = rng.uniform(0.1, 10.0);
    Tensor as = a, bs = b;
    for (double& x : as.row(rng.below(m))) x *= k;
    for (double& x : bs.row(rng.below(n))) x *= k;
    const WordSimilarity scaled = word_level_similarity(as, bs);
    drift = std::max({drift, std::abs(scaled.max - ab.max), std::abs(scaled.mean - ab.mean)});

    Tensor z({6});
    for (double& x : z.values()) x = rng.uniform(-1, 1);
    Tensor zs = z;
    for (double& x : zs.values()) x *= k;
    Tape tape;
    const double s = mapped_similarity(tape.constant(z), mapping).item();
    const double ss = mapped_similarity(tape.constant(zs), mapping).item();
    c.expect(s >= -1.0 && s <= 1.0, "sample similarity out of [-1,1]");
    drift = std::max(drift, std::abs(s - ss));
  }
  c.expect(drift < 1e-9, "rescaling drift " + fmt(drift));
  return c.outcome("1000 pairs in bounds, mean <= max, rescaling drift " + fmt(drift));
}

Outcome triplet_contract() {
  Checks c;
  Rng rng(99);
  const double margin = ModelConfig{}.margin;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(8);
    std::vector<double> a(d), p(d), n(d);
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = rng.uniform(-2, 2);
      p[i] = rng.uniform(-2, 2);
      n[i] = rng.uniform(-2, 2);
    }
    const double loss = triplet_loss(a, p, n, margin);
    c.expect(loss >= 0.0, "negative triplet loss");
    double dap = 0.0, dan = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dap += (a[i] - p[i]) * (a[i] - p[i]);
      dan += (a[i] - n[i]) * (a[i] - n[i]);
    }
    dap = std::sqrt(dap);
    dan = std::sqrt(dan);
    if (dan >= dap + margin) c.expect(loss == 0.0, "nonzero loss beyond the margin");
    c.expect(std::abs(loss - std::max(0.0, dap - dan + margin)) < 1e-12, "loss differs from the hinge formula");
    // Equidistant negative: the mirror image of p through a.
    std::vector<double> mirror(d);
    for (std::size_t i = 0; i < d; ++i) mirror[i] = 2.0 * a[i] - p[i];
    c.expect(std::abs(triplet_loss(a, p, mirror, margin) - margin) < 1e-12, "equidistant loss is not the margin");
  }
  return c.outcome("1000 random triples, margin " + fmt(margin));
}

Outcome synthetic_task() {
  const SyntheticConfig sc;
  const SyntheticTask task = make_synthetic_task(sc);
  const KnowledgeBase kb(task.table, EdgeIndex(task.edges), 5);
  const ModelConfig config = synthetic_model_config();
  TrainOptions options;
  options.patience = kSyntheticPatience;
  options.epochs = 30 - options.stage1_epochs;

  const auto t0 = Clock::now();
  const AblationRun full_only =
      run_ablation(config, task.train, task.val, task.test, options, &kb, default_stopwords(), {ablation_variants()[0]});
  const double full_secs = seconds_since(t0);
  const AblationRun run = run_ablation(config, task.train, task.val, task.test, options, &kb);

  const AblationRow& full = full_only.report.rows.at(0);
  if (!full.val || !full.test) return {false, "full model failed: " + full.error};
  const std::size_t epochs = full.epochs_run;  // includes the stage-1 epochs
  Checks c;
  std::ostringstream d;
  d << "samples " << sc.samples << ", full val " << fmt(full.val->accuracy) << " in " << epochs << " epochs, "
    << fmt(full_secs) << " s; test acc";
  c.expect(full.val->accuracy >= 0.95, "full val accuracy " + fmt(full.val->accuracy) + " < 0.95");
  c.expect(epochs <= 30, "more than 30 epochs");
  c.expect(full_secs < 120.0, "full model took " + fmt(full_secs) + " s");

  const AblationRow* f = run.report.full();
  double worst = 2.0;
  std::string worst_name;
  for (const auto& row : run.report.rows) {
    if (!row.test) {
      c.expect(false, row.name + " failed: " + row.error);
      continue;
    }
    d << " " << row.name << "=" << fmt(row.test->accuracy);
    if (&row == f) continue;
    c.expect(row.test->accuracy < f->test->accuracy,
             row.name + " test acc " + fmt(row.test->accuracy) + " not below full " + fmt(f->test->accuracy));
    if (row.test->accuracy < worst) {
      worst = row.test->accuracy;
      worst_name = row.name;
    }
  }
  c.expect(worst_name == "w/o Semantic", "worst ablation is " + worst_name + ", expected w/o Semantic");
  const Outcome o = c.outcome(d.str());
  return {o.pass, o.pass ? o.detail : o.detail + " [" + d.str() + "]"};
}

Outcome metrics_exactness() {
  Checks c;
  const auto near = [&c](double got, double want, const std::string& what) {
    c.expect(std::abs(got - want) < 1e-12, what + " " + fmt(got) + " != " + fmt(want));
  };
  const Metrics m = metrics_from_confusion({3, 1, 1, 5});
  near(m.precision, 0.75, "precision");
  near(m.recall, 0.75, "recall");
  near(m.f1, 0.75, "f1");
  near(m.accuracy, 0.8, "accuracy");
  near(m.macro_f1, (0.75 + 5.0 / 6.0) / 2.0, "macro_f1");

  const Metrics none = metrics_from_confusion({0, 0, 0, 4});
  near(none.precision, 0.0, "zero-denominator precision");
  near(none.recall, 0.0, "zero-denominator recall");
  near(none.f1, 0.0, "zero-denominator f1");
  near(none.accuracy, 1.0, "all-negative accuracy");
  near(none.macro_f1, 0.5, "all-negative macro_f1");

  const Metrics all = metrics_from_confusion({4, 0, 0, 6});
  near(all.precision, 1.0, "perfect precision");
  near(all.f1, 1.0, "perfect f1");
  near(all.macro_f1, 1.0, "perfect macro_f1");

  const Metrics fp_only = metrics_from_confusion({0, 3, 0, 1});
  near(fp_only.precision, 0.0, "fp-only precision");
  near(fp_only.recall, 0.0, "fp-only recall");
  near(fp_only.macro_f1, (0.0 + 2.0 * 0.25 / 1.25) / 2.0, "fp-only macro_f1");
  return c.outcome("fixtures exact to 1e-12");
}

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
  TempDir dir("accept-cli");
  SyntheticConfig sc;
  sc.samples = 300;
  write_synthetic_task(make_synthetic_task(sc), dir.path());
  nlohmann::json cfg = synthetic_run_config_json();
  cfg["train.stage1_epochs"] = 2;
  cfg["train.epochs"] = 4;
  Checks c;
  for (const char* run : {"a", "b"}) {
    cfg["train.model_out"] = std::string(run) + ".sirn";
    cfg["train.log_out"] = std::string(run) + ".jsonl";
    const fs::path config = dir / (std::string(run) + ".json");
    io::write_file_atomic(config, cfg.dump(2));
    const int code = run_command("'" + std::string(SEMIRNET_CLI) + "' --quiet --config '" + config.string() +
                                 "' train > '" + (dir / "out.txt").string() + "' 2>&1");
    c.expect(code == 0, std::string("train run ") + run + " exited " + std::to_string(code) + ": " +
                            (fs::exists(dir / "out.txt") ? slurp(dir / "out.txt") : ""));
  }
  if (!fs::exists(dir / "a.sirn") || !fs::exists(dir / "b.sirn")) return c.outcome("");
  const std::string model = slurp(dir / "a.sirn"), log = slurp(dir / "a.jsonl");
  c.expect(model == slurp(dir / "b.sirn"), "model files differ");
  c.expect(log == slurp(dir / "b.jsonl"), "epoch logs differ");
  c.expect(!log.empty(), "empty epoch log");
  return c.outcome("two runs: " + std::to_string(model.size()) + " model bytes and " +
                   std::to_string(std::count(log.begin(), log.end(), '\n')) + " log lines identical");
}

template <class E>
void expect_error_at(Checks& c, const std::function<void()>& f, const std::string& what, const std::string& where) {
  try {
    f();
    c.expect(false, what + " did not throw");
  } catch (const E& e) {
    c.expect(std::string(e.what()).find(where) != std::string::npos, what + " message lacks '" + where + "'");
    c.expect(exit_code_for(e.kind()) == 2, what + " maps to exit " + std::to_string(exit_code_for(e.kind())));
  } catch (const std::exception& e) {
    c.expect(false, what + " threw the wrong error: " + e.what());
  }
}

Outcome ingestion() {
  TempDir dir("accept-io");
  Checks c;
  const EmbeddingTable nb = load_numberbatch(data_path("numberbatch_5x300.txt"), "en");
  c.expect(nb.size() == 5 && nb.dimension() == 300, "numberbatch fixture has unexpected shape");
  io::write_file_atomic(dir / "nb.txt", format_numberbatch(nb));
  c.expect(load_numberbatch(dir / "nb.txt", "en").entries() == nb.entries(), "numberbatch round-trip differs");

  const auto edges = load_edge_dump(data_path("edges.csv"));
  io::write_file_atomic(dir / "edges.csv", format_edge_dump(edges));
  c.expect(load_edge_dump(dir / "edges.csv") == edges, "edge dump round-trip differs");

  const FeatureMap features = load_precomputed_features(data_path("features.tsv"));
  io::write_file_atomic(dir / "features.tsv", format_precomputed_features(features));
  c.expect(load_precomputed_features(dir / "features.tsv") == features, "feature round-trip differs");

  SyntheticConfig sc;
  sc.samples = 100;
  const SyntheticTask task = make_synthetic_task(sc);
  ModelConfig mc;
  mc.hidden_dim = mc.embed_dim = mc.fused_dim = 4;
  mc.shared_dim = 3;
  const Vocab vocab = build_vocab(task.train);
  ModelState st = init_model(mc, vocab, AblationFlags::full());
  {
    const KnowledgeBase kb(task.table, EdgeIndex(task.edges), 3);
    Tape tape;
    const ParamVars p = bind_params(tape, st.params, false);
    forward(tape, p, prepare_dataset(task.train, vocab, mc, &kb, default_stopwords()), st.mapping, mc,
            AblationFlags::full(), ForwardMode::kTrain);
  }
  const std::string bytes = serialize_model(st);
  c.expect(serialize_model(deserialize_model(bytes)) == bytes, "model round-trip differs");
  expect_error_at<FormatError>(c, [&] { deserialize_model(bytes.substr(0, bytes.size() / 2)); }, "truncated model",
                               "bad magic/version");

  expect_error_at<FormatError>(c, [] { load_numberbatch(data_path("numberbatch_bad_dim.txt"), "en"); },
                               "numberbatch wrong width", "299");
  expect_error_at<ParseError>(c, [] { load_numberbatch(data_path("numberbatch_bad_value.txt"), "en"); },
                              "numberbatch bad value", ":2");
  expect_error_at<FormatError>(c, [] { load_edge_dump(data_path("edges_no_header.csv")); }, "edge dump without header",
                               "header");
  expect_error_at<ParseError>(c, [] { load_edge_dump(data_path("edges_bad_weight.csv")); }, "edge dump bad weight",
                              ":3");
  expect_error_at<ParseError>(c, [] { load_precomputed_features(data_path("features_bad_count.tsv")); },
                              "feature bad count", ":2");
  expect_error_at<FormatError>(c, [] { load_precomputed_features(data_path("features_mixed_dim.tsv")); },
                               "feature mixed width", "features");
  return c.outcome("numberbatch, edges, features and model round-trip; 7 malformed inputs rejected with exit 2");
}

/// Replays canned responses and counts requests.
class CountingTransport : public Transport {
 public:
  explicit CountingTransport(std::vector<HttpResponse> script) : script_(std::move(script)) {}
  HttpResponse get(const std::string&) override { return script_.at(std::min(calls++, script_.size() - 1)); }
  std::size_t calls = 0;

 private:
  std::vector<HttpResponse> script_;
};

Outcome conceptnet_client() {
  Checks c;
  const auto dog = parse_conceptnet_response(slurp(data_path("conceptnet_dog.json")));
  const std::vector<ConceptEdge> expected{{"dog", "IsA", "animal", 8.0},
                                          {"dog", "RelatedTo", "pet", 4.47},
                                          {"dog", "CapableOf", "bark", 6.63},
                                          {"dog", "Synonym", "domestic_dog", 2.0}};
  c.expect(dog == expected, "dog fixture parsed to " + std::to_string(dog.size()) + " unexpected edges");
  c.expect(parse_conceptnet_response(slurp(data_path("conceptnet_empty.json"))).empty(), "empty fixture has edges");
  c.expect_throw<FormatError>([] { parse_conceptnet_response(slurp(data_path("conceptnet_malformed.json"))); },
                              "malformed fixture");

  TempDir dir("accept-cn");
  ConceptNetClientConfig cfg;
  cfg.endpoint = "http://conceptnet.test";
  cfg.backoff_ms = 0;
  {
    ResponseCache cache(dir.path());
    CountingTransport t({{200, slurp(data_path("conceptnet_dog.json"))}});
    ConceptNetClient client(cfg, t, cache);
    c.expect(client.query("dog") == expected, "live query returned unexpected edges");
    c.expect(t.calls == 1, "first query made " + std::to_string(t.calls) + " requests");
  }
  ResponseCache reopened(dir.path());
  CountingTransport t({{500, ""}});
  ConceptNetClient client(cfg, t, reopened);
  c.expect(client.query("dog") == expected, "cached query returned unexpected edges");
  c.expect(t.calls == 0, "cache hit made " + std::to_string(t.calls) + " requests");
  return c.outcome("replay fixtures parse; cache hit made 0 network requests");
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_fidelity}, {2, whitening},       {3, similarity_bounds}, {4, triplet_contract}, {5, synthetic_task},
      {6, metrics_exactness}, {7, cli_determinism}, {8, ingestion},         {9, conceptnet_client}};
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("unexpected error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
