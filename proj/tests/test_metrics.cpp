#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mmtl/metrics.hpp"
#include "oracles.hpp"

using namespace mmtl;

namespace {

// Brute-force pairwise one-vs-rest AUC, macro-averaged.
double auc_pairwise(const std::vector<Tensor>& probs, const std::vector<int>& labels) {
  const int C = probs[0].extent(0);
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < C; ++c) {
    double wins = 0.0;
    long np = 0, nn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == c ? np : nn)++;
    if (np == 0 || nn == 0) continue;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      for (std::size_t j = 0; j < labels.size(); ++j) {
        if (labels[j] == c) continue;
        if (probs[i](c) > probs[j](c))
          wins += 1.0;
        else if (probs[i](c) == probs[j](c))
          wins += 0.5;
      }
    }
    sum += wins / (static_cast<double>(np) * static_cast<double>(nn));
    used++;
  }
  return used ? sum / used : 0.0;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_channels = 3;
  c.input_length = 16;
  c.stem_channels = 4;
  c.blocks = {{8, 4, 3, 1, true, Activation::swish}};
  c.feature_dim = 6;
  c.num_classes = 3;
  c.dropout_rate = 0.0f;
  return c;
}

std::vector<LabeledWindow> tiny_windows(const ModelConfig& cfg, int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<LabeledWindow> out;
  for (int i = 0; i < n; ++i) {
    LabeledWindow w;
    const int cls = i % cfg.num_classes;
    w.window = Tensor({cfg.input_channels, cfg.input_length});
    for (int c = 0; c < cfg.input_channels; ++c)
      for (int t = 0; t < cfg.input_length; ++t)
        w.window(c, t) = std::sin(0.4f * static_cast<float>((cls + 1) * t + c)) +
                         0.05f * uniform_symmetric(rng, 1.0f);
    w.activity = cls;
    w.resistance = 0.2f + 0.25f * static_cast<float>(cls);
    w.subject_id = i % 4;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TEST_CASE("classification metrics") {
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  MetricsReport perfect = classification_metrics(labels, labels);
  CHECK(perfect.accuracy == doctest::Approx(1.0f));
  CHECK(perfect.macro_f1 == doctest::Approx(1.0f));
  CHECK(perfect.sample_count == 6);

  const std::vector<int> all_zero = {0, 0, 0, 0};
  const std::vector<int> balanced = {0, 0, 1, 1};
  MetricsReport r = classification_metrics(all_zero, balanced);
  CHECK(r.accuracy == doctest::Approx(0.5f));
  CHECK(r.recall[1] == doctest::Approx(0.0f));
  CHECK(r.f1[1] == doctest::Approx(0.0f));
  CHECK(r.precision[0] == doctest::Approx(0.5f));

  std::mt19937 rng(1);
  std::vector<int> preds, labs;
  for (int i = 0; i < 500; ++i) {
    preds.push_back(static_cast<int>(uniform01(rng) * 4));
    labs.push_back(static_cast<int>(uniform01(rng) * 4));
  }
  MetricsReport rr = classification_metrics(preds, labs);
  long total = 0;
  std::vector<long> class_counts(4, 0);
  for (int l : labs) class_counts[static_cast<std::size_t>(l)]++;
  double weighted_recall = 0.0;
  for (std::size_t c = 0; c < rr.confusion.size(); ++c) {
    long row = 0;
    for (long v : rr.confusion[c]) {
      row += v;
      total += v;
    }
    CHECK(row == class_counts[c]);
    weighted_recall += static_cast<double>(rr.recall[c]) * static_cast<double>(class_counts[c]);
  }
  CHECK(total == rr.sample_count);
  CHECK(rr.accuracy ==
        doctest::Approx(weighted_recall / static_cast<double>(labs.size())).epsilon(1e-6));

  CHECK_THROWS_AS(classification_metrics({0}, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(classification_metrics({}, {}), std::invalid_argument);
}

TEST_CASE("auc-roc") {
  // perfectly separated two-class scores
  std::vector<Tensor> probs;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    const float p = i < 5 ? 0.9f : 0.1f;
    probs.push_back(Tensor({2}, {1.0f - p, p}));
    labels.push_back(i < 5 ? 1 : 0);
  }
  CHECK(auc_roc(probs, labels) == doctest::Approx(1.0f));

  std::vector<int> inverted = labels;
  for (int& l : inverted) l = 1 - l;
  CHECK(auc_roc(probs, inverted) == doctest::Approx(0.0f));

  SUBCASE("matches the brute-force pairwise oracle with ties") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Tensor> pr;
      std::vector<int> la;
      const int N = 50 + trial * 30;
      for (int i = 0; i < N; ++i) {
        Tensor row({4});
        float sum = 0;
        for (int c = 0; c < 4; ++c) {
          // quantized scores so ties actually occur
          row(c) = std::round(uniform01(rng) * 10.0f) / 10.0f + 0.05f;
          sum += row(c);
        }
        for (int c = 0; c < 4; ++c) row(c) /= sum;
        pr.push_back(std::move(row));
        la.push_back(static_cast<int>(uniform01(rng) * 4));
      }
      CHECK(std::fabs(static_cast<double>(auc_roc(pr, la)) - auc_pairwise(pr, la)) < 1e-6);
    }
  }

  SUBCASE("null distribution sits near one half") {
    std::mt19937 rng(99);
    std::vector<Tensor> pr;
    std::vector<int> la;
    for (int i = 0; i < 10000; ++i) {
      const float p = uniform01(rng);
      pr.push_back(Tensor({2}, {1.0f - p, p}));
      la.push_back(uniform01(rng) < 0.5f ? 0 : 1);
    }
    const float a = auc_roc(pr, la);
    CHECK(a > 0.48f);
    CHECK(a < 0.52f);
  }

  CHECK_THROWS_AS(auc_roc({}, {}), std::invalid_argument);
}

TEST_CASE("regression metrics") {
  const std::vector<float> truth = {0.5f, 0.6f, 0.8f, 0.95f};
  MetricsReport perfect = regression_metrics(truth, truth, 0.10f);
  CHECK(perfect.mae == doctest::Approx(0.0f));
  CHECK(perfect.rmse == doctest::Approx(0.0f));
  CHECK(perfect.fer_percent == doctest::Approx(0.0f));
  CHECK(perfect.rpa_percent == doctest::Approx(100.0f));

  std::vector<float> plus05 = truth;
  for (float& v : plus05) v += 0.05f;
  MetricsReport r = regression_metrics(plus05, truth, 0.10f);
  CHECK(r.mae == doctest::Approx(0.05f));
  CHECK(r.rpa_percent == doctest::Approx(100.0f));
  double fer = 0;
  for (float v : truth) fer += 100.0 * 0.05 / v;
  CHECK(r.fer_percent == doctest::Approx(fer / truth.size()).epsilon(1e-5));

  std::vector<float> plus20 = truth;
  for (float& v : plus20) v += 0.2f;
  CHECK(regression_metrics(plus20, truth, 0.10f).rpa_percent == doctest::Approx(0.0f));

  // floor engages for small true values
  MetricsReport fl = regression_metrics({0.06f}, {0.01f}, 0.10f);
  CHECK(fl.fer_percent == doctest::Approx(100.0f * 0.05f / 0.05f));

  SUBCASE("permutation invariance") {
    std::mt19937 rng(3);
    std::vector<float> p, t;
    for (int i = 0; i < 64; ++i) {
      p.push_back(uniform01(rng));
      t.push_back(uniform01(rng));
    }
    MetricsReport a = regression_metrics(p, t, 0.10f);
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<float> p2, t2;
    for (std::size_t i : idx) {
      p2.push_back(p[i]);
      t2.push_back(t[i]);
    }
    MetricsReport b = regression_metrics(p2, t2, 0.10f);
    CHECK(a.mae == doctest::Approx(b.mae));
    CHECK(a.rmse == doctest::Approx(b.rmse));
    CHECK(a.fer_percent == doctest::Approx(b.fer_percent));
    CHECK(a.rpa_percent == doctest::Approx(b.rpa_percent));
  }

  CHECK_THROWS_AS(regression_metrics({0.1f}, {0.1f, 0.2f}, 0.1f), std::invalid_argument);
  CHECK_THROWS_AS(regression_metrics({0.1f}, {0.1f}, 0.0f), std::invalid_argument);
}

TEST_CASE("full evaluation report") {
  const ModelConfig cfg = tiny_config();
  ModelParams params = build_model(cfg, 3);
  const std::vector<LabeledWindow> set = tiny_windows(cfg, 12, 5);
  MetricsReport r = evaluate_metrics(set, params, cfg);
  CHECK(r.sample_count == 12);
  long total = 0;
  for (const auto& row : r.confusion)
    for (long v : row) total += v;
  CHECK(total == 12);
  CHECK(r.resistance_scheme == std::string(kResistanceSchemeId));
  CHECK(r.tau == doctest::Approx(0.10f));

  MetricsReport r2 = evaluate_metrics(set, params, cfg);
  CHECK(r.to_json() == r2.to_json());
}

TEST_CASE("benchmark report") {
  const ModelConfig cfg = tiny_config();
  ModelParams params = build_model(cfg, 3);
  const std::vector<LabeledWindow> set = tiny_windows(cfg, 8, 9);
  NormalizerStats norm = fit_normalizer(set);

  BenchReport r = bench(params, cfg, set, 100, 10, norm, 80.0);
  CHECK(r.rtr_ms > 0.0);
  CHECK(r.rtr_ms <= r.lt_ms);
  CHECK(r.tp_fps > 0.0);
  CHECK(r.cl_gflops > 0.0);
  CHECK(r.mer == doctest::Approx(0.8 / r.cl_gflops));
  CHECK(r.pc_watts == "not measured");
  CHECK(r.runs == 100);
  CHECK(r.warmup == 10);

  nlohmann::json j = r.to_json();
  for (const char* key : {"RTR_ms", "LT_ms", "TP_fps", "CL_gflops", "MER", "PC_watts", "runs",
                          "warmup"})
    CHECK(j.contains(key));

  CHECK_THROWS_AS(bench(params, cfg, set, 10, 10, norm), std::invalid_argument);
  CHECK_THROWS_AS(bench(params, cfg, set, 100, 5, norm), std::invalid_argument);
  CHECK_THROWS_AS(bench(params, cfg, {}, 100, 10, norm), std::invalid_argument);
}

TEST_CASE("ablation suite shape") {
  const ModelConfig cfg = tiny_config();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.seed = 11;
  AblationDataset data;
  data.train = tiny_windows(cfg, 24, 31);
  data.val = tiny_windows(cfg, 9, 32);
  data.test = tiny_windows(cfg, 9, 33);

  const std::vector<AblationRow> rows = ablation_suite(cfg, data, tc);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].label == "Full MMTL-Net");
  CHECK(rows[1].label == "Without MobileNetV3");
  CHECK(rows[2].label == "Without MTL Module");
  CHECK(rows[3].label == "Without SE Module");
  CHECK(rows[4].label == "Without Swish Activation Function");
  for (const AblationRow& r : rows) {
    CHECK(r.seed == tc.seed);
    CHECK(r.epochs == tc.epochs);
    CHECK(r.metrics.sample_count == 9);
  }

  const std::string csv = ablation_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header + 5 rows
  CHECK(csv.find("\"Full MMTL-Net\"") != std::string::npos);
  CHECK(ablation_json(rows).size() == 5);
}
