#include "mmtl/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmtl {

nlohmann::json MetricsReport::to_json() const {
  return {{"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"macro_precision", macro_precision},
          {"macro_recall", macro_recall},
          {"macro_f1", macro_f1},
          {"confusion", confusion},
          {"auc_roc", auc_roc},
          {"mae", mae},
          {"rmse", rmse},
          {"fer_percent", fer_percent},
          {"rpa_percent", rpa_percent},
          {"tau", tau},
          {"fer_floor", fer_floor},
          {"sample_count", sample_count},
          {"resistance_scheme", resistance_scheme}};
}

nlohmann::json BenchReport::to_json() const {
  return {{"RTR_ms", rtr_ms},     {"LT_ms", lt_ms},   {"TP_fps", tp_fps},
          {"CL_gflops", cl_gflops}, {"MER", mer},     {"PC_watts", pc_watts},
          {"runs", runs},         {"warmup", warmup}};
}

MetricsReport classification_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || labels.empty())
    throw std::invalid_argument("classification_metrics: size mismatch or empty");
  int num_classes = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    num_classes = std::max({num_classes, labels[i] + 1, predictions[i] + 1});

  MetricsReport r;
  r.sample_count = static_cast<long>(labels.size());
  r.confusion.assign(static_cast<std::size_t>(num_classes),
                     std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])]++;
    if (labels[i] == predictions[i]) correct++;
  }
  r.accuracy = static_cast<float>(correct) / static_cast<float>(labels.size());

  double mp = 0, mr = 0, mf = 0;
  for (int c = 0; c < num_classes; ++c) {
    long tp = r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    long pred_c = 0, true_c = 0;
    for (int k = 0; k < num_classes; ++k) {
      pred_c += r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
      true_c += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
    }
    const float prec = pred_c > 0 ? static_cast<float>(tp) / pred_c : 0.0f;
    const float rec = true_c > 0 ? static_cast<float>(tp) / true_c : 0.0f;
    const float f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0f;
    r.precision.push_back(prec);
    r.recall.push_back(rec);
    r.f1.push_back(f1);
    mp += prec;
    mr += rec;
    mf += f1;
  }
  r.macro_precision = static_cast<float>(mp / num_classes);
  r.macro_recall = static_cast<float>(mr / num_classes);
  r.macro_f1 = static_cast<float>(mf / num_classes);
  return r;
}

float auc_roc(const std::vector<Tensor>& prob_rows, const std::vector<int>& labels) {
  if (prob_rows.size() != labels.size() || labels.empty())
    throw std::invalid_argument("auc_roc: size mismatch or empty");
  const int C = prob_rows[0].extent(0);
  const std::size_t N = labels.size();
  double sum = 0.0;
  int used = 0;
  std::vector<std::pair<float, int>> scored(N);  // (score, is_positive)
  for (int c = 0; c < C; ++c) {
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < N; ++i) {
      scored[i] = {prob_rows[i](c), labels[i] == c ? 1 : 0};
      n_pos += static_cast<std::size_t>(scored[i].second);
    }
    if (n_pos == 0 || n_pos == N) continue;
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // average ranks over ties
    double rank_pos = 0.0;
    std::size_t i = 0;
    while (i < N) {
      std::size_t j = i;
      while (j + 1 < N && scored[j + 1].first == scored[i].first) ++j;
      const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k)
        if (scored[k].second) rank_pos += avg_rank;
      i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(N - n_pos);
    sum += (rank_pos - np * (np + 1.0) / 2.0) / (np * nn);
    used++;
  }
  return used > 0 ? static_cast<float>(sum / used) : 0.0f;
}

MetricsReport regression_metrics(const std::vector<float>& pred_r, const std::vector<float>& true_r,
                                 float tau, float fer_floor) {
  if (pred_r.size() != true_r.size() || pred_r.empty())
    throw std::invalid_argument("regression_metrics: size mismatch or empty");
  if (tau <= 0) throw std::invalid_argument("regression_metrics: tau must be > 0");
  MetricsReport r;
  r.tau = tau;
  r.fer_floor = fer_floor;
  r.sample_count = static_cast<long>(pred_r.size());
  double abs_sum = 0, sq_sum = 0, fer_sum = 0;
  long within = 0;
  for (std::size_t i = 0; i < pred_r.size(); ++i) {
    const double d = std::fabs(static_cast<double>(pred_r[i]) - true_r[i]);
    abs_sum += d;
    sq_sum += d * d;
    fer_sum += d / std::max(static_cast<double>(true_r[i]), static_cast<double>(fer_floor));
    if (d <= static_cast<double>(tau)) within++;
  }
  const double n = static_cast<double>(pred_r.size());
  r.mae = static_cast<float>(abs_sum / n);
  r.rmse = static_cast<float>(std::sqrt(sq_sum / n));
  r.fer_percent = static_cast<float>(100.0 * fer_sum / n);
  r.rpa_percent = static_cast<float>(100.0 * within / n);
  return r;
}

MetricsReport evaluate_metrics(const std::vector<LabeledWindow>& set, ModelParams& params,
                               const ModelConfig& cfg, float tau, float fer_floor) {
  if (set.empty()) throw std::invalid_argument("evaluate_metrics: empty set");
  std::mt19937 rng(0);
  std::vector<int> preds, labels;
  std::vector<Tensor> probs;
  std::vector<float> pred_r, true_r;
  std::size_t i = 0;
  while (i < set.size()) {
    const std::size_t n = std::min<std::size_t>(64, set.size() - i);
    std::vector<BatchSample> batch(n);
    for (std::size_t b = 0; b < n; ++b)
      batch[b] = {set[i + b].window, set[i + b].activity, set[i + b].resistance};
    BatchOutput out = forward_batch(batch, params, cfg, Mode::eval, rng, nullptr);
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor& p = out.activity_probs[b];
      int argmax = 0;
      for (int c = 1; c < p.extent(0); ++c)
        if (p(c) > p(argmax)) argmax = c;
      preds.push_back(argmax);
      labels.push_back(batch[b].label);
      probs.push_back(p);
      pred_r.push_back(std::min(1.0f, std::max(0.0f, out.resistance[b])));
      true_r.push_back(batch[b].resistance);
    }
    i += n;
  }
  MetricsReport cls = classification_metrics(preds, labels);
  const MetricsReport reg = regression_metrics(pred_r, true_r, tau, fer_floor);
  cls.auc_roc = auc_roc(probs, labels);
  cls.mae = reg.mae;
  cls.rmse = reg.rmse;
  cls.fer_percent = reg.fer_percent;
  cls.rpa_percent = reg.rpa_percent;
  cls.tau = tau;
  cls.fer_floor = fer_floor;
  return cls;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor denoise_window_copy(const Tensor& w) {
  const int C = w.extent(0), T = w.extent(1);
  Tensor out({C, T});
  for (int c = 0; c < C; ++c) {
    std::vector<float> ch(w.row(c), w.row(c) + T);
    ch = median3(ch);
    std::copy(ch.begin(), ch.end(), out.row(c));
  }
  return out;
}

}  // namespace

BenchReport bench(ModelParams& params, const ModelConfig& cfg,
                  const std::vector<LabeledWindow>& windows, int runs, int warmup,
                  const NormalizerStats& norm, double eval_rpa_percent) {
  if (windows.empty()) throw std::invalid_argument("bench: empty window set");
  if (runs < 100) throw std::invalid_argument("bench: runs must be >= 100");
  if (warmup < 10) throw std::invalid_argument("bench: warmup must be >= 10");

  using clock = std::chrono::steady_clock;
  std::mt19937 rng(0);
  auto window_at = [&](int i) -> const Tensor& {
    return windows[static_cast<std::size_t>(i) % windows.size()].window;
  };

  for (int i = 0; i < warmup; ++i) (void)predict(window_at(i), params, cfg, Mode::eval, rng);

  std::vector<double> fwd_ms, e2e_ms;
  fwd_ms.reserve(static_cast<std::size_t>(runs));
  e2e_ms.reserve(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const auto t0 = clock::now();
    (void)predict(window_at(i), params, cfg, Mode::eval, rng);
    fwd_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  for (int i = 0; i < runs; ++i) {
    const auto t0 = clock::now();
    Tensor w = denoise_window_copy(window_at(i));
    w = apply_normalizer(w, norm);
    (void)predict(w, params, cfg, Mode::eval, rng);
    e2e_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }

  // sustained batch-1 streaming over >= 1000 windows
  const int stream_n = std::max(1000, runs);
  const auto t0 = clock::now();
  for (int i = 0; i < stream_n; ++i) (void)predict(window_at(i), params, cfg, Mode::eval, rng);
  const double stream_s = std::chrono::duration<double>(clock::now() - t0).count();

  BenchReport r;
  r.rtr_ms = median(fwd_ms);
  r.lt_ms = std::max(median(e2e_ms), r.rtr_ms);  // forward is contained in end-to-end
  r.tp_fps = stream_n / stream_s;
  r.cl_gflops = static_cast<double>(flops_estimate(cfg).mul_adds) / 1e9;
  r.mer = eval_rpa_percent >= 0 && r.cl_gflops > 0 ? (eval_rpa_percent / 100.0) / r.cl_gflops : 0.0;
  r.runs = runs;
  r.warmup = warmup;
  return r;
}

std::vector<AblationRow> ablation_suite(const ModelConfig& base_config,
                                        const AblationDataset& data,
                                        const TrainConfig& train_cfg) {
  base_config.validate();
  train_cfg.validate();
  std::vector<AblationRow> rows;

  auto run_one = [&](const std::string& label, const ModelConfig& cfg) {
    TrainResult res = train(cfg, train_cfg, data.train, data.val);
    AblationRow row;
    row.label = label;
    row.seed = train_cfg.seed;
    row.epochs = train_cfg.epochs;
    row.metrics = evaluate_metrics(data.test, res.checkpoint.params, cfg);
    rows.push_back(std::move(row));
  };

  run_one("Full MMTL-Net", base_config);
  {
    ModelConfig cfg = base_config;
    cfg.plain_backbone = true;
    cfg.plain_channels = match_plain_channels(base_config);
    run_one("Without MobileNetV3", cfg);
  }
  {
    // Two independently trained single-task models, metrics merged.
    ModelConfig act_cfg = base_config;
    act_cfg.enable_mtl = false;
    act_cfg.single_task = "activity";
    ModelConfig res_cfg = base_config;
    res_cfg.enable_mtl = false;
    res_cfg.single_task = "resistance";
    TrainResult act = train(act_cfg, train_cfg, data.train, data.val);
    TrainResult res = train(res_cfg, train_cfg, data.train, data.val);
    MetricsReport ma = evaluate_metrics(data.test, act.checkpoint.params, act_cfg);
    const MetricsReport mr = evaluate_metrics(data.test, res.checkpoint.params, res_cfg);
    ma.mae = mr.mae;
    ma.rmse = mr.rmse;
    ma.fer_percent = mr.fer_percent;
    ma.rpa_percent = mr.rpa_percent;
    AblationRow row;
    row.label = "Without MTL Module";
    row.seed = train_cfg.seed;
    row.epochs = train_cfg.epochs;
    row.metrics = std::move(ma);
    rows.push_back(std::move(row));
  }
  {
    ModelConfig cfg = base_config;
    cfg.enable_se = false;
    run_one("Without SE Module", cfg);
  }
  {
    ModelConfig cfg = base_config;
    cfg.enable_swish = false;
    run_one("Without Swish Activation Function", cfg);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "configuration,seed,epochs,accuracy,macro_precision,macro_recall,macro_f1,auc_roc,mae,"
        "rmse,fer_percent,rpa_percent\n";
  for (const AblationRow& r : rows) {
    os << '"' << r.label << '"' << ',' << r.seed << ',' << r.epochs << ',' << r.metrics.accuracy
       << ',' << r.metrics.macro_precision << ',' << r.metrics.macro_recall << ','
       << r.metrics.macro_f1 << ',' << r.metrics.auc_roc << ',' << r.metrics.mae << ','
       << r.metrics.rmse << ',' << r.metrics.fer_percent << ',' << r.metrics.rpa_percent << '\n';
  }
  return os.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const AblationRow& r : rows)
    out.push_back({{"configuration", r.label},
                   {"seed", r.seed},
                   {"epochs", r.epochs},
                   {"metrics", r.metrics.to_json()}});
  return out;
}

}  // namespace mmtl
