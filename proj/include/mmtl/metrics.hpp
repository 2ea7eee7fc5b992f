#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mmtl/data.hpp"
#include "mmtl/model.hpp"
#include "mmtl/train.hpp"

namespace mmtl {

struct MetricsReport {
  float accuracy = 0;
  std::vector<float> precision, recall, f1;  // per class
  float macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  std::vector<std::vector<long>> confusion;  // [true][pred]
  float auc_roc = 0;
  float mae = 0, rmse = 0;
  float fer_percent = 0, rpa_percent = 0;
  float tau = 0.10f;
  float fer_floor = 0.05f;
  long sample_count = 0;
  std::string resistance_scheme = kResistanceSchemeId;

  nlohmann::json to_json() const;
};

MetricsReport classification_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels);

// Macro one-vs-rest AUC via the average-rank statistic; classes absent from
// the labels are skipped.
float auc_roc(const std::vector<Tensor>& prob_rows, const std::vector<int>& labels);

MetricsReport regression_metrics(const std::vector<float>& pred_r, const std::vector<float>& true_r,
                                 float tau, float fer_floor = 0.05f);

// Full evaluation of a parameter set on labeled windows.
MetricsReport evaluate_metrics(const std::vector<LabeledWindow>& set, ModelParams& params,
                               const ModelConfig& cfg, float tau = 0.10f, float fer_floor = 0.05f);

struct BenchReport {
  double rtr_ms = 0;   // median single-window forward wall time
  double lt_ms = 0;    // median end-to-end (denoise + normalize + forward)
  double tp_fps = 0;   // sustained batch-1 streaming throughput
  double cl_gflops = 0;
  double mer = 0;      // (RPA/100) / CL
  std::string pc_watts = "not measured";
  int runs = 0;
  int warmup = 0;

  nlohmann::json to_json() const;
};

BenchReport bench(ModelParams& params, const ModelConfig& cfg,
                  const std::vector<LabeledWindow>& windows, int runs, int warmup,
                  const NormalizerStats& norm, double eval_rpa_percent = -1.0);

struct AblationRow {
  std::string label;
  int seed = 0;
  int epochs = 0;
  MetricsReport metrics;
};

struct AblationDataset {
  std::vector<LabeledWindow> train, val, test;
};

// Full model plus the four Table-style ablations, equal seeds and budgets.
std::vector<AblationRow> ablation_suite(const ModelConfig& base_config,
                                        const AblationDataset& data,
                                        const TrainConfig& train_cfg);

std::string ablation_csv(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

}  // namespace mmtl
