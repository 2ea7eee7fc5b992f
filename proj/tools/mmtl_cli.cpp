// Command-line front end: dataset inspection, training, evaluation,
// benchmarking, streaming inference, and the ablation suite.

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmtl/data.hpp"
#include "mmtl/kernels.hpp"
#include "mmtl/metrics.hpp"
#include "mmtl/model.hpp"
#include "mmtl/train.hpp"

using nlohmann::json;
using namespace mmtl;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

bool g_quiet = false;

void note(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << "\n";
}

struct DatasetSection {
  std::string name = "synthetic";  // synthetic | uci-har | wisdm | mhealth
  std::string root;
  int window = 128;
  float overlap = 0.5f;
  std::string split = "random";  // random | by_subject
  unsigned seed = 0;
  float train_fraction = 0.8f;
  int synthetic_windows = 600;
};

struct RunConfig {
  DatasetSection dataset;
  ModelConfig model = ModelConfig::default_desk();
  TrainConfig train;
  float tau = 0.10f;
  float fer_floor = 0.05f;
  int bench_runs = 1000;
  int bench_warmup = 50;
};

DatasetSection dataset_from_json(const json& j) {
  DatasetSection d;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "name")
      d.name = it->get<std::string>();
    else if (k == "root")
      d.root = it->get<std::string>();
    else if (k == "window")
      d.window = it->get<int>();
    else if (k == "overlap")
      d.overlap = it->get<float>();
    else if (k == "split")
      d.split = it->get<std::string>();
    else if (k == "seed")
      d.seed = it->get<unsigned>();
    else if (k == "train_fraction")
      d.train_fraction = it->get<float>();
    else if (k == "synthetic_windows")
      d.synthetic_windows = it->get<int>();
    else
      throw std::invalid_argument("dataset config: unknown key '" + k + "'");
  }
  if (d.name != "synthetic" && d.name != "uci-har" && d.name != "wisdm" && d.name != "mhealth")
    throw std::invalid_argument("dataset config: unknown dataset '" + d.name + "'");
  if (d.split != "random" && d.split != "by_subject")
    throw std::invalid_argument("dataset config: split must be 'random' or 'by_subject'");
  if (d.window <= 0) throw std::invalid_argument("dataset config: window must be positive");
  return d;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("config file not found: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "dataset")
      c.dataset = dataset_from_json(*it);
    else if (k == "model")
      c.model = ModelConfig::from_json(*it);
    else if (k == "train")
      c.train = TrainConfig::from_json(*it);
    else if (k == "metrics") {
      for (auto m = it->begin(); m != it->end(); ++m) {
        if (m.key() == "tau")
          c.tau = m->get<float>();
        else if (m.key() == "fer_floor")
          c.fer_floor = m->get<float>();
        else
          throw std::invalid_argument("metrics config: unknown key '" + m.key() + "'");
      }
    } else if (k == "bench") {
      for (auto b = it->begin(); b != it->end(); ++b) {
        if (b.key() == "runs")
          c.bench_runs = b->get<int>();
        else if (b.key() == "warmup")
          c.bench_warmup = b->get<int>();
        else
          throw std::invalid_argument("bench config: unknown key '" + b.key() + "'");
      }
    } else {
      throw std::invalid_argument("config: unknown section '" + k + "'");
    }
  }
  c.model.validate();
  c.train.validate();
  return c;
}

std::vector<std::string> class_names_for(const std::string& name) {
  if (name == "uci-har") return uci_har_class_names();
  if (name == "wisdm") return wisdm_class_names();
  if (name == "mhealth") return mhealth_class_names();
  return {"standing", "walking", "jogging"};
}

struct LoadedData {
  std::vector<LabeledWindow> train, val, test;  // un-normalized
  NormalizerStats norm;
  std::vector<std::string> class_names;
  std::string name;
};

Dataset build_dataset(const DatasetSection& d) {
  if (d.name == "synthetic") return make_synthetic_dataset(d.synthetic_windows, static_cast<int>(d.seed));
  if (d.root.empty()) throw DataError("dataset '" + d.name + "' requires a root path");
  if (d.name == "wisdm") {
    std::vector<Recording> recs = parse_wisdm(d.root);
    return windows_from_recordings(recs, "wisdm", wisdm_class_names(), wisdm_canonical(), d.window,
                                   d.overlap);
  }
  if (d.name == "mhealth") {
    std::vector<Recording> recs = parse_mhealth(d.root);
    return windows_from_recordings(recs, "mhealth", mhealth_class_names(), mhealth_canonical(),
                                   d.window, d.overlap);
  }
  throw DataError("build_dataset: unsupported dataset " + d.name);
}

LoadedData load_data(const RunConfig& cfg) {
  const DatasetSection& d = cfg.dataset;
  const SplitMode mode = d.split == "by_subject" ? SplitMode::by_subject : SplitMode::random;
  LoadedData out;
  out.name = d.name;
  out.class_names = class_names_for(d.name);
  if (d.name == "uci-har") {
    if (d.root.empty()) throw DataError("dataset 'uci-har' requires a root path");
    UciHar u = parse_uci_har(d.root);
    SplitResult tv = split(u.train.windows, d.train_fraction, d.seed, mode);
    out.train = std::move(tv.train);
    out.val = std::move(tv.val);
    out.test = std::move(u.test.windows);
  } else {
    Dataset ds = build_dataset(d);
    SplitResult tv = split(ds.windows, d.train_fraction, d.seed, mode);
    SplitResult vt = split(tv.val, 0.5f, d.seed + 1, SplitMode::random);
    out.train = std::move(tv.train);
    out.val = std::move(vt.train);
    out.test = std::move(vt.val);
  }
  if (out.train.empty()) throw DataError("dataset produced an empty training split");
  out.norm = fit_normalizer(out.train);
  return out;
}

std::vector<LabeledWindow> normalized(const std::vector<LabeledWindow>& windows,
                                      const NormalizerStats& norm) {
  std::vector<LabeledWindow> out = windows;
  for (LabeledWindow& w : out) w.window = apply_normalizer(w.window, norm);
  return out;
}

const std::vector<LabeledWindow>& pick_split(const LoadedData& data, const std::string& which) {
  if (which == "train") return data.train;
  if (which == "val") return data.val;
  if (which == "test") return data.test;
  throw std::invalid_argument("unknown split '" + which + "' (expected train|val|test)");
}

void check_shapes(const Checkpoint& ck, const LoadedData& data) {
  const Tensor& w = data.test.empty() ? data.train[0].window : data.test[0].window;
  if (w.extent(0) != ck.config.input_channels || w.extent(1) != ck.config.input_length)
    throw DataError("shape mismatch: checkpoint expects [" +
                    std::to_string(ck.config.input_channels) + "," +
                    std::to_string(ck.config.input_length) + "] windows, dataset has [" +
                    std::to_string(w.extent(0)) + "," + std::to_string(w.extent(1)) + "]");
  const int classes = static_cast<int>(data.class_names.size());
  if (ck.config.num_classes != classes)
    throw DataError("shape mismatch: checkpoint has " + std::to_string(ck.config.num_classes) +
                    " classes, dataset '" + data.name + "' has " + std::to_string(classes));
}

// ---- data-inspect ----

int cmd_data_inspect(const std::string& name, const std::string& root, int window, float overlap) {
  DatasetSection d;
  d.name = name;
  d.root = root;
  d.window = window;
  d.overlap = overlap;
  ParseStats stats;
  Dataset ds;
  json out;
  if (name == "uci-har") {
    if (root.empty()) throw DataError("dataset 'uci-har' requires --root");
    UciHar u = parse_uci_har(root);
    out["train_windows"] = u.train.windows.size();
    out["test_windows"] = u.test.windows.size();
    ds = std::move(u.train);
    for (LabeledWindow& w : u.test.windows) ds.windows.push_back(std::move(w));
  } else if (name == "wisdm" || name == "mhealth") {
    if (root.empty()) throw DataError("dataset '" + name + "' requires --root");
    std::vector<Recording> recs =
        name == "wisdm" ? parse_wisdm(root, &stats) : parse_mhealth(root, &stats);
    const auto names = class_names_for(name);
    const auto canon = name == "wisdm" ? wisdm_canonical() : mhealth_canonical();
    ds = windows_from_recordings(recs, name, names, canon, window, overlap);
    out["rows_accepted"] = stats.accepted;
    out["rows_skipped"] = stats.skipped;
    out["rows_total"] = stats.total_rows;
  } else if (name == "synthetic") {
    ds = make_synthetic_dataset(600, 0);
  } else {
    throw std::invalid_argument("unknown dataset '" + name + "'");
  }

  std::vector<long> hist(ds.class_names.size(), 0);
  std::set<int> subjects;
  for (const LabeledWindow& w : ds.windows) {
    if (w.activity >= 0 && w.activity < static_cast<int>(hist.size()))
      hist[static_cast<std::size_t>(w.activity)]++;
    subjects.insert(w.subject_id);
  }
  json histogram = json::object();
  for (std::size_t c = 0; c < hist.size(); ++c) histogram[ds.class_names[c]] = hist[c];

  out["dataset"] = ds.name;
  out["windows"] = ds.windows.size();
  out["window_len"] = ds.windows.empty() ? window : ds.windows[0].window.extent(1);
  out["channels"] = ds.channel_names;
  out["classes"] = histogram;
  out["subjects"] = std::vector<int>(subjects.begin(), subjects.end());
  out["sample_rate_hz"] = ds.sample_rate_hz;
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---- train ----

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& resume_path, int seed_override) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override >= 0) {
    cfg.train.seed = seed_override;
    cfg.dataset.seed = static_cast<unsigned>(seed_override);
  }
  LoadedData data = load_data(cfg);
  note("train: " + std::to_string(data.train.size()) + " train / " +
       std::to_string(data.val.size()) + " val windows (" + data.name + ")");
  const std::vector<LabeledWindow> train_set = normalized(data.train, data.norm);
  const std::vector<LabeledWindow> val_set = normalized(data.val, data.norm);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
    note("train: resuming from epoch " + std::to_string(resume.epoch));
  }

  TrainResult result = train(cfg.model, cfg.train, train_set, val_set, resume_ptr);
  for (const EpochRecord& r : result.history) std::cout << r.to_json().dump() << "\n";
  save_checkpoint(out_path, result.checkpoint);
  note("train: wrote " + out_path);
  return 0;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::string& which) {
  RunConfig cfg = load_run_config(config_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  LoadedData data = load_data(cfg);
  check_shapes(ck, data);
  const std::vector<LabeledWindow> set = normalized(pick_split(data, which), data.norm);
  if (set.empty()) throw DataError("split '" + which + "' is empty");
  MetricsReport report = evaluate_metrics(set, ck.params, ck.config, cfg.tau, cfg.fer_floor);
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

// ---- bench ----

int cmd_bench(const std::string& ckpt_path, const std::string& config_path, int runs, int warmup) {
  if (runs < 100) throw std::invalid_argument("--runs must be at least 100");
  if (warmup < 10) throw std::invalid_argument("--warmup must be at least 10");
  RunConfig cfg = load_run_config(config_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  LoadedData data = load_data(cfg);
  check_shapes(ck, data);
  const std::vector<LabeledWindow>& raw = data.test.empty() ? data.train : data.test;
  MetricsReport eval_report = evaluate_metrics(normalized(raw, data.norm), ck.params, ck.config,
                                               cfg.tau, cfg.fer_floor);
  BenchReport report = bench(ck.params, ck.config, raw, runs, warmup, data.norm,
                             eval_report.rpa_percent);
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

// ---- infer ----

struct CsvRow {
  double timestamp = 0;
  std::vector<float> values;
};

CsvRow parse_csv_row(const std::string& line, std::size_t channels, long line_no) {
  CsvRow row;
  std::stringstream ss(line);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (fields.size() != channels + 1)
    throw DataError("csv line " + std::to_string(line_no) + ": expected " +
                    std::to_string(channels + 1) + " fields, got " +
                    std::to_string(fields.size()));
  try {
    row.timestamp = std::stod(fields[0]);
    for (std::size_t i = 1; i < fields.size(); ++i) row.values.push_back(std::stof(fields[i]));
  } catch (const std::exception&) {
    throw DataError("csv line " + std::to_string(line_no) + ": malformed numeric field");
  }
  return row;
}

// Rows hold one timestep each; the window tensor is [channels, window_len].
Tensor window_from_rows(const std::vector<CsvRow>& rows, std::size_t start, int C, int W) {
  Tensor win({C, W});
  for (int t = 0; t < W; ++t)
    for (int c = 0; c < C; ++c)
      win(c, t) = rows[start + static_cast<std::size_t>(t)].values[static_cast<std::size_t>(c)];
  return win;
}

Tensor denoise_window(const Tensor& win) {
  const int C = win.extent(0), T = win.extent(1);
  Tensor out({C, T});
  for (int c = 0; c < C; ++c) {
    std::vector<float> ch(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) ch[static_cast<std::size_t>(t)] = win(c, t);
    const std::vector<float> clean = median3(ch);
    for (int t = 0; t < T; ++t) out(c, t) = clean[static_cast<std::size_t>(t)];
  }
  return out;
}

void emit_prediction(long window_index, const Tensor& raw_window, Checkpoint& ck,
                     const NormalizerStats& norm, const std::vector<std::string>& class_names,
                     std::mt19937& rng) {
  const Tensor input = apply_normalizer(denoise_window(raw_window), norm);
  const auto t0 = std::chrono::steady_clock::now();
  const Prediction p = predict(input, ck.params, ck.config, Mode::eval, rng);
  const auto t1 = std::chrono::steady_clock::now();

  int best = 0;
  for (int c = 1; c < p.activity_probs.extent(0); ++c)
    if (p.activity_probs(c) > p.activity_probs(best)) best = c;
  json line;
  line["window_index"] = window_index;
  line["activity_label"] = best < static_cast<int>(class_names.size())
                               ? class_names[static_cast<std::size_t>(best)]
                               : "class_" + std::to_string(best);
  line["activity_probs"] = p.activity_probs.data;
  line["resistance"] = p.has_resistance ? p.resistance_clamped() : -1.0f;
  line["rtr_ms"] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::cout << line.dump() << "\n";
  std::cout.flush();
}

int cmd_infer(const std::string& ckpt_path, const std::string& config_path,
              const std::string& input_path, bool stream) {
  RunConfig cfg = load_run_config(config_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  LoadedData data = load_data(cfg);
  const int C = ck.config.input_channels;
  const int W = ck.config.input_length;
  const int stride = std::max(1, static_cast<int>(std::lround(W * (1.0f - cfg.dataset.overlap))));
  std::mt19937 rng(0);

  std::istream* in = &std::cin;
  std::ifstream file;
  if (!stream) {
    file.open(input_path);
    if (!file) throw DataError("input file not found: " + input_path);
    in = &file;
  }

  std::string line;
  if (!std::getline(*in, line)) throw DataError("csv input: missing header row");
  {
    std::stringstream ss(line);
    std::string field;
    long cols = 0;
    while (std::getline(ss, field, ',')) cols++;
    if (cols != C + 1)
      throw DataError("csv header: expected " + std::to_string(C + 1) + " columns (timestamp + " +
                      std::to_string(C) + " channels), got " + std::to_string(cols));
  }

  std::vector<CsvRow> rows;
  long line_no = 1;
  double prev_ts = -std::numeric_limits<double>::infinity();
  long emitted_through = 0;  // number of rows consumed by emitted windows
  while (std::getline(*in, line)) {
    line_no++;
    if (line.empty()) continue;
    CsvRow row = parse_csv_row(line, static_cast<std::size_t>(C), line_no);
    if (row.timestamp <= prev_ts)
      note("warning: non-monotonic timestamp at line " + std::to_string(line_no));
    prev_ts = row.timestamp;
    rows.push_back(std::move(row));
    if (stream) {
      const long n = static_cast<long>(rows.size());
      if (n >= W && (n - W) % stride == 0 && n > emitted_through) {
        const long start = n - W;
        emit_prediction(start, window_from_rows(rows, static_cast<std::size_t>(start), C, W), ck,
                        data.norm, data.class_names, rng);
        emitted_through = n;
      }
    }
  }
  if (!stream) {
    for (std::size_t start = 0; start + static_cast<std::size_t>(W) <= rows.size();
         start += static_cast<std::size_t>(stride))
      emit_prediction(static_cast<long>(start), window_from_rows(rows, start, C, W), ck, data.norm,
                      data.class_names, rng);
  }
  return 0;
}

// ---- ablate ----

int cmd_ablate(const std::string& config_path, const std::string& csv_path, int seed_override) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override >= 0) {
    cfg.train.seed = seed_override;
    cfg.dataset.seed = static_cast<unsigned>(seed_override);
  }
  LoadedData data = load_data(cfg);
  AblationDataset abl;
  abl.train = normalized(data.train, data.norm);
  abl.val = normalized(data.val, data.norm);
  abl.test = normalized(data.test, data.norm);
  if (abl.test.empty()) throw DataError("ablation needs a non-empty test split");
  note("ablate: " + std::to_string(abl.train.size()) + " train / " +
       std::to_string(abl.test.size()) + " test windows, " + std::to_string(cfg.train.epochs) +
       " epochs per configuration");
  const std::vector<AblationRow> rows = ablation_suite(cfg.model, abl, cfg.train);
  std::cout << ablation_json(rows).dump(2) << "\n";
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw DataError("cannot write " + csv_path);
    out << ablation_csv(rows);
    note("ablate: wrote " + csv_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"1D conv multi-task activity and resistance model"};
  app.require_subcommand(1);
  int seed_override = -1;
  app.add_option("--seed", seed_override, "Override dataset and training seeds");
  app.add_flag("--quiet", g_quiet, "Suppress diagnostics on stderr");

  auto* inspect = app.add_subcommand("data-inspect", "Summarize a dataset");
  std::string in_name, in_root;
  int in_window = 128;
  float in_overlap = 0.5f;
  inspect->add_option("--dataset", in_name, "synthetic | uci-har | wisdm | mhealth")->required();
  inspect->add_option("--root", in_root, "Dataset root path");
  inspect->add_option("--window", in_window, "Window length in samples");
  inspect->add_option("--overlap", in_overlap, "Window overlap fraction");

  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  std::string tr_config, tr_out, tr_resume;
  tr->add_option("--config", tr_config, "Run config JSON")->required();
  tr->add_option("--out", tr_out, "Output checkpoint path")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_config, ev_split = "test";
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--config", ev_config, "Run config JSON")->required();
  ev->add_option("--split", ev_split, "train | val | test");

  auto* be = app.add_subcommand("bench", "Benchmark single-window inference");
  std::string be_ckpt, be_config;
  int be_runs = 1000, be_warmup = 50;
  be->add_option("--checkpoint", be_ckpt, "Checkpoint path")->required();
  be->add_option("--config", be_config, "Run config JSON")->required();
  be->add_option("--runs", be_runs, "Timed runs (minimum 100)");
  be->add_option("--warmup", be_warmup, "Warmup runs (minimum 10)");

  auto* inf = app.add_subcommand("infer", "Window a CSV stream and emit predictions");
  std::string inf_ckpt, inf_config, inf_input;
  bool inf_stream = false;
  inf->add_option("--checkpoint", inf_ckpt, "Checkpoint path")->required();
  inf->add_option("--config", inf_config, "Run config JSON")->required();
  inf->add_option("--input", inf_input, "CSV file (timestamp + one column per channel)");
  inf->add_flag("--stream", inf_stream, "Read CSV rows from standard input");

  auto* ab = app.add_subcommand("ablate", "Run the ablation suite");
  std::string ab_config, ab_csv;
  ab->add_option("--config", ab_config, "Run config JSON")->required();
  ab->add_option("--csv", ab_csv, "Also write the table as CSV to this path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inspect) return cmd_data_inspect(in_name, in_root, in_window, in_overlap);
    if (*tr) return cmd_train(tr_config, tr_out, tr_resume, seed_override);
    if (*ev) return cmd_eval(ev_ckpt, ev_config, ev_split);
    if (*be) return cmd_bench(be_ckpt, be_config, be_runs, be_warmup);
    if (*inf) {
      if (inf_stream == !inf_input.empty())
        throw std::invalid_argument("infer: pass exactly one of --input or --stream");
      return cmd_infer(inf_ckpt, inf_config, inf_input, inf_stream);
    }
    if (*ab) return cmd_ablate(ab_config, ab_csv, seed_override);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
