#include "mmtl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace mmtl {

void TrainConfig::validate() const {
  if (base_lr <= 0 || lr_decay_factor <= 0 || lr_decay_every < 1)
    throw std::invalid_argument("train config: bad learning-rate schedule");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (weight_decay < 0) throw std::invalid_argument("train config: negative weight_decay");
  if (epochs < 0 || fine_tune_epochs < 0) throw std::invalid_argument("train config: bad epochs");
  if (early_stop_patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1 || adam_eps <= 0)
    throw std::invalid_argument("train config: bad Adam constants");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"base_lr", base_lr},
          {"lr_decay_factor", lr_decay_factor},
          {"lr_decay_every", lr_decay_every},
          {"batch_size", batch_size},
          {"weight_decay", weight_decay},
          {"epochs", epochs},
          {"fine_tune_epochs", fine_tune_epochs},
          {"early_stop_patience", early_stop_patience},
          {"seed", seed},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  static const std::vector<std::string> known = {
      "base_lr",      "lr_decay_factor", "lr_decay_every",      "batch_size",
      "weight_decay", "epochs",          "fine_tune_epochs",    "early_stop_patience",
      "seed",         "adam_beta1",      "adam_beta2",          "adam_eps"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("train config: unknown key '" + it.key() + "'");
  c.base_lr = j.value("base_lr", c.base_lr);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.fine_tune_epochs = j.value("fine_tune_epochs", c.fine_tune_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.seed = j.value("seed", c.seed);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.validate();
  return c;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"train_total", train_total},
          {"train_activity", train_activity},
          {"train_resistance", train_resistance},
          {"val_loss", val_loss},
          {"val_accuracy", val_accuracy},
          {"val_mae", val_mae},
          {"lr", lr},
          {"seconds", seconds}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.value("epoch", 0);
  r.train_total = j.value("train_total", 0.0f);
  r.train_activity = j.value("train_activity", 0.0f);
  r.train_resistance = j.value("train_resistance", 0.0f);
  r.val_loss = j.value("val_loss", 0.0f);
  r.val_accuracy = j.value("val_accuracy", 0.0f);
  r.val_mae = j.value("val_mae", 0.0f);
  r.lr = j.value("lr", 0.0f);
  r.seconds = j.value("seconds", 0.0);
  return r;
}

float lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  return cfg.base_lr * std::pow(cfg.lr_decay_factor, static_cast<float>(epoch / cfg.lr_decay_every));
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState st;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_trainable_param(params.name(i))) continue;
    st.m.add(params.name(i), Tensor::zeros(params.tensor(i).shape));
    st.v.add(params.name(i), Tensor::zeros(params.tensor(i).shape));
  }
  return st;
}

void adam_step(ModelParams& params, const NamedTensors& grads, OptimizerState& state, float lr,
               const TrainConfig& cfg) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor& g = grads.tensor(i);
    for (float v : g.data)
      if (!std::isfinite(v))
        throw NumericError("adam_step: non-finite gradient for " + grads.name(i));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.adam_beta1), t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.adam_beta2), t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    if (!is_trainable_param(name)) continue;
    Tensor& p = params.tensor(i);
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    const bool decay = cfg.weight_decay > 0.0f && !is_decay_exempt(name);
    for (std::size_t e = 0; e < p.data.size(); ++e) {
      if (decay) p.data[e] *= 1.0f - lr * cfg.weight_decay;
      m.data[e] = cfg.adam_beta1 * m.data[e] + (1.0f - cfg.adam_beta1) * g.data[e];
      v.data[e] = cfg.adam_beta2 * v.data[e] + (1.0f - cfg.adam_beta2) * g.data[e] * g.data[e];
      const double mhat = m.data[e] / bc1;
      const double vhat = v.data[e] / bc2;
      p.data[e] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

EvalStats evaluate(const std::vector<LabeledWindow>& set, ModelParams& params,
                   const ModelConfig& cfg, int batch_size) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty set");
  std::mt19937 rng(0);  // unused in eval mode
  double loss = 0.0, correct = 0.0, abs_err = 0.0;
  std::size_t i = 0;
  while (i < set.size()) {
    const std::size_t n = std::min<std::size_t>(batch_size, set.size() - i);
    std::vector<BatchSample> batch(n);
    for (std::size_t b = 0; b < n; ++b)
      batch[b] = {set[i + b].window, set[i + b].activity, set[i + b].resistance};
    BatchOutput out = forward_batch(batch, params, cfg, Mode::eval, rng, nullptr);
    loss += static_cast<double>(out.loss.total) * n;
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor& p = out.activity_probs[b];
      int argmax = 0;
      for (int c = 1; c < p.extent(0); ++c)
        if (p(c) > p(argmax)) argmax = c;
      if (argmax == batch[b].label) correct += 1.0;
      const float clamped = std::min(1.0f, std::max(0.0f, out.resistance[b]));
      abs_err += std::fabs(clamped - batch[b].resistance);
    }
    i += n;
  }
  EvalStats st;
  st.loss = static_cast<float>(loss / static_cast<double>(set.size()));
  st.accuracy = static_cast<float>(correct / static_cast<double>(set.size()));
  st.mae = static_cast<float>(abs_err / static_cast<double>(set.size()));
  return st;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<LabeledWindow>& train_set,
                  const std::vector<LabeledWindow>& val_set, const Checkpoint* resume) {
  model_cfg.validate();
  train_cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: empty train or validation set");

  Checkpoint ck;
  ck.config = model_cfg;
  ck.train_config = train_cfg;
  int start_epoch = 0;
  if (resume) {
    ck.params = resume->params;
    ck.opt = resume->opt;
    ck.history = resume->history;
    start_epoch = resume->epoch + 1;
  } else {
    ck.params = build_model(model_cfg, train_cfg.seed);
    ck.opt = init_optimizer(ck.params);
  }

  ModelParams best_params = ck.params;
  float best_val = std::numeric_limits<float>::infinity();
  int best_epoch = -1;
  int since_improve = 0;
  std::mt19937 dropout_rng(static_cast<std::uint32_t>(train_cfg.seed) ^ 0x9e3779b9u);

  for (int epoch = start_epoch; epoch < train_cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const float lr = lr_at(epoch, train_cfg);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937 shuffle_rng(static_cast<std::uint32_t>(train_cfg.seed + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double ep_total = 0.0, ep_act = 0.0, ep_res = 0.0;
    std::size_t seen = 0;
    bool diverged = false;
    for (std::size_t i = 0; i < order.size() && !diverged; i += train_cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(train_cfg.batch_size, order.size() - i);
      if (n < 2) break;  // BN needs at least 2 samples in train mode
      std::vector<BatchSample> batch(n);
      for (std::size_t b = 0; b < n; ++b) {
        const LabeledWindow& w = train_set[order[i + b]];
        batch[b] = {w.window, w.activity, w.resistance};
      }
      ForwardCachePtr cache;
      BatchOutput out = forward_batch(batch, ck.params, model_cfg, Mode::train, dropout_rng, cache.p);
      if (!std::isfinite(out.loss.total)) {
        diverged = true;
        break;
      }
      NamedTensors grads = backward_batch(batch, out, ck.params, model_cfg, *cache.p);
      adam_step(ck.params, grads, ck.opt, lr, train_cfg);
      ep_total += static_cast<double>(out.loss.total) * n;
      ep_act += static_cast<double>(out.loss.activity_part) * n;
      ep_res += static_cast<double>(out.loss.resistance_part) * n;
      seen += n;
    }
    if (diverged) {
      ck.params = best_params;  // return last good parameters
      break;
    }
    if (seen == 0) throw std::invalid_argument("train: no full batch available (need >= 2 samples)");

    const EvalStats vs = evaluate(val_set, ck.params, model_cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_total = static_cast<float>(ep_total / static_cast<double>(seen));
    rec.train_activity = static_cast<float>(ep_act / static_cast<double>(seen));
    rec.train_resistance = static_cast<float>(ep_res / static_cast<double>(seen));
    rec.val_loss = vs.loss;
    rec.val_accuracy = vs.accuracy;
    rec.val_mae = vs.mae;
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.history.push_back(rec);
    ck.epoch = epoch;

    if (vs.loss < best_val) {
      best_val = vs.loss;
      best_params = ck.params;
      best_epoch = epoch;
      since_improve = 0;
    } else {
      since_improve += 1;
      if (since_improve >= train_cfg.early_stop_patience) break;
    }
  }

  if (best_epoch >= 0) ck.params = best_params;
  TrainResult res;
  res.history = ck.history;
  res.checkpoint = std::move(ck);
  return res;
}

TrainResult fine_tune(const Checkpoint& source, const ModelConfig& new_cfg,
                      const TrainConfig& train_cfg, const std::vector<LabeledWindow>& train_set,
                      const std::vector<LabeledWindow>& val_set) {
  new_cfg.validate();
  ModelParams fresh = build_model(new_cfg, train_cfg.seed);
  ModelParams init;
  const bool head_reset = new_cfg.num_classes != source.config.num_classes;
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const std::string& name = fresh.name(i);
    const bool is_activity_head = name.rfind("activity.", 0) == 0;
    if (source.params.has(name) && !(is_activity_head && head_reset) &&
        source.params.at(name).shape == fresh.tensor(i).shape) {
      init.add(name, source.params.at(name));
    } else {
      init.add(name, fresh.tensor(i));
    }
  }

  TrainConfig cfg = train_cfg;
  cfg.epochs = train_cfg.fine_tune_epochs;
  Checkpoint seed_ck;
  seed_ck.config = new_cfg;
  seed_ck.train_config = cfg;
  seed_ck.params = std::move(init);
  seed_ck.opt = init_optimizer(seed_ck.params);
  seed_ck.epoch = -1;  // resume path starts at epoch 0

  if (cfg.epochs == 0) {
    TrainResult res;
    res.checkpoint = std::move(seed_ck);
    return res;
  }
  return train(new_cfg, cfg, train_set, val_set, &seed_ck);
}

namespace {

void append_le(std::string& buf, const void* p, std::size_t n) {
  buf.append(reinterpret_cast<const char*>(p), n);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  // Tensor table: model params first, then Adam moments.
  std::vector<std::pair<std::string, const Tensor*>> table;
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    table.emplace_back(ck.params.name(i), &ck.params.tensor(i));
  for (std::size_t i = 0; i < ck.opt.m.size(); ++i)
    table.emplace_back("opt.m." + ck.opt.m.name(i), &ck.opt.m.tensor(i));
  for (std::size_t i = 0; i < ck.opt.v.size(); ++i)
    table.emplace_back("opt.v." + ck.opt.v.name(i), &ck.opt.v.tensor(i));

  nlohmann::json jt = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : table) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t->size()) * 4;
    jt.push_back({{"name", name},
                  {"shape", t->shape},
                  {"dtype", "f32"},
                  {"offset", offset},
                  {"length", bytes}});
    offset += bytes;
  }
  nlohmann::json jh = nlohmann::json::array();
  for (const EpochRecord& r : ck.history) jh.push_back(r.to_json());
  const nlohmann::json manifest = {{"tensors", jt},
                                   {"model_config", ck.config.to_json()},
                                   {"train_config", ck.train_config.to_json()},
                                   {"optimizer_step", ck.opt.step},
                                   {"epoch", ck.epoch},
                                   {"history", jh}};
  const std::string mbytes = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot write " + path);
  os.write("MMTL", 4);
  const std::uint32_t version = 1;
  std::string head;
  unsigned char b4[4];
  for (int i = 0; i < 4; ++i) b4[i] = static_cast<unsigned char>((version >> (8 * i)) & 0xff);
  append_le(head, b4, 4);
  const std::uint64_t mlen = mbytes.size();
  unsigned char b8[8];
  for (int i = 0; i < 8; ++i) b8[i] = static_cast<unsigned char>((mlen >> (8 * i)) & 0xff);
  append_le(head, b8, 8);
  os.write(head.data(), static_cast<std::streamsize>(head.size()));
  os.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
  static_assert(sizeof(float) == 4);
  for (const auto& [name, t] : table)
    os.write(reinterpret_cast<const char*>(t->data.data()),
             static_cast<std::streamsize>(t->data.size() * 4));  // little-endian host assumed
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  is.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MMTL", 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  unsigned char b4[4];
  is.read(reinterpret_cast<char*>(b4), 4);
  std::uint32_t version = 0;
  for (int i = 3; i >= 0; --i) version = (version << 8) | b4[i];
  if (version != 1)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  unsigned char b8[8];
  is.read(reinterpret_cast<char*>(b8), 8);
  std::uint64_t mlen = 0;
  for (int i = 7; i >= 0; --i) mlen = (mlen << 8) | b8[i];
  if (16 + mlen > file_size) throw CheckpointError("checkpoint: manifest bounds exceed file");
  std::string mbytes(mlen, '\0');
  is.read(mbytes.data(), static_cast<std::streamsize>(mlen));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mbytes);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: manifest parse error: ") + e.what());
  }

  Checkpoint ck;
  ck.config = ModelConfig::from_json(manifest.at("model_config"));
  ck.train_config = TrainConfig::from_json(manifest.at("train_config"));
  ck.epoch = manifest.value("epoch", 0);
  ck.opt.step = manifest.value("optimizer_step", 0L);
  for (const auto& jr : manifest.value("history", nlohmann::json::array()))
    ck.history.push_back(EpochRecord::from_json(jr));

  const std::uint64_t blob_start = 16 + mlen;
  const std::uint64_t blob_size = file_size - blob_start;
  for (const auto& jt : manifest.at("tensors")) {
    const std::string name = jt.at("name");
    const std::vector<int> shape = jt.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = jt.at("offset");
    const std::uint64_t length = jt.at("length");
    if (jt.at("dtype") != "f32") throw CheckpointError("checkpoint: unsupported dtype");
    if (offset + length > blob_size)
      throw CheckpointError("checkpoint: tensor '" + name + "' bounds exceed file");
    if (Tensor::count(shape) * 4 != length)
      throw CheckpointError("checkpoint: tensor '" + name + "' shape/byte-length mismatch");
    Tensor t(shape);
    is.seekg(static_cast<std::streamoff>(blob_start + offset));
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(length));
    if (!is) throw CheckpointError("checkpoint: truncated tensor data for " + name);
    if (name.rfind("opt.m.", 0) == 0)
      ck.opt.m.add(name.substr(6), std::move(t));
    else if (name.rfind("opt.v.", 0) == 0)
      ck.opt.v.add(name.substr(6), std::move(t));
    else
      ck.params.add(name, std::move(t));
  }
  return ck;
}

}  // namespace mmtl
