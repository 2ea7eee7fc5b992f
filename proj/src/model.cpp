#include "mmtl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>

namespace mmtl {
namespace {

enum class OpKind { PW, DW, STD, BN, ACT, SE, SAVE_RES, ADD_RES };

struct OpDesc {
  OpKind kind;
  std::string name;  // weight name, or prefix for BN/SE
  int stride = 1;
  int padding = 0;
  Activation act = Activation::identity;
};

Activation resolve_act(const ModelConfig& cfg, Activation requested) {
  if (!cfg.enable_swish && requested == Activation::swish) return Activation::relu;
  return requested;
}

std::vector<OpDesc> build_ir(const ModelConfig& cfg) {
  std::vector<OpDesc> ir;
  const Activation main_act = resolve_act(cfg, Activation::swish);
  if (cfg.plain_backbone) {
    const int strides[3] = {2, 2, 1};
    for (int i = 0; i < 3; ++i) {
      const std::string p = "plain" + std::to_string(i);
      ir.push_back({OpKind::STD, p + ".conv.w", strides[i], 2});
      ir.push_back({OpKind::BN, p + ".bn"});
      ir.push_back({OpKind::ACT, "", 1, 0, main_act});
    }
  } else {
    ir.push_back({OpKind::PW, "stem.pw.w"});
    ir.push_back({OpKind::BN, "stem.bn"});
    ir.push_back({OpKind::ACT, "", 1, 0, main_act});
    int in_ch = cfg.stem_channels;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
      const BneckSpec& b = cfg.blocks[i];
      const std::string p = "block" + std::to_string(i);
      const Activation a = resolve_act(cfg, b.act);
      const bool residual = (b.stride == 1 && in_ch == b.out_channels);
      if (residual) ir.push_back({OpKind::SAVE_RES, ""});
      ir.push_back({OpKind::PW, p + ".expand.w"});
      ir.push_back({OpKind::BN, p + ".expand_bn"});
      ir.push_back({OpKind::ACT, "", 1, 0, a});
      ir.push_back({OpKind::DW, p + ".dw.k", b.stride, same_padding(b.kernel_size)});
      ir.push_back({OpKind::BN, p + ".dw_bn"});
      ir.push_back({OpKind::ACT, "", 1, 0, a});
      if (b.use_se) ir.push_back({OpKind::SE, p + ".se"});
      ir.push_back({OpKind::PW, p + ".project.w"});
      ir.push_back({OpKind::BN, p + ".project_bn"});
      if (residual) ir.push_back({OpKind::ADD_RES, ""});
      in_ch = b.out_channels;
    }
  }
  ir.push_back({OpKind::PW, "head.pw.w"});
  ir.push_back({OpKind::BN, "head.bn"});
  ir.push_back({OpKind::ACT, "", 1, 0, main_act});
  return ir;
}

int se_hidden(const ModelConfig& cfg, int channels) {
  return std::max(1, channels / cfg.se_reduction);
}

void add_bn_params(NamedTensors& p, const std::string& prefix, int ch) {
  p.add(prefix + ".gamma", Tensor::full({ch}, 1.0f));
  p.add(prefix + ".beta", Tensor::zeros({ch}));
  p.add(prefix + ".running_mean", Tensor::zeros({ch}));
  p.add(prefix + ".running_var", Tensor::full({ch}, 1.0f));
}

Tensor he_uniform(std::vector<int> shape, int fan_in, std::mt19937& rng) {
  Tensor t(std::move(shape));
  const float bound = std::sqrt(6.0f / static_cast<float>(std::max(1, fan_in)));
  for (float& v : t.data) v = uniform_symmetric(rng, bound);
  return t;
}

Tensor pack3(const std::vector<Tensor>& xs) {
  const int B = static_cast<int>(xs.size());
  const int C = xs[0].extent(0), T = xs[0].extent(1);
  Tensor out({B, C, T});
  for (int b = 0; b < B; ++b)
    std::copy(xs[b].data.begin(), xs[b].data.end(),
              out.data.begin() + static_cast<std::size_t>(b) * C * T);
  return out;
}

std::vector<Tensor> unpack3(const Tensor& x) {
  const int B = x.extent(0), C = x.extent(1), T = x.extent(2);
  std::vector<Tensor> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    out[b] = Tensor({C, T});
    const auto off = static_cast<std::size_t>(b) * C * T;
    std::copy(x.data.begin() + off, x.data.begin() + off + static_cast<std::size_t>(C) * T,
              out[b].data.begin());
  }
  return out;
}

BatchNormState bn_state_from(const ModelParams& params, const std::string& prefix) {
  BatchNormState st;
  st.gamma = params.at(prefix + ".gamma");
  st.beta = params.at(prefix + ".beta");
  st.running_mean = params.at(prefix + ".running_mean");
  st.running_var = params.at(prefix + ".running_var");
  return st;
}

struct SECache {
  Tensor pooled, hidden_pre, hidden, gate;
};

}  // namespace

struct ForwardCache {
  std::vector<OpDesc> ir;
  std::vector<std::vector<Tensor>> op_in;
  std::vector<BatchNormCache> bn;
  std::vector<std::vector<SECache>> se;
  std::vector<Tensor> features;   // post-GAP, pre-dropout [F]
  std::vector<Tensor> dropped;    // head input [F]
  std::vector<Tensor> drop_mask;  // [F]
  int pre_gap_time = 0;
};

ForwardCache* new_forward_cache() { return new ForwardCache(); }
void free_forward_cache(ForwardCache* p) { delete p; }

ModelConfig ModelConfig::default_desk() {
  ModelConfig c;
  c.blocks = {
      {16, 16, 5, 1, true, Activation::swish},  {64, 24, 5, 2, false, Activation::swish},
      {72, 24, 5, 1, false, Activation::swish}, {72, 40, 5, 2, true, Activation::swish},
      {120, 40, 5, 1, true, Activation::swish}, {120, 48, 5, 2, true, Activation::swish},
  };
  return c;
}

void ModelConfig::validate() const {
  if (input_channels < 1 || input_length < 1) throw std::invalid_argument("config: bad input shape");
  if (stem_channels < 1) throw std::invalid_argument("config: stem_channels < 1");
  if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
  if (feature_dim < 1) throw std::invalid_argument("config: feature_dim must be >= 1");
  if (!(loss_alpha >= 0.0f) || !(loss_beta >= 0.0f) || loss_alpha + loss_beta <= 0.0f)
    throw std::invalid_argument("config: loss weights must be nonnegative, not both zero");
  if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
    throw std::invalid_argument("config: dropout_rate must be in [0,1)");
  if (se_reduction < 1) throw std::invalid_argument("config: se_reduction must be >= 1");
  if (single_task != "activity" && single_task != "resistance")
    throw std::invalid_argument("config: single_task must be activity or resistance");
  for (const BneckSpec& b : blocks) {
    if (b.out_channels < 1 || b.expand_channels < b.out_channels)
      throw std::invalid_argument("config: block needs expand_channels >= out_channels >= 1");
    if (b.kernel_size < 1 || b.kernel_size % 2 == 0)
      throw std::invalid_argument("config: block kernel_size must be odd");
    if (b.stride != 1 && b.stride != 2)
      throw std::invalid_argument("config: block stride must be 1 or 2");
  }
  if (plain_backbone && plain_channels < 1)
    throw std::invalid_argument("config: plain_channels must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const BneckSpec& b : blocks) {
    jb.push_back({{"expand_channels", b.expand_channels},
                  {"out_channels", b.out_channels},
                  {"kernel_size", b.kernel_size},
                  {"stride", b.stride},
                  {"use_se", b.use_se},
                  {"activation", activation_to_string(b.act)}});
  }
  return {{"input_channels", input_channels},
          {"input_length", input_length},
          {"stem_channels", stem_channels},
          {"blocks", jb},
          {"feature_dim", feature_dim},
          {"num_classes", num_classes},
          {"dropout_rate", dropout_rate},
          {"se_reduction", se_reduction},
          {"loss_alpha", loss_alpha},
          {"loss_beta", loss_beta},
          {"enable_se", enable_se},
          {"enable_swish", enable_swish},
          {"enable_mtl", enable_mtl},
          {"single_task", single_task},
          {"plain_backbone", plain_backbone},
          {"plain_channels", plain_channels}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c = ModelConfig::default_desk();
  static const std::vector<std::string> known = {
      "input_channels", "input_length", "stem_channels", "blocks",       "feature_dim",
      "num_classes",    "dropout_rate", "se_reduction",  "loss_alpha",   "loss_beta",
      "enable_se",      "enable_swish", "enable_mtl",    "single_task",  "plain_backbone",
      "plain_channels"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("model config: unknown key '" + it.key() + "'");
  }
  c.input_channels = j.value("input_channels", c.input_channels);
  c.input_length = j.value("input_length", c.input_length);
  c.stem_channels = j.value("stem_channels", c.stem_channels);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.se_reduction = j.value("se_reduction", c.se_reduction);
  c.loss_alpha = j.value("loss_alpha", c.loss_alpha);
  c.loss_beta = j.value("loss_beta", c.loss_beta);
  c.enable_se = j.value("enable_se", c.enable_se);
  c.enable_swish = j.value("enable_swish", c.enable_swish);
  c.enable_mtl = j.value("enable_mtl", c.enable_mtl);
  c.single_task = j.value("single_task", c.single_task);
  c.plain_backbone = j.value("plain_backbone", c.plain_backbone);
  c.plain_channels = j.value("plain_channels", c.plain_channels);
  if (j.contains("blocks")) {
    c.blocks.clear();
    for (const auto& jb : j.at("blocks")) {
      for (auto it = jb.begin(); it != jb.end(); ++it) {
        static const std::vector<std::string> bk = {"expand_channels", "out_channels",
                                                    "kernel_size",     "stride",
                                                    "use_se",          "activation"};
        if (std::find(bk.begin(), bk.end(), it.key()) == bk.end())
          throw std::invalid_argument("block config: unknown key '" + it.key() + "'");
      }
      BneckSpec b;
      b.expand_channels = jb.value("expand_channels", b.expand_channels);
      b.out_channels = jb.value("out_channels", b.out_channels);
      b.kernel_size = jb.value("kernel_size", b.kernel_size);
      b.stride = jb.value("stride", b.stride);
      b.use_se = jb.value("use_se", b.use_se);
      b.act = activation_from_string(jb.value("activation", std::string("swish")));
      c.blocks.push_back(b);
    }
  }
  c.validate();
  return c;
}

Tensor& NamedTensors::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("duplicate tensor name: " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  return tensors_.back();
}

Tensor& NamedTensors::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named " + name);
  return tensors_[it->second];
}

const Tensor& NamedTensors::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named " + name);
  return tensors_[it->second];
}

std::size_t NamedTensors::element_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

bool is_trainable_param(const std::string& name) {
  return name.find(".running_") == std::string::npos;
}

bool is_decay_exempt(const std::string& name) {
  auto ends_with = [&](const char* suf) {
    const std::size_t n = std::strlen(suf);
    return name.size() >= n && name.compare(name.size() - n, n, suf) == 0;
  };
  return ends_with(".b") || ends_with(".bias") || ends_with(".beta") || ends_with(".gamma") ||
         ends_with(".b_sq") || ends_with(".b_ex");
}

ModelParams build_model(const ModelConfig& cfg, int seed) {
  cfg.validate();
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  ModelParams p;
  if (cfg.plain_backbone) {
    int in_ch = cfg.input_channels;
    for (int i = 0; i < 3; ++i) {
      const std::string pre = "plain" + std::to_string(i);
      p.add(pre + ".conv.w", he_uniform({cfg.plain_channels, in_ch, 5}, in_ch * 5, rng));
      add_bn_params(p, pre + ".bn", cfg.plain_channels);
      in_ch = cfg.plain_channels;
    }
  } else {
    p.add("stem.pw.w", he_uniform({cfg.stem_channels, cfg.input_channels}, cfg.input_channels, rng));
    add_bn_params(p, "stem.bn", cfg.stem_channels);
    int in_ch = cfg.stem_channels;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
      const BneckSpec& b = cfg.blocks[i];
      const std::string pre = "block" + std::to_string(i);
      p.add(pre + ".expand.w", he_uniform({b.expand_channels, in_ch}, in_ch, rng));
      add_bn_params(p, pre + ".expand_bn", b.expand_channels);
      p.add(pre + ".dw.k", he_uniform({b.expand_channels, b.kernel_size}, b.kernel_size, rng));
      add_bn_params(p, pre + ".dw_bn", b.expand_channels);
      if (b.use_se) {
        const int hidden = se_hidden(cfg, b.expand_channels);
        p.add(pre + ".se.w_sq", he_uniform({hidden, b.expand_channels}, b.expand_channels, rng));
        p.add(pre + ".se.b_sq", Tensor::zeros({hidden}));
        p.add(pre + ".se.w_ex", he_uniform({b.expand_channels, hidden}, hidden, rng));
        p.add(pre + ".se.b_ex", Tensor::zeros({b.expand_channels}));
      }
      p.add(pre + ".project.w", he_uniform({b.out_channels, b.expand_channels}, b.expand_channels, rng));
      add_bn_params(p, pre + ".project_bn", b.out_channels);
      in_ch = b.out_channels;
    }
  }
  const int last_ch = cfg.plain_backbone
                          ? cfg.plain_channels
                          : (cfg.blocks.empty() ? cfg.stem_channels : cfg.blocks.back().out_channels);
  p.add("head.pw.w", he_uniform({cfg.feature_dim, last_ch}, last_ch, rng));
  add_bn_params(p, "head.bn", cfg.feature_dim);
  p.add("activity.W", he_uniform({cfg.num_classes, cfg.feature_dim}, cfg.feature_dim, rng));
  p.add("activity.b", Tensor::zeros({cfg.num_classes}));
  p.add("resist.W", he_uniform({1, cfg.feature_dim}, cfg.feature_dim, rng));
  p.add("resist.b", Tensor::zeros({1}));
  return p;
}

FlopsReport flops_estimate(const ModelConfig& cfg) {
  cfg.validate();
  FlopsReport r;
  auto bn_act = [&](int ch, int t, int times) {
    r.mul_adds += static_cast<std::uint64_t>(2) * ch * t * times;
  };
  auto bn_params = [&](int ch) { r.param_count += static_cast<std::uint64_t>(4) * ch; };
  int t = cfg.input_length;
  int ch = cfg.input_channels;
  if (cfg.plain_backbone) {
    const int strides[3] = {2, 2, 1};
    for (int i = 0; i < 3; ++i) {
      const int to = conv_out_length(t, 5, strides[i], 2);
      r.mul_adds += static_cast<std::uint64_t>(ch) * cfg.plain_channels * 5 * to;
      r.param_count += static_cast<std::uint64_t>(cfg.plain_channels) * ch * 5;
      ch = cfg.plain_channels;
      t = to;
      bn_act(ch, t, 2);
      bn_params(ch);
    }
  } else {
    r.mul_adds += static_cast<std::uint64_t>(ch) * cfg.stem_channels * t;
    r.param_count += static_cast<std::uint64_t>(cfg.stem_channels) * ch;
    ch = cfg.stem_channels;
    bn_act(ch, t, 2);
    bn_params(ch);
    for (const BneckSpec& b : cfg.blocks) {
      r.mul_adds += static_cast<std::uint64_t>(ch) * b.expand_channels * t;
      r.param_count += static_cast<std::uint64_t>(b.expand_channels) * ch;
      bn_act(b.expand_channels, t, 2);
      bn_params(b.expand_channels);
      const int to = conv_out_length(t, b.kernel_size, b.stride, same_padding(b.kernel_size));
      r.mul_adds += static_cast<std::uint64_t>(b.expand_channels) * b.kernel_size * to;
      r.param_count += static_cast<std::uint64_t>(b.expand_channels) * b.kernel_size;
      bn_act(b.expand_channels, to, 2);
      bn_params(b.expand_channels);
      if (b.use_se) {
        const int hidden = se_hidden(cfg, b.expand_channels);
        r.mul_adds += static_cast<std::uint64_t>(2) * b.expand_channels * hidden;
        r.param_count += static_cast<std::uint64_t>(hidden) * b.expand_channels + hidden +
                         static_cast<std::uint64_t>(b.expand_channels) * hidden + b.expand_channels;
      }
      r.mul_adds += static_cast<std::uint64_t>(b.expand_channels) * b.out_channels * to;
      r.param_count += static_cast<std::uint64_t>(b.out_channels) * b.expand_channels;
      bn_act(b.out_channels, to, 1);  // projection BN, no activation
      bn_params(b.out_channels);
      ch = b.out_channels;
      t = to;
    }
  }
  r.mul_adds += static_cast<std::uint64_t>(ch) * cfg.feature_dim * t;
  r.param_count += static_cast<std::uint64_t>(cfg.feature_dim) * ch;
  bn_act(cfg.feature_dim, t, 2);
  bn_params(cfg.feature_dim);
  r.mul_adds += static_cast<std::uint64_t>(cfg.feature_dim) * cfg.num_classes;
  r.mul_adds += static_cast<std::uint64_t>(cfg.feature_dim);
  r.param_count += static_cast<std::uint64_t>(cfg.num_classes) * cfg.feature_dim + cfg.num_classes;
  r.param_count += static_cast<std::uint64_t>(cfg.feature_dim) + 1;
  return r;
}

int match_plain_channels(const ModelConfig& reference) {
  ModelConfig ref = reference;
  ref.plain_backbone = false;
  const std::uint64_t target = flops_estimate(ref).param_count;
  ModelConfig plain = reference;
  plain.plain_backbone = true;
  int best = 4;
  std::uint64_t best_diff = UINT64_MAX;
  for (int h = 4; h <= 512; ++h) {
    plain.plain_channels = h;
    const std::uint64_t pc = flops_estimate(plain).param_count;
    const std::uint64_t diff = pc > target ? pc - target : target - pc;
    if (diff < best_diff) {
      best_diff = diff;
      best = h;
    }
  }
  return best;
}

Tensor se_block(const Tensor& x, const Tensor& w_sq, const Tensor& b_sq, const Tensor& w_ex,
                const Tensor& b_ex) {
  const int C = x.extent(0), T = x.extent(1);
  if (w_sq.extent(1) != C || w_ex.extent(0) != C || w_ex.extent(1) != w_sq.extent(0))
    throw ShapeError("se_block: weight shape mismatch");
  const Tensor pooled = global_avg_pool(x);
  const Tensor hidden = activation(fully_connected(pooled, w_sq, b_sq), Activation::relu);
  const Tensor gate = activation(fully_connected(hidden, w_ex, b_ex), Activation::sigmoid);
  Tensor out({C, T});
  for (int c = 0; c < C; ++c) {
    const float g = gate(c);
    const float* xi = x.row(c);
    float* oc = out.row(c);
    for (int t = 0; t < T; ++t) oc[t] = g * xi[t];
  }
  return out;
}

namespace {

// Runs the backbone IR over a batch; returns pre-dropout features per sample.
std::vector<Tensor> run_backbone(std::vector<Tensor> acts, ModelParams& params,
                                 const ModelConfig& cfg, Mode mode, ForwardCache* cache) {
  const std::vector<OpDesc> ir = build_ir(cfg);
  const int B = static_cast<int>(acts.size());
  if (cache) {
    cache->ir = ir;
    cache->op_in.assign(ir.size(), {});
    cache->bn.assign(ir.size(), {});
    cache->se.assign(ir.size(), {});
  }
  std::vector<std::vector<Tensor>> res_stack;
  for (std::size_t i = 0; i < ir.size(); ++i) {
    const OpDesc& op = ir[i];
    switch (op.kind) {
      case OpKind::PW: {
        const Tensor& w = params.at(op.name);
        if (cache) cache->op_in[i] = acts;
        for (int b = 0; b < B; ++b) acts[b] = conv1d_pointwise(acts[b], w, nullptr);
        break;
      }
      case OpKind::DW: {
        const Tensor& k = params.at(op.name);
        if (cache) cache->op_in[i] = acts;
        for (int b = 0; b < B; ++b)
          acts[b] = conv1d_depthwise(acts[b], k, op.stride, op.padding);
        break;
      }
      case OpKind::STD: {
        const Tensor& w = params.at(op.name);
        if (cache) cache->op_in[i] = acts;
        for (int b = 0; b < B; ++b) acts[b] = conv1d_standard(acts[b], w, op.stride, op.padding);
        break;
      }
      case OpKind::BN: {
        BatchNormState st = bn_state_from(params, op.name);
        Tensor packed = pack3(acts);
        Tensor out = batch_norm(packed, st, mode, cache ? &cache->bn[i] : nullptr);
        acts = unpack3(out);
        if (mode == Mode::train) {
          params.at(op.name + ".running_mean") = st.running_mean;
          params.at(op.name + ".running_var") = st.running_var;
        }
        break;
      }
      case OpKind::ACT: {
        if (cache) cache->op_in[i] = acts;
        for (int b = 0; b < B; ++b) acts[b] = activation(acts[b], op.act);
        break;
      }
      case OpKind::SE: {
        if (!cfg.enable_se) break;
        const Tensor& w_sq = params.at(op.name + ".w_sq");
        const Tensor& b_sq = params.at(op.name + ".b_sq");
        const Tensor& w_ex = params.at(op.name + ".w_ex");
        const Tensor& b_ex = params.at(op.name + ".b_ex");
        if (cache) {
          cache->op_in[i] = acts;
          cache->se[i].resize(static_cast<std::size_t>(B));
        }
        for (int b = 0; b < B; ++b) {
          const Tensor& x = acts[b];
          const int C = x.extent(0), T = x.extent(1);
          Tensor pooled = global_avg_pool(x);
          Tensor hidden_pre = fully_connected(pooled, w_sq, b_sq);
          Tensor hidden = activation(hidden_pre, Activation::relu);
          Tensor gate = activation(fully_connected(hidden, w_ex, b_ex), Activation::sigmoid);
          Tensor out({C, T});
          for (int c = 0; c < C; ++c) {
            const float g = gate(c);
            const float* xi = x.row(c);
            float* oc = out.row(c);
            for (int t = 0; t < T; ++t) oc[t] = g * xi[t];
          }
          if (cache)
            cache->se[i][static_cast<std::size_t>(b)] = {std::move(pooled), std::move(hidden_pre),
                                                         std::move(hidden), std::move(gate)};
          acts[b] = std::move(out);
        }
        break;
      }
      case OpKind::SAVE_RES:
        res_stack.push_back(acts);
        break;
      case OpKind::ADD_RES: {
        const std::vector<Tensor>& saved = res_stack.back();
        for (int b = 0; b < B; ++b)
          for (std::size_t e = 0; e < acts[b].data.size(); ++e)
            acts[b].data[e] += saved[static_cast<std::size_t>(b)].data[e];
        res_stack.pop_back();
        break;
      }
    }
  }
  if (cache) cache->pre_gap_time = acts[0].extent(1);
  std::vector<Tensor> feats(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) feats[static_cast<std::size_t>(b)] = global_avg_pool(acts[b]);
  return feats;
}

struct EffectiveWeights {
  float alpha, beta;
  bool has_resistance;
};

EffectiveWeights effective_weights(const ModelConfig& cfg) {
  if (cfg.enable_mtl) return {cfg.loss_alpha, cfg.loss_beta, true};
  if (cfg.single_task == "activity") return {cfg.loss_alpha, 0.0f, false};
  return {0.0f, cfg.loss_beta, true};
}

}  // namespace

Tensor extract_features(const Tensor& window, ModelParams& params, const ModelConfig& cfg,
                        Mode mode) {
  if (window.rank() != 2 || window.extent(0) != cfg.input_channels)
    throw ShapeError("extract_features: window shape " + shape_str(window.shape) +
                     " does not match config");
  std::vector<Tensor> acts{window};
  return run_backbone(std::move(acts), params, cfg, mode, nullptr)[0];
}

Prediction predict(const Tensor& window, ModelParams& params, const ModelConfig& cfg, Mode mode,
                   std::mt19937& dropout_rng) {
  Tensor f = extract_features(window, params, cfg, mode);
  f = dropout(f, cfg.dropout_rate, mode, dropout_rng);
  Prediction pred;
  pred.activity_probs = softmax(fully_connected(f, params.at("activity.W"), params.at("activity.b")));
  const Tensor r = fully_connected(f, params.at("resist.W"), params.at("resist.b"));
  pred.resistance = r(0);
  pred.has_resistance = effective_weights(cfg).has_resistance;
  return pred;
}

float cross_entropy(const Tensor& probs, int label) {
  if (label < 0 || label >= probs.extent(0))
    throw std::out_of_range("cross_entropy: label out of range");
  return -std::log(std::max(probs(label), 1e-12f));
}

float mse(const Tensor& preds, const Tensor& targets) {
  if (!preds.same_shape(targets)) throw ShapeError("mse: length mismatch");
  if (preds.size() == 0) throw ShapeError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = static_cast<double>(preds.data[i]) - targets.data[i];
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(preds.size()));
}

MtlLoss mtl_loss(const Tensor& activity_probs, int label, float resistance_pred,
                 float resistance_target, float alpha, float beta) {
  if (alpha < 0.0f || beta < 0.0f || alpha + beta <= 0.0f)
    throw std::invalid_argument("mtl_loss: weights must be nonnegative, not both zero");
  MtlLoss l;
  l.activity_part = cross_entropy(activity_probs, label);
  const float d = resistance_pred - resistance_target;
  l.resistance_part = d * d;
  l.total = alpha * l.activity_part + beta * l.resistance_part;
  return l;
}

BatchOutput forward_batch(const std::vector<BatchSample>& batch, ModelParams& params,
                          const ModelConfig& cfg, Mode mode, std::mt19937& dropout_rng,
                          ForwardCache* cache) {
  if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
  const int B = static_cast<int>(batch.size());
  std::vector<Tensor> acts(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const Tensor& w = batch[static_cast<std::size_t>(b)].window;
    if (w.rank() != 2 || w.extent(0) != cfg.input_channels)
      throw ShapeError("forward_batch: window shape mismatch");
    acts[static_cast<std::size_t>(b)] = w;
  }
  std::vector<Tensor> feats = run_backbone(std::move(acts), params, cfg, mode, cache);
  const EffectiveWeights ew = effective_weights(cfg);

  BatchOutput out;
  out.activity_probs.resize(static_cast<std::size_t>(B));
  out.resistance.resize(static_cast<std::size_t>(B));
  if (cache) {
    cache->features = feats;
    cache->dropped.resize(static_cast<std::size_t>(B));
    cache->drop_mask.resize(static_cast<std::size_t>(B));
  }
  double total = 0.0, act_part = 0.0, res_part = 0.0;
  for (int b = 0; b < B; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    Tensor mask;
    Tensor f = dropout(feats[bi], cfg.dropout_rate, mode, dropout_rng, cache ? &mask : nullptr);
    if (cache) {
      cache->dropped[bi] = f;
      cache->drop_mask[bi] = std::move(mask);
    }
    out.activity_probs[bi] =
        softmax(fully_connected(f, params.at("activity.W"), params.at("activity.b")));
    out.resistance[bi] = fully_connected(f, params.at("resist.W"), params.at("resist.b"))(0);
    const float ce = cross_entropy(out.activity_probs[bi], batch[bi].label);
    const float dr = out.resistance[bi] - batch[bi].resistance;
    act_part += ce;
    res_part += static_cast<double>(dr) * dr;
  }
  act_part /= B;
  res_part /= B;
  total = ew.alpha * act_part + ew.beta * res_part;
  out.loss = {static_cast<float>(total), static_cast<float>(act_part),
              static_cast<float>(res_part)};
  return out;
}

NamedTensors backward_batch(const std::vector<BatchSample>& batch, const BatchOutput& out,
                            const ModelParams& params, const ModelConfig& cfg,
                            const ForwardCache& cache) {
  const int B = static_cast<int>(batch.size());
  const EffectiveWeights ew = effective_weights(cfg);
  NamedTensors grads;
  for (std::size_t i = 0; i < params.size(); ++i)
    grads.add(params.name(i), Tensor::zeros(params.tensor(i).shape));

  const Tensor& W_A = params.at("activity.W");
  const Tensor& W_R = params.at("resist.W");
  const int F = cfg.feature_dim;

  std::vector<Tensor> upstream(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const Tensor& probs = out.activity_probs[bi];
    Tensor dlogits = Tensor::zeros({cfg.num_classes});
    if (ew.alpha > 0.0f && probs(batch[bi].label) > 1e-12f) {
      const float s = ew.alpha / static_cast<float>(B);
      for (int c = 0; c < cfg.num_classes; ++c)
        dlogits(c) = s * (probs(c) - (c == batch[bi].label ? 1.0f : 0.0f));
    }
    const float dres =
        ew.beta > 0.0f
            ? 2.0f * ew.beta / static_cast<float>(B) * (out.resistance[bi] - batch[bi].resistance)
            : 0.0f;

    Tensor dF = Tensor::zeros({F});
    const Tensor& f = cache.dropped[bi];
    {
      Tensor& dWA = grads.at("activity.W");
      Tensor& dbA = grads.at("activity.b");
      for (int c = 0; c < cfg.num_classes; ++c) {
        const float u = dlogits(c);
        dbA(c) += u;
        const float* wr = W_A.row(c);
        float* dwr = dWA.row(c);
        for (int i = 0; i < F; ++i) {
          dwr[i] += u * f(i);
          dF(i) += u * wr[i];
        }
      }
      Tensor& dWR = grads.at("resist.W");
      Tensor& dbR = grads.at("resist.b");
      dbR(0) += dres;
      const float* wr = W_R.row(0);
      float* dwr = dWR.row(0);
      for (int i = 0; i < F; ++i) {
        dwr[i] += dres * f(i);
        dF(i) += dres * wr[i];
      }
    }
    for (int i = 0; i < F; ++i) dF(i) *= cache.drop_mask[bi](i);
    upstream[bi] = global_avg_pool_backward(cache.pre_gap_time, dF);
  }

  std::vector<std::vector<Tensor>> res_grad_stack;
  for (std::size_t i = cache.ir.size(); i-- > 0;) {
    const OpDesc& op = cache.ir[i];
    switch (op.kind) {
      case OpKind::PW: {
        const Tensor& w = params.at(op.name);
        Tensor& dw = grads.at(op.name);
        for (int b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          LayerGrads lg = conv1d_pointwise_backward(cache.op_in[i][bi], w, false, upstream[bi]);
          const Tensor& pg = lg.param_grads.at("weights");
          for (std::size_t e = 0; e < dw.data.size(); ++e) dw.data[e] += pg.data[e];
          upstream[bi] = std::move(lg.input_grad);
        }
        break;
      }
      case OpKind::DW: {
        const Tensor& k = params.at(op.name);
        Tensor& dk = grads.at(op.name);
        for (int b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          LayerGrads lg =
              conv1d_depthwise_backward(cache.op_in[i][bi], k, op.stride, op.padding, upstream[bi]);
          const Tensor& pg = lg.param_grads.at("kernels");
          for (std::size_t e = 0; e < dk.data.size(); ++e) dk.data[e] += pg.data[e];
          upstream[bi] = std::move(lg.input_grad);
        }
        break;
      }
      case OpKind::STD: {
        const Tensor& w = params.at(op.name);
        Tensor& dw = grads.at(op.name);
        for (int b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          LayerGrads lg =
              conv1d_standard_backward(cache.op_in[i][bi], w, op.stride, op.padding, upstream[bi]);
          const Tensor& pg = lg.param_grads.at("weights");
          for (std::size_t e = 0; e < dw.data.size(); ++e) dw.data[e] += pg.data[e];
          upstream[bi] = std::move(lg.input_grad);
        }
        break;
      }
      case OpKind::BN: {
        BatchNormState st = bn_state_from(params, op.name);
        Tensor up3 = pack3(upstream);
        LayerGrads lg = batch_norm_backward(up3, st, cache.bn[i]);
        upstream = unpack3(lg.input_grad);
        Tensor& dg = grads.at(op.name + ".gamma");
        Tensor& db = grads.at(op.name + ".beta");
        const Tensor& pg = lg.param_grads.at("gamma");
        const Tensor& pb = lg.param_grads.at("beta");
        for (std::size_t e = 0; e < dg.data.size(); ++e) {
          dg.data[e] += pg.data[e];
          db.data[e] += pb.data[e];
        }
        break;
      }
      case OpKind::ACT: {
        for (int b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          upstream[bi] = activation_backward(cache.op_in[i][bi], op.act, upstream[bi]);
        }
        break;
      }
      case OpKind::SE: {
        if (!cfg.enable_se) break;
        const Tensor& w_sq = params.at(op.name + ".w_sq");
        const Tensor& w_ex = params.at(op.name + ".w_ex");
        Tensor& dw_sq = grads.at(op.name + ".w_sq");
        Tensor& db_sq = grads.at(op.name + ".b_sq");
        Tensor& dw_ex = grads.at(op.name + ".w_ex");
        Tensor& db_ex = grads.at(op.name + ".b_ex");
        const int C = w_ex.extent(0), H = w_ex.extent(1);
        for (int b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          const Tensor& x = cache.op_in[i][bi];
          const SECache& sc = cache.se[i][bi];
          const Tensor& gout = upstream[bi];
          const int T = x.extent(1);
          Tensor dgate({C});
          Tensor dx({C, T});
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const float* xi = x.row(c);
            const float* go = gout.row(c);
            float* dxi = dx.row(c);
            const float g = sc.gate(c);
            for (int t = 0; t < T; ++t) {
              acc += static_cast<double>(go[t]) * xi[t];
              dxi[t] = go[t] * g;
            }
            dgate(c) = static_cast<float>(acc);
          }
          Tensor dgpre({C});
          for (int c = 0; c < C; ++c) {
            const float g = sc.gate(c);
            dgpre(c) = dgate(c) * g * (1.0f - g);
          }
          Tensor dh = Tensor::zeros({H});
          for (int c = 0; c < C; ++c) {
            const float u = dgpre(c);
            db_ex(c) += u;
            const float* wr = w_ex.row(c);
            float* dwr = dw_ex.row(c);
            for (int h = 0; h < H; ++h) {
              dwr[h] += u * sc.hidden(h);
              dh(h) += u * wr[h];
            }
          }
          Tensor dpooled = Tensor::zeros({C});
          for (int h = 0; h < H; ++h) {
            const float u = sc.hidden_pre(h) > 0.0f ? dh(h) : 0.0f;
            db_sq(h) += u;
            const float* wr = w_sq.row(h);
            float* dwr = dw_sq.row(h);
            for (int c = 0; c < C; ++c) {
              dwr[c] += u * sc.pooled(c);
              dpooled(c) += u * wr[c];
            }
          }
          for (int c = 0; c < C; ++c) {
            const float add = dpooled(c) / static_cast<float>(T);
            float* dxi = dx.row(c);
            for (int t = 0; t < T; ++t) dxi[t] += add;
          }
          upstream[bi] = std::move(dx);
        }
        break;
      }
      case OpKind::ADD_RES:
        res_grad_stack.push_back(upstream);
        break;
      case OpKind::SAVE_RES: {
        const std::vector<Tensor>& saved = res_grad_stack.back();
        for (int b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          for (std::size_t e = 0; e < upstream[bi].data.size(); ++e)
            upstream[bi].data[e] += saved[bi].data[e];
        }
        res_grad_stack.pop_back();
        break;
      }
    }
  }
  return grads;
}

}  // namespace mmtl
