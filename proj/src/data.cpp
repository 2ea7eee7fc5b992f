#include "mmtl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace mmtl {
namespace {

constexpr float kGravity = 9.80665f;
constexpr float kSmaRef = 30.0f;   // m/s^2 aggregate at full motion intensity
constexpr float kSmaKappa = 0.15f;

std::vector<float> read_float_line(const std::string& line) {
  std::vector<float> vals;
  std::istringstream ss(line);
  float v;
  while (ss >> v) vals.push_back(v);
  return vals;
}

bool parse_float(const std::string& s, float& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtof(s.c_str(), &end);
  if (end == s.c_str()) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r' || *end == '\n') ++end;
  return *end == '\0' && std::isfinite(out);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}
void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 4);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 8);
}
void write_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}
std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
float read_f32(std::istream& is) {
  const std::uint32_t u = read_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

float gaussian(std::mt19937& rng) {
  // Box-Muller on the portable uniform stream.
  float u1 = uniform01(rng);
  if (u1 < 1e-12f) u1 = 1e-12f;
  const float u2 = uniform01(rng);
  return std::sqrt(-2.0f * std::log(u1)) *
         std::cos(2.0f * 3.14159265358979323846f * u2);
}

}  // namespace

float resistance_base(CanonicalActivity a) {
  switch (a) {
    case CanonicalActivity::lying: return 0.05f;
    case CanonicalActivity::sitting: return 0.10f;
    case CanonicalActivity::standing: return 0.15f;
    case CanonicalActivity::walking: return 0.45f;
    case CanonicalActivity::descending_stairs: return 0.55f;
    case CanonicalActivity::ascending_stairs: return 0.70f;
    case CanonicalActivity::jogging: return 0.85f;
    case CanonicalActivity::cycling: return 0.60f;
    case CanonicalActivity::jumping: return 0.90f;
    // MHEALTH-specific trunk/limb exercises.
    case CanonicalActivity::waist_bends: return 0.35f;
    case CanonicalActivity::arm_elevation: return 0.30f;
    case CanonicalActivity::knees_bending: return 0.50f;
  }
  throw DataError("resistance_base: unmapped activity");
}

std::vector<std::string> uci_har_class_names() {
  return {"WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING"};
}
std::vector<std::string> wisdm_class_names() {
  return {"Walking", "Jogging", "Upstairs", "Downstairs", "Sitting", "Standing"};
}
std::vector<std::string> mhealth_class_names() {
  return {"Standing still",
          "Sitting and relaxing",
          "Lying down",
          "Walking",
          "Climbing stairs",
          "Waist bends forward",
          "Frontal elevation of arms",
          "Knees bending",
          "Cycling",
          "Jogging",
          "Running",
          "Jump front and back"};
}

static const std::array<CanonicalActivity, 6> kUciCanonical = {
    CanonicalActivity::walking,           CanonicalActivity::ascending_stairs,
    CanonicalActivity::descending_stairs, CanonicalActivity::sitting,
    CanonicalActivity::standing,          CanonicalActivity::lying};

static const std::array<CanonicalActivity, 6> kWisdmCanonical = {
    CanonicalActivity::walking,           CanonicalActivity::jogging,
    CanonicalActivity::ascending_stairs,  CanonicalActivity::descending_stairs,
    CanonicalActivity::sitting,           CanonicalActivity::standing};

static const std::array<CanonicalActivity, 12> kMhealthCanonical = {
    CanonicalActivity::standing,      CanonicalActivity::sitting,
    CanonicalActivity::lying,         CanonicalActivity::walking,
    CanonicalActivity::ascending_stairs, CanonicalActivity::waist_bends,
    CanonicalActivity::arm_elevation, CanonicalActivity::knees_bending,
    CanonicalActivity::cycling,       CanonicalActivity::jogging,
    CanonicalActivity::jogging,       CanonicalActivity::jumping};

std::vector<float> median3(const std::vector<float>& x) {
  if (x.size() < 3) return x;
  auto med = [](float a, float b, float c) {
    return std::max(std::min(a, b), std::min(std::max(a, b), c));
  };
  const std::size_t n = x.size();
  std::vector<float> out(n);
  out.front() = med(x[0], x[0], x[1]);  // replicated left edge
  for (std::size_t i = 1; i + 1 < n; ++i) out[i] = med(x[i - 1], x[i], x[i + 1]);
  out.back() = med(x[n - 2], x[n - 1], x[n - 1]);  // replicated right edge
  return out;
}

Recording denoise(const Recording& rec) {
  Recording out = rec;
  for (auto& ch : out.channels) ch = median3(ch);
  return out;
}

namespace {

Tensor denoise_window(const Tensor& w) {
  const int C = w.extent(0), T = w.extent(1);
  Tensor out({C, T});
  for (int c = 0; c < C; ++c) {
    std::vector<float> ch(w.row(c), w.row(c) + T);
    ch = median3(ch);
    std::copy(ch.begin(), ch.end(), out.row(c));
  }
  return out;
}

float compute_sma(const Tensor& window, const std::vector<int>& accel_channels,
                  float accel_scale) {
  const int T = window.extent(1);
  double acc = 0.0;
  for (int c : accel_channels) {
    const float* xi = window.row(c);
    for (int t = 0; t < T; ++t) acc += std::fabs(static_cast<double>(xi[t]) * accel_scale);
  }
  return static_cast<float>(acc / T);
}

float resistance_from_sma(float sma, CanonicalActivity activity) {
  const float norm = std::min(sma / kSmaRef, 1.0f);
  const float r = resistance_base(activity) + kSmaKappa * (norm - 0.5f);
  return std::min(1.0f, std::max(0.0f, r));
}

}  // namespace

float synthesize_resistance(const Tensor& window, CanonicalActivity activity,
                            const std::vector<int>& accel_channels) {
  return resistance_from_sma(compute_sma(window, accel_channels, 1.0f), activity);
}

UciHar parse_uci_har(const std::string& root_dir) {
  static const char* kSignals[9] = {"body_acc_x",  "body_acc_y",  "body_acc_z",
                                    "total_acc_x", "total_acc_y", "total_acc_z",
                                    "body_gyro_x", "body_gyro_y", "body_gyro_z"};
  UciHar out;
  for (const std::string part : {"train", "test"}) {
    const fs::path base = fs::path(root_dir) / part;
    Dataset& ds = part == "train" ? out.train : out.test;
    ds.name = "uci-har/" + part;
    ds.sample_rate_hz = 50.0f;
    ds.class_names = uci_har_class_names();
    for (const char* s : kSignals) ds.channel_names.push_back(s);

    std::vector<int> labels, subjects;
    {
      std::ifstream yf(base / ("y_" + part + ".txt"));
      if (!yf) throw DataError("uci-har: missing " + (base / ("y_" + part + ".txt")).string());
      int v;
      while (yf >> v) labels.push_back(v);
      std::ifstream sf(base / ("subject_" + part + ".txt"));
      if (!sf) throw DataError("uci-har: missing subject file for " + part);
      while (sf >> v) subjects.push_back(v);
    }
    if (labels.size() != subjects.size())
      throw DataError("uci-har: label/subject count mismatch in " + part);

    std::vector<std::vector<std::vector<float>>> signals(9);
    for (int s = 0; s < 9; ++s) {
      const fs::path f = base / "Inertial Signals" / (std::string(kSignals[s]) + "_" + part + ".txt");
      std::ifstream in(f);
      if (!in) throw DataError("uci-har: missing " + f.string());
      std::string line;
      while (std::getline(in, line)) {
        std::vector<float> row = read_float_line(line);
        if (row.empty()) continue;
        if (row.size() != 128)
          throw DataError("uci-har: expected 128 samples per row in " + f.string());
        signals[s].push_back(std::move(row));
      }
      if (signals[s].size() != labels.size())
        throw DataError("uci-har: row count mismatch vs label file in " + f.string());
    }

    const std::vector<int> accel = {3, 4, 5};  // total_acc, units of g
    for (std::size_t w = 0; w < labels.size(); ++w) {
      Tensor win({9, 128});
      for (int s = 0; s < 9; ++s)
        std::copy(signals[s][w].begin(), signals[s][w].end(), win.row(s));
      win = denoise_window(win);
      const int label = labels[w];
      if (label < 1 || label > 6) throw DataError("uci-har: label out of range 1-6");
      LabeledWindow lw;
      lw.activity = label - 1;
      lw.subject_id = subjects[w];
      lw.source = "uci-har";
      lw.resistance = resistance_from_sma(compute_sma(win, accel, kGravity),
                                          kUciCanonical[static_cast<std::size_t>(label - 1)]);
      lw.window = std::move(win);
      ds.windows.push_back(std::move(lw));
    }
  }
  return out;
}

std::vector<Recording> parse_wisdm(const std::string& raw_file, ParseStats* stats) {
  std::ifstream in(raw_file);
  if (!in) throw DataError("wisdm: cannot open " + raw_file);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string all = buf.str();

  const std::vector<std::string> classes = wisdm_class_names();
  ParseStats st;
  std::vector<Recording> recs;
  int cur_user = -1, cur_act = -1;

  std::size_t pos = 0;
  while (pos < all.size()) {
    std::size_t semi = all.find(';', pos);
    std::string chunk =
        trim(semi == std::string::npos ? all.substr(pos) : all.substr(pos, semi - pos));
    pos = semi == std::string::npos ? all.size() : semi + 1;
    if (chunk.empty()) continue;
    st.total_rows++;

    std::vector<std::string> fields;
    std::size_t fp = 0;
    while (true) {
      std::size_t comma = chunk.find(',', fp);
      fields.push_back(trim(comma == std::string::npos ? chunk.substr(fp)
                                                       : chunk.substr(fp, comma - fp)));
      if (comma == std::string::npos) break;
      fp = comma + 1;
    }
    // Some published rows carry a trailing empty field before the ';'.
    while (fields.size() > 6 && fields.back().empty()) fields.pop_back();

    bool ok = fields.size() == 6;
    int user = 0, act = -1;
    float x = 0, y = 0, z = 0;
    if (ok) {
      try {
        user = std::stoi(fields[0]);
      } catch (...) {
        ok = false;
      }
    }
    if (ok) {
      auto it = std::find(classes.begin(), classes.end(), fields[1]);
      if (it == classes.end())
        ok = false;
      else
        act = static_cast<int>(it - classes.begin());
    }
    if (ok) ok = parse_float(fields[3], x) && parse_float(fields[4], y) && parse_float(fields[5], z);
    if (!ok) {
      st.skipped++;
      continue;
    }
    st.accepted++;
    if (user != cur_user || act != cur_act || recs.empty()) {
      Recording r;
      r.subject_id = user;
      r.activity_id = act;
      r.sample_rate_hz = 20.0f;
      r.channel_names = {"acc_x", "acc_y", "acc_z"};
      r.channels.assign(3, {});
      recs.push_back(std::move(r));
      cur_user = user;
      cur_act = act;
    }
    Recording& r = recs.back();
    r.channels[0].push_back(x);
    r.channels[1].push_back(y);
    r.channels[2].push_back(z);
  }
  if (st.total_rows > 0 && st.skipped * 20 > st.total_rows)
    throw DataError("wisdm: more than 5% malformed rows (" + std::to_string(st.skipped) + " of " +
                    std::to_string(st.total_rows) + ")");
  if (stats) *stats = st;
  return recs;
}

std::vector<Recording> parse_mhealth(const std::string& dir, ParseStats* stats) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw DataError("mhealth: not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("mHealth_subject", 0) == 0 && e.path().extension() == ".log")
      files.push_back(e.path());
  }
  if (files.empty()) throw DataError("mhealth: no mHealth_subject*.log files in " + dir);
  std::sort(files.begin(), files.end());

  // Raw column layout: chest acc 0-2, ECG 3-4, ankle acc 5-7, ankle gyro 8-10,
  // ankle mag 11-13, arm acc 14-16, arm gyro 17-19, arm mag 20-22, label 23.
  // Default model channels: accelerometers + gyroscopes (ECG and magnetometers
  // are parsed but excluded).
  static const int kSelected[15] = {0, 1, 2, 5, 6, 7, 8, 9, 10, 14, 15, 16, 17, 18, 19};
  static const char* kNames[15] = {"acc_chest_x", "acc_chest_y", "acc_chest_z",
                                   "acc_ankle_x", "acc_ankle_y", "acc_ankle_z",
                                   "gyro_ankle_x", "gyro_ankle_y", "gyro_ankle_z",
                                   "acc_arm_x",  "acc_arm_y",  "acc_arm_z",
                                   "gyro_arm_x", "gyro_arm_y", "gyro_arm_z"};

  ParseStats st;
  std::vector<Recording> recs;
  for (const fs::path& f : files) {
    int subject = 0;
    {
      std::string n = f.stem().string();
      subject = std::atoi(n.substr(std::strlen("mHealth_subject")).c_str());
    }
    std::ifstream in(f);
    if (!in) throw DataError("mhealth: cannot open " + f.string());
    std::string line;
    int cur_label = 0;
    Recording* cur = nullptr;
    std::size_t ncols = 0;
    while (std::getline(in, line)) {
      const std::vector<float> row = read_float_line(line);
      if (row.empty()) continue;
      if (ncols == 0) ncols = row.size();
      if (row.size() != ncols)
        throw DataError("mhealth: inconsistent column count in " + f.string());
      if (ncols < 24) throw DataError("mhealth: expected 24 columns in " + f.string());
      st.total_rows++;
      const int label = static_cast<int>(row[23]);
      if (label == 0) {
        st.skipped++;
        cur = nullptr;
        cur_label = 0;
        continue;
      }
      st.accepted++;
      if (cur == nullptr || label != cur_label) {
        Recording r;
        r.subject_id = subject;
        r.activity_id = label - 1;
        r.sample_rate_hz = 50.0f;
        for (const char* n : kNames) r.channel_names.push_back(n);
        r.channels.assign(15, {});
        recs.push_back(std::move(r));
        cur = &recs.back();
        cur_label = label;
      }
      for (int c = 0; c < 15; ++c)
        cur->channels[static_cast<std::size_t>(c)].push_back(row[static_cast<std::size_t>(kSelected[c])]);
    }
  }
  if (stats) *stats = st;
  return recs;
}

NormalizerStats fit_normalizer(const std::vector<LabeledWindow>& train_windows) {
  if (train_windows.empty()) throw DataError("fit_normalizer: empty training set");
  const int C = train_windows[0].window.extent(0);
  std::vector<double> sum(static_cast<std::size_t>(C), 0.0), sq(static_cast<std::size_t>(C), 0.0);
  std::size_t n = 0;
  for (const LabeledWindow& w : train_windows) {
    if (w.window.extent(0) != C) throw DataError("fit_normalizer: channel count mismatch");
    const int T = w.window.extent(1);
    for (int c = 0; c < C; ++c) {
      const float* xi = w.window.row(c);
      for (int t = 0; t < T; ++t) {
        sum[static_cast<std::size_t>(c)] += xi[t];
        sq[static_cast<std::size_t>(c)] += static_cast<double>(xi[t]) * xi[t];
      }
    }
    n += static_cast<std::size_t>(w.window.extent(1));
  }
  NormalizerStats st;
  st.mean.resize(static_cast<std::size_t>(C));
  st.std.resize(static_cast<std::size_t>(C));
  st.zero_variance.assign(static_cast<std::size_t>(C), false);
  for (int c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double m = sum[ci] / static_cast<double>(n);
    double var = sq[ci] / static_cast<double>(n) - m * m;
    if (var < 0.0) var = 0.0;
    st.mean[ci] = static_cast<float>(m);
    if (var < 1e-12) {
      st.std[ci] = 1.0f;
      st.zero_variance[ci] = true;
    } else {
      st.std[ci] = static_cast<float>(std::sqrt(var));
    }
  }
  return st;
}

Tensor apply_normalizer(const Tensor& window, const NormalizerStats& stats) {
  const int C = window.extent(0), T = window.extent(1);
  if (static_cast<std::size_t>(C) != stats.mean.size())
    throw DataError("apply_normalizer: channel count mismatch");
  Tensor out({C, T});
  for (int c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const float m = stats.mean[ci], inv = 1.0f / stats.std[ci];
    const float* xi = window.row(c);
    float* oc = out.row(c);
    for (int t = 0; t < T; ++t) oc[t] = (xi[t] - m) * inv;
  }
  return out;
}

std::vector<Tensor> segment(const Recording& rec, int window_len, float overlap_fraction) {
  if (overlap_fraction < 0.0f || overlap_fraction >= 1.0f)
    throw DataError("segment: overlap must be in [0,1)");
  const auto len = static_cast<long>(rec.length());
  std::vector<Tensor> out;
  if (len < window_len) return out;
  int stride = static_cast<int>(std::lround(window_len * (1.0f - overlap_fraction)));
  if (stride < 1) stride = 1;
  const int C = static_cast<int>(rec.channels.size());
  const long count = (len - window_len) / stride + 1;
  out.reserve(static_cast<std::size_t>(count));
  for (long w = 0; w < count; ++w) {
    const long start = w * stride;
    Tensor win({C, window_len});
    for (int c = 0; c < C; ++c)
      std::copy(rec.channels[static_cast<std::size_t>(c)].begin() + start,
                rec.channels[static_cast<std::size_t>(c)].begin() + start + window_len,
                win.row(c));
    out.push_back(std::move(win));
  }
  return out;
}

std::vector<int> accel_channel_indices(const std::vector<std::string>& channel_names) {
  std::vector<int> out;
  for (std::size_t i = 0; i < channel_names.size(); ++i)
    if (channel_names[i].find("acc") != std::string::npos) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> triple_starts(const std::vector<std::string>& channel_names) {
  auto strip_axis = [](const std::string& n) { return n.substr(0, n.find_last_of('_')); };
  auto axis = [](const std::string& n) {
    const std::size_t p = n.find_last_of('_');
    return p == std::string::npos ? std::string() : n.substr(p + 1);
  };
  std::vector<int> out;
  for (std::size_t i = 0; i + 2 < channel_names.size(); ++i) {
    if (axis(channel_names[i]) == "x" && axis(channel_names[i + 1]) == "y" &&
        axis(channel_names[i + 2]) == "z" &&
        strip_axis(channel_names[i]) == strip_axis(channel_names[i + 1]) &&
        strip_axis(channel_names[i]) == strip_axis(channel_names[i + 2])) {
      out.push_back(static_cast<int>(i));
      i += 2;
    }
  }
  return out;
}

Tensor augment(const Tensor& window, std::mt19937& rng, const AugmentOps& ops,
               const std::vector<int>& triples) {
  const int C = window.extent(0), T = window.extent(1);
  Tensor out = window;
  if (ops.crop && T >= 4) {
    const int len90 = std::max(2, static_cast<int>(std::lround(0.9 * T)));
    const int max_start = T - len90;
    const int start = max_start > 0 ? static_cast<int>(uniform01(rng) * max_start) : 0;
    Tensor cropped({C, T});
    for (int c = 0; c < C; ++c) {
      const float* xi = out.row(c);
      float* oc = cropped.row(c);
      for (int t = 0; t < T; ++t) {
        const float pos = start + static_cast<float>(t) * (len90 - 1) / (T - 1);
        const int lo = static_cast<int>(pos);
        const int hi = std::min(lo + 1, T - 1);
        const float frac = pos - lo;
        oc[t] = xi[lo] * (1.0f - frac) + xi[hi] * frac;
      }
    }
    out = std::move(cropped);
  }
  if (ops.rotate) {
    if (triples.empty() || static_cast<int>(triples.size()) * 3 != C)
      throw DataError("augment: channels not partitionable into 3-axis triples");
    // Uniform random axis, angle U(-20, +20) degrees, Rodrigues rotation.
    float ax = gaussian(rng), ay = gaussian(rng), az = gaussian(rng);
    float n = std::sqrt(ax * ax + ay * ay + az * az);
    if (n < 1e-6f) {
      ax = 1.0f;
      ay = az = 0.0f;
      n = 1.0f;
    }
    ax /= n;
    ay /= n;
    az /= n;
    const float angle = (2.0f * uniform01(rng) - 1.0f) * 20.0f * 3.14159265f / 180.0f;
    const float cs = std::cos(angle), sn = std::sin(angle), omc = 1.0f - cs;
    const float R[3][3] = {
        {cs + ax * ax * omc, ax * ay * omc - az * sn, ax * az * omc + ay * sn},
        {ay * ax * omc + az * sn, cs + ay * ay * omc, ay * az * omc - ax * sn},
        {az * ax * omc - ay * sn, az * ay * omc + ax * sn, cs + az * az * omc}};
    for (int s : triples) {
      for (int t = 0; t < T; ++t) {
        const float v[3] = {out(s, t), out(s + 1, t), out(s + 2, t)};
        for (int i = 0; i < 3; ++i)
          out(s + i, t) = R[i][0] * v[0] + R[i][1] * v[1] + R[i][2] * v[2];
      }
    }
  }
  if (ops.flip) {
    for (int c = 0; c < C; ++c) {
      float* xi = out.row(c);
      std::reverse(xi, xi + T);
    }
  }
  return out;
}

std::vector<LabeledWindow> rebalance(const std::vector<LabeledWindow>& windows,
                                     RebalanceStrategy strategy, std::mt19937& rng) {
  if (strategy == RebalanceStrategy::none) return windows;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < windows.size(); ++i) by_class[windows[i].activity].push_back(i);
  if (by_class.empty()) throw DataError("rebalance: no classes present");

  std::size_t mx = 0, mn = SIZE_MAX;
  for (const auto& [cls, idx] : by_class) {
    mx = std::max(mx, idx.size());
    mn = std::min(mn, idx.size());
  }
  std::vector<LabeledWindow> out;
  if (strategy == RebalanceStrategy::oversample) {
    out = windows;
    for (auto& [cls, idx] : by_class) {
      std::size_t need = mx - idx.size();
      for (std::size_t i = 0; i < need; ++i) {
        const std::size_t pick = static_cast<std::size_t>(uniform01(rng) * idx.size());
        out.push_back(windows[idx[std::min(pick, idx.size() - 1)]]);
      }
    }
  } else {
    for (auto& [cls, idx] : by_class) {
      std::vector<std::size_t> shuffled = idx;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      shuffled.resize(mn);
      std::sort(shuffled.begin(), shuffled.end());
      for (std::size_t i : shuffled) out.push_back(windows[i]);
    }
  }
  return out;
}

SplitResult split(const std::vector<LabeledWindow>& windows, float train_fraction, unsigned seed,
                  SplitMode mode) {
  if (train_fraction <= 0.0f || train_fraction >= 1.0f)
    throw DataError("split: train_fraction must be in (0,1)");
  SplitResult res;
  std::mt19937 rng(seed);
  if (mode == SplitMode::random) {
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train =
        static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(windows.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? res.train : res.val).push_back(windows[idx[i]]);
  } else {
    std::set<int> subjects;
    for (const LabeledWindow& w : windows) subjects.insert(w.subject_id);
    std::vector<int> subj(subjects.begin(), subjects.end());
    std::shuffle(subj.begin(), subj.end(), rng);
    std::map<int, std::size_t> counts;
    for (const LabeledWindow& w : windows) counts[w.subject_id]++;
    const std::size_t target =
        static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(windows.size())));
    std::set<int> train_subj;
    std::size_t acc = 0;
    for (int s : subj) {
      if (acc >= target) break;
      train_subj.insert(s);
      acc += counts[s];
    }
    if (train_subj.empty() && !subj.empty()) train_subj.insert(subj[0]);
    for (const LabeledWindow& w : windows)
      (train_subj.count(w.subject_id) ? res.train : res.val).push_back(w);
  }
  return res;
}

void save_window_store(const std::string& path, const std::vector<LabeledWindow>& windows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("window store: cannot write " + path);
  os.write("MMWD", 4);
  write_u32(os, 1);
  write_u64(os, windows.size());
  for (const LabeledWindow& w : windows) {
    write_u16(os, static_cast<std::uint16_t>(w.window.extent(0)));
    write_u16(os, static_cast<std::uint16_t>(w.window.extent(1)));
    os.put(static_cast<char>(w.activity));
    write_f32(os, w.resistance);
    write_u16(os, static_cast<std::uint16_t>(w.subject_id));
    for (float v : w.window.data) write_f32(os, v);
  }
  if (!os) throw DataError("window store: write failed for " + path);
}

std::vector<LabeledWindow> load_window_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("window store: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MMWD", 4) != 0)
    throw DataError("window store: bad magic in " + path);
  const std::uint32_t version = read_u32(is);
  if (version != 1) throw DataError("window store: unsupported version");
  const std::uint64_t count = read_u64(is);
  std::vector<LabeledWindow> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    LabeledWindow w;
    const int C = read_u16(is);
    const int T = read_u16(is);
    w.activity = static_cast<unsigned char>(is.get());
    w.resistance = read_f32(is);
    w.subject_id = read_u16(is);
    w.window = Tensor({C, T});
    for (float& v : w.window.data) v = read_f32(is);
    if (!is) throw DataError("window store: truncated file " + path);
    out.push_back(std::move(w));
  }
  return out;
}

Dataset windows_from_recordings(const std::vector<Recording>& recs, const std::string& name,
                                const std::vector<std::string>& class_names,
                                const std::vector<CanonicalActivity>& canonical, int window_len,
                                float overlap, float accel_scale) {
  Dataset ds;
  ds.name = name;
  ds.class_names = class_names;
  if (!recs.empty()) {
    ds.channel_names = recs[0].channel_names;
    ds.sample_rate_hz = recs[0].sample_rate_hz;
  }
  const std::vector<int> accel = accel_channel_indices(ds.channel_names);
  for (const Recording& rec : recs) {
    const Recording clean = denoise(rec);
    for (Tensor& win : segment(clean, window_len, overlap)) {
      if (rec.activity_id < 0 || rec.activity_id >= static_cast<int>(canonical.size()))
        throw DataError("windows_from_recordings: activity id out of range");
      LabeledWindow lw;
      lw.activity = rec.activity_id;
      lw.subject_id = rec.subject_id;
      lw.source = name;
      lw.resistance =
          resistance_from_sma(compute_sma(win, accel, accel_scale),
                              canonical[static_cast<std::size_t>(rec.activity_id)]);
      lw.window = std::move(win);
      ds.windows.push_back(std::move(lw));
    }
  }
  return ds;
}

std::vector<CanonicalActivity> wisdm_canonical() {
  return std::vector<CanonicalActivity>(kWisdmCanonical.begin(), kWisdmCanonical.end());
}
std::vector<CanonicalActivity> mhealth_canonical() {
  return std::vector<CanonicalActivity>(kMhealthCanonical.begin(), kMhealthCanonical.end());
}
std::vector<CanonicalActivity> uci_har_canonical() {
  return std::vector<CanonicalActivity>(kUciCanonical.begin(), kUciCanonical.end());
}

Dataset make_synthetic_dataset(int num_windows, int seed) {
  Dataset ds;
  ds.name = "synthetic";
  ds.sample_rate_hz = 50.0f;
  ds.channel_names = {"acc_x",  "acc_y",  "acc_z",  "gyro_x",  "gyro_y",
                      "gyro_z", "acc2_x", "acc2_y", "acc2_z"};
  ds.class_names = {"standing", "walking", "jogging"};
  const CanonicalActivity canon[3] = {CanonicalActivity::standing, CanonicalActivity::walking,
                                      CanonicalActivity::jogging};
  const float freq[3] = {1.0f, 3.0f, 5.0f};
  const float amp[3] = {0.6f, 4.0f, 8.0f};
  const int T = 128, C = 9;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  const std::vector<int> accel = {0, 1, 2, 6, 7, 8};
  for (int i = 0; i < num_windows; ++i) {
    const int cls = i % 3;
    Tensor win({C, T});
    const float phase = uniform01(rng) * 6.2831853f;
    const float a = amp[cls] * (0.8f + 0.4f * uniform01(rng));
    for (int c = 0; c < C; ++c) {
      const float chan_gain = 0.5f + 0.1f * c;
      for (int t = 0; t < T; ++t) {
        const float s =
            a * chan_gain * std::sin(6.2831853f * freq[cls] * t / 50.0f + phase + 0.3f * c);
        win(c, t) = s + 0.05f * gaussian(rng);
      }
    }
    LabeledWindow lw;
    lw.activity = cls;
    lw.subject_id = i % 10;
    lw.source = "synthetic";
    lw.resistance = synthesize_resistance(win, canon[cls], accel);
    lw.window = std::move(win);
    ds.windows.push_back(std::move(lw));
  }
  return ds;
}

}  // namespace mmtl
