#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "mmtl/data.hpp"
#include "oracles.hpp"

using namespace mmtl;
namespace fs = std::filesystem;

namespace {

fs::path fixture_dir() {
  const fs::path p = fs::temp_directory_path() / "mmtl_fixtures";
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p);
  os << content;
}

Recording ramp_recording(int channels, int len) {
  Recording r;
  r.subject_id = 1;
  r.activity_id = 0;
  for (int c = 0; c < channels; ++c) {
    r.channel_names.push_back("ch" + std::to_string(c));
    std::vector<float> v(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) v[static_cast<std::size_t>(t)] = static_cast<float>(c * 1000 + t);
    r.channels.push_back(std::move(v));
  }
  return r;
}

}  // namespace

TEST_CASE("median-3 denoise") {
  const std::vector<float> constant(20, 3.5f);
  CHECK(median3(constant) == constant);

  const std::vector<float> spike = {0, 0, 9, 0, 0};
  CHECK(median3(spike) == std::vector<float>{0, 0, 0, 0, 0});

  std::vector<float> mono(30);
  for (std::size_t i = 0; i < mono.size(); ++i) mono[i] = static_cast<float>(i) * 0.5f;
  const std::vector<float> dm = median3(mono);
  for (std::size_t i = 1; i + 1 < mono.size(); ++i) CHECK(dm[i] == mono[i]);

  Recording rec = ramp_recording(2, 16);
  rec.channels[0][5] = 1e6f;
  Recording clean = denoise(rec);
  CHECK(clean.channels[0][5] < 1e5f);
  CHECK(clean.channels[1].size() == rec.channels[1].size());
}

TEST_CASE("segmentation arithmetic and coverage") {
  Recording rec = ramp_recording(3, 1000);
  std::vector<Tensor> wins = segment(rec, 128, 0.5f);
  CHECK(wins.size() == 14);
  for (std::size_t w = 0; w < wins.size(); ++w) {
    REQUIRE(wins[w].shape == std::vector<int>{3, 128});
    const std::size_t start = w * 64;
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t < 128; ++t)
        CHECK(wins[w](c, t) == rec.channels[static_cast<std::size_t>(c)][start + t]);
  }

  CHECK(segment(ramp_recording(1, 100), 128, 0.5f).empty());

  std::vector<Tensor> tiles = segment(ramp_recording(1, 512), 128, 0.0f);
  CHECK(tiles.size() == 4);
  CHECK(tiles[3](0, 127) == doctest::Approx(511.0f));

  CHECK_THROWS_AS(segment(rec, 128, 1.0f), DataError);
  CHECK_THROWS_AS(segment(rec, 128, -0.1f), DataError);
}

TEST_CASE("resistance synthesis formula") {
  Tensor still = Tensor::zeros({3, 64});
  const std::vector<int> accel = {0, 1, 2};
  CHECK(synthesize_resistance(still, CanonicalActivity::standing, accel) ==
        doctest::Approx(0.075f));

  // SMA exactly at the reference level: clamp-free upper half of the band
  Tensor ref = Tensor::full({3, 64}, 10.0f);
  CHECK(synthesize_resistance(ref, CanonicalActivity::standing, accel) ==
        doctest::Approx(0.225f));

  std::mt19937 rng(2);
  for (int it = 0; it < 50; ++it) {
    Tensor w = oracle::random_tensor({3, 32}, rng, 100.0f);
    const float r = synthesize_resistance(w, CanonicalActivity::jumping, accel);
    CHECK(r >= 0.0f);
    CHECK(r <= 1.0f);
    CHECK(r == synthesize_resistance(w, CanonicalActivity::jumping, accel));
  }

  float prev = -1.0f;
  for (float level = 0.0f; level < 20.0f; level += 0.5f) {
    Tensor w = Tensor::full({3, 16}, level);
    const float r = synthesize_resistance(w, CanonicalActivity::walking, accel);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("normalizer fit and apply") {
  std::mt19937 rng(7);
  std::vector<LabeledWindow> train;
  for (int i = 0; i < 8; ++i) {
    LabeledWindow w;
    w.window = oracle::random_tensor({3, 40}, rng, 4.0f);
    for (int t = 0; t < 40; ++t) w.window(2, t) = 2.75f;  // zero-variance channel
    train.push_back(std::move(w));
  }
  NormalizerStats st = fit_normalizer(train);
  REQUIRE(st.mean.size() == 3);
  CHECK(st.zero_variance == std::vector<bool>{false, false, true});
  CHECK(st.std[2] == 1.0f);

  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  std::size_t n = 0;
  for (const LabeledWindow& w : train) {
    Tensor z = apply_normalizer(w.window, st);
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t < 40; ++t) {
        sum[c] += z(c, t);
        sq[c] += static_cast<double>(z(c, t)) * z(c, t);
      }
    n += 40;
  }
  for (int c = 0; c < 2; ++c) {
    const double m = sum[c] / static_cast<double>(n);
    CHECK(std::fabs(m) < 1e-6);
    CHECK(std::sqrt(sq[c] / static_cast<double>(n) - m * m) == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(std::fabs(sum[2]) < 1e-6);  // constant channel maps to 0

  // pure affine map on unseen data
  Tensor unseen = oracle::random_tensor({3, 5}, rng);
  Tensor z = apply_normalizer(unseen, st);
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < 5; ++t)
      CHECK(z(c, t) == doctest::Approx((unseen(c, t) - st.mean[static_cast<std::size_t>(c)]) /
                                       st.std[static_cast<std::size_t>(c)]));

  CHECK_THROWS_AS(fit_normalizer({}), DataError);
  CHECK_THROWS_AS(apply_normalizer(Tensor({2, 5}), st), DataError);
}

TEST_CASE("augmentation invariants") {
  std::mt19937 rng(11);
  Tensor w = oracle::random_tensor({6, 50}, rng, 2.0f);
  const std::vector<int> triples = {0, 3};

  AugmentOps rot;
  rot.rotate = true;
  std::mt19937 r1(5);
  Tensor rotated = augment(w, r1, rot, triples);
  for (int s : triples)
    for (int t = 0; t < 50; ++t) {
      const double n0 = std::sqrt(static_cast<double>(w(s, t)) * w(s, t) +
                                  static_cast<double>(w(s + 1, t)) * w(s + 1, t) +
                                  static_cast<double>(w(s + 2, t)) * w(s + 2, t));
      const double n1 = std::sqrt(static_cast<double>(rotated(s, t)) * rotated(s, t) +
                                  static_cast<double>(rotated(s + 1, t)) * rotated(s + 1, t) +
                                  static_cast<double>(rotated(s + 2, t)) * rotated(s + 2, t));
      CHECK(std::fabs(n0 - n1) < 1e-5);
    }

  AugmentOps flip;
  flip.flip = true;
  std::mt19937 r2(5);
  Tensor once = augment(w, r2, flip, triples);
  for (int c = 0; c < 6; ++c) {
    std::vector<float> a(w.row(c), w.row(c) + 50), b(once.row(c), once.row(c) + 50);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  Tensor twice = augment(once, r2, flip, triples);
  CHECK(twice.data == w.data);

  AugmentOps crop;
  crop.crop = true;
  std::mt19937 ra(9), rb(9);
  Tensor ca = augment(w, ra, crop, triples);
  Tensor cb = augment(w, rb, crop, triples);
  CHECK(ca.data == cb.data);
  CHECK(ca.shape == w.shape);

  Tensor odd = oracle::random_tensor({5, 20}, rng);
  std::mt19937 r3(1);
  CHECK_THROWS_AS(augment(odd, r3, rot, {0}), DataError);
}

TEST_CASE("class rebalancing") {
  std::vector<LabeledWindow> windows;
  for (int i = 0; i < 14; ++i) {
    LabeledWindow w;
    w.window = Tensor::full({1, 4}, static_cast<float>(i));
    w.activity = i < 10 ? 0 : 1;
    windows.push_back(std::move(w));
  }
  std::mt19937 rng(3);
  auto count = [](const std::vector<LabeledWindow>& ws, int cls) {
    return std::count_if(ws.begin(), ws.end(),
                         [cls](const LabeledWindow& w) { return w.activity == cls; });
  };

  std::vector<LabeledWindow> over = rebalance(windows, RebalanceStrategy::oversample, rng);
  CHECK(count(over, 0) == 10);
  CHECK(count(over, 1) == 10);

  std::vector<LabeledWindow> under = rebalance(windows, RebalanceStrategy::undersample, rng);
  CHECK(count(under, 0) == 4);
  CHECK(count(under, 1) == 4);

  std::vector<LabeledWindow> balanced(windows.begin() + 6, windows.end());  // 4 + 4
  std::vector<LabeledWindow> same = rebalance(balanced, RebalanceStrategy::oversample, rng);
  REQUIRE(same.size() == balanced.size());
  std::vector<LabeledWindow> none = rebalance(windows, RebalanceStrategy::none, rng);
  CHECK(none.size() == windows.size());
}

TEST_CASE("train/val split") {
  std::vector<LabeledWindow> windows;
  for (int i = 0; i < 103; ++i) {
    LabeledWindow w;
    w.window = Tensor::full({1, 2}, static_cast<float>(i));
    w.subject_id = i % 7;
    windows.push_back(std::move(w));
  }

  SplitResult r = split(windows, 0.8f, 42, SplitMode::random);
  CHECK(r.train.size() + r.val.size() == windows.size());
  CHECK(std::llabs(static_cast<long long>(r.train.size()) -
                   std::llround(0.8 * static_cast<double>(windows.size()))) <= 1);

  SplitResult r2 = split(windows, 0.8f, 42, SplitMode::random);
  REQUIRE(r2.train.size() == r.train.size());
  for (std::size_t i = 0; i < r.train.size(); ++i)
    CHECK(r.train[i].window.data == r2.train[i].window.data);

  SplitResult bs = split(windows, 0.7f, 9, SplitMode::by_subject);
  std::set<int> ts, vs;
  for (const LabeledWindow& w : bs.train) ts.insert(w.subject_id);
  for (const LabeledWindow& w : bs.val) vs.insert(w.subject_id);
  for (int s : ts) CHECK(vs.count(s) == 0);
  CHECK(bs.train.size() + bs.val.size() == windows.size());

  CHECK_THROWS_AS(split(windows, 0.0f, 1, SplitMode::random), DataError);
  CHECK_THROWS_AS(split(windows, 1.0f, 1, SplitMode::random), DataError);
}

TEST_CASE("window store round trip") {
  std::mt19937 rng(6);
  std::vector<LabeledWindow> windows;
  for (int i = 0; i < 5; ++i) {
    LabeledWindow w;
    w.window = oracle::random_tensor({4, 12}, rng, 3.0f);
    w.activity = i % 3;
    w.resistance = 0.1f * static_cast<float>(i);
    w.subject_id = 20 + i;
    windows.push_back(std::move(w));
  }
  const fs::path p = fixture_dir() / "store.mmwd";
  save_window_store(p.string(), windows);
  std::vector<LabeledWindow> back = load_window_store(p.string());
  REQUIRE(back.size() == windows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].window.shape == windows[i].window.shape);
    CHECK(back[i].window.data == windows[i].window.data);
    CHECK(back[i].activity == windows[i].activity);
    CHECK(back[i].resistance == windows[i].resistance);
    CHECK(back[i].subject_id == windows[i].subject_id);
  }

  const fs::path bad = fixture_dir() / "bad.mmwd";
  write_file(bad, "NOPEgarbage");
  CHECK_THROWS_AS(load_window_store(bad.string()), DataError);
  CHECK_THROWS_AS(load_window_store((fixture_dir() / "missing.mmwd").string()), DataError);
}

TEST_CASE("wisdm parser") {
  const fs::path f = fixture_dir() / "wisdm_raw.txt";
  std::string content;
  content += "33,Jogging,49105962326000,-0.69,12.68,0.50;\n";
  content += "33,Jogging,49106062271000,5.01,11.26,0.95;\n";
  content += "33,Walking,49106112167000,4.90,10.88,-0.08;\n";
  content += "12,Walking,49106222305000,0.09,9.85,1.03;\n";
  for (int i = 0; i < 40; ++i)
    content += "12,Walking,4910622" + std::to_string(i) + "000,0.1,9.8,1.0;\n";
  content += "12,Walking,49106332290000,0.2,9.7,;\n";       // empty z -> skipped
  content += "12,Sprinting,49106332290000,0.2,9.7,1.0;\n";  // unknown activity -> skipped
  write_file(f, content);

  ParseStats st;
  std::vector<Recording> recs = parse_wisdm(f.string(), &st);
  CHECK(st.total_rows == 46);
  CHECK(st.skipped == 2);
  CHECK(st.accepted + st.skipped == st.total_rows);

  REQUIRE(recs.size() == 3);
  CHECK(recs[0].subject_id == 33);
  CHECK(recs[0].activity_id == 1);  // Jogging
  CHECK(recs[0].length() == 2);
  CHECK(recs[0].channels[0][0] == doctest::Approx(-0.69f));
  CHECK(recs[0].channels[1][0] == doctest::Approx(12.68f));
  CHECK(recs[0].channels[2][0] == doctest::Approx(0.50f));
  CHECK(recs[0].sample_rate_hz == 20.0f);
  CHECK(recs[1].subject_id == 33);
  CHECK(recs[1].activity_id == 0);  // Walking
  CHECK(recs[2].subject_id == 12);
  CHECK(recs[2].length() == 41);

  const fs::path bad = fixture_dir() / "wisdm_bad.txt";
  std::string mostly_bad;
  for (int i = 0; i < 10; ++i) mostly_bad += "oops;\n";
  mostly_bad += "1,Walking,1,0.1,0.2,0.3;\n";
  write_file(bad, mostly_bad);
  CHECK_THROWS_AS(parse_wisdm(bad.string(), nullptr), DataError);

  CHECK_THROWS_AS(parse_wisdm((fixture_dir() / "no_such.txt").string(), nullptr), DataError);
}

TEST_CASE("mhealth parser") {
  const fs::path dir = fixture_dir() / "mhealth";
  fs::create_directories(dir);
  auto row = [](float base, int label) {
    std::string s;
    for (int c = 0; c < 23; ++c) s += std::to_string(base + static_cast<float>(c) * 0.01f) + "\t";
    s += std::to_string(label) + "\n";
    return s;
  };
  std::string s1;
  s1 += row(1.0f, 0);  // null label, dropped
  s1 += row(1.1f, 1);
  s1 += row(1.2f, 1);
  s1 += row(1.3f, 2);
  s1 += row(1.4f, 0);
  s1 += row(1.5f, 2);
  write_file(dir / "mHealth_subject1.log", s1);
  std::string s2 = row(2.0f, 3) + row(2.1f, 3) + row(2.2f, 3);
  write_file(dir / "mHealth_subject2.log", s2);

  ParseStats st;
  std::vector<Recording> recs = parse_mhealth(dir.string(), &st);
  CHECK(st.total_rows == 9);
  CHECK(st.skipped == 2);
  CHECK(st.accepted == 7);

  REQUIRE(recs.size() == 4);  // subj1: label1 run, label2 run, label2 run; subj2: label3 run
  CHECK(recs[0].subject_id == 1);
  CHECK(recs[0].activity_id == 0);
  CHECK(recs[0].length() == 2);
  CHECK(recs[1].activity_id == 1);
  CHECK(recs[1].length() == 1);
  CHECK(recs[2].activity_id == 1);  // separate run after the null gap
  CHECK(recs[3].subject_id == 2);
  CHECK(recs[3].activity_id == 2);
  CHECK(recs[3].length() == 3);

  for (const Recording& r : recs) {
    CHECK(r.channel_names.size() == 15);
    CHECK(r.sample_rate_hz == 50.0f);
  }
  // chest acc x is raw column 0; ankle acc x is raw column 5
  CHECK(recs[0].channels[0][0] == doctest::Approx(1.1f));
  CHECK(recs[0].channels[3][0] == doctest::Approx(1.15f));

  CHECK(mhealth_class_names().size() == 12);
  CHECK(mhealth_canonical().size() == 12);
  CHECK_THROWS_AS(parse_mhealth((fixture_dir() / "empty_dir").string(), nullptr), DataError);
}

TEST_CASE("uci har parser") {
  const fs::path root = fixture_dir() / "ucihar";
  static const char* kSignals[9] = {"body_acc_x",  "body_acc_y",  "body_acc_z",
                                    "total_acc_x", "total_acc_y", "total_acc_z",
                                    "body_gyro_x", "body_gyro_y", "body_gyro_z"};
  auto make_part = [&](const std::string& part, const std::vector<int>& labels) {
    const fs::path base = root / part;
    fs::create_directories(base / "Inertial Signals");
    std::string y, subj;
    for (int l : labels) {
      y += std::to_string(l) + "\n";
      subj += "1\n";
    }
    write_file(base / ("y_" + part + ".txt"), y);
    write_file(base / ("subject_" + part + ".txt"), subj);
    for (int s = 0; s < 9; ++s) {
      std::string body;
      for (std::size_t w = 0; w < labels.size(); ++w) {
        for (int t = 0; t < 128; ++t)
          body += " " + std::to_string(0.001f * static_cast<float>(s + 1) *
                                       static_cast<float>(t % 17));
        body += "\n";
      }
      write_file(base / "Inertial Signals" / (std::string(kSignals[s]) + "_" + part + ".txt"),
                 body);
    }
  };
  make_part("train", {1, 3, 6});
  make_part("test", {2, 5});

  UciHar ds = parse_uci_har(root.string());
  CHECK(ds.train.windows.size() == 3);
  CHECK(ds.test.windows.size() == 2);
  for (const Dataset* d : {&ds.train, &ds.test})
    for (const LabeledWindow& w : d->windows) {
      CHECK(w.window.shape == std::vector<int>{9, 128});
      CHECK(w.resistance >= 0.0f);
      CHECK(w.resistance <= 1.0f);
      CHECK(w.subject_id == 1);
    }
  CHECK(ds.train.windows[0].activity == 0);
  CHECK(ds.train.windows[2].activity == 5);
  CHECK(ds.train.class_names == uci_har_class_names());
  CHECK(ds.train.channel_names.size() == 9);

  fs::remove(root / "test" / "Inertial Signals" / "body_gyro_z_test.txt");
  CHECK_THROWS_AS(parse_uci_har(root.string()), DataError);
  make_part("test", {2, 5});  // restore for reruns
}

TEST_CASE("channel helpers") {
  const std::vector<std::string> names = {"acc_x",  "acc_y",  "acc_z", "gyro_x",
                                          "gyro_y", "gyro_z", "ecg_1"};
  CHECK(accel_channel_indices(names) == std::vector<int>{0, 1, 2});
  CHECK(triple_starts(names) == std::vector<int>{0, 3});
}

TEST_CASE("recordings to windows") {
  std::vector<Recording> recs;
  Recording r = ramp_recording(3, 300);
  r.channel_names = {"acc_x", "acc_y", "acc_z"};
  r.activity_id = 0;
  recs.push_back(r);
  Dataset ds = windows_from_recordings(recs, "fixture", {"only"},
                                       {CanonicalActivity::walking}, 100, 0.5f);
  CHECK(ds.windows.size() == 5);  // stride 50 over 300 samples
  for (const LabeledWindow& w : ds.windows) {
    CHECK(w.activity == 0);
    CHECK(w.resistance >= 0.0f);
    CHECK(w.resistance <= 1.0f);
    CHECK(w.source == "fixture");
  }
}

TEST_CASE("synthetic dataset") {
  Dataset a = make_synthetic_dataset(60, 4);
  Dataset b = make_synthetic_dataset(60, 4);
  REQUIRE(a.windows.size() == 60);
  CHECK(a.class_names.size() == 3);
  for (std::size_t i = 0; i < a.windows.size(); ++i) {
    CHECK(a.windows[i].window.shape == std::vector<int>{9, 128});
    CHECK(a.windows[i].window.data == b.windows[i].window.data);
    CHECK(a.windows[i].resistance >= 0.0f);
    CHECK(a.windows[i].resistance <= 1.0f);
    CHECK(a.windows[i].activity == static_cast<int>(i) % 3);
  }
  // class-dependent intensity shows up in the resistance targets
  float mean_r[3] = {0, 0, 0};
  for (const LabeledWindow& w : a.windows) mean_r[w.activity] += w.resistance / 20.0f;
  CHECK(mean_r[0] < mean_r[1]);
  CHECK(mean_r[1] < mean_r[2]);
}
