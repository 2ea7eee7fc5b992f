#pragma once

#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmtl/tensor.hpp"

namespace mmtl {

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Contiguous same-activity run of multi-channel samples from one subject.
struct Recording {
  int subject_id = 0;
  int activity_id = 0;  // dataset-native label
  std::vector<std::string> channel_names;
  std::vector<std::vector<float>> channels;  // equal lengths
  float sample_rate_hz = 50.0f;

  std::size_t length() const { return channels.empty() ? 0 : channels[0].size(); }
};

struct LabeledWindow {
  Tensor window;  // [channels, window_len]
  int activity = 0;
  float resistance = 0.0f;
  int subject_id = 0;
  std::string source;
};

struct Dataset {
  std::string name;
  std::vector<std::string> channel_names;
  std::vector<std::string> class_names;
  float sample_rate_hz = 50.0f;
  std::vector<LabeledWindow> windows;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct NormalizerStats {
  std::vector<float> mean, std;
  std::vector<bool> zero_variance;  // channels whose std was forced to 1
};

struct ParseStats {
  std::size_t accepted = 0;
  std::size_t skipped = 0;
  std::size_t total_rows = 0;
};

// Canonical activity vocabulary used by the resistance synthesis table.
enum class CanonicalActivity {
  lying,
  sitting,
  standing,
  walking,
  descending_stairs,
  ascending_stairs,
  jogging,
  cycling,
  jumping,
  waist_bends,
  arm_elevation,
  knees_bending,
};
float resistance_base(CanonicalActivity a);

// ---- parsers ----

// UCI HAR raw inertial signals: 9 channels x 128 timesteps per pre-cut
// window; channel order body_acc xyz, total_acc xyz, body_gyro xyz.
struct UciHar {
  Dataset train;
  Dataset test;
};
UciHar parse_uci_har(const std::string& root_dir);

std::vector<Recording> parse_wisdm(const std::string& raw_file, ParseStats* stats = nullptr);
std::vector<Recording> parse_mhealth(const std::string& dir, ParseStats* stats = nullptr);

std::vector<std::string> wisdm_class_names();
std::vector<std::string> mhealth_class_names();
std::vector<std::string> uci_har_class_names();

// ---- preprocessing ----

Recording denoise(const Recording& rec);              // median-3 per channel
std::vector<float> median3(const std::vector<float>& x);

NormalizerStats fit_normalizer(const std::vector<LabeledWindow>& train_windows);
Tensor apply_normalizer(const Tensor& window, const NormalizerStats& stats);

std::vector<Tensor> segment(const Recording& rec, int window_len, float overlap_fraction);

// SMA-driven synthetic resistance target; `accel_channels` indexes the
// acceleration channels inside the (denoised, unnormalized) window.
float synthesize_resistance(const Tensor& window, CanonicalActivity activity,
                            const std::vector<int>& accel_channels);
constexpr const char* kResistanceSchemeId = "sma-linear-v1";

struct AugmentOps {
  bool crop = false;
  bool rotate = false;
  bool flip = false;
};
// `triples` lists the first channel index of each 3-axis sensor group.
Tensor augment(const Tensor& window, std::mt19937& rng, const AugmentOps& ops,
               const std::vector<int>& triples);

enum class RebalanceStrategy { none, oversample, undersample };
std::vector<LabeledWindow> rebalance(const std::vector<LabeledWindow>& windows,
                                     RebalanceStrategy strategy, std::mt19937& rng);

enum class SplitMode { random, by_subject };
struct SplitResult {
  std::vector<LabeledWindow> train, val;
};
SplitResult split(const std::vector<LabeledWindow>& windows, float train_fraction,
                  unsigned seed, SplitMode mode);

// ---- cached window store ("MMWD") ----
void save_window_store(const std::string& path, const std::vector<LabeledWindow>& windows);
std::vector<LabeledWindow> load_window_store(const std::string& path);

// ---- bundled synthetic smoke dataset ----
// Three sinusoid classes (1/3/5 Hz at 50 Hz sampling) with class-dependent
// amplitude; resistance targets come from the standard synthesis formula.
Dataset make_synthetic_dataset(int num_windows, int seed);

// Canonical activity per dataset-native class index.
std::vector<CanonicalActivity> uci_har_canonical();
std::vector<CanonicalActivity> wisdm_canonical();
std::vector<CanonicalActivity> mhealth_canonical();

// Denoise -> segment -> synthesize resistance for each recording.
// `accel_scale` converts acceleration channels to m/s^2 for the SMA term
// (e.g. 9.80665 when the dataset stores g units).
Dataset windows_from_recordings(const std::vector<Recording>& recs, const std::string& name,
                                const std::vector<std::string>& class_names,
                                const std::vector<CanonicalActivity>& canonical, int window_len,
                                float overlap, float accel_scale = 1.0f);

// Channel helpers for a dataset's accel triples.
std::vector<int> accel_channel_indices(const std::vector<std::string>& channel_names);
std::vector<int> triple_starts(const std::vector<std::string>& channel_names);

}  // namespace mmtl
