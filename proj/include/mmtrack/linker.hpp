#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mmtrack/trackio.hpp"

namespace mmtrack::linker {

inline constexpr int kWindowFrames = 30;
inline constexpr int kWindowFeatures = 5;  // (I, x, y, w, h)
inline constexpr int kWindowSize = kWindowFrames * kWindowFeatures;

// 30x5 normalized motion matrix, row-major (frame, feature).
struct Window {
  std::array<double, kWindowSize> data{};

  double& at(int t, int f) { return data[static_cast<std::size_t>(t * kWindowFeatures + f)]; }
  double at(int t, int f) const { return data[static_cast<std::size_t>(t * kWindowFeatures + f)]; }

  friend bool operator==(const Window&, const Window&) = default;
};

enum class Side { predecessor, successor };

// Predecessors keep their last 30 entries (start-padded with the first kept
// entry), successors their first 30 (end-padded with the last kept entry).
// The frame column is (I - frame_ref) / 30, x and w are divided by the image
// width, y and h by the image height. `shift` (pixels) is subtracted from x
// and y before scaling.
Window make_window(const Tracklet& tracklet, Side side, ImageSize image, int frame_ref,
                   std::pair<double, double> shift = {0.0, 0.0});
// Uses the window's own first frame as the frame reference.
Window make_window(const Tracklet& tracklet, Side side, ImageSize image);
// Windows for an ordered (earlier, later) pair in a shared frame: time is
// measured from the predecessor window's first frame, and positions are
// shifted so the predecessor's last box sits at the image center. Gap and
// junction offset are then directly visible to the model.
std::pair<Window, Window> make_pair_windows(const Tracklet& pred, const Tracklet& succ,
                                            ImageSize image);

struct LinkerArch {
  std::array<int, 3> channels{8, 16, 32};
  int hidden = 256;
  int temporal_kernel = 7;
  int spatial_kernel = 5;

  int embedding_size() const { return channels[2] * kWindowFeatures; }
  friend bool operator==(const LinkerArch&, const LinkerArch&) = default;
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Convolution (no bias) followed by batch normalization.
template <typename T>
struct ConvBlock {
  Mat<T> weight;  // [out, kernel * in], column index = k * in + c
  Vec<T> gamma;
  Vec<T> beta;
  Vec<T> running_mean;
  Vec<T> running_var;
};

template <typename T>
struct BasicParams {
  LinkerArch arch;
  std::array<ConvBlock<T>, 3> temporal;
  std::array<ConvBlock<T>, 3> spatial;
  Mat<T> fc1_weight;  // [hidden, 2 * embedding]
  Vec<T> fc1_bias;
  Mat<T> fc2_weight;  // [2, hidden]
  Vec<T> fc2_bias;
};

using LinkerParams = BasicParams<float>;

template <typename T>
struct TensorRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  T* data = nullptr;
  std::size_t size = 0;
  bool learnable = true;
};

// Every tensor (learnable ones and BN running statistics) in a fixed order.
template <typename T>
std::vector<TensorRef<T>> tensors(BasicParams<T>& params);
template <typename T>
std::vector<TensorRef<const T>> tensors(const BasicParams<T>& params);

// Zero-valued tensors with the shapes of `arch`.
template <typename T>
BasicParams<T> zero_params(const LinkerArch& arch);
// Xavier-uniform weights, zero biases, BN scale 1 and shift 0.
template <typename T>
BasicParams<T> init_params(const LinkerArch& arch, std::uint64_t seed);

template <typename To, typename From>
BasicParams<To> cast_params(const BasicParams<From>& params);

std::size_t learnable_count(const LinkerArch& arch);

enum class Mode { train, eval };

struct ForwardTrace {
  std::vector<double> e_a;
  std::vector<double> e_b;
  std::vector<double> e_o;
  double s0 = 0.0;
  double s1 = 0.0;
  double p_hat = 0.5;
};

struct LinkSample {
  Window a;
  Window b;
  int label = 0;
};

// Smoothed binary cross-entropy with target label*(1-eps) + (1-label)*eps.
double loss(double p_hat, int label, double eps);

// Probability of the "same identity" class; clamped into the open interval
// (0, 1) so that 1 - p is never exactly zero.
double same_identity_probability(double s0, double s1);

struct BatchOutput {
  std::vector<double> s0;
  std::vector<double> s1;
  std::vector<double> p_hat;
  double mean_loss = 0.0;
  // Hash of every ReLU on/off state; only filled when requested.
  std::uint64_t relu_signature = 0;
};

struct RunOptions {
  Mode mode = Mode::eval;
  double label_smoothing = 0.0;
  bool want_relu_signature = false;
};

// Batched forward and backward passes with reusable scratch memory. BN in
// train mode normalizes over all windows of the batch.
template <typename T>
class Network {
 public:
  Network();
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  // `labels` may be empty when no loss is needed.
  BatchOutput forward(const BasicParams<T>& params, std::span<const Window* const> a,
                      std::span<const Window* const> b, std::span<const int> labels,
                      const RunOptions& options);

  // Gradient of the mean loss of the last forward() call, which must have
  // run with labels. `grad` must have the shapes of `params`.
  void backward(const BasicParams<T>& params, BasicParams<T>& grad);

  // Embeddings (rows 0..E-1 for a, E..2E-1 for b) of the last forward().
  const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& pair_embeddings() const;

  // Per-layer batch statistics (mean, biased variance) of the last
  // train-mode forward, temporal layers first.
  const std::vector<std::pair<Vec<T>, Vec<T>>>& batch_statistics() const;
  std::size_t batch_positions() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

template <typename T>
ForwardTrace forward(const BasicParams<T>& params, const Window& a, const Window& b, Mode mode);

// Exact gradient of the (train-mode) smoothed loss of a single sample.
template <typename T>
BasicParams<T> backward(const BasicParams<T>& params, const LinkSample& sample, double eps);

// Eval-mode probabilities for many pairs.
std::vector<double> score(const LinkerParams& params,
                          std::span<const std::pair<Window, Window>> pairs);
double accuracy(const LinkerParams& params, std::span<const LinkSample> samples,
                double threshold = 0.5);

// Binary weights file: "LNK1", version, tensors with f32 little-endian data.
void save_params(const LinkerParams& params, std::ostream& out);
LinkerParams load_params(std::istream& in);
LinkerParams load_params(std::istream& in, const LinkerArch& expected);
void save_params_file(const LinkerParams& params, const std::filesystem::path& path);
LinkerParams load_params_file(const std::filesystem::path& path);
LinkerParams load_params_file(const std::filesystem::path& path, const LinkerArch& expected);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 60;
  int batch_size = 64;
  double label_smoothing = 0.1;
  double neg_pos_ratio = 3.0;
  std::uint64_t seed = 1;
  ImageSize image_size;
  int num_samples = 10000;
  // Gate used when drawing negatives; mirrors the link-time defaults.
  int max_gap = 10;
  double spatial_radius = 90.0;
  double bn_momentum = 0.9;
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(int epoch);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class InsufficientGroundTruth : public Error {
 public:
  using Error::Error;
};

// Learning rate at the start of `epoch` (0-based) for a cosine schedule.
double cosine_lr(double lr0, int epoch, int epochs);

struct TrainResult {
  LinkerParams params;
  std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(int epoch, double mean_loss, double lr)>;

TrainResult train(std::span<const LinkSample> samples, const TrainConfig& config,
                  const LinkerArch& arch = {}, const EpochCallback& on_epoch = {});

// Positives cut from ground-truth trajectories, negatives by cross-identity
// junctions and spatial or temporal perturbation, neg:pos = config ratio.
std::vector<LinkSample> generate_samples(std::span<const TrackSet> gt, const TrainConfig& config);
std::vector<LinkSample> generate_samples(const TrackSet& gt, const TrainConfig& config);

}  // namespace mmtrack::linker
