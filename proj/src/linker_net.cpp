#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

#include "mmtrack/linker.hpp"

namespace mmtrack::linker {

namespace {

constexpr double kBnEps = 1e-5;

enum class Axis { time, feature };

template <typename T>
using CMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Activations are stored positions x channels with row p = window * 150 +
// t * 5 + f. Column block k of the im2col matrix holds the input shifted by
// d = k - kernel / 2 along `axis`, zero where the neighbor falls outside the
// window.
Eigen::Index axis_stride(Axis axis) { return axis == Axis::time ? kWindowFeatures : 1; }

// Calls zero(first_row, count) for every row run whose neighbor at shift d
// lies outside the window.
template <typename F>
void for_each_padded(int d, Axis axis, int windows, F&& zero) {
  if (d == 0) return;
  const int m = std::min(std::abs(d), axis == Axis::time ? kWindowFrames : kWindowFeatures);
  for (int w = 0; w < windows; ++w) {
    const Eigen::Index base = static_cast<Eigen::Index>(w) * kWindowSize;
    if (axis == Axis::time) {
      const Eigen::Index first = d < 0 ? 0 : (kWindowFrames - m) * kWindowFeatures;
      zero(base + first, static_cast<Eigen::Index>(m) * kWindowFeatures);
    } else {
      for (int t = 0; t < kWindowFrames; ++t) {
        const Eigen::Index row = base + t * kWindowFeatures;
        zero(d < 0 ? row : row + kWindowFeatures - m, m);
      }
    }
  }
}

template <typename T>
using ConstRef = Eigen::Ref<const CMat<T>>;
template <typename T>
using MutRef = Eigen::Ref<CMat<T>>;

// Windows per im2col chunk; keeps the column buffer cache resident.
constexpr int kChunkWindows = 8;

// 0/1 mask over the rows of a chunk; row r is 1 iff its neighbor at shift d
// lies inside the window.
template <typename T>
const Vec<T>& shift_mask(Axis axis, int d) {
  static const auto masks = [] {
    std::map<std::pair<Axis, int>, Vec<T>> out;
    for (Axis ax : {Axis::time, Axis::feature}) {
      for (int dd = -kWindowFrames; dd <= kWindowFrames; ++dd) {
        Vec<T> m = Vec<T>::Ones(static_cast<Eigen::Index>(kChunkWindows) * kWindowSize);
        for_each_padded(dd, ax, kChunkWindows,
                        [&](Eigen::Index r, Eigen::Index len) { m.segment(r, len).setZero(); });
        out.emplace(std::pair{ax, dd}, std::move(m));
      }
    }
    return out;
  }();
  const auto it = masks.find({axis, d});
  if (it == masks.end()) throw Error("linker: kernel larger than the window");
  return it->second;
}

template <typename T>
void im2col(const ConstRef<T>& x, CMat<T>& cols, int kernel, Axis axis) {
  const Eigen::Index n = x.rows();
  const Eigen::Index in = x.cols();
  cols.resize(n, kernel * in);
  const int half = kernel / 2;
  for (int k = 0; k < kernel; ++k) {
    const int d = k - half;
    const Eigen::Index s = d * axis_stride(axis);
    const Vec<T>& mask = shift_mask<T>(axis, d);
    for (Eigen::Index c = 0; c < in; ++c) {
      auto dst = cols.col(k * in + c);
      const auto src = x.col(c);
      if (s == 0) {
        dst = src;
      } else if (s > 0) {
        dst.head(n - s) = src.tail(n - s).cwiseProduct(mask.head(n - s));
        dst.tail(s).setZero();
      } else {
        dst.tail(n + s) = src.head(n + s).cwiseProduct(mask.segment(-s, n + s));
        dst.head(-s).setZero();
      }
    }
  }
}

// Adjoint of im2col.
template <typename T>
void col2im(const CMat<T>& cols, MutRef<T> dx, int kernel, Axis axis) {
  const Eigen::Index n = cols.rows();
  const Eigen::Index in = dx.cols();
  const int half = kernel / 2;
  dx = cols.middleCols(half * in, in);
  for (int k = 0; k < kernel; ++k) {
    const int d = k - half;
    if (d == 0) continue;
    const Eigen::Index s = d * axis_stride(axis);
    const Vec<T>& mask = shift_mask<T>(axis, d);
    for (Eigen::Index c = 0; c < in; ++c) {
      const auto src = cols.col(k * in + c);
      auto dst = dx.col(c);
      if (s > 0) {
        dst.tail(n - s) += src.head(n - s).cwiseProduct(mask.head(n - s));
      } else {
        dst.head(n + s) += src.tail(n + s).cwiseProduct(mask.segment(-s, n + s));
      }
    }
  }
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

template <typename T, typename M>
std::uint64_t sign_hash(std::uint64_t h, const M& m) {
  std::uint64_t word = 0;
  int bits = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    word = (word << 1) | (m.data()[i] > T(0) ? 1u : 0u);
    if (++bits == 64) {
      h = mix(h, word);
      word = 0;
      bits = 0;
    }
  }
  return mix(mix(h, word), static_cast<std::uint64_t>(m.size()));
}

}  // namespace

double same_identity_probability(double s0, double s1) {
  const double p = 1.0 / (1.0 + std::exp(s0 - s1));
  constexpr double lo = 1e-300;
  constexpr double hi = 1.0 - 0x1p-53;
  return p < lo ? lo : (p > hi ? hi : p);
}

double loss(double p_hat, int label, double eps) {
  if (!(p_hat > 0.0 && p_hat < 1.0)) throw Error("loss: p_hat must lie in (0, 1)");
  if (!(eps >= 0.0 && eps < 0.5)) throw Error("loss: smoothing must lie in [0, 0.5)");
  if (label != 0 && label != 1) throw Error("loss: label must be 0 or 1");
  const double target = label == 1 ? 1.0 - eps : eps;
  return -target * std::log(p_hat) - (1.0 - target) * std::log1p(-p_hat);
}

template <typename T>
struct Network<T>::Impl {
  struct Layer {
    CMat<T> xhat;
    CMat<T> act;
    Vec<T> inv_std;
  };

  std::array<Layer, 3> temporal;
  std::array<Layer, 3> spatial;
  CMat<T> cols;
  CMat<T> d_cols;
  CMat<T> d_prev;
  CMat<T> input;
  CMat<T> fused;
  CMat<T> eo;
  CMat<T> hidden;
  CMat<T> logits;
  std::vector<double> target;
  std::vector<double> p_hat;
  std::vector<std::pair<Vec<T>, Vec<T>>> stats;
  int samples = 0;
  int windows = 0;
  Mode mode = Mode::eval;
  bool has_labels = false;
  LinkerArch arch;

  // Calls f(first_row, rows) over window-aligned row chunks.
  template <typename F>
  void for_each_chunk(F&& f) const {
    for (int w = 0; w < windows; w += kChunkWindows) {
      const int count = std::min(kChunkWindows, windows - w);
      f(static_cast<Eigen::Index>(w) * kWindowSize, static_cast<Eigen::Index>(count) * kWindowSize);
    }
  }

  const CMat<T>& layer_input(const std::array<Layer, 3>& layers, int l) const {
    return l == 0 ? input : layers[l - 1].act;
  }

  void run_branch(const std::array<ConvBlock<T>, 3>& blocks, int kernel, Axis axis,
                  std::array<Layer, 3>& layers) {
    const auto n = static_cast<T>(input.rows());
    for (int l = 0; l < 3; ++l) {
      auto& L = layers[l];
      const auto& B = blocks[l];
      const CMat<T>& x = layer_input(layers, l);
      L.xhat.resize(x.rows(), B.weight.rows());
      for_each_chunk([&](Eigen::Index r, Eigen::Index len) {
        im2col<T>(x.middleRows(r, len), cols, kernel, axis);
        L.xhat.middleRows(r, len).noalias() = cols * B.weight.transpose();
      });
      Vec<T> mean, var;
      if (mode == Mode::train) {
        mean = L.xhat.colwise().sum().transpose() / n;
        var = (L.xhat.rowwise() - mean.transpose()).array().square().colwise().sum().transpose() / n;
        stats.emplace_back(mean, var);
      } else {
        mean = B.running_mean;
        var = B.running_var;
      }
      L.inv_std = (var.array() + static_cast<T>(kBnEps)).rsqrt();
      L.xhat = (L.xhat.rowwise() - mean.transpose()).array().rowwise() *
               L.inv_std.transpose().array();
      L.act = ((L.xhat.array().rowwise() * B.gamma.transpose().array()).rowwise() +
               B.beta.transpose().array())
                  .cwiseMax(T(0));
    }
  }

  void backward_branch(const std::array<ConvBlock<T>, 3>& blocks,
                       std::array<ConvBlock<T>, 3>& grads, int kernel, Axis axis,
                       std::array<Layer, 3>& layers, CMat<T> d_act) {
    const auto n = static_cast<T>(input.rows());
    for (int l = 2; l >= 0; --l) {
      auto& L = layers[l];
      const auto& B = blocks[l];
      auto& G = grads[l];
      d_act.array() *= (L.act.array() > T(0)).template cast<T>();
      const Vec<T> d_beta = d_act.colwise().sum().transpose();
      const Vec<T> d_gamma = (d_act.array() * L.xhat.array()).colwise().sum().transpose();
      G.beta += d_beta;
      G.gamma += d_gamma;
      // d_z = gamma * inv_std / n * (n * d_y - sum(d_y) - xhat * sum(d_y * xhat))
      const Vec<T> scale = (B.gamma.array() * L.inv_std.array() / n).matrix();
      d_act = (((d_act.array() * n).rowwise() - d_beta.transpose().array()) -
               L.xhat.array().rowwise() * d_gamma.transpose().array())
                  .rowwise() *
              scale.transpose().array();
      const CMat<T>& x = layer_input(layers, l);
      if (l > 0) d_prev.resize(x.rows(), x.cols());
      for_each_chunk([&](Eigen::Index r, Eigen::Index len) {
        im2col<T>(x.middleRows(r, len), cols, kernel, axis);
        G.weight.noalias() += d_act.middleRows(r, len).transpose() * cols;
        if (l > 0) {
          d_cols.noalias() = d_act.middleRows(r, len) * B.weight;
          col2im<T>(d_cols, d_prev.middleRows(r, len), kernel, axis);
        }
      });
      if (l > 0) d_act.swap(d_prev);
    }
  }
};

template <typename T>
Network<T>::Network() : impl_(std::make_unique<Impl>()) {}
template <typename T>
Network<T>::~Network() = default;
template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
BatchOutput Network<T>::forward(const BasicParams<T>& params, std::span<const Window* const> a,
                                std::span<const Window* const> b, std::span<const int> labels,
                                const RunOptions& options) {
  if (a.size() != b.size()) throw Error("linker: window batch size mismatch");
  if (!labels.empty() && labels.size() != a.size()) throw Error("linker: label count mismatch");
  auto& m = *impl_;
  const auto& arch = params.arch;
  m.arch = arch;
  m.samples = static_cast<int>(a.size());
  m.windows = 2 * m.samples;
  m.mode = options.mode;
  m.has_labels = !labels.empty();
  m.stats.clear();

  BatchOutput out;
  if (m.samples == 0) return out;

  m.input.resize(static_cast<Eigen::Index>(m.windows) * kWindowSize, 1);
  for (int w = 0; w < m.windows; ++w) {
    const Window& win = w < m.samples ? *a[w] : *b[w - m.samples];
    for (int i = 0; i < kWindowSize; ++i) {
      m.input(w * kWindowSize + i, 0) = static_cast<T>(win.data[i]);
    }
  }

  m.run_branch(params.temporal, arch.temporal_kernel, Axis::time, m.temporal);
  m.run_branch(params.spatial, arch.spatial_kernel, Axis::feature, m.spatial);
  m.fused = m.temporal[2].act.cwiseProduct(m.spatial[2].act);

  const int c3 = arch.channels[2];
  const int e = arch.embedding_size();
  m.eo.setZero(2 * e, m.samples);
  for (int w = 0; w < m.windows; ++w) {
    const int s = w % m.samples;
    const int offset = w < m.samples ? 0 : e;
    for (int t = 0; t < kWindowFrames; ++t) {
      for (int f = 0; f < kWindowFeatures; ++f) {
        m.eo.col(s).segment(offset + f * c3, c3) +=
            m.fused.row(w * kWindowSize + t * kWindowFeatures + f).transpose();
      }
    }
  }
  m.eo *= static_cast<T>(1.0 / kWindowFrames);

  m.hidden.noalias() = params.fc1_weight * m.eo;
  m.hidden.colwise() += params.fc1_bias;
  m.hidden = m.hidden.cwiseMax(T(0));
  m.logits.noalias() = params.fc2_weight * m.hidden;
  m.logits.colwise() += params.fc2_bias;

  out.s0.resize(m.samples);
  out.s1.resize(m.samples);
  out.p_hat.resize(m.samples);
  m.p_hat.resize(m.samples);
  m.target.assign(m.samples, 0.0);
  double total = 0.0;
  for (int s = 0; s < m.samples; ++s) {
    const double s0 = static_cast<double>(m.logits(0, s));
    const double s1 = static_cast<double>(m.logits(1, s));
    if (!std::isfinite(s0) || !std::isfinite(s1)) {
      throw Error("linker: non-finite activation (corrupt parameters?)");
    }
    out.s0[s] = s0;
    out.s1[s] = s1;
    // Unclamped probability drives the gradient; the reported one is clamped.
    m.p_hat[s] = 1.0 / (1.0 + std::exp(s0 - s1));
    out.p_hat[s] = same_identity_probability(s0, s1);
    if (m.has_labels) {
      const int label = labels[s];
      if (label != 0 && label != 1) throw Error("linker: label must be 0 or 1");
      const double eps = options.label_smoothing;
      m.target[s] = label == 1 ? 1.0 - eps : eps;
      const double hi = std::max(s0, s1);
      const double lse = hi + std::log(std::exp(s0 - hi) + std::exp(s1 - hi));
      total += lse - m.target[s] * s1 - (1.0 - m.target[s]) * s0;
    }
  }
  out.mean_loss = m.has_labels ? total / m.samples : 0.0;

  if (options.want_relu_signature) {
    std::uint64_t h = 0;
    for (const auto* layers : {&m.temporal, &m.spatial}) {
      for (const auto& L : *layers) h = sign_hash<T>(h, L.act);
    }
    out.relu_signature = sign_hash<T>(h, m.hidden);
  }
  return out;
}

template <typename T>
void Network<T>::backward(const BasicParams<T>& params, BasicParams<T>& grad) {
  auto& m = *impl_;
  if (m.mode != Mode::train || !m.has_labels) {
    throw Error("linker: backward needs a labelled train-mode forward pass");
  }
  if (!(grad.arch == params.arch)) throw Error("linker: gradient shape mismatch");
  if (m.samples == 0) return;

  CMat<T> d_logits(2, m.samples);
  for (int s = 0; s < m.samples; ++s) {
    const double d = (m.p_hat[s] - m.target[s]) / m.samples;
    d_logits(1, s) = static_cast<T>(d);
    d_logits(0, s) = static_cast<T>(-d);
  }
  grad.fc2_weight.noalias() += d_logits * m.hidden.transpose();
  grad.fc2_bias += d_logits.rowwise().sum();
  CMat<T> d_hidden = params.fc2_weight.transpose() * d_logits;
  d_hidden.array() *= (m.hidden.array() > T(0)).template cast<T>();
  grad.fc1_weight.noalias() += d_hidden * m.eo.transpose();
  grad.fc1_bias += d_hidden.rowwise().sum();
  CMat<T> d_eo = params.fc1_weight.transpose() * d_hidden;
  d_eo *= static_cast<T>(1.0 / kWindowFrames);

  const int c3 = params.arch.channels[2];
  const int e = params.arch.embedding_size();
  CMat<T> d_fused(m.fused.rows(), c3);
  for (int w = 0; w < m.windows; ++w) {
    const int s = w % m.samples;
    const int offset = w < m.samples ? 0 : e;
    for (int t = 0; t < kWindowFrames; ++t) {
      for (int f = 0; f < kWindowFeatures; ++f) {
        d_fused.row(w * kWindowSize + t * kWindowFeatures + f) =
            d_eo.col(s).segment(offset + f * c3, c3).transpose();
      }
    }
  }
  CMat<T> d_temporal = d_fused.cwiseProduct(m.spatial[2].act);
  CMat<T> d_spatial = d_fused.cwiseProduct(m.temporal[2].act);
  m.backward_branch(params.temporal, grad.temporal, params.arch.temporal_kernel, Axis::time,
                    m.temporal, std::move(d_temporal));
  m.backward_branch(params.spatial, grad.spatial, params.arch.spatial_kernel, Axis::feature,
                    m.spatial, std::move(d_spatial));
}

template <typename T>
const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& Network<T>::pair_embeddings() const {
  return impl_->eo;
}

template <typename T>
const std::vector<std::pair<Vec<T>, Vec<T>>>& Network<T>::batch_statistics() const {
  return impl_->stats;
}

template <typename T>
std::size_t Network<T>::batch_positions() const {
  return static_cast<std::size_t>(impl_->input.rows());
}

template <typename T>
ForwardTrace forward(const BasicParams<T>& params, const Window& a, const Window& b, Mode mode) {
  Network<T> net;
  const Window* pa = &a;
  const Window* pb = &b;
  RunOptions opts;
  opts.mode = mode;
  const auto out = net.forward(params, {&pa, 1}, {&pb, 1}, {}, opts);
  const auto& eo = net.pair_embeddings();
  const auto e = static_cast<Eigen::Index>(params.arch.embedding_size());
  ForwardTrace trace;
  trace.e_o.resize(static_cast<std::size_t>(eo.rows()));
  for (Eigen::Index i = 0; i < eo.rows(); ++i) trace.e_o[i] = static_cast<double>(eo(i, 0));
  trace.e_a.assign(trace.e_o.begin(), trace.e_o.begin() + e);
  trace.e_b.assign(trace.e_o.begin() + e, trace.e_o.end());
  trace.s0 = out.s0[0];
  trace.s1 = out.s1[0];
  trace.p_hat = out.p_hat[0];
  return trace;
}

template <typename T>
BasicParams<T> backward(const BasicParams<T>& params, const LinkSample& sample, double eps) {
  Network<T> net;
  const Window* pa = &sample.a;
  const Window* pb = &sample.b;
  const int label = sample.label;
  RunOptions opts;
  opts.mode = Mode::train;
  opts.label_smoothing = eps;
  net.forward(params, {&pa, 1}, {&pb, 1}, {&label, 1}, opts);
  auto grad = zero_params<T>(params.arch);
  net.backward(params, grad);
  return grad;
}

std::vector<double> score(const LinkerParams& params,
                          std::span<const std::pair<Window, Window>> pairs) {
  constexpr std::size_t kChunk = 256;
  Network<float> net;
  std::vector<double> out;
  out.reserve(pairs.size());
  std::vector<const Window*> a, b;
  RunOptions opts;
  opts.mode = Mode::eval;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t end = std::min(pairs.size(), start + kChunk);
    a.clear();
    b.clear();
    for (std::size_t i = start; i < end; ++i) {
      a.push_back(&pairs[i].first);
      b.push_back(&pairs[i].second);
    }
    const auto r = net.forward(params, a, b, {}, opts);
    out.insert(out.end(), r.p_hat.begin(), r.p_hat.end());
  }
  return out;
}

double accuracy(const LinkerParams& params, std::span<const LinkSample> samples, double threshold) {
  if (samples.empty()) return 0.0;
  std::vector<std::pair<Window, Window>> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) pairs.emplace_back(s.a, s.b);
  const auto p = score(params, pairs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int predicted = p[i] >= threshold ? 1 : 0;
    if (predicted == samples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

template class Network<float>;
template class Network<double>;
template ForwardTrace forward(const BasicParams<float>&, const Window&, const Window&, Mode);
template ForwardTrace forward(const BasicParams<double>&, const Window&, const Window&, Mode);
template BasicParams<float> backward(const BasicParams<float>&, const LinkSample&, double);
template BasicParams<double> backward(const BasicParams<double>&, const LinkSample&, double);

}  // namespace mmtrack::linker
