#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mmtrack/linker.hpp"

namespace mmtrack::linker {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  LinkerParams m;
  LinkerParams v;

  explicit Adam(const LinkerArch& arch) : m(zero_params<float>(arch)), v(zero_params<float>(arch)) {}

  void update(LinkerParams& params, const LinkerParams& grad, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const auto b1 = static_cast<float>(beta1);
    const auto b2 = static_cast<float>(beta2);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto e = static_cast<float>(eps);
    auto p = tensors(params);
    const auto g = tensors(grad);
    auto mt = tensors(m);
    auto vt = tensors(v);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p[i].learnable) continue;
      using Arr = Eigen::Map<Eigen::ArrayXf>;
      Arr pw(p[i].data, static_cast<Eigen::Index>(p[i].size));
      Eigen::Map<const Eigen::ArrayXf> gw(g[i].data, static_cast<Eigen::Index>(g[i].size));
      Arr mw(mt[i].data, static_cast<Eigen::Index>(mt[i].size));
      Arr vw(vt[i].data, static_cast<Eigen::Index>(vt[i].size));
      mw = b1 * mw + (1.0f - b1) * gw;
      vw = b2 * vw + (1.0f - b2) * gw.square();
      pw -= step_size * mw / ((vw * inv_c2).sqrt() + e);
    }
  }
};

void zero(LinkerParams& p) {
  for (auto& t : tensors(p)) std::fill(t.data, t.data + t.size, 0.0f);
}

void update_running_stats(LinkerParams& params, const Network<float>& net, double momentum) {
  const auto& stats = net.batch_statistics();
  const double n = static_cast<double>(net.batch_positions());
  const auto keep = static_cast<float>(momentum);
  const auto take = static_cast<float>(1.0 - momentum);
  const auto unbias = static_cast<float>(n / std::max(1.0, n - 1.0));
  for (int l = 0; l < 6; ++l) {
    auto& block = l < 3 ? params.temporal[l] : params.spatial[l - 3];
    const auto& [mean, var] = stats[static_cast<std::size_t>(l)];
    block.running_mean = keep * block.running_mean + take * mean;
    block.running_var = keep * block.running_var + take * unbias * var;
  }
}

}  // namespace

TrainingDiverged::TrainingDiverged(int epoch)
    : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
      epoch_(epoch) {}

double cosine_lr(double lr0, int epoch, int epochs) {
  if (epochs <= 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(epoch) / epochs));
}

TrainResult train(std::span<const LinkSample> samples, const TrainConfig& config,
                  const LinkerArch& arch, const EpochCallback& on_epoch) {
  if (!(config.learning_rate > 0.0)) throw Error("train: learning rate must be positive");
  if (config.epochs < 0) throw Error("train: epochs must be non-negative");
  if (config.batch_size < 2) throw Error("train: batch size must be at least 2");
  if (!(config.label_smoothing >= 0.0 && config.label_smoothing < 0.5)) {
    throw Error("train: label smoothing must lie in [0, 0.5)");
  }

  TrainResult result{init_params<float>(arch, config.seed), {}};
  if (config.epochs == 0) return result;
  if (samples.size() < 2) throw Error("train: need at least two samples");
  for (const auto& s : samples) {
    if (s.label != 0 && s.label != 1) throw Error("train: labels must be 0 or 1");
  }

  auto& params = result.params;
  auto grad = zero_params<float>(arch);
  Adam adam(arch);
  Network<float> net;
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  RunOptions opts;
  opts.mode = Mode::train;
  opts.label_smoothing = config.label_smoothing;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<const Window*> a, b;
  std::vector<int> labels;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config.learning_rate, epoch, config.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t end = std::min(order.size(), start + batch);
      // A trailing single sample joins the current batch (BN needs >= 2).
      if (order.size() - end == 1) end = order.size();
      a.clear();
      b.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        a.push_back(&s.a);
        b.push_back(&s.b);
        labels.push_back(s.label);
      }
      BatchOutput out;
      try {
        out = net.forward(params, a, b, labels, opts);
      } catch (const Error&) {
        throw TrainingDiverged(epoch + 1);
      }
      if (!std::isfinite(out.mean_loss)) throw TrainingDiverged(epoch + 1);
      total += out.mean_loss * static_cast<double>(end - start);
      zero(grad);
      net.backward(params, grad);
      adam.update(params, grad, lr);
      update_running_stats(params, net, config.bn_momentum);
      if (end == order.size()) break;
    }
    const double mean = total / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw TrainingDiverged(epoch + 1);
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean, lr);
  }
  return result;
}

}  // namespace mmtrack::linker
