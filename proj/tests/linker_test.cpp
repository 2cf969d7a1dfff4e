#include "mmtrack/linker.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mmtrack/synth.hpp"
#include "support.hpp"

namespace mmtrack::linker {
namespace {

constexpr ImageSize kImage{1920, 1080};

LinkerArch small_arch() {
  LinkerArch arch;
  arch.channels = {3, 4, 5};
  arch.hidden = 6;
  return arch;
}

TEST(MakeWindow, ExactFitNoPadding) {
  const Tracklet t = test::line_track(1, 10, 30, 100, 50, 2.0, 1.0);
  for (Side side : {Side::predecessor, Side::successor}) {
    const Window w = make_window(t, side, kImage);
    for (int r = 0; r < kWindowFrames; ++r) {
      EXPECT_DOUBLE_EQ(w.at(r, 0), r / 30.0);
      EXPECT_DOUBLE_EQ(w.at(r, 1), (100 + 2.0 * r) / 1920.0);
    }
  }
}

TEST(MakeWindow, ShortPredecessorStartPadded) {
  const Tracklet t = test::line_track(1, 1, 5, 100, 50, 3.0);
  const Window w = make_window(t, Side::predecessor, kImage);
  for (int r = 0; r < 25; ++r) {
    EXPECT_DOUBLE_EQ(w.at(r, 0), 0.0);
    EXPECT_DOUBLE_EQ(w.at(r, 1), 100.0 / 1920.0);
  }
  for (int r = 25; r < 30; ++r) EXPECT_DOUBLE_EQ(w.at(r, 1), (100 + 3.0 * (r - 25)) / 1920.0);
}

TEST(MakeWindow, ShortSuccessorEndPadded) {
  const Tracklet t = test::line_track(1, 1, 5, 100, 50, 3.0);
  const Window w = make_window(t, Side::successor, kImage);
  for (int r = 5; r < 30; ++r) EXPECT_DOUBLE_EQ(w.at(r, 1), 112.0 / 1920.0);
}

TEST(MakeWindow, MatchesIndexSlicingOracle) {
  std::mt19937_64 rng(4);
  for (int n : {1, 2, 17, 29, 30, 31, 40, 75}) {
    Tracklet t = test::line_track(3, 7, n, 300, 200, 1.5, -0.5);
    // Irregular frame spacing exercises the frame column.
    int frame = 7;
    for (auto& e : t.entries) {
      e.frame = frame;
      frame += 1 + static_cast<int>(rng() % 3);
    }
    for (Side side : {Side::predecessor, Side::successor}) {
      const Window w = make_window(t, side, kImage);
      const int first = side == Side::predecessor ? t.entries[static_cast<std::size_t>(std::max(0, n - 30))].frame
                                                  : t.entries[0].frame;
      const Window o = test::sliced_window(t, side, kImage, first);
      for (std::size_t i = 0; i < w.data.size(); ++i) EXPECT_NEAR(w.data[i], o.data[i], 1e-15) << "n=" << n;
    }
  }
}

TEST(MakeWindow, FortyEntryPredecessorKeepsLastThirty) {
  const Tracklet t = test::line_track(1, 1, 40, 0, 0, 1.0);
  const Window w = make_window(t, Side::predecessor, kImage);
  EXPECT_DOUBLE_EQ(w.at(0, 1), 10.0 / 1920.0);
  EXPECT_DOUBLE_EQ(w.at(29, 1), 39.0 / 1920.0);
}

TEST(MakeWindow, PairSharesPredecessorOrigin) {
  const Tracklet a = test::line_track(1, 1, 40, 300, 200, 2.0, 1.0);
  const Tracklet b = test::line_track(2, 45, 10, 400, 260, 2.0, 1.0);
  const auto [wa, wb] = make_pair_windows(a, b, kImage);
  // a ends at (378, 239).
  EXPECT_DOUBLE_EQ(wa.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(wb.at(0, 0), (45 - 11) / 30.0);
  EXPECT_NEAR(wa.at(29, 1), 0.5, 1e-15);
  EXPECT_NEAR(wa.at(29, 2), 0.5, 1e-15);
  EXPECT_NEAR(wa.at(0, 1), 0.5 - 58.0 / 1920.0, 1e-15);
  EXPECT_NEAR(wb.at(0, 1), 0.5 + 22.0 / 1920.0, 1e-15);
  EXPECT_NEAR(wb.at(0, 2), 0.5 + 21.0 / 1080.0, 1e-15);
  EXPECT_DOUBLE_EQ(wb.at(0, 3), 40.0 / 1920.0);
  EXPECT_DOUBLE_EQ(wb.at(0, 4), 100.0 / 1080.0);
}

TEST(MakeWindow, PairIsTranslationInvariant) {
  const Tracklet a = test::line_track(1, 1, 12, 300, 200, 2.0, 1.0);
  const Tracklet b = test::line_track(2, 16, 35, 340, 215, -1.0, 0.5);
  const Tracklet a2 = test::line_track(1, 1, 12, 1100, 650, 2.0, 1.0);
  const Tracklet b2 = test::line_track(2, 16, 35, 1140, 665, -1.0, 0.5);
  const auto [wa, wb] = make_pair_windows(a, b, kImage);
  const auto [wa2, wb2] = make_pair_windows(a2, b2, kImage);
  for (std::size_t i = 0; i < wa.data.size(); ++i) {
    EXPECT_NEAR(wa.data[i], wa2.data[i], 1e-12);
    EXPECT_NEAR(wb.data[i], wb2.data[i], 1e-12);
  }
}

TEST(MakeWindow, Errors) {
  EXPECT_THROW(make_window(Tracklet{}, Side::predecessor, kImage), Error);
  EXPECT_THROW(make_window(test::line_track(1, 1, 3, 0, 0), Side::successor, ImageSize{0, 10}), Error);
}

TEST(Loss, AnalyticValues) {
  EXPECT_NEAR(loss(0.5, 1, 0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss(0.5, 0, 0.0), std::log(2.0), 1e-15);
  EXPECT_LT(loss(1.0 - 1e-12, 1, 0.0), 1e-11);
  const double p = 0.8;
  EXPECT_NEAR(loss(p, 1, 0.1), -0.9 * std::log(p) - 0.1 * std::log(1 - p), 1e-15);
}

TEST(Loss, DomainErrors) {
  EXPECT_THROW(loss(0.0, 1, 0.0), Error);
  EXPECT_THROW(loss(1.0, 0, 0.0), Error);
  EXPECT_THROW(loss(0.5, 2, 0.0), Error);
  EXPECT_THROW(loss(0.5, 1, 0.5), Error);
}

TEST(Probability, SoftmaxNormalization) {
  for (double d : {-30.0, -2.0, 0.0, 0.7, 25.0}) {
    const double p = same_identity_probability(0.3, 0.3 + d);
    const double q = std::exp(0.3) / (std::exp(0.3) + std::exp(0.3 + d));
    EXPECT_NEAR(p + q, 1.0, 1e-12);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Forward, MatchesDirectLoopReference) {
  std::mt19937_64 rng(21);
  auto params = init_params<double>(small_arch(), 5);
  for (auto& b : params.temporal) b.running_var.setConstant(0.7);
  for (auto& b : params.spatial) b.running_mean.setConstant(0.1);
  const Window a = test::random_window(rng);
  const Window b = test::random_window(rng);
  for (Mode mode : {Mode::eval, Mode::train}) {
    const ForwardTrace got = forward(params, a, b, mode);
    const test::ReferenceOutput want = test::reference_forward(params, a, b, mode);
    ASSERT_EQ(got.e_o.size(), want.e_o.size());
    for (std::size_t i = 0; i < want.e_o.size(); ++i) EXPECT_NEAR(got.e_o[i], want.e_o[i], 1e-10);
    EXPECT_NEAR(got.s0, want.s0, 1e-10);
    EXPECT_NEAR(got.s1, want.s1, 1e-10);
  }
}

TEST(Forward, IdenticalWindowsStayInsideUnitInterval) {
  std::mt19937_64 rng(1);
  const auto params = init_params<float>(LinkerArch{}, 3);
  const Window a = test::random_window(rng);
  const ForwardTrace t = forward(params, a, a, Mode::eval);
  EXPECT_GT(t.p_hat, 0.0);
  EXPECT_LT(t.p_hat, 1.0);
}

TEST(Forward, ZeroFinalLayerGivesHalf) {
  std::mt19937_64 rng(2);
  auto params = init_params<float>(small_arch(), 3);
  params.fc2_weight.setZero();
  params.fc2_bias.setZero();
  const ForwardTrace t = forward(params, test::random_window(rng), test::random_window(rng), Mode::eval);
  EXPECT_EQ(t.p_hat, 0.5);
}

TEST(Forward, EvalDeterministic) {
  std::mt19937_64 rng(3);
  const auto params = init_params<float>(LinkerArch{}, 9);
  const Window a = test::random_window(rng);
  const Window b = test::random_window(rng);
  EXPECT_EQ(forward(params, a, b, Mode::eval).p_hat, forward(params, a, b, Mode::eval).p_hat);
}

TEST(Forward, SwappingInputsSwapsEmbeddings) {
  std::mt19937_64 rng(4);
  const auto params = init_params<double>(small_arch(), 2);
  const Window a = test::random_window(rng);
  const Window b = test::random_window(rng);
  const ForwardTrace ab = forward(params, a, b, Mode::eval);
  const ForwardTrace ba = forward(params, b, a, Mode::eval);
  ASSERT_EQ(ab.e_a.size(), ba.e_b.size());
  for (std::size_t i = 0; i < ab.e_a.size(); ++i) {
    EXPECT_NEAR(ab.e_a[i], ba.e_b[i], 1e-14);
    EXPECT_NEAR(ab.e_b[i], ba.e_a[i], 1e-14);
  }
}

TEST(Forward, BatchedEvalMatchesSinglePairs) {
  std::mt19937_64 rng(6);
  const auto params = init_params<float>(small_arch(), 4);
  std::vector<std::pair<Window, Window>> pairs;
  for (int i = 0; i < 11; ++i) pairs.emplace_back(test::random_window(rng), test::random_window(rng));
  const auto batched = score(params, pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_NEAR(batched[i], forward(params, pairs[i].first, pairs[i].second, Mode::eval).p_hat, 1e-6);
  }
}

TEST(Forward, CorruptParamsRaise) {
  std::mt19937_64 rng(7);
  auto params = init_params<float>(small_arch(), 4);
  params.fc2_bias[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(forward(params, test::random_window(rng), test::random_window(rng), Mode::eval), Error);
}

// Central differences on the mean train-mode loss of a batch.
double max_relative_error(std::uint64_t seed, int batch) {
  std::mt19937_64 rng(seed);
  auto params = init_params<double>(small_arch(), seed);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& b : params.temporal) {
    for (auto& v : b.gamma) v += jitter(rng);
    for (auto& v : b.beta) v += jitter(rng);
  }
  for (auto& v : params.fc1_bias) v += jitter(rng);

  std::vector<Window> wa, wb;
  std::vector<int> labels;
  for (int i = 0; i < batch; ++i) {
    wa.push_back(test::random_window(rng));
    wb.push_back(test::random_window(rng));
    labels.push_back(static_cast<int>(rng() % 2));
  }
  std::vector<const Window*> a, b;
  for (int i = 0; i < batch; ++i) {
    a.push_back(&wa[static_cast<std::size_t>(i)]);
    b.push_back(&wb[static_cast<std::size_t>(i)]);
  }
  RunOptions opts;
  opts.mode = Mode::train;
  opts.label_smoothing = 0.1;
  opts.want_relu_signature = true;
  Network<double> net;
  const auto base = net.forward(params, a, b, labels, opts);
  auto grad = zero_params<double>(params.arch);
  net.backward(params, grad);

  double worst = 0.0;
  auto p = tensors(params);
  const auto g = tensors(grad);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i].learnable) continue;
    for (std::size_t k = 0; k < p[i].size; ++k) {
      const double old = p[i].data[k];
      const double h = 1e-4;
      p[i].data[k] = old + h;
      const auto up = net.forward(params, a, b, labels, opts);
      p[i].data[k] = old - h;
      const auto down = net.forward(params, a, b, labels, opts);
      p[i].data[k] = old;
      if (up.relu_signature != base.relu_signature || down.relu_signature != base.relu_signature) continue;
      const double numeric = (up.mean_loss - down.mean_loss) / (2 * h);
      const double analytic = g[i].data[k];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return worst;
}

TEST(Backward, SingleSampleFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) EXPECT_LE(max_relative_error(seed, 1), 1e-4);
}

TEST(Backward, BatchFiniteDifferences) {
  // Nine pairs span more than one im2col chunk.
  EXPECT_LE(max_relative_error(42, 9), 1e-4);
}

TEST(Backward, GradientsFiniteAndDeadUnitsZero) {
  std::mt19937_64 rng(8);
  auto params = init_params<double>(small_arch(), 8);
  // Channel 0 of the last temporal layer never activates.
  params.temporal[2].gamma[0] = 0.0;
  params.temporal[2].beta[0] = -1.0;
  const LinkSample s{test::random_window(rng), test::random_window(rng), 1};
  const auto grad = backward(params, s, 0.1);
  for (const auto& t : tensors(grad)) {
    for (std::size_t k = 0; k < t.size; ++k) EXPECT_TRUE(std::isfinite(t.data[k])) << t.name;
  }
  EXPECT_EQ(grad.temporal[2].weight.row(0).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(grad.temporal[2].beta[0], 0.0);
}

TEST(Backward, RequiresLabelledTrainPass) {
  std::mt19937_64 rng(9);
  const auto params = init_params<float>(small_arch(), 1);
  const Window w = test::random_window(rng);
  const Window* pw = &w;
  Network<float> net;
  RunOptions opts;
  net.forward(params, {&pw, 1}, {&pw, 1}, {}, opts);
  auto grad = zero_params<float>(params.arch);
  EXPECT_THROW(net.backward(params, grad), Error);
}

TEST(Params, BudgetOfDefaultArchitecture) {
  EXPECT_LE(learnable_count(LinkerArch{}), 2'700'000u);
  EXPECT_LE(learnable_count(LinkerArch{{32, 64, 128}, 1024, 7, 5}), 2'700'000u);
}

TEST(Params, LearnableCountByHand) {
  const LinkerArch a = small_arch();
  // conv weights + BN (gamma, beta) per branch, then the MLP.
  const std::size_t temporal = 7 * 1 * 3 + 7 * 3 * 4 + 7 * 4 * 5 + 2 * (3 + 4 + 5);
  const std::size_t spatial = 5 * 1 * 3 + 5 * 3 * 4 + 5 * 4 * 5 + 2 * (3 + 4 + 5);
  const std::size_t mlp = 50 * 6 + 6 + 6 * 2 + 2;
  EXPECT_EQ(learnable_count(a), temporal + spatial + mlp);
}

TEST(Params, SaveLoadBitwise) {
  auto params = init_params<float>(LinkerArch{}, 12);
  params.temporal[1].running_var.setConstant(0.25f);
  std::stringstream buf;
  save_params(params, buf);
  const auto loaded = load_params(buf);
  ASSERT_TRUE(loaded.arch == params.arch);
  const auto a = tensors(params);
  const auto b = tensors(loaded);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(std::memcmp(a[i].data, b[i].data, a[i].size * sizeof(float)), 0);
  }
  std::mt19937_64 rng(1);
  const Window x = test::random_window(rng);
  const Window y = test::random_window(rng);
  EXPECT_EQ(forward(params, x, y, Mode::eval).p_hat, forward(loaded, x, y, Mode::eval).p_hat);
}

TEST(Params, CorruptStreams) {
  const auto params = init_params<float>(small_arch(), 1);
  std::stringstream buf;
  save_params(params, buf);
  std::string bytes = buf.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream in1(bad_magic);
  EXPECT_THROW(load_params(in1), Error);

  std::istringstream in2(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_params(in2), Error);

  std::istringstream in3(bytes);
  EXPECT_THROW(load_params(in3, LinkerArch{}), Error);
}

TEST(Schedule, CosineEndpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 60), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 60, 60), 0.0, 1e-18);
  EXPECT_NEAR(cosine_lr(1e-3, 30, 60), 5e-4, 1e-15);
}

std::vector<LinkSample> corpus(int n, std::uint64_t seed = 3) {
  synth::SceneConfig sc;
  sc.num_identities = 12;
  sc.frames = 300;
  sc.seed = seed;
  const auto scene = synth::gen_scene(sc);
  TrainConfig tc;
  tc.num_samples = n;
  tc.seed = seed;
  return generate_samples(scene.gt[0], tc);
}

TEST(Samples, RatioAndDeterminism) {
  const auto a = corpus(400);
  const auto b = corpus(400);
  ASSERT_EQ(a.size(), b.size());
  long pos = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].a, b[i].a);
    EXPECT_EQ(a[i].b, b[i].b);
    EXPECT_EQ(a[i].label, b[i].label);
    pos += a[i].label;
  }
  const long neg = static_cast<long>(a.size()) - pos;
  EXPECT_LE(std::abs(neg - 3 * pos), 1);
  EXPECT_EQ(a.size(), 400u);
}

TEST(Samples, SingleTrajectoryPositivesAreTrueJunctions) {
  TrainConfig tc;
  tc.num_samples = 200;
  const TrackSet gt = test::track_set({test::line_track(1, 1, 100, 200, 300, 2.0, 0.5)});
  const auto samples = generate_samples(gt, tc);
  for (const auto& s : samples) {
    if (s.label != 1) continue;
    // Successor starts after the predecessor ends, within the gap limit,
    // and continues the same straight line.
    const double gap = s.b.at(0, 0) - s.a.at(kWindowFrames - 1, 0);
    EXPECT_GT(gap, 0.0);
    EXPECT_LE(gap, 10.0 / 30.0 + 1e-12);
    const double frames = gap * 30.0;
    EXPECT_NEAR((s.b.at(0, 1) - s.a.at(kWindowFrames - 1, 1)) * 1920.0, 2.0 * frames, 1e-9);
  }
}

TEST(Samples, InsufficientGroundTruth) {
  TrainConfig tc;
  tc.num_samples = 10;
  EXPECT_THROW(generate_samples(TrackSet{}, tc), InsufficientGroundTruth);
  const TrackSet singles = test::track_set({test::line_track(1, 1, 1, 0, 0), test::line_track(2, 5, 1, 0, 0)});
  EXPECT_THROW(generate_samples(singles, tc), InsufficientGroundTruth);
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 5;
  const auto result = train({}, tc, small_arch());
  EXPECT_TRUE(result.epoch_loss.empty());
  const auto init = init_params<float>(small_arch(), 5);
  const auto a = tensors(init);
  const auto b = tensors(result.params);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::memcmp(a[i].data, b[i].data, a[i].size * sizeof(float)), 0);
  }
}

TEST(Train, LossDecreasesAndRunIsDeterministic) {
  const auto samples = corpus(512);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 32;
  const auto a = train(samples, tc, small_arch());
  const auto b = train(samples, tc, small_arch());
  ASSERT_EQ(a.epoch_loss.size(), 6u);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  for (const auto& block : a.params.temporal) EXPECT_GT(block.running_var.minCoeff(), 0.0f);
}

TEST(Train, ConfigValidation) {
  const auto samples = corpus(64);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 1;
  EXPECT_THROW(train(samples, tc, small_arch()), Error);
  tc.batch_size = 8;
  tc.learning_rate = 0.0;
  EXPECT_THROW(train(samples, tc, small_arch()), Error);
}

TEST(Train, DivergenceReportsEpoch) {
  const auto samples = corpus(64);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.learning_rate = 1e30;
  try {
    train(samples, tc, small_arch());
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_LE(e.epoch(), 3);
  }
}

}  // namespace
}  // namespace mmtrack::linker
