#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "wsmpc/policy.hpp"
#include "wsmpc/tracks.hpp"

namespace wsmpc {
namespace {

RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                        double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Central difference of f along parameter `index`.
template <class F>
double central_difference(MlpParams& p, std::size_t index, double h, F f) {
  const double keep = p.data[index];
  p.data[index] = keep + h;
  const double up = f(p);
  p.data[index] = keep - h;
  const double down = f(p);
  p.data[index] = keep;
  return (up - down) / (2.0 * h);
}

// Floor keeps tiny gradients from failing on finite-difference noise.
double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

// ---------------------------------------------------------------------------
// Observation

TEST(Observe, AlignedVehicleOnAStraight) {
  const Track t = make_straight_track({0.01, 1.1}, 50.0);
  const Observation o = observe(t, {5.0, 0.0, 0.0, 10.0});
  EXPECT_EQ(o.xte, 0.0);
  EXPECT_EQ(o.yaw_error, 0.0);
  EXPECT_EQ(o.v, 10.0);
  ASSERT_EQ(o.lookahead.size(), 10u);
  for (std::size_t k = 0; k < o.lookahead.size(); ++k) {
    EXPECT_NEAR(o.lookahead[k].y, 0.0, 1e-12);
    EXPECT_NEAR(o.lookahead[k].x, 0.5 * static_cast<double>(k + 1), 1e-9);
  }
  EXPECT_EQ(o.to_vector().size(), ObservationConfig{}.dim());
  EXPECT_EQ(ObservationConfig{}.dim(), 23u);
}

TEST(Observe, OffsetToTheLeft) {
  const Track t = make_straight_track({0.01, 1.1}, 50.0);
  const Observation o = observe(t, {5.0, 0.5, 0.0, 10.0});
  EXPECT_NEAR(o.xte, 0.5, 1e-12);
  for (const Vec2& p : o.lookahead) EXPECT_NEAR(p.y, -0.5, 1e-12);
}

TEST(Observe, InvariantToRotatingTheWholeScene) {
  const Track base = make_hairpin_track({0.01, 1.1});
  const double th = M_PI / 2;
  std::vector<Waypoint> rotated;
  for (const Waypoint& w : base.waypoints()) {
    rotated.push_back({std::cos(th) * w.x - std::sin(th) * w.y,
                       std::sin(th) * w.x + std::cos(th) * w.y, w.half_width_left,
                       w.half_width_right});
  }
  const Track turned(rotated);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> off(-0.4, 0.4);
  for (int k = 0; k < 20; ++k) {
    const Vec2 p = base.point(static_cast<std::size_t>(k) * base.size() / 20);
    const VehicleState s{p.x + off(rng), p.y + off(rng), off(rng), 9.5};
    const VehicleState r{std::cos(th) * s.x - std::sin(th) * s.y,
                         std::sin(th) * s.x + std::cos(th) * s.y, s.yaw + th, s.v};
    const auto a = observe(base, s).to_vector();
    const auto b = observe(turned, r).to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-9) << i;
  }
}

TEST(ObservationConfig, Validation) {
  EXPECT_THROW((ObservationConfig{0, 0.5}.validate()), ValidationError);
  EXPECT_THROW((ObservationConfig{3, 0.0}.validate()), ValidationError);
}

// ---------------------------------------------------------------------------
// Forward pass

TEST(Forward, ZeroParametersGiveZeroOutput) {
  MlpParams p = make_policy_network(23, 50, 1);
  std::fill(p.data.begin(), p.data.end(), 0.0);
  const auto y = forward(p, std::vector<double>(23, 0.7));
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Forward, TanhHeadStaysInsideTheUnitBox) {
  MlpParams p = make_policy_network(23, 50, 2);
  for (double& v : p.data) v *= 25.0;
  const RowMatrix x = random_matrix(64, 23, 3, 10.0);
  const RowMatrix y = forward_batch(p, x);
  EXPECT_LT(y.cwiseAbs().maxCoeff(), 1.0 + 1e-15);
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Forward, ShapeMismatchIsRejected) {
  const MlpParams p = make_policy_network(23, 50, 1);
  EXPECT_THROW(forward(p, std::vector<double>(5, 0.0)), ValidationError);
}

TEST(Forward, DirectionalDerivativeMatchesFiniteDifference) {
  MlpParams p = make_policy_network(6, 4, 5, 16);
  const RowMatrix x = random_matrix(1, 6, 6);
  const auto out_sum = [&](const MlpParams& q) { return forward_batch(q, x).sum(); };
  // Direction: the first hidden-layer weight block.
  const std::size_t n = p.layer_dims[0] * p.layer_dims[1];
  std::vector<double> dir(n);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (double& d : dir) d = g(rng);

  ForwardCache cache;
  forward_batch(p, x, &cache);
  MlpGradients grad = MlpGradients::zeros_like(p);
  backward(p, cache, RowMatrix::Ones(1, 4), grad);
  double analytic = 0.0;
  for (std::size_t i = 0; i < n; ++i) analytic += grad.data[i] * dir[i];

  const double h = 1e-6;
  MlpParams up = p, down = p;
  for (std::size_t i = 0; i < n; ++i) {
    up.data[i] += h * dir[i];
    down.data[i] -= h * dir[i];
  }
  const double numeric = (out_sum(up) - out_sum(down)) / (2 * h);
  EXPECT_LT(relative_gap(analytic, numeric), 1e-5) << analytic << " vs " << numeric;

  // Doubling a hidden weight moves the output.
  MlpParams doubled = p;
  doubled.data[p.weight_offset(1)] *= 2.0;
  EXPECT_NE(out_sum(doubled), out_sum(p));
}

// ---------------------------------------------------------------------------
// Backward pass

TEST(Backward, MseGradientMatchesFiniteDifferenceEverywhere) {
  MlpParams p = make_mlp({5, 7, 6, 3}, OutputActivation::kTanh, 11, false, 0.0);
  for (double& v : p.data) v *= 3.0;  // leave the near-linear regime
  p.input_shift = {0.1, -0.2, 0.0, 0.3, 0.5};
  p.input_scale = {1.5, 0.7, 1.0, 2.0, 0.9};
  const RowMatrix x = random_matrix(4, 5, 12);
  const RowMatrix target = random_matrix(4, 3, 13, 0.5);
  MlpGradients g = MlpGradients::zeros_like(p);
  mse_loss(p, x, target, &g);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double fd = central_difference(
        p, i, 1e-6, [&](const MlpParams& q) { return mse_loss(q, x, target); });
    ASSERT_LT(relative_gap(g.data[i], fd), 1e-5)
        << "parameter " << i << ": " << g.data[i] << " vs " << fd;
  }
}

TEST(Backward, LinearHeadGradient) {
  MlpParams p = make_value_network(4, 3, 8);
  const RowMatrix x = random_matrix(3, 4, 4);
  const RowMatrix target = random_matrix(3, 1, 5);
  MlpGradients g = MlpGradients::zeros_like(p);
  mse_loss(p, x, target, &g);
  for (std::size_t i = 0; i < p.data.size(); i += 3) {
    const double fd = central_difference(
        p, i, 1e-6, [&](const MlpParams& q) { return mse_loss(q, x, target); });
    ASSERT_LT(relative_gap(g.data[i], fd), 1e-5) << i;
  }
}

TEST(Backward, ZeroAtTheTarget) {
  const MlpParams p = make_policy_network(23, 50, 9);
  const RowMatrix x = random_matrix(8, 23, 10);
  const RowMatrix y = forward_batch(p, x);
  MlpGradients g = MlpGradients::zeros_like(p);
  EXPECT_EQ(mse_loss(p, x, y, &g), 0.0);
  for (double v : g.data) ASSERT_EQ(v, 0.0);
}

TEST(Backward, BatchGradientIsTheMeanOfSampleGradients) {
  const MlpParams p = make_policy_network(23, 50, 14, 16);
  const RowMatrix x = random_matrix(2, 23, 15);
  const RowMatrix t = random_matrix(2, 50, 16, 0.3);
  MlpGradients both = MlpGradients::zeros_like(p);
  mse_loss(p, x, t, &both);
  MlpGradients first = MlpGradients::zeros_like(p);
  MlpGradients second = MlpGradients::zeros_like(p);
  mse_loss(p, x.topRows(1), t.topRows(1), &first);
  mse_loss(p, x.bottomRows(1), t.bottomRows(1), &second);
  for (std::size_t i = 0; i < both.data.size(); ++i) {
    ASSERT_NEAR(both.data[i], 0.5 * (first.data[i] + second.data[i]), 1e-14);
  }
}

// ---------------------------------------------------------------------------
// Gaussian head

TEST(Gaussian, LogProbMatchesTheDensity) {
  const std::vector<double> a{0.3, -0.1}, m{0.1, 0.2}, ls{-1.0, 0.5};
  double expected = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double sd = std::exp(ls[i]);
    expected += std::log(std::exp(-0.5 * std::pow((a[i] - m[i]) / sd, 2)) /
                         (sd * std::sqrt(2 * M_PI)));
  }
  EXPECT_NEAR(gaussian_log_prob(a, m, ls), expected, 1e-13);
}

TEST(Gaussian, EntropyClosedForm) {
  const std::vector<double> ls(50, -1.0);
  EXPECT_NEAR(gaussian_entropy(ls), 50 * (-1.0 + 0.5 * std::log(2 * M_PI * M_E)), 1e-12);
}

TEST(Gaussian, SamplesHaveTheRequestedSpread) {
  MlpParams p = make_policy_network(3, 2, 1, 8, -1.0);
  std::mt19937_64 rng(2);
  const std::vector<double> in{0.1, 0.2, 0.3};
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const PolicyOutput o = sample_action(p, in, rng);
    const double d = o.action[0] - o.mean[0];
    sum += d;
    sum2 += d * d;
    if (k == 0) EXPECT_NEAR(o.log_prob, gaussian_log_prob(o.action, o.mean, p.log_std), 1e-15);
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(sum2 / n), std::exp(-1.0), 0.01);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientLeavesParametersAlone) {
  MlpParams p = make_policy_network(4, 2, 3, 8);
  const MlpParams before = p;
  AdamState st;
  adam_update(p, MlpGradients::zeros_like(p), st, 1e-3);
  EXPECT_EQ(p.data, before.data);
  EXPECT_EQ(p.log_std, before.log_std);
}

TEST(Adam, FirstStepMovesEachParameterByTheLearningRate) {
  MlpParams p = make_policy_network(4, 2, 3, 8);
  const MlpParams before = p;
  MlpGradients g = MlpGradients::zeros_like(p);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (double& v : g.data) v = n(rng);
  AdamState st;
  adam_update(p, g, st, 1e-3);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double expected = -std::copysign(1e-3, g.data[i]);
    ASSERT_NEAR(p.data[i] - before.data[i], expected, 1e-8);
  }
}

TEST(Adam, DeterministicAndClampsLogStd) {
  MlpParams a = make_policy_network(4, 2, 3, 8);
  MlpParams b = a;
  MlpGradients g = MlpGradients::zeros_like(a);
  for (double& v : g.data) v = 0.25;
  for (double& v : g.log_std) v = 1.0;
  AdamState sa, sb;
  for (int k = 0; k < 3000; ++k) {
    adam_update(a, g, sa, 1e-2);
    adam_update(b, g, sb, 1e-2);
  }
  EXPECT_EQ(a.data, b.data);
  for (double ls : a.log_std) EXPECT_EQ(ls, kLogStdMin);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  MlpParams p = make_policy_network(23, 50, 17);
  p.input_shift[3] = 0.123456789012345678;
  p.input_scale[5] = 1.0 / 3.0;
  p.log_std[7] = -2.2;
  std::stringstream buf;
  save_mlp(buf, p);
  const MlpParams q = load_mlp(buf);
  EXPECT_EQ(q.layer_dims, p.layer_dims);
  EXPECT_EQ(q.data, p.data);
  EXPECT_EQ(q.log_std, p.log_std);
  EXPECT_EQ(q.input_shift, p.input_shift);
  EXPECT_EQ(q.input_scale, p.input_scale);
  EXPECT_EQ(q.output, p.output);
}

TEST(Checkpoint, TruncatedDocumentFails) {
  std::stringstream buf;
  save_mlp(buf, make_policy_network(23, 50, 1));
  const std::string text = buf.str();
  std::istringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_mlp(cut), ParseError);
}

TEST(Checkpoint, UnknownVersionIsNamed) {
  nlohmann::json j = to_json(make_policy_network(4, 2, 1, 8));
  j["version"] = 999;
  try {
    mlp_from_json(j);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported checkpoint version 999"),
              std::string::npos);
  }
}

TEST(Checkpoint, InconsistentShapesAreStructuralErrors) {
  nlohmann::json j = to_json(make_policy_network(4, 2, 1, 8));
  j["layer_dims"][1] = 9;
  EXPECT_THROW(mlp_from_json(j), StructuralError);
  nlohmann::json k = to_json(make_policy_network(4, 2, 1, 8));
  k.erase("layers");
  EXPECT_THROW(mlp_from_json(k), StructuralError);
}

}  // namespace
}  // namespace wsmpc
