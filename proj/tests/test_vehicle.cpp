#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "wsmpc/vehicle.hpp"

namespace wsmpc {
namespace {

TEST(Step, StraightLine) {
  const VehicleState n = step({0, 0, 0, 10}, {0, 0}, VehicleSpec{});
  EXPECT_DOUBLE_EQ(n.x, 0.2);
  EXPECT_DOUBLE_EQ(n.y, 0.0);
  EXPECT_DOUBLE_EQ(n.yaw, 0.0);
  EXPECT_DOUBLE_EQ(n.v, 10.0);
}

TEST(Step, SteeringTurnsByTheBicycleRate) {
  const VehicleState n = step({0, 0, 0, 10}, {0, 0.1}, VehicleSpec{});
  EXPECT_NEAR(n.yaw, 0.0069436, 1e-7);
  EXPECT_NEAR(n.yaw, 10.0 / 2.89 * std::tan(0.1) * 0.02, 1e-15);
  EXPECT_DOUBLE_EQ(n.x, 0.2);
  EXPECT_DOUBLE_EQ(n.v, 10.0);
}

TEST(Step, AccelerationChangesSpeedOnly) {
  const VehicleState n = step({0, 0, 0, 10}, {5, 0}, VehicleSpec{});
  EXPECT_DOUBLE_EQ(n.v, 10.1);
  EXPECT_DOUBLE_EQ(n.x, 0.2);
}

TEST(Step, RejectsInputsOutsideBounds) {
  const VehicleSpec spec;
  EXPECT_THROW(step({}, {5.5, 0}, spec), ValidationError);
  EXPECT_THROW(step({}, {0, -0.6}, spec), ValidationError);
  EXPECT_NO_THROW(step({}, {-5, 0.52}, spec));
}

TEST(Step, YawStaysWrapped) {
  VehicleState s{0, 0, 3.1, 10};
  for (int k = 0; k < 200; ++k) {
    s = step(s, {0, 0.5}, VehicleSpec{});
    ASSERT_GT(s.yaw, -M_PI);
    ASSERT_LE(s.yaw, M_PI);
  }
}

TEST(VehicleSpec, Validation) {
  VehicleSpec bad;
  bad.wheelbase = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.accel_min = 6.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_NO_THROW(VehicleSpec{}.validate());
}

TEST(VehicleSpec, ClampProjectsIntoBounds) {
  const VehicleSpec spec;
  const ControlInput c = spec.clamp({9.0, -1.0});
  EXPECT_EQ(c.accel, spec.accel_max);
  EXPECT_EQ(c.steer, spec.steer_min);
  EXPECT_TRUE(spec.admits(c));
}

TEST(Rollout, Examples) {
  const VehicleSpec spec;
  const std::vector<ControlInput> zeros(2);
  const auto traj = rollout({0, 0, 0, 10}, zeros, spec);
  ASSERT_EQ(traj.size(), 3u);
  EXPECT_DOUBLE_EQ(traj[0].x, 0.0);
  EXPECT_DOUBLE_EQ(traj[1].x, 0.2);
  EXPECT_DOUBLE_EQ(traj[2].x, 0.4);

  const auto alone = rollout({1, 2, 0.3, 4}, std::vector<ControlInput>{}, spec);
  ASSERT_EQ(alone.size(), 1u);
  EXPECT_EQ(alone[0].x, 1.0);
  EXPECT_EQ(alone[0].v, 4.0);
}

TEST(Rollout, FirstStepMatchesStep) {
  const VehicleSpec spec;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-5, 5), d(-0.52, 0.52);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ControlInput> seq(7);
    for (auto& u : seq) u = {a(rng), d(rng)};
    const VehicleState s{a(rng), a(rng), d(rng), 8.0 + a(rng)};
    const auto traj = rollout(s, seq, spec);
    const VehicleState one = step(s, seq[0], spec);
    ASSERT_EQ(traj[1].x, one.x);
    ASSERT_EQ(traj[1].y, one.y);
    ASSERT_EQ(traj[1].yaw, one.yaw);
    ASSERT_EQ(traj[1].v, one.v);
    ASSERT_EQ(traj.size(), seq.size() + 1);
  }
}

}  // namespace
}  // namespace wsmpc
