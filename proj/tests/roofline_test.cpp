/*
 * Copyright 2026 The pdvs Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pdvs/rng.hpp"
#include "pdvs/roofline.hpp"

using namespace pdvs;
using namespace pdvs::roofline;

namespace {

StageRooflineParams make(double ai, double bw, double peak, double x_sat, double alpha) {
  return {Stage::ann, ai, bw, peak, x_sat, alpha};
}

}  // namespace

TEST(Roofline, UMaxMatchesHandComputedRatio) {
  // 1 FLOP/B * 6e11 B/s = 6e11 FLOP/s achievable out of 1.25e14.
  const double expected = 6.0e11 / 1.25e14;
  const double got = u_max(make(1, 6.0e11, 1.25e14, 64, 1));
  EXPECT_NEAR(got, 4.8e-3, 4.8e-3 * 1e-15);
  EXPECT_EQ(got, expected);
}

TEST(Roofline, UMaxClampsAtOne) {
  EXPECT_EQ(u_max(make(1000, 1e12, 1e14, 8, 1)), 1.0);
  EXPECT_EQ(u_max(make(100, 1e12, 1e14, 8, 1)), 1.0);  // exactly at the ridge
}

TEST(Roofline, UtilizationExamples) {
  const auto p = make(1000, 1e12, 1e14, 64, 1);
  EXPECT_DOUBLE_EQ(utilization(32, p), 0.5);
  EXPECT_EQ(utilization(64, make(1000, 1e12, 1e14, 64, 0.37)), 1.0);
  EXPECT_EQ(utilization(256, make(1000, 1e12, 1e14, 64, 0.5)), 1.0);
  EXPECT_EQ(utilization(0, p), 0.0);
}

TEST(Roofline, UtilizationRejectsNegativeOrNonFinite) {
  const auto p = make(1, 1e12, 1e14, 64, 1);
  EXPECT_THROW(utilization(-1, p), DomainError);
  EXPECT_THROW(utilization(NAN, p), DomainError);
}

TEST(Roofline, ParamsValidate) {
  EXPECT_THROW(make(0, 1e12, 1e14, 64, 1).validate(), DomainError);
  EXPECT_THROW(make(1, -1, 1e14, 64, 1).validate(), DomainError);
  EXPECT_THROW(make(1, 1e12, 1e14, 0, 1).validate(), DomainError);
  EXPECT_THROW(make(1, 1e12, 1e14, 64, 0).validate(), DomainError);
  EXPECT_NO_THROW(default_params(Stage::prefill).validate());
}

TEST(Roofline, SaturationPointClosedForms) {
  EXPECT_EQ(saturation_point(make(1000, 1e12, 1e14, 64, 0.7)), 64.0);
  // u_max = 0.25: ai * bw / peak = 0.25.
  auto quarter = make(0.25, 1e12, 1e12, 100, 1);
  EXPECT_NEAR(saturation_point(quarter), 25.0, 25.0 * 1e-12);
  quarter.alpha = 0.5;
  EXPECT_NEAR(saturation_point(quarter), 6.25, 6.25 * 1e-12);
}

TEST(Roofline, SampleCurve) {
  const auto p = make(1000, 1e12, 1e14, 16, 1);
  const std::vector<double> zero{0};
  EXPECT_EQ(sample_curve(p, zero).points.front().u, 0.0);
  const std::vector<double> knee{16};
  EXPECT_EQ(sample_curve(p, knee).points.front().u, 1.0);

  std::vector<double> xs;
  for (int x = 1; x <= 160; ++x) xs.push_back(x);
  const auto curve = sample_curve(p, xs);
  ASSERT_EQ(curve.points.size(), xs.size());
  for (std::size_t i = 1; i < curve.points.size(); ++i) EXPECT_GE(curve.points[i].u, curve.points[i - 1].u);
  EXPECT_EQ(curve.points.back().u, curve.u_max);

  const std::vector<double> unsorted{2, 1};
  EXPECT_THROW(sample_curve(p, unsorted), InputError);
  const std::vector<double> none;
  EXPECT_THROW(sample_curve(p, none), InputError);
}

TEST(Roofline, ParseXs) {
  EXPECT_EQ(parse_xs("1:4:1"), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(parse_xs("0,2.5,8"), (std::vector<double>{0, 2.5, 8}));
  EXPECT_EQ(parse_xs("1:128:1").size(), 128u);
  EXPECT_THROW(parse_xs("1:4:0"), InputError);
  EXPECT_THROW(parse_xs("a,b"), InputError);
}

TEST(RooflineProperty, RandomSweepMonotoneAndClamped) {
  rng::CounterRng g(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = make(std::pow(10.0, g.uniform() * 4 - 1), std::pow(10.0, 11 + g.uniform() * 2),
                        std::pow(10.0, 13 + g.uniform() * 2), 1 + g.uniform() * 255, 0.05 + g.uniform() * 0.95);
    const double um = u_max(p);
    ASSERT_GT(um, 0.0);
    ASSERT_LE(um, 1.0);
    const double sat = saturation_point(p);
    double prev = 0.0;
    for (int i = 0; i <= 40; ++i) {
      const double x = p.x_sat * 2.0 * i / 40.0;
      const double u = utilization(x, p);
      ASSERT_GE(u, prev);
      ASSERT_LE(u, um);
      if (x >= sat) ASSERT_NEAR(u, um, um * 1e-12);
      prev = u;
    }
    // Closed form: (sat / x_sat)^alpha recovers u_max.
    ASSERT_NEAR(std::pow(sat / p.x_sat, p.alpha), um, um * 1e-12);
  }
}
