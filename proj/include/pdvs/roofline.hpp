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

#pragma once

// Analytic GPU utilization model for the prefill, decode and ANN-search
// stages. Utilization rises as (x / x_sat)^alpha until it meets the
// bandwidth/compute ceiling min(1, ai * mem_bw / peak_flops).

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdvs/common.hpp"

namespace pdvs::roofline {

enum class Stage : std::uint8_t { prefill, decode, ann };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::prefill: return "prefill";
    case Stage::decode: return "decode";
    case Stage::ann: return "ann";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  if (s == "prefill") return Stage::prefill;
  if (s == "decode") return Stage::decode;
  if (s == "ann") return Stage::ann;
  throw InputError("unknown stage '" + std::string(s) + "' (expected prefill|decode|ann)");
}

/// Roofline parameters of one serving stage on one GPU type.
struct StageRooflineParams {
  Stage stage = Stage::ann;
  double ai = 1.0;          ///< arithmetic intensity, FLOP/byte
  double mem_bw = 1.0;      ///< effective memory bandwidth, bytes/s
  double peak_flops = 1.0;  ///< peak compute, FLOP/s
  double x_sat = 1.0;       ///< saturation scale (batch size or concurrent queries)
  double alpha = 1.0;       ///< sublinearity exponent, (0, 1]

  /// Throws DomainError naming the first field outside its domain.
  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw DomainError(std::string("roofline: ") + name + " must be finite and > 0");
    };
    positive(ai, "ai");
    positive(mem_bw, "mem_bw");
    positive(peak_flops, "peak_flops");
    positive(x_sat, "x_sat");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("roofline: alpha must lie in (0, 1]");
  }
};

/// Illustrative presets. Not calibrated against any particular GPU.
inline StageRooflineParams default_params(Stage stage) {
  StageRooflineParams p;
  p.stage = stage;
  p.mem_bw = 2.0e12;
  p.peak_flops = 1.0e15;
  switch (stage) {
    case Stage::prefill:
      p.ai = 200.0;
      p.alpha = 0.9;
      p.x_sat = 8.0;
      break;
    case Stage::decode:
      p.ai = 1.0;
      p.alpha = 1.0;
      p.x_sat = 64.0;
      break;
    case Stage::ann:
      p.ai = 1.0;
      p.alpha = 1.0;
      p.x_sat = 64.0;
      break;
  }
  return p;
}

/// Plateau utilization: min(1, ai * mem_bw / peak_flops).
inline double u_max(const StageRooflineParams& params) {
  params.validate();
  return std::min(1.0, params.ai * params.mem_bw / params.peak_flops);
}

/// Utilization at batch/query count `x`; 0 at x = 0.
inline double utilization(double x, const StageRooflineParams& params) {
  const double ceiling = u_max(params);
  if (!(x >= 0.0) || !std::isfinite(x)) throw DomainError("roofline: x must be finite and >= 0");
  if (x == 0.0) return 0.0;
  return std::min(ceiling, std::pow(x / params.x_sat, params.alpha));
}

/// Smallest x at which utilization reaches the plateau.
inline double saturation_point(const StageRooflineParams& params) {
  return params.x_sat * std::pow(u_max(params), 1.0 / params.alpha);
}

struct CurvePoint {
  double x = 0.0;
  double u = 0.0;
};

struct UtilizationCurve {
  std::vector<CurvePoint> points;
  double u_max = 0.0;
};

inline UtilizationCurve sample_curve(const StageRooflineParams& params, std::span<const double> xs) {
  if (xs.empty()) throw InputError("sample_curve: xs must be nonempty");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] >= 0.0) || !std::isfinite(xs[i]))
      throw InputError("sample_curve: xs must be finite and >= 0");
    if (i > 0 && !(xs[i] > xs[i - 1])) throw InputError("sample_curve: xs must be strictly increasing");
  }
  UtilizationCurve curve;
  curve.u_max = u_max(params);
  curve.points.reserve(xs.size());
  for (double x : xs) curve.points.push_back({x, utilization(x, params)});
  return curve;
}

/// Parses "a,b,c" or an inclusive range "a:b:step" into a list of counts.
inline std::vector<double> parse_xs(std::string_view text) {
  auto to_num = [](std::string_view s) {
    std::string tmp(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tmp, &used);
    } catch (const std::exception&) {
      throw InputError("xs: cannot parse '" + tmp + "'");
    }
    if (used != tmp.size()) throw InputError("xs: cannot parse '" + tmp + "'");
    return v;
  };
  std::vector<double> out;
  if (text.find(':') != std::string_view::npos) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t pos; (pos = text.find(':', start)) != std::string_view::npos; start = pos + 1)
      parts.push_back(text.substr(start, pos - start));
    parts.push_back(text.substr(start));
    if (parts.size() != 3) throw InputError("xs: range must be a:b:step");
    const double a = to_num(parts[0]), b = to_num(parts[1]), step = to_num(parts[2]);
    if (!(step > 0.0)) throw InputError("xs: range step must be > 0");
    if (b < a) throw InputError("xs: range end must be >= start");
    // Index-based so accumulated rounding cannot drop the last point.
    const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) out.push_back(a + static_cast<double>(i) * step);
  } else {
    std::size_t start = 0;
    for (;;) {
      const std::size_t pos = text.find(',', start);
      out.push_back(to_num(text.substr(start, pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  }
  return out;
}

}  // namespace pdvs::roofline
