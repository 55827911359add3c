#pragma once

// Low-rank adapters attached to a frozen linear map, with the scaling factor
// gamma chosen by a ScalingPolicy:
//
//   H(x) = (m0 + gamma * B * A) x,   B: p_out x r,  A: r x p_in
//
// LoRA uses gamma = alpha / r, RoRA uses gamma = alpha / sqrt(r).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "rora/linalg.hpp"

namespace rora {

class ScalingPolicy {
 public:
  enum class Kind : std::uint8_t { LoRA = 0, RoRA = 1, Unit = 2, Custom = 3 };

  static ScalingPolicy lora() { return ScalingPolicy(Kind::LoRA, 0.0); }
  static ScalingPolicy rora() { return ScalingPolicy(Kind::RoRA, 0.0); }
  static ScalingPolicy unit() { return ScalingPolicy(Kind::Unit, 0.0); }
  static ScalingPolicy custom(double gamma) {
    if (!std::isfinite(gamma) || gamma <= 0.0) {
      throw ArgumentError("custom scaling factor must be finite and > 0");
    }
    return ScalingPolicy(Kind::Custom, gamma);
  }

  Kind kind() const { return kind_; }
  double custom_gamma() const { return custom_gamma_; }

  std::string name() const {
    switch (kind_) {
      case Kind::LoRA: return "lora";
      case Kind::RoRA: return "rora";
      case Kind::Unit: return "unit";
      case Kind::Custom: {
        std::array<char, 32> buf{};
        std::snprintf(buf.data(), buf.size(), "custom:%.17g", custom_gamma_);
        return buf.data();
      }
    }
    return "?";
  }

  // Accepts "lora", "rora", "unit" and "custom:<gamma>".
  static ScalingPolicy parse(std::string_view text) {
    if (text == "lora") return lora();
    if (text == "rora") return rora();
    if (text == "unit") return unit();
    constexpr std::string_view prefix = "custom:";
    if (text.starts_with(prefix)) {
      const std::string rest(text.substr(prefix.size()));
      std::size_t used = 0;
      double g = 0.0;
      try {
        g = std::stod(rest, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != rest.size() || rest.empty()) {
        throw ArgumentError("bad custom scaling factor: '" + std::string(text) + "'");
      }
      return custom(g);
    }
    throw ArgumentError("unknown scaling policy '" + std::string(text) +
                        "' (expected lora, rora, unit or custom:<gamma>)");
  }

  bool operator==(const ScalingPolicy&) const = default;

 private:
  ScalingPolicy(Kind k, double g) : kind_(k), custom_gamma_(g) {}
  Kind kind_;
  double custom_gamma_;
};

inline double scaling_factor(const ScalingPolicy& policy, double alpha, std::size_t r) {
  if (r == 0) throw ArgumentError("scaling_factor: rank must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ArgumentError("scaling_factor: alpha must be finite and > 0");
  }
  switch (policy.kind()) {
    case ScalingPolicy::Kind::LoRA: return alpha / static_cast<double>(r);
    case ScalingPolicy::Kind::RoRA: return alpha / std::sqrt(static_cast<double>(r));
    case ScalingPolicy::Kind::Unit: return 1.0;
    case ScalingPolicy::Kind::Custom: return policy.custom_gamma();
  }
  return 1.0;
}

// Initialisation presets for A. "analysis" draws unit-variance entries;
// "train" uses fan-in scaling 1/sqrt(p_in).
enum class InitPreset { Analysis, Train };

inline std::string_view preset_name(InitPreset p) {
  return p == InitPreset::Analysis ? "analysis" : "train";
}

inline double preset_std(InitPreset p, std::size_t p_in) {
  return p == InitPreset::Analysis ? 1.0 : 1.0 / std::sqrt(static_cast<double>(p_in));
}

inline constexpr double kDefaultAlpha = 16.0;

struct AdapterConfig {
  std::size_t p_in = 1;
  std::size_t p_out = 1;
  std::size_t r = 1;
  double alpha = kDefaultAlpha;
  ScalingPolicy policy = ScalingPolicy::lora();
  double init_std_A = 1.0;

  void validate() const {
    if (p_in == 0 || p_out == 0) throw ArgumentError("adapter widths must be >= 1");
    if (r < 1 || r > std::min(p_in, p_out)) {
      throw ArgumentError("adapter rank " + std::to_string(r) + " outside [1, min(" +
                          std::to_string(p_in) + ", " + std::to_string(p_out) + ")]");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ArgumentError("alpha must be > 0");
    if (!(init_std_A > 0.0) || !std::isfinite(init_std_A)) {
      throw ArgumentError("init_std_A must be > 0");
    }
  }

  bool operator==(const AdapterConfig&) const = default;
};

struct LowRankAdapter {
  AdapterConfig config;
  Matrix A;  // r x p_in
  Matrix B;  // p_out x r
  double gamma = 1.0;
};

inline LowRankAdapter init_adapter(const AdapterConfig& config, RngSeed seed) {
  config.validate();
  LowRankAdapter a;
  a.config = config;
  a.A = gaussian_matrix(config.r, config.p_in, 0.0, config.init_std_A, seed);
  a.B = Matrix(config.p_out, config.r, 0.0);
  a.gamma = scaling_factor(config.policy, config.alpha, config.r);
  return a;
}

// Frozen base weight plus adapter. m0 is only readable from outside.
class AdaptedLinear {
 public:
  AdaptedLinear(Matrix m0, LowRankAdapter adapter) : m0_(std::move(m0)), adapter_(std::move(adapter)) {
    if (m0_.rows() != adapter_.B.rows() || m0_.cols() != adapter_.A.cols()) {
      throw DimensionError("adapter " + adapter_.B.shape() + "*" + adapter_.A.shape() +
                           " does not fit base weight " + m0_.shape());
    }
  }

  const Matrix& m0() const { return m0_; }
  const LowRankAdapter& adapter() const { return adapter_; }
  LowRankAdapter& adapter() { return adapter_; }

 private:
  Matrix m0_;
  LowRankAdapter adapter_;
};

// w = gamma * B * (A x)
inline Vector increment(const LowRankAdapter& adapter, const Vector& x) {
  if (x.size() != adapter.A.cols()) {
    throw DimensionError("increment: input length " + std::to_string(x.size()) +
                         " but adapter expects " + std::to_string(adapter.A.cols()));
  }
  return adapter.gamma * matvec(adapter.B, matvec(adapter.A, x));
}

inline Vector forward(const AdaptedLinear& layer, const Vector& x) {
  if (x.size() != layer.m0().cols()) {
    throw DimensionError("forward: input length " + std::to_string(x.size()) +
                         " but layer expects " + std::to_string(layer.m0().cols()));
  }
  return matvec(layer.m0(), x) + increment(layer.adapter(), x);
}

// gamma * B * A, the dense update the adapter applies on top of m0.
inline Matrix delta_weight(const LowRankAdapter& adapter) {
  return adapter.gamma * matmul(adapter.B, adapter.A);
}

// ---------------------------------------------------------------------------
// Snapshot format (all integers u64 LE, all reals IEEE-754 binary64 LE):
//
//   magic      8 bytes  "RORAADP1"
//   p_in, p_out, r      u64 x 3
//   alpha               f64
//   policy tag          u64  (0 lora, 1 rora, 2 unit, 3 custom)
//   custom gamma        f64  (0 unless tag == 3)
//   init_std_A          f64
//   A                   r * p_in f64, row-major
//   B                   p_out * r f64, row-major

inline constexpr std::string_view kSnapshotMagic = "RORAADP1";

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw ArgumentError("adapter snapshot truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void save_adapter(std::ostream& os, const LowRankAdapter& a) {
  const auto& c = a.config;
  os.write(kSnapshotMagic.data(), static_cast<std::streamsize>(kSnapshotMagic.size()));
  detail::put_u64(os, c.p_in);
  detail::put_u64(os, c.p_out);
  detail::put_u64(os, c.r);
  detail::put_f64(os, c.alpha);
  detail::put_u64(os, static_cast<std::uint64_t>(c.policy.kind()));
  detail::put_f64(os, c.policy.custom_gamma());
  detail::put_f64(os, c.init_std_A);
  for (double v : a.A.values()) detail::put_f64(os, v);
  for (double v : a.B.values()) detail::put_f64(os, v);
}

inline LowRankAdapter load_adapter(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), 8);
  if (!is || std::string_view(magic.data(), 8) != kSnapshotMagic) {
    throw ArgumentError("not an adapter snapshot (bad magic)");
  }
  AdapterConfig c;
  c.p_in = detail::get_u64(is);
  c.p_out = detail::get_u64(is);
  c.r = detail::get_u64(is);
  c.alpha = detail::get_f64(is);
  const auto tag = detail::get_u64(is);
  const double g = detail::get_f64(is);
  switch (tag) {
    case 0: c.policy = ScalingPolicy::lora(); break;
    case 1: c.policy = ScalingPolicy::rora(); break;
    case 2: c.policy = ScalingPolicy::unit(); break;
    case 3: c.policy = ScalingPolicy::custom(g); break;
    default: throw ArgumentError("adapter snapshot: unknown policy tag " + std::to_string(tag));
  }
  c.init_std_A = detail::get_f64(is);
  c.validate();

  LowRankAdapter a;
  a.config = c;
  a.gamma = scaling_factor(c.policy, c.alpha, c.r);
  a.A = Matrix(c.r, c.p_in);
  a.B = Matrix(c.p_out, c.r);
  for (double& v : a.A.values()) v = detail::get_f64(is);
  for (double& v : a.B.values()) v = detail::get_f64(is);
  return a;
}

}  // namespace rora
