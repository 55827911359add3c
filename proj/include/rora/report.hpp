#pragma once

// Long-format results (one metric per row), the versioned CSV codec, and the
// grouped summary built from a results file.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "rora/variance.hpp"

namespace rora {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kSchemaVersion = "1";
inline constexpr std::string_view kResultsHeader =
    "schema_version,experiment,policy,rank,p_in,p_out,gamma,sparsity,seed,step,metric,value,"
    "config_hash";
inline constexpr std::string_view kSummaryHeader =
    "schema_version,kind,experiment,policy,rank,p_in,p_out,gamma,sparsity,metric,n,mean,std,"
    "slope,intercept,residual";

struct ResultRow {
  std::string experiment;
  std::string policy;
  std::optional<std::size_t> rank;
  std::optional<std::size_t> p_in;
  std::optional<std::size_t> p_out;
  std::optional<double> gamma;
  std::optional<double> sparsity;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> step;
  std::string metric;
  double value = 0.0;

  bool operator==(const ResultRow&) const = default;
};

// 17 significant digits: enough to read every double back exactly.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace detail {

template <class T>
std::string opt_str(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(*v);
  } else {
    return std::to_string(*v);
  }
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <class T>
std::optional<T> parse_opt(const std::string& s, std::size_t line, const char* column) {
  if (s.empty()) return std::nullopt;
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw SchemaError("results line " + std::to_string(line) + ": bad " + column + " '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline std::string results_csv(const std::vector<ResultRow>& rows, const std::string& config_hash) {
  std::string out(kResultsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += kSchemaVersion;
    for (const std::string& field :
         {r.experiment, r.policy, detail::opt_str(r.rank), detail::opt_str(r.p_in),
          detail::opt_str(r.p_out), detail::opt_str(r.gamma), detail::opt_str(r.sparsity),
          detail::opt_str(r.seed), detail::opt_str(r.step), r.metric, format_double(r.value),
          config_hash}) {
      out += ',';
      out += field;
    }
    out += '\n';
  }
  return out;
}

// Empty input (zero bytes or header only) yields no rows.
inline std::vector<ResultRow> parse_results_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  if (text.empty()) return rows;
  std::size_t pos = 0, line_no = 0;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos >= text.size()) return std::nullopt;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return line;
  };
  const auto header = next_line();
  if (!header || *header != kResultsHeader) {
    throw SchemaError("results schema mismatch: expected header '" + std::string(kResultsHeader) +
                      "' (schema version " + std::string(kSchemaVersion) + ")");
  }
  while (const auto line = next_line()) {
    if (line->empty()) continue;
    const auto f = detail::split_csv(*line);
    if (f.size() != 13) {
      throw SchemaError("results line " + std::to_string(line_no) + ": expected 13 fields, got " +
                        std::to_string(f.size()));
    }
    if (f[0] != kSchemaVersion) {
      throw SchemaError("results line " + std::to_string(line_no) + ": schema version '" + f[0] +
                        "' is not supported (expected " + std::string(kSchemaVersion) + ")");
    }
    ResultRow r;
    r.experiment = f[1];
    r.policy = f[2];
    r.rank = detail::parse_opt<std::size_t>(f[3], line_no, "rank");
    r.p_in = detail::parse_opt<std::size_t>(f[4], line_no, "p_in");
    r.p_out = detail::parse_opt<std::size_t>(f[5], line_no, "p_out");
    r.gamma = detail::parse_opt<double>(f[6], line_no, "gamma");
    r.sparsity = detail::parse_opt<double>(f[7], line_no, "sparsity");
    r.seed = detail::parse_opt<std::uint64_t>(f[8], line_no, "seed");
    r.step = detail::parse_opt<std::size_t>(f[9], line_no, "step");
    r.metric = f[10];
    const auto value = detail::parse_opt<double>(f[11], line_no, "value");
    if (!value) throw SchemaError("results line " + std::to_string(line_no) + ": missing value");
    r.value = *value;
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Summary

struct SummaryStat {
  std::string experiment, policy;
  std::optional<std::size_t> rank, p_in, p_out;
  std::optional<double> gamma, sparsity;
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

// Log-log fit of the seed-mean of `metric` against rank.
struct SummaryFit {
  std::string experiment, policy;
  std::optional<std::size_t> p_in, p_out;
  std::optional<double> gamma, sparsity;
  std::string metric;
  std::size_t n = 0;
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;
};

struct Summary {
  std::vector<SummaryStat> stats;
  std::vector<SummaryFit> fits;

  bool empty() const { return stats.empty() && fits.empty(); }
};

// Metrics that get a rank-slope fit when at least three ranks are present.
inline bool fit_metric(std::string_view m) {
  return m == "mean_norm" || m == "empirical_var" || m == "early_update_norm" ||
         m == "final_update_norm";
}

// Groups rows over seeds. Per-step rows are left out; they are curves, not
// end points.
inline Summary summarize(const std::vector<ResultRow>& rows) {
  Summary s;
  using Key = std::tuple<std::string, std::string, std::optional<std::size_t>,
                         std::optional<std::size_t>, std::optional<std::size_t>,
                         std::optional<double>, std::optional<double>, std::string>;
  std::map<Key, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    if (r.step) continue;
    Key k{r.experiment, r.policy, r.rank, r.p_in, r.p_out, r.gamma, r.sparsity, r.metric};
    auto [it, fresh] = index.try_emplace(k, s.stats.size());
    if (fresh) {
      SummaryStat st;
      st.experiment = r.experiment;
      st.policy = r.policy;
      st.rank = r.rank;
      st.p_in = r.p_in;
      st.p_out = r.p_out;
      st.gamma = r.gamma;
      st.sparsity = r.sparsity;
      st.metric = r.metric;
      s.stats.push_back(st);
      values.emplace_back();
    }
    values[it->second].push_back(r.value);
  }
  for (std::size_t i = 0; i < s.stats.size(); ++i) {
    const auto& v = values[i];
    Moments m;
    for (double x : v) m.push(x);
    s.stats[i].n = v.size();
    s.stats[i].mean = m.mean();
    s.stats[i].std = v.size() < 2 ? 0.0 : std::sqrt(m.variance());
  }

  // Fits: same key minus rank; gamma only when the policy does not set it.
  using FitKey = std::tuple<std::string, std::string, std::optional<std::size_t>,
                            std::optional<std::size_t>, std::optional<double>,
                            std::optional<double>, std::string>;
  std::map<FitKey, std::size_t> fit_index;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> series;
  for (const auto& st : s.stats) {
    if (!st.rank || !fit_metric(st.metric)) continue;
    const bool custom = st.policy.starts_with("custom");
    const std::optional<double> g = custom ? st.gamma : std::nullopt;
    FitKey k{st.experiment, st.policy, st.p_in, st.p_out, g, st.sparsity, st.metric};
    auto [it, fresh] = fit_index.try_emplace(k, s.fits.size());
    if (fresh) {
      SummaryFit f;
      f.experiment = st.experiment;
      f.policy = st.policy;
      f.p_in = st.p_in;
      f.p_out = st.p_out;
      f.gamma = g;
      f.sparsity = st.sparsity;
      f.metric = st.metric;
      s.fits.push_back(f);
      series.emplace_back();
    }
    series[it->second].first.push_back(static_cast<double>(*st.rank));
    series[it->second].second.push_back(st.mean);
  }
  std::vector<SummaryFit> kept;
  for (std::size_t i = 0; i < s.fits.size(); ++i) {
    auto [xs, ys] = series[i];
    if (xs.size() < 3) continue;
    if (std::any_of(ys.begin(), ys.end(), [](double y) { return !(y > 0.0); })) continue;
    std::vector<std::size_t> order(xs.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
    std::vector<double> sx, sy;
    for (auto j : order) {
      sx.push_back(xs[j]);
      sy.push_back(ys[j]);
    }
    if (std::adjacent_find(sx.begin(), sx.end()) != sx.end()) continue;
    const SlopeFit fit = fit_loglog(sx, sy);
    SummaryFit f = s.fits[i];
    f.n = sx.size();
    f.slope = fit.slope;
    f.intercept = fit.intercept;
    f.residual = fit.residual;
    kept.push_back(f);
  }
  s.fits = std::move(kept);
  return s;
}

inline std::string summary_csv(const Summary& s) {
  using detail::opt_str;
  std::string out(kSummaryHeader);
  out += '\n';
  auto line = [&](std::initializer_list<std::string> fields) {
    out += kSchemaVersion;
    for (const auto& f : fields) {
      out += ',';
      out += f;
    }
    out += '\n';
  };
  for (const auto& st : s.stats) {
    line({"stat", st.experiment, st.policy, opt_str(st.rank), opt_str(st.p_in), opt_str(st.p_out),
          opt_str(st.gamma), opt_str(st.sparsity), st.metric, std::to_string(st.n),
          format_double(st.mean), format_double(st.std), "", "", ""});
  }
  for (const auto& f : s.fits) {
    line({"fit", f.experiment, f.policy, "", opt_str(f.p_in), opt_str(f.p_out), opt_str(f.gamma),
          opt_str(f.sparsity), f.metric, std::to_string(f.n), "", "", format_double(f.slope),
          format_double(f.intercept), format_double(f.residual)});
  }
  return out;
}

namespace detail {

inline std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

template <class T>
std::string short_opt(const std::optional<T>& v) {
  if (!v) return "-";
  if constexpr (std::is_floating_point_v<T>) {
    return short_num(*v);
  } else {
    return std::to_string(*v);
  }
}

inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      line += r[i];
      if (i + 1 < r.size()) line += std::string(width[i] - r[i].size() + 2, ' ');
    }
    out += line + '\n';
  }
  return out;
}

}  // namespace detail

inline std::string summary_text(const Summary& s) {
  using detail::short_opt;
  if (s.empty()) return "no results\n";
  std::string out;
  std::vector<std::vector<std::string>> t{
      {"experiment", "policy", "rank", "p_in", "p_out", "gamma", "sparsity", "metric", "n",
       "mean", "std"}};
  for (const auto& st : s.stats) {
    t.push_back({st.experiment, st.policy.empty() ? "-" : st.policy, short_opt(st.rank),
                 short_opt(st.p_in), short_opt(st.p_out), short_opt(st.gamma),
                 short_opt(st.sparsity), st.metric, std::to_string(st.n),
                 detail::short_num(st.mean), detail::short_num(st.std)});
  }
  out += detail::render_table(t);
  if (!s.fits.empty()) {
    out += "\nlog-log fits against rank\n";
    std::vector<std::vector<std::string>> f{{"experiment", "policy", "p_in", "p_out", "gamma",
                                             "sparsity", "metric", "n", "slope", "intercept",
                                             "residual"}};
    for (const auto& x : s.fits) {
      f.push_back({x.experiment, x.policy.empty() ? "-" : x.policy, short_opt(x.p_in),
                   short_opt(x.p_out), short_opt(x.gamma), short_opt(x.sparsity), x.metric,
                   std::to_string(x.n), detail::short_num(x.slope),
                   detail::short_num(x.intercept), detail::short_num(x.residual)});
    }
    out += detail::render_table(f);
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("error writing '" + path + "'");
}

inline Summary summarize_file(const std::string& path) {
  return summarize(parse_results_csv(read_file(path)));
}

}  // namespace rora
