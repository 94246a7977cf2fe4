#include "icil/harness/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "icil/sim/render.hpp"

namespace icil::harness {
namespace {

constexpr std::array<std::string_view, kFailureClassCount> kNames = {
    "none", "trace_error", "grasp_failure", "placement_failure", "poke_failure", "overflow"};

constexpr std::string_view kHeader =
    "variant,task,prompt_config,k,mean_score,n,none,trace_error,grasp_failure,placement_failure,poke_failure,overflow";

template <class T>
std::string num(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_num(const std::string& s, int line) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw MetricsFormatError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

auto sort_key(const MetricsRow& r) {
  return std::tuple(r.variant, r.task, r.prompt_config, r.k == 0, r.k);
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.1f", 100.0 * v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

/// Mean of per-group means, grouping rows of one variant by `group`.
template <class G>
std::map<std::string, std::map<std::string, double>> table(const std::vector<MetricsRow>& rows, G group) {
  std::map<std::string, std::map<std::string, std::pair<double, int>>> acc;
  for (const auto& r : rows) {
    auto& cell = acc[r.variant][group(r)];
    cell.first += r.score_sum();
    cell.second += r.n;
  }
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& [v, cells] : acc)
    for (const auto& [g, c] : cells) out[v][g] = c.second ? c.first / c.second : 0.0;
  return out;
}

std::string k_label(int k) { return k == 0 ? "never" : "k=" + std::to_string(k); }

void emit_table(std::ostringstream& out, const std::string& title,
                const std::map<std::string, std::map<std::string, double>>& t, std::vector<std::string> columns) {
  out << title << " (success %)\n";
  out << pad("variant", 10);
  for (const auto& c : columns) out << pad(c, 16);
  out << pad("average", 8) << "\n";
  for (const auto& [v, cells] : t) {
    out << pad(v, 10);
    double s = 0.0;
    int n = 0;
    for (const auto& c : columns) {
      const auto it = cells.find(c);
      if (it == cells.end()) {
        out << pad("     -", 16);
      } else {
        out << pad(pct(it->second), 16);
        s += it->second;
        ++n;
      }
    }
    out << (n ? pct(s / n) : std::string("     -")) << "\n";
  }
  out << "\n";
}

}  // namespace

std::string_view to_string(FailureClass f) { return kNames[static_cast<std::size_t>(f)]; }

FailureClass parse_failure_class(std::string_view s) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == s) return static_cast<FailureClass>(i);
  }
  throw MetricsFormatError("unknown failure class '" + std::string(s) + "'");
}

FailureClass classify_failure(const engine::RolloutResult& rollout, const sim::TaskSpec& task,
                              const sim::WorldState& start, const sim::WorldParams& params) {
  if (rollout.score >= 1.0f) return FailureClass::none;
  if (rollout.overflow) return FailureClass::overflow;
  if (!rollout.traces.empty()) {
    const auto& tr = rollout.traces.front().second;
    const float g = static_cast<float>(params.third_resolution);
    const float u = tr[data::kTraceDim - 2] * g, v = tr[data::kTraceDim - 1] * g;
    const auto camera = sim::CameraModel::third(params);
    auto dist = [&](const sim::Entity& e) {
      const auto p = sim::project_to_pixel(e.x, e.y, camera);
      return std::hypot(p.u - u, p.v - v);
    };
    const bool poke = task.kind == sim::TaskKind::poke;
    const auto goal = poke ? sim::find_object(start, task.target_object_class)
                           : sim::find_receptacle(start, *task.target_receptacle_class);
    if (goal) {
      const float goal_d = dist(poke ? start.objects[*goal] : start.receptacles[*goal]);
      float other_d = std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < start.objects.size(); ++i) {
        if (!(poke && static_cast<int>(i) == *goal)) other_d = std::min(other_d, dist(start.objects[i]));
      }
      for (std::size_t i = 0; i < start.receptacles.size(); ++i) {
        if (!(!poke && static_cast<int>(i) == *goal)) other_d = std::min(other_d, dist(start.receptacles[i]));
      }
      if (other_d < goal_d) return FailureClass::trace_error;
    }
  }
  if (task.kind == sim::TaskKind::poke) return FailureClass::poke_failure;
  return rollout.score >= 0.5f ? FailureClass::placement_failure : FailureClass::grasp_failure;
}

double MetricsRow::score_sum() const { return std::round(mean_score * n * 2.0) / 2.0; }

bool metrics_key_less(const MetricsRow& a, const MetricsRow& b) { return sort_key(a) < sort_key(b); }

std::vector<MetricsRow> aggregate(const std::vector<RolloutRecord>& records) {
  std::vector<MetricsRow> rows;
  for (const auto& r : records) {
    MetricsRow row;
    row.variant = r.variant;
    row.task = r.task;
    row.prompt_config = r.prompt_config;
    row.k = r.k;
    row.n = 1;
    row.mean_score = r.score;
    row.failures[static_cast<std::size_t>(r.failure)] = 1;
    rows.push_back(std::move(row));
  }
  return merge(rows);
}

std::vector<MetricsRow> merge(const std::vector<MetricsRow>& rows) {
  std::vector<MetricsRow> sorted = rows;
  std::stable_sort(sorted.begin(), sorted.end(), metrics_key_less);
  std::vector<MetricsRow> out;
  double sum = 0.0;
  for (const auto& r : sorted) {
    if (!out.empty() && sort_key(out.back()) == sort_key(r)) {
      auto& m = out.back();
      sum += r.score_sum();
      m.n += r.n;
      for (std::size_t i = 0; i < kFailureClassCount; ++i) m.failures[i] += r.failures[i];
      m.mean_score = sum / m.n;
    } else {
      out.push_back(r);
      sum = r.score_sum();
    }
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.variant + ',' + r.task + ',' + r.prompt_config + ',' + num(r.k) + ',' + num(r.mean_score) + ',' + num(r.n);
    for (int c : r.failures) out += ',' + num(c);
    out += '\n';
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw MetricsFormatError("metrics header mismatch: expected '" + std::string(kHeader) + "'");
  }
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6 + kFailureClassCount) {
      throw MetricsFormatError("line " + std::to_string(lineno) + ": expected " +
                               std::to_string(6 + kFailureClassCount) + " fields, got " + std::to_string(f.size()));
    }
    MetricsRow r;
    r.variant = f[0];
    r.task = f[1];
    r.prompt_config = f[2];
    r.k = parse_num<int>(f[3], lineno);
    r.mean_score = parse_num<double>(f[4], lineno);
    r.n = parse_num<int>(f[5], lineno);
    int failed = 0;
    for (std::size_t i = 0; i < kFailureClassCount; ++i) {
      r.failures[i] = parse_num<int>(f[6 + i], lineno);
      failed += r.failures[i];
    }
    if (r.n < 1 || failed != r.n || r.mean_score < 0.0 || r.mean_score > 1.0) {
      throw MetricsFormatError("line " + std::to_string(lineno) + ": inconsistent counts or score");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string rollouts_csv(const std::vector<RolloutRecord>& records) {
  std::string out = "variant,task,prompt_config,k,seed,index,score,steps,max_steps,trace_decodes,failure\n";
  for (const auto& r : records) {
    out += r.variant + ',' + r.task + ',' + r.prompt_config + ',' + num(r.k) + ',' + num(r.seed) + ',' +
           num(r.index) + ',' + num(r.score) + ',' + num(r.steps) + ',' + num(r.max_steps) + ',' +
           num(r.trace_decodes) + ',' + std::string(to_string(r.failure)) + '\n';
  }
  return out;
}

std::string summary(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  if (rows.empty()) {
    out << "no metrics\n";
    return out.str();
  }
  std::set<std::string> tasks, prompts;
  std::set<std::pair<bool, int>> ks;
  for (const auto& r : rows) {
    tasks.insert(r.task);
    prompts.insert(r.prompt_config);
    ks.insert({r.k == 0, r.k});
  }
  emit_table(out, "Success by task", table(rows, [](const MetricsRow& r) { return r.task; }),
             {tasks.begin(), tasks.end()});
  emit_table(out, "Success by prompt config", table(rows, [](const MetricsRow& r) { return r.prompt_config; }),
             {prompts.begin(), prompts.end()});
  std::vector<std::string> kcols;
  for (const auto& [never, k] : ks) kcols.push_back(k_label(k));
  emit_table(out, "Success by reasoning interval", table(rows, [](const MetricsRow& r) { return k_label(r.k); }),
             kcols);

  out << "Failure classes (% of failed rollouts)\n" << pad("variant", 10);
  for (std::size_t i = 1; i < kFailureClassCount; ++i) out << pad(std::string(kNames[i]), 19);
  out << "failed\n";
  std::map<std::string, std::array<int, kFailureClassCount>> hist;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < kFailureClassCount; ++i) hist[r.variant][i] += r.failures[i];
  for (const auto& [v, h] : hist) {
    int failed = 0;
    for (std::size_t i = 1; i < kFailureClassCount; ++i) failed += h[i];
    out << pad(v, 10);
    for (std::size_t i = 1; i < kFailureClassCount; ++i) {
      out << pad(failed ? pct(static_cast<double>(h[i]) / failed) : std::string("     -"), 19);
    }
    out << failed << "\n";
  }
  return out.str();
}

}  // namespace icil::harness
