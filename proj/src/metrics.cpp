#include "diop/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "diop/errors.hpp"

namespace diop {

Annotation normalize(const Annotation& a) {
  std::vector<Segment> segs = a.segments;
  for (const Segment& s : segs) {
    if (!std::isfinite(s.onset) || !std::isfinite(s.duration)) {
      throw ValueError("annotation: non-finite segment bound");
    }
    if (s.duration <= 0.0) throw ValueError("annotation: segment duration must be > 0");
  }
  std::stable_sort(segs.begin(), segs.end(), [](const Segment& x, const Segment& y) {
    if (x.label != y.label) return x.label < y.label;
    return x.onset < y.onset;
  });
  std::vector<Segment> merged;
  for (const Segment& s : segs) {
    if (!merged.empty() && merged.back().label == s.label && s.onset <= merged.back().end()) {
      Segment& m = merged.back();
      m.duration = std::max(m.end(), s.end()) - m.onset;
    } else {
      merged.push_back(s);
    }
  }
  std::stable_sort(merged.begin(), merged.end(), [](const Segment& x, const Segment& y) {
    if (x.onset != y.onset) return x.onset < y.onset;
    return x.label < y.label;
  });
  return Annotation{a.file_id, std::move(merged)};
}

std::vector<std::string> labels(const Annotation& a) {
  std::set<std::string> s;
  for (const Segment& seg : a.segments) s.insert(seg.label);
  return {s.begin(), s.end()};
}

double speech_seconds(const Annotation& a) {
  double total = 0.0;
  for (const Segment& s : normalize(a).segments) total += s.duration;
  return total;
}

namespace {

struct Timeline {
  std::vector<double> points;
  // active[i][l]: label l active on [points[i], points[i+1])
  std::vector<std::vector<bool>> active;
};

Timeline build_timeline(const Annotation& a, const std::vector<std::string>& labs,
                        const std::vector<double>& points) {
  Timeline t{points, std::vector<std::vector<bool>>(points.empty() ? 0 : points.size() - 1,
                                                    std::vector<bool>(labs.size(), false))};
  for (const Segment& s : a.segments) {
    const auto li = static_cast<std::size_t>(
        std::lower_bound(labs.begin(), labs.end(), s.label) - labs.begin());
    const auto lo = std::lower_bound(points.begin(), points.end(), s.onset) - points.begin();
    const auto hi = std::lower_bound(points.begin(), points.end(), s.end()) - points.begin();
    for (auto i = lo; i < hi; ++i) t.active[static_cast<std::size_t>(i)][li] = true;
  }
  return t;
}

std::vector<double> breakpoints(const Annotation& r, const Annotation& h) {
  std::vector<double> p;
  for (const Annotation* a : {&r, &h}) {
    for (const Segment& s : a->segments) {
      p.push_back(s.onset);
      p.push_back(s.end());
    }
  }
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  return p;
}

}  // namespace

std::vector<std::vector<double>> overlap_matrix(const Annotation& reference,
                                                const Annotation& hypothesis) {
  const Annotation r = normalize(reference);
  const Annotation h = normalize(hypothesis);
  const auto rl = labels(r);
  const auto hl = labels(h);
  std::vector<std::vector<double>> m(rl.size(), std::vector<double>(hl.size(), 0.0));
  const auto points = breakpoints(r, h);
  const Timeline tr = build_timeline(r, rl, points);
  const Timeline th = build_timeline(h, hl, points);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double dt = points[i + 1] - points[i];
    for (std::size_t a = 0; a < rl.size(); ++a) {
      if (!tr.active[i][a]) continue;
      for (std::size_t b = 0; b < hl.size(); ++b) {
        if (th.active[i][b]) m[a][b] += dt;
      }
    }
  }
  return m;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& score) {
  const std::size_t rows = score.size();
  const std::size_t cols = rows == 0 ? 0 : score[0].size();
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  double top = 0.0;
  for (const auto& row : score) {
    for (const double v : row) top = std::max(top, v);
  }
  // min-cost square assignment with cost = top - score (padding scores 0)
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cost[i + 1][j + 1] = top - (i < rows && j < cols ? score[i][j] : 0.0);
    }
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) result[i] = static_cast<int>(j - 1);
  }
  return result;
}

namespace {

// Best assignment by enumerating every permutation of a padded square
// matrix. Strictly greater scores win, so ties keep the first found.
std::vector<int> exhaustive_assignment(const std::vector<std::vector<double>>& score) {
  const std::size_t rows = score.size();
  const std::size_t cols = rows == 0 ? 0 : score[0].size();
  const std::size_t n = std::max(rows, cols);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1.0;
  std::vector<std::size_t> best_perm = perm;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (perm[i] < cols) total += score[i][perm[i]];
    }
    if (total > best) {
      best = total;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<int> result(rows, -1);
  for (std::size_t i = 0; i < rows; ++i) {
    if (best_perm[i] < cols) result[i] = static_cast<int>(best_perm[i]);
  }
  return result;
}

}  // namespace

LabelMap optimal_mapping(const Annotation& reference, const Annotation& hypothesis) {
  const auto rl = labels(reference);
  const auto hl = labels(hypothesis);
  const auto m = overlap_matrix(reference, hypothesis);
  const std::vector<int> assign = std::max(rl.size(), hl.size()) <= 6
                                      ? exhaustive_assignment(m)
                                      : max_weight_assignment(m);
  LabelMap map;
  for (std::size_t r = 0; r < rl.size(); ++r) {
    const int h = assign[r];
    if (h >= 0 && m[r][static_cast<std::size_t>(h)] > 0.0) map[hl[static_cast<std::size_t>(h)]] = rl[r];
  }
  return map;
}

DERBreakdown der_with_mapping(const Annotation& reference, const Annotation& hypothesis,
                              const LabelMap& mapping) {
  if (reference.file_id != hypothesis.file_id) {
    throw ValueError("der: file ids differ ('" + reference.file_id + "' vs '" +
                     hypothesis.file_id + "')");
  }
  const Annotation r = normalize(reference);
  const Annotation h = normalize(hypothesis);
  const auto rl = labels(r);
  const auto hl = labels(h);
  const auto points = breakpoints(r, h);
  const Timeline tr = build_timeline(r, rl, points);
  const Timeline th = build_timeline(h, hl, points);
  std::vector<int> mapped(hl.size(), -1);
  for (std::size_t b = 0; b < hl.size(); ++b) {
    const auto it = mapping.find(hl[b]);
    if (it == mapping.end()) continue;
    const auto pos = std::lower_bound(rl.begin(), rl.end(), it->second);
    if (pos != rl.end() && *pos == it->second) mapped[b] = static_cast<int>(pos - rl.begin());
  }
  DERBreakdown d;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double dt = points[i + 1] - points[i];
    std::size_t n_ref = 0, n_hyp = 0, n_correct = 0;
    for (std::size_t a = 0; a < rl.size(); ++a) n_ref += tr.active[i][a] ? 1 : 0;
    for (std::size_t b = 0; b < hl.size(); ++b) {
      if (!th.active[i][b]) continue;
      ++n_hyp;
      if (mapped[b] >= 0 && tr.active[i][static_cast<std::size_t>(mapped[b])]) ++n_correct;
    }
    d.total_reference_speech += static_cast<double>(n_ref) * dt;
    if (n_ref > n_hyp) d.missed += static_cast<double>(n_ref - n_hyp) * dt;
    if (n_hyp > n_ref) d.false_alarm += static_cast<double>(n_hyp - n_ref) * dt;
    d.confusion += static_cast<double>(std::min(n_ref, n_hyp) - n_correct) * dt;
  }
  if (d.total_reference_speech <= 0.0) throw ValueError("der: reference contains no speech");
  d.der = (d.missed + d.false_alarm + d.confusion) / d.total_reference_speech;
  return d;
}

DERBreakdown der(const Annotation& reference, const Annotation& hypothesis) {
  return der_with_mapping(reference, hypothesis, optimal_mapping(reference, hypothesis));
}

LatencyStats latency_stats(std::vector<double> samples) {
  if (samples.empty()) throw ValueError("latency_stats: need at least one sample");
  LatencyStats s;
  const auto n = static_cast<double>(samples.size());
  double sum = 0.0;
  for (const double x : samples) sum += x;
  s.mean = sum / n;
  if (samples.size() > 1) {
    double sq = 0.0;
    for (const double x : samples) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  s.samples = std::move(samples);
  return s;
}

double measured_clock_resolution(std::size_t reads) {
  using clock = std::chrono::steady_clock;
  double best = std::numeric_limits<double>::infinity();
  auto prev = clock::now();
  for (std::size_t i = 0; i < reads; ++i) {
    const auto now = clock::now();
    const double step = std::chrono::duration<double>(now - prev).count();
    if (step > 0.0) best = std::min(best, step);
    prev = now;
  }
  return best;
}

BenchReport bench_report(std::vector<BenchRow> rows, const std::string& baseline) {
  const auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const BenchRow& r) { return r.variant == baseline; });
  if (it == rows.end()) throw ValueError("bench_report: baseline '" + baseline + "' not in rows");
  const double base = it->latency.mean;
  BenchReport report;
  report.baseline = baseline;
  for (const BenchRow& r : rows) {
    report.latency_percent.push_back(r.variant == baseline ? 100.0 : 100.0 * r.latency.mean / base);
  }
  report.rows = std::move(rows);
  return report;
}

std::string BenchReport::to_csv() const {
  std::string out = "Model,DER,Pipeline latency mean in s,Latency in %,Model size in MB\n";
  char buf[256];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const BenchRow& r = rows[i];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.1f,%.6f\n", 100.0 * r.der.der, r.latency.mean,
                  latency_percent[i], static_cast<double>(r.size_bytes) / 1e6);
    out += r.variant;
    out += buf;
  }
  return out;
}

std::string latency_samples_csv(const std::vector<BenchRow>& rows) {
  std::string out = "variant,chunk,latency_s\n";
  char buf[64];
  for (const BenchRow& r : rows) {
    for (std::size_t i = 0; i < r.latency.samples.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%zu,%.17g\n", i, r.latency.samples[i]);
      out += r.variant;
      out += buf;
    }
  }
  return out;
}

}  // namespace diop
