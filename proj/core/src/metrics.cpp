#include "voxseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace voxseg {

ConfusionCounts confusion_counts(const LabelVolume& pred,
                                 const LabelVolume& truth, int num_classes) {
  if (pred.dims != truth.dims) {
    throw Error("confusion_counts: prediction and truth dims differ");
  }
  if (num_classes < 1) {
    throw Error("confusion_counts: num_classes must be >= 1");
  }
  ConfusionCounts counts;
  counts.num_classes = num_classes;
  counts.tp.assign(static_cast<size_t>(num_classes), 0);
  counts.fp.assign(static_cast<size_t>(num_classes), 0);
  counts.fn.assign(static_cast<size_t>(num_classes), 0);
  counts.tn.assign(static_cast<size_t>(num_classes), 0);
  const int64_t n = truth.voxels();
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t p = pred.values[static_cast<size_t>(i)];
    const uint8_t t = truth.values[static_cast<size_t>(i)];
    if (p >= num_classes || t >= num_classes) {
      throw Error("confusion_counts: label " +
                  std::to_string(std::max(p, t)) + " >= num_classes " +
                  std::to_string(num_classes));
    }
    if (p == t) {
      counts.tp[p]++;
    } else {
      counts.fp[p]++;
      counts.fn[t]++;
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    counts.tn[static_cast<size_t>(c)] =
        n - counts.tp[static_cast<size_t>(c)] - counts.fp[static_cast<size_t>(c)] -
        counts.fn[static_cast<size_t>(c)];
  }
  return counts;
}

SubjectMetrics per_class_metrics(const ConfusionCounts& counts,
                                 std::string subject_id) {
  SubjectMetrics metrics;
  metrics.subject = std::move(subject_id);
  metrics.classes.resize(static_cast<size_t>(counts.num_classes));
  for (int c = 0; c < counts.num_classes; ++c) {
    const double tp = static_cast<double>(counts.tp[static_cast<size_t>(c)]);
    const double fp = static_cast<double>(counts.fp[static_cast<size_t>(c)]);
    const double fn = static_cast<double>(counts.fn[static_cast<size_t>(c)]);
    auto& m = metrics.classes[static_cast<size_t>(c)];
    m.present_in_truth = counts.tp[static_cast<size_t>(c)] +
                             counts.fn[static_cast<size_t>(c)] >
                         0;
    if (2.0 * tp + fp + fn > 0.0) {
      m.dsc = {2.0 * tp / (2.0 * tp + fp + fn), true};
    }
    if (tp + fn > 0.0) {
      m.recall = {tp / (tp + fn), true};
    }
    if (tp + fp > 0.0) {
      m.precision = {tp / (tp + fp), true};
    }
  }
  return metrics;
}

StatsSummary summarize(std::span<const double> defined_values,
                       int64_t n_undefined) {
  StatsSummary s;
  s.n = std::ssize(defined_values);
  s.n_undefined = n_undefined;
  if (s.n == 0) return s;

  std::vector<double> sorted(defined_values.begin(), defined_values.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean = sum / static_cast<double>(s.n);

  auto quantile = [&sorted](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return (1.0 - frac) * sorted[lo] + frac * sorted[hi];
  };
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);

  double sd = 0.0;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
    sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  const double half = 1.96 * sd / std::sqrt(static_cast<double>(s.n));
  s.ci_lo = s.mean - half;
  s.ci_hi = s.mean + half;

  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  for (double v : sorted) {
    if (v < lo_fence || v > hi_fence) s.outliers.push_back(v);
  }
  return s;
}

namespace {

MetricValue metric_by_index(const ClassMetrics& m, int metric_index) {
  switch (metric_index) {
    case 0: return m.dsc;
    case 1: return m.precision;
    default: return m.recall;
  }
}

}  // namespace

AggregateStats aggregate_stats(std::span<const SubjectMetrics> subjects,
                               int num_classes) {
  if (subjects.empty()) {
    throw Error("aggregate_stats: no subjects");
  }
  AggregateStats stats;
  stats.num_classes = num_classes;
  stats.by_class.resize(static_cast<size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    for (int metric = 0; metric < 3; ++metric) {
      std::vector<double> values;
      int64_t undefined = 0;
      for (const auto& subject : subjects) {
        if (c >= std::ssize(subject.classes)) {
          throw Error("aggregate_stats: subject '" + subject.subject +
                      "' lacks class " + std::to_string(c));
        }
        const MetricValue v =
            metric_by_index(subject.classes[static_cast<size_t>(c)], metric);
        if (v.defined) {
          values.push_back(v.value);
        } else {
          ++undefined;
        }
      }
      stats.by_class[static_cast<size_t>(c)][static_cast<size_t>(metric)] =
          summarize(values, undefined);
    }
  }
  return stats;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open file for writing: " + path.string());
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) {
    throw Error("failed writing file: " + path.string());
  }
}

}  // namespace

void emit_report(const AggregateStats& stats,
                 std::span<const SubjectMetrics> subjects,
                 const std::filesystem::path& out_dir) {
  // Subjects are reported in ascending id order regardless of input order.
  std::vector<const SubjectMetrics*> ordered;
  ordered.reserve(subjects.size());
  for (const auto& s : subjects) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const SubjectMetrics* a, const SubjectMetrics* b) {
              return a->subject < b->subject;
            });

  std::string rows = "class,metric,subject,value,present_in_truth\n";
  for (int c = 0; c < stats.num_classes; ++c) {
    for (int metric = 0; metric < 3; ++metric) {
      for (const SubjectMetrics* subject : ordered) {
        const auto& cm = subject->classes[static_cast<size_t>(c)];
        const MetricValue v = metric_by_index(cm, metric);
        rows += std::to_string(c);
        rows += ',';
        rows += kMetricNames[static_cast<size_t>(metric)];
        rows += ',';
        rows += subject->subject;
        rows += ',';
        if (v.defined) rows += fixed6(v.value);
        rows += ',';
        rows += cm.present_in_truth ? '1' : '0';
        rows += '\n';
      }
    }
  }
  write_text(out_dir / "metrics_subjects.csv", rows);

  std::string summary =
      "class,metric,n,mean,median,q1,q3,ci_lo,ci_hi,n_outliers,n_undefined\n";
  for (int c = 0; c < stats.num_classes; ++c) {
    for (int metric = 0; metric < 3; ++metric) {
      const StatsSummary& s =
          stats.by_class[static_cast<size_t>(c)][static_cast<size_t>(metric)];
      summary += std::to_string(c);
      summary += ',';
      summary += kMetricNames[static_cast<size_t>(metric)];
      summary += ',';
      summary += std::to_string(s.n);
      summary += ',';
      if (s.n > 0) {
        summary += fixed6(s.mean);
        summary += ',';
        summary += fixed6(s.median);
        summary += ',';
        summary += fixed6(s.q1);
        summary += ',';
        summary += fixed6(s.q3);
        summary += ',';
        summary += fixed6(s.ci_lo);
        summary += ',';
        summary += fixed6(s.ci_hi);
      } else {
        summary += ",,,,,";
      }
      summary += ',';
      summary += std::to_string(s.outliers.size());
      summary += ',';
      summary += std::to_string(s.n_undefined);
      summary += '\n';
    }
  }
  write_text(out_dir / "metrics_summary.csv", summary);
}

double mean_foreground_dsc(std::span<const SubjectMetrics> subjects) {
  double total = 0.0;
  int64_t contributing = 0;
  for (const auto& subject : subjects) {
    double sum = 0.0;
    int64_t count = 0;
    for (size_t c = 1; c < subject.classes.size(); ++c) {
      const auto& m = subject.classes[c];
      if (m.present_in_truth && m.dsc.defined) {
        sum += m.dsc.value;
        ++count;
      }
    }
    if (count > 0) {
      total += sum / static_cast<double>(count);
      ++contributing;
    }
  }
  return contributing > 0 ? total / static_cast<double>(contributing) : 0.0;
}

double mean_foreground_dsc_by_class(std::span<const SubjectMetrics> subjects) {
  if (subjects.empty()) return 0.0;
  const size_t num_classes = subjects.front().classes.size();
  double total = 0.0;
  int64_t contributing = 0;
  for (size_t c = 1; c < num_classes; ++c) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& subject : subjects) {
      const auto& m = subject.classes[c];
      if (m.present_in_truth && m.dsc.defined) {
        sum += m.dsc.value;
        ++count;
      }
    }
    if (count > 0) {
      total += sum / static_cast<double>(count);
      ++contributing;
    }
  }
  return contributing > 0 ? total / static_cast<double>(contributing) : 0.0;
}

}  // namespace voxseg
