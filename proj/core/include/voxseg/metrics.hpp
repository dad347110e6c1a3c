#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct ConfusionCounts {
  int num_classes = 0;
  std::vector<int64_t> tp, fp, fn, tn;
};

// Exact integer counts in one pass. Labels must be < num_classes.
ConfusionCounts confusion_counts(const LabelVolume& pred,
                                 const LabelVolume& truth, int num_classes);

// A metric with denominator 0 is undefined: excluded from aggregation and
// reported as such, never imputed.
struct MetricValue {
  double value = 0.0;
  bool defined = false;
};

struct ClassMetrics {
  MetricValue dsc, recall, precision;
  bool present_in_truth = false;
};

struct SubjectMetrics {
  std::string subject;
  std::vector<ClassMetrics> classes;
};

// DSC = 2TP/(2TP+FP+FN), recall = TP/(TP+FN), precision = TP/(TP+FP).
SubjectMetrics per_class_metrics(const ConfusionCounts& counts,
                                 std::string subject_id);

struct StatsSummary {
  int64_t n = 0;  // defined values aggregated
  double mean = 0.0, median = 0.0, q1 = 0.0, q3 = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  std::vector<double> outliers;
  int64_t n_undefined = 0;
};

// Mean, linear-interpolation quartiles, normal-approximation 95% CI of the
// mean, and 1.5*IQR outliers over the defined values.
StatsSummary summarize(std::span<const double> defined_values,
                       int64_t n_undefined);

// Index order: metric_index is 0=dsc, 1=precision, 2=recall (alphabetical,
// the report row order).
inline constexpr std::array<const char*, 3> kMetricNames = {"dsc", "precision",
                                                            "recall"};

struct AggregateStats {
  int num_classes = 0;
  std::vector<std::array<StatsSummary, 3>> by_class;
};

AggregateStats aggregate_stats(std::span<const SubjectMetrics> subjects,
                               int num_classes);

// Writes metrics_subjects.csv and metrics_summary.csv under out_dir.
// Rows are ordered by class index, then metric name, then subject id;
// values use fixed 6-decimal formatting, undefined cells stay empty.
void emit_report(const AggregateStats& stats,
                 std::span<const SubjectMetrics> subjects,
                 const std::filesystem::path& out_dir);

// Mean over subjects of each subject's mean DSC across foreground classes
// present in its truth. Subjects with no foreground truth are skipped.
double mean_foreground_dsc(std::span<const SubjectMetrics> subjects);

// The same mean computed organ-first: per foreground class, average the
// defined DSC over subjects, then average over classes with any value.
double mean_foreground_dsc_by_class(std::span<const SubjectMetrics> subjects);

}  // namespace voxseg
