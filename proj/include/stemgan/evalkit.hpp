#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stemgan/data_io.hpp"
#include "stemgan/scoring.hpp"

namespace stemgan {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// (0,0) first, (1,1) last, both coordinates nondecreasing. thresholds[i] is
// the evidence cut-off that yields points[i] (infinity for the first point).
struct RocCurve {
  std::vector<RocPoint> points;
  std::vector<double> thresholds;

  // Throws ArgumentError when the invariants above do not hold.
  void validate() const;
};

// Frames sorted by evidence, descending; each distinct value is a threshold.
RocCurve roc_curve(const std::vector<double>& evidence, const LabelTrack& labels);
// Trapezoidal area; ties get half credit like the pairwise definition.
double auroc(const RocCurve& curve);
// Linear interpolation to TPR + FPR = 1; returns the FPR there.
double eer(const RocCurve& curve);
// The interpolated equal-error point itself.
RocPoint eer_point(const RocCurve& curve);

struct MetricsRow {
  std::string scope;  // "clip" or "aggregate"
  std::string clip_id;
  std::optional<double> auroc, eer, score_gap;  // empty when the clip has a single class
  std::size_t n_frames = 0;
  std::size_t n_abnormal = 0;
};

struct MetricsReport {
  std::string dataset;
  std::string config_hash;
  std::vector<MetricsRow> clips;
  MetricsRow aggregate;  // micro: evidence of all clips concatenated
  // macro: mean over clips with both classes
  double macro_auroc = 0.0, macro_eer = 0.0, macro_score_gap = 0.0;
  std::size_t macro_clips = 0;
};

struct ReportOptions {
  std::string dataset = "unknown";
  std::string config_hash;
  bool plots = true;
};

// Metrics for every labelled series, plus artifacts in output_dir:
// metrics.csv, summary.txt, roc_<scope>.png/.csv and timeline_<clip>.png.
MetricsReport build_report(const std::vector<ScoreSeries>& series, const std::filesystem::path& output_dir,
                           const ReportOptions& options = {});

void write_report_csv(const MetricsReport& report, const std::filesystem::path& file);

}  // namespace stemgan
