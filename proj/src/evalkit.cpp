#include "stemgan/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "stemgan/error.hpp"
#include "stemgan/trainer.hpp"

namespace stemgan {

namespace fs = std::filesystem;

void RocCurve::validate() const {
  if (points.size() < 2) throw ArgumentError("roc curve needs at least 2 points");
  if (!thresholds.empty() && thresholds.size() != points.size()) {
    throw ArgumentError("roc curve: threshold count differs from point count");
  }
  if (points.front().fpr != 0.0 || points.front().tpr != 0.0) throw ArgumentError("roc curve must start at (0,0)");
  if (points.back().fpr != 1.0 || points.back().tpr != 1.0) throw ArgumentError("roc curve must end at (1,1)");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const RocPoint& p = points[i];
    if (!(p.fpr >= 0.0 && p.fpr <= 1.0 && p.tpr >= 0.0 && p.tpr <= 1.0)) {
      throw ArgumentError("roc curve point outside the unit square");
    }
    if (i > 0 && (p.fpr < points[i - 1].fpr || p.tpr < points[i - 1].tpr)) {
      throw ArgumentError("roc curve coordinates must be nondecreasing");
    }
  }
}

RocCurve roc_curve(const std::vector<double>& evidence, const LabelTrack& labels) {
  if (evidence.size() != labels.size()) {
    throw ArgumentError("roc_curve: " + std::to_string(evidence.size()) + " scores but " +
                        std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    if (!std::isfinite(evidence[i])) throw ArgumentError("roc_curve: non-finite evidence");
    pos += labels.labels[i] != 0;
  }
  const std::size_t neg = evidence.size() - pos;
  if (pos == 0) throw ValidationError("roc_curve: no positive frames");
  if (neg == 0) throw ValidationError("roc_curve: no negative frames");

  std::vector<std::size_t> order(evidence.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return evidence[a] > evidence[b]; });
  RocCurve c;
  c.points.push_back({0.0, 0.0});
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double tau = evidence[order[k]];
    // a threshold admits every frame tied at its value
    for (; k < order.size() && evidence[order[k]] == tau; ++k) (labels.labels[order[k]] ? tp : fp)++;
    c.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    c.thresholds.push_back(tau);
  }
  return c;
}

double auroc(const RocCurve& curve) {
  curve.validate();
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return std::clamp(area, 0.0, 1.0);
}

RocPoint eer_point(const RocCurve& curve) {
  curve.validate();
  // f = fpr + tpr - 1 runs from -1 at (0,0) to +1 at (1,1) without
  // decreasing, so the first segment ending at f >= 0 brackets the root
  auto f = [](const RocPoint& p) { return p.fpr + p.tpr - 1.0; };
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    if (f(b) < 0.0) continue;
    const double t = -f(a) / (f(b) - f(a));
    return {a.fpr + t * (b.fpr - a.fpr), a.tpr + t * (b.tpr - a.tpr)};
  }
  return curve.points.back();
}

double eer(const RocCurve& curve) { return eer_point(curve).fpr; }

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

// File-name-safe version of a clip id.
std::string safe_name(const std::string& id) {
  std::string out = id;
  for (char& ch : out) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
  }
  return out;
}

const cv::Scalar kInk(40, 40, 40), kGrid(225, 225, 225), kCurve(180, 90, 20), kShade(220, 170, 215);

void write_png(const cv::Mat& img, const fs::path& file) {
  if (!cv::imwrite(file.string(), img)) throw IoError("cannot write '" + file.string() + "'");
}

void plot_roc(const RocCurve& curve, double area, const std::string& title, const fs::path& file) {
  constexpr int side = 400, margin = 50;
  cv::Mat img(side + 2 * margin, side + 2 * margin, CV_8UC3, cv::Scalar(255, 255, 255));
  auto px = [&](double fpr, double tpr) {
    return cv::Point(margin + static_cast<int>(std::lround(fpr * side)),
                     margin + side - static_cast<int>(std::lround(tpr * side)));
  };
  for (int k = 1; k < 10; ++k) {
    cv::line(img, px(k / 10.0, 0), px(k / 10.0, 1), kGrid);
    cv::line(img, px(0, k / 10.0), px(1, k / 10.0), kGrid);
  }
  cv::line(img, px(0, 0), px(1, 1), kGrid, 1, cv::LINE_AA);
  cv::rectangle(img, px(0, 1), px(1, 0), kInk);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    cv::line(img, px(curve.points[i - 1].fpr, curve.points[i - 1].tpr), px(curve.points[i].fpr, curve.points[i].tpr),
             kCurve, 2, cv::LINE_AA);
  }
  const RocPoint e = eer_point(curve);
  cv::circle(img, px(e.fpr, e.tpr), 4, cv::Scalar(0, 0, 200), cv::FILLED, cv::LINE_AA);
  char caption[160];
  std::snprintf(caption, sizeof caption, "%s  AUROC %.4f  EER %.4f", title.c_str(), area, e.fpr);
  cv::putText(img, caption, {margin, margin - 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1, cv::LINE_AA);
  cv::putText(img, "FPR", {margin + side / 2 - 12, margin + side + 32}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1,
              cv::LINE_AA);
  cv::putText(img, "TPR", {6, margin + side / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1, cv::LINE_AA);
  write_png(img, file);
}

void write_roc_csv(const RocCurve& curve, const fs::path& file) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    os << format_real(curve.thresholds[i]) << ',' << format_real(curve.points[i].fpr) << ','
       << format_real(curve.points[i].tpr) << '\n';
  }
}

// Anomaly score S over time; ground-truth abnormal frames shaded.
void plot_timeline(const ScoreSeries& s, const fs::path& file) {
  constexpr int width = 800, height = 260, left = 50, right = 20, top = 30, bottom = 40;
  const int pw = width - left - right, ph = height - top - bottom;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const std::size_t n = s.size();
  const double lo = std::min(0.0, *std::min_element(s.s.begin(), s.s.end()));
  const double hi = std::max(1.0, *std::max_element(s.s.begin(), s.s.end()));
  auto x_of = [&](double i) { return left + static_cast<int>(std::lround(i / std::max<double>(1, n - 1) * pw)); };
  auto y_of = [&](double v) { return top + ph - static_cast<int>(std::lround((v - lo) / (hi - lo) * ph)); };
  if (s.labels) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!s.labels->labels[i]) continue;
      const double half = 0.5;
      cv::rectangle(img, cv::Point(x_of(i - half), top), cv::Point(x_of(i + half), top + ph), kShade, cv::FILLED);
    }
  }
  cv::rectangle(img, cv::Point(left, top), cv::Point(left + pw, top + ph), kInk);
  for (std::size_t i = 1; i < n; ++i) {
    cv::line(img, {x_of(i - 1.0), y_of(s.s[i - 1])}, {x_of(static_cast<double>(i)), y_of(s.s[i])}, kCurve, 2,
             cv::LINE_AA);
  }
  char text[160];
  std::snprintf(text, sizeof text, "%s: anomaly score S (shaded = labelled abnormal)", s.clip_id.c_str());
  cv::putText(img, text, {left, top - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kInk, 1, cv::LINE_AA);
  std::snprintf(text, sizeof text, "%.2f", hi);
  cv::putText(img, text, {6, top + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  std::snprintf(text, sizeof text, "%.2f", lo);
  cv::putText(img, text, {6, top + ph}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  if (n > 0) {
    std::snprintf(text, sizeof text, "frame %zu", s.frame_index.front());
    cv::putText(img, text, {left, height - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
    std::snprintf(text, sizeof text, "frame %zu", s.frame_index.back());
    cv::putText(img, text, {left + pw - 70, height - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  }
  write_png(img, file);
}

}  // namespace

void write_report_csv(const MetricsReport& report, const fs::path& file) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << "scope,clip_id,auroc,eer,score_gap,n_frames,n_abnormal\n";
  auto row = [&](const MetricsRow& r) {
    os << r.scope << ',' << r.clip_id << ',' << optional_cell(r.auroc) << ',' << optional_cell(r.eer) << ','
       << optional_cell(r.score_gap) << ',' << r.n_frames << ',' << r.n_abnormal << '\n';
  };
  for (const MetricsRow& r : report.clips) row(r);
  row(report.aggregate);
  if (!os) throw IoError("failed writing '" + file.string() + "'");
}

MetricsReport build_report(const std::vector<ScoreSeries>& series, const fs::path& output_dir,
                           const ReportOptions& options) {
  if (series.empty()) throw ArgumentError("build_report: no score series");
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec || !fs::is_directory(output_dir)) {
    throw IoError("cannot create report directory '" + output_dir.string() + "'" +
                  (ec ? ": " + ec.message() : std::string()));
  }
  MetricsReport report;
  report.dataset = options.dataset;
  report.config_hash = options.config_hash;
  std::vector<double> all_evidence, all_s;
  LabelTrack all_labels{"aggregate", {}};
  for (const ScoreSeries& s : series) {
    s.validate();
    if (!s.labels) throw ValidationError("build_report: series '" + s.clip_id + "' has no labels");
    MetricsRow row{"clip", s.clip_id, {}, {}, {}, s.size(), s.labels->abnormal_count()};
    if (row.n_abnormal > 0 && row.n_abnormal < row.n_frames) {
      const RocCurve curve = roc_curve(s.evidence, *s.labels);
      row.auroc = auroc(curve);
      row.eer = eer(curve);
      row.score_gap = score_gap(s.s, *s.labels);
      report.macro_auroc += *row.auroc;
      report.macro_eer += *row.eer;
      report.macro_score_gap += *row.score_gap;
      ++report.macro_clips;
      if (options.plots) {
        plot_roc(curve, *row.auroc, s.clip_id, output_dir / ("roc_" + safe_name(s.clip_id) + ".png"));
        write_roc_csv(curve, output_dir / ("roc_" + safe_name(s.clip_id) + ".csv"));
      }
    } else {
      spdlog::warn("clip '{}' has a single class; per-clip AUROC/EER left empty", s.clip_id);
    }
    if (options.plots && s.size() > 0) plot_timeline(s, output_dir / ("timeline_" + safe_name(s.clip_id) + ".png"));
    all_evidence.insert(all_evidence.end(), s.evidence.begin(), s.evidence.end());
    all_s.insert(all_s.end(), s.s.begin(), s.s.end());
    all_labels.labels.insert(all_labels.labels.end(), s.labels->labels.begin(), s.labels->labels.end());
    report.clips.push_back(std::move(row));
  }
  if (report.macro_clips) {
    const double k = static_cast<double>(report.macro_clips);
    report.macro_auroc /= k;
    report.macro_eer /= k;
    report.macro_score_gap /= k;
  }
  // Per-clip normalisation already happened when the series were built, so
  // the concatenation is the micro average.
  const RocCurve curve = roc_curve(all_evidence, all_labels);
  report.aggregate = {"aggregate", "all", auroc(curve), eer(curve), score_gap(all_s, all_labels), all_labels.size(),
                      all_labels.abnormal_count()};
  if (options.plots) {
    plot_roc(curve, *report.aggregate.auroc, "aggregate", output_dir / "roc_aggregate.png");
    write_roc_csv(curve, output_dir / "roc_aggregate.csv");
  }
  write_report_csv(report, output_dir / "metrics.csv");

  std::ofstream os(output_dir / "summary.txt");
  if (!os) throw IoError("cannot write '" + (output_dir / "summary.txt").string() + "'");
  os << "dataset=" << report.dataset << '\n'
     << "config_hash=" << report.config_hash << '\n'
     << "clips=" << report.clips.size() << '\n'
     << "frames=" << report.aggregate.n_frames << '\n'
     << "abnormal_frames=" << report.aggregate.n_abnormal << '\n'
     << "micro_auroc=" << format_real(*report.aggregate.auroc) << '\n'
     << "micro_eer=" << format_real(*report.aggregate.eer) << '\n'
     << "micro_score_gap=" << format_real(*report.aggregate.score_gap) << '\n'
     << "macro_clips=" << report.macro_clips << '\n';
  if (report.macro_clips) {
    os << "macro_auroc=" << format_real(report.macro_auroc) << '\n'
       << "macro_eer=" << format_real(report.macro_eer) << '\n'
       << "macro_score_gap=" << format_real(report.macro_score_gap) << '\n';
  }
  return report;
}

}  // namespace stemgan
