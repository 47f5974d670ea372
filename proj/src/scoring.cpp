#include "stemgan/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "stemgan/error.hpp"
#include "stemgan/trainer.hpp"

namespace stemgan {

namespace fs = std::filesystem;

namespace {

void require_finite(const std::vector<double>& v, const char* who) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ArgumentError(std::string(who) + ": non-finite value");
  }
}

struct ClassCounts {
  std::size_t positive = 0, negative = 0;
};

ClassCounts require_both_classes(const LabelTrack& labels, std::size_t expected, const char* who) {
  if (labels.size() != expected) {
    throw ArgumentError(std::string(who) + ": " + std::to_string(expected) + " scores but " +
                        std::to_string(labels.size()) + " labels");
  }
  ClassCounts c;
  for (std::uint8_t l : labels.labels) (l ? c.positive : c.negative)++;
  if (c.positive == 0) throw ValidationError(std::string(who) + ": no positive frames");
  if (c.negative == 0) throw ValidationError(std::string(who) + ": no negative frames");
  return c;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> out(1);
  for (char ch : line) {
    if (ch == ',') {
      out.emplace_back();
    } else if (ch != '\r') {
      out.back() += ch;
    }
  }
  return out;
}

double parse_cell(const std::string& cell, const fs::path& file, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw ParseError(file.string() + ":" + std::to_string(line) + ": bad number '" + cell + "'");
  }
  return v;
}

}  // namespace

double psnr_unit(const Tensor& truth, const Tensor& pred) {
  if (truth.shape() != pred.shape()) {
    throw ArgumentError("psnr: shape mismatch " + shape_string(truth.shape()) + " vs " + shape_string(pred.shape()));
  }
  if (pred.empty()) throw ArgumentError("psnr: empty frames");
  if (!truth.all_finite() || !pred.all_finite()) throw ArgumentError("psnr: non-finite values");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    se += d * d;
  }
  const double mse = std::max(se / static_cast<double>(pred.size()), kPsnrMseFloor);
  const double peak = std::max(pred.max(), kPsnrPeakFloor);
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Frame& truth, const Frame& pred) {
  auto unit = [](const Tensor& t) {
    Tensor u = t;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (u[i] + 1.0) * 0.5;
    return u;
  };
  return psnr_unit(unit(truth.tensor()), unit(pred.tensor()));
}

std::vector<double> normalize_scores(const std::vector<double>& series) {
  if (series.size() < 2) throw ArgumentError("normalize_scores: need at least 2 values");
  require_finite(series, "normalize_scores");
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  const double min = *lo, range = *hi - *lo;
  if (range == 0.0) {
    spdlog::warn("constant score series ({} values of {}); treating every frame as normal", series.size(), min);
    return std::vector<double>(series.size(), 1.0);
  }
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - min) / range;
  return out;
}

double anomaly_score(double p, double d_norm, double lambda_d) { return p + lambda_d * d_norm; }

double anomaly_evidence(double s, double lambda_d) { return (1.0 + lambda_d) - s; }

std::vector<std::uint8_t> classify(const std::vector<double>& evidence, double threshold) {
  std::vector<std::uint8_t> out(evidence.size());
  for (std::size_t i = 0; i < evidence.size(); ++i) out[i] = evidence[i] >= threshold;
  return out;
}

std::vector<SweepPoint> threshold_sweep(const std::vector<double>& evidence, const LabelTrack& labels,
                                        std::size_t num_thresholds) {
  if (num_thresholds < 2) throw ArgumentError("threshold_sweep: need at least 2 thresholds");
  if (evidence.empty()) throw ArgumentError("threshold_sweep: empty evidence");
  require_finite(evidence, "threshold_sweep");
  if (*std::min_element(evidence.begin(), evidence.end()) < 0.0) {
    throw ArgumentError("threshold_sweep: evidence must be non-negative");
  }
  const ClassCounts counts = require_both_classes(labels, evidence.size(), "threshold_sweep");
  const double top = *std::max_element(evidence.begin(), evidence.end());
  std::vector<SweepPoint> out(num_thresholds);
  for (std::size_t k = 0; k < num_thresholds; ++k) {
    // the last threshold is exactly max(evidence), not a rounded multiple
    const double tau = k + 1 == num_thresholds ? top : top * static_cast<double>(k) / (num_thresholds - 1);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < evidence.size(); ++i) {
      if (evidence[i] >= tau) (labels.labels[i] ? tp : fp)++;
    }
    out[k] = {tau, static_cast<double>(tp) / counts.positive, static_cast<double>(fp) / counts.negative, tp + fp};
  }
  return out;
}

double score_gap(const std::vector<double>& s, const LabelTrack& labels) {
  require_finite(s, "score_gap");
  const ClassCounts counts = require_both_classes(labels, s.size(), "score_gap");
  double normal = 0.0, abnormal = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (labels.labels[i] ? abnormal : normal) += s[i];
  return normal / counts.negative - abnormal / counts.positive;
}

void ScoreSeries::validate() const {
  const std::size_t n = psnr.size();
  if (frame_index.size() != n || p.size() != n || d_norm.size() != n || s.size() != n || evidence.size() != n) {
    throw ValidationError("score series '" + clip_id + "': columns differ in length");
  }
  if (labels && labels->size() != n) throw ValidationError("score series '" + clip_id + "': label count mismatch");
}

ScoreSeries make_series(const std::string& clip_id, std::vector<std::size_t> frame_index, std::vector<double> psnr_db,
                        const std::vector<double>& critic, double lambda_d,
                        const std::optional<LabelTrack>& clip_labels) {
  if (psnr_db.size() != frame_index.size() || critic.size() != frame_index.size()) {
    throw ArgumentError("make_series: psnr, critic and frame index lengths differ");
  }
  if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d)) throw ArgumentError("lambda_d must be non-negative");
  ScoreSeries out;
  out.clip_id = clip_id;
  out.p = normalize_scores(psnr_db);
  out.d_norm = normalize_scores(critic);
  out.psnr = std::move(psnr_db);
  out.frame_index = std::move(frame_index);
  for (std::size_t i = 0; i < out.p.size(); ++i) {
    out.s.push_back(anomaly_score(out.p[i], out.d_norm[i], lambda_d));
    out.evidence.push_back(anomaly_evidence(out.s.back(), lambda_d));
  }
  if (clip_labels) {
    LabelTrack sliced{clip_id, {}};
    for (std::size_t f : out.frame_index) {
      if (f >= clip_labels->size()) throw ArgumentError("make_series: frame " + std::to_string(f) + " has no label");
      sliced.labels.push_back(clip_labels->labels[f]);
    }
    out.labels = std::move(sliced);
  }
  return out;
}

ScoreSeries score_clip(Generator& g, Discriminator& d, const std::vector<FramePtr>& frames, const std::string& clip_id,
                       const std::optional<LabelTrack>& clip_labels, double lambda_d, std::size_t batch_size) {
  const std::size_t t = g.config().input_frames;
  if (batch_size == 0) throw ArgumentError("score_clip: batch size must be positive");
  if (frames.size() < t + 2) {
    throw ArgumentError("clip '" + clip_id + "' has " + std::to_string(frames.size()) + " frames; scoring needs " +
                        std::to_string(t + 2));
  }
  if (clip_labels && clip_labels->size() != frames.size()) {
    throw ArgumentError("clip '" + clip_id + "': " + std::to_string(frames.size()) + " frames but " +
                        std::to_string(clip_labels->size()) + " labels");
  }
  g.set_mode(nn::Mode::Eval);
  d.set_mode(nn::Mode::Eval);
  const Shape fs = frames.front()->tensor().shape();
  const std::size_t chunk = shape_size(fs);
  std::vector<std::size_t> index;
  std::vector<double> psnr_db, critic;
  for (std::size_t start = t; start < frames.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, frames.size() - start);
    Tensor inputs({n, t, fs[0], fs[1], fs[2]});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t k = 0; k < t; ++k) {
        const Tensor& src = frames[start + b - t + k]->tensor();
        if (src.shape() != fs) throw ArgumentError("clip '" + clip_id + "': frames differ in size");
        std::memcpy(inputs.data() + (b * t + k) * chunk, src.data(), chunk * sizeof(double));
      }
    }
    const Tensor pred = g.forward(inputs);
    const Tensor grid = d.forward(pred);
    const std::size_t cells = grid.size() / n;
    for (std::size_t b = 0; b < n; ++b) {
      Tensor one(fs);
      std::memcpy(one.data(), pred.data() + b * chunk, chunk * sizeof(double));
      index.push_back(start + b);
      psnr_db.push_back(psnr(*frames[start + b], Frame(std::move(one))));
      double sum = 0.0;
      for (std::size_t c = 0; c < cells; ++c) sum += grid[b * cells + c];
      critic.push_back(sum / static_cast<double>(cells));
    }
  }
  return make_series(clip_id, std::move(index), std::move(psnr_db), critic, lambda_d, clip_labels);
}

void write_score_csv(const ScoreSeries& series, const fs::path& file) {
  series.validate();
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << "frame_index,psnr,p,d_norm,s,evidence,label\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    os << series.frame_index[i] << ',' << format_real(series.psnr[i]) << ',' << format_real(series.p[i]) << ','
       << format_real(series.d_norm[i]) << ',' << format_real(series.s[i]) << ',' << format_real(series.evidence[i])
       << ',';
    if (series.labels) os << int{series.labels->labels[i]};
    os << '\n';
  }
  if (!os) throw IoError("failed writing '" + file.string() + "'");
}

ScoreSeries read_score_csv(const fs::path& file, const std::string& clip_id) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read '" + file.string() + "'");
  std::string line;
  if (!std::getline(is, line) || split_cells(line) != std::vector<std::string>{"frame_index", "psnr", "p", "d_norm", "s",
                                                                                "evidence", "label"}) {
    throw ParseError("'" + file.string() + "' lacks the frame_index,psnr,p,d_norm,s,evidence,label header");
  }
  ScoreSeries out;
  out.clip_id = clip_id;
  LabelTrack labels{clip_id, {}};
  std::size_t labelled = 0, lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_cells(line);
    if (cells.size() != 7) throw ParseError(file.string() + ":" + std::to_string(lineno) + ": expected 7 cells");
    const double idx = parse_cell(cells[0], file, lineno);
    if (idx < 0 || idx != std::floor(idx)) throw ParseError(file.string() + ":" + std::to_string(lineno) + ": bad frame index");
    out.frame_index.push_back(static_cast<std::size_t>(idx));
    out.psnr.push_back(parse_cell(cells[1], file, lineno));
    out.p.push_back(parse_cell(cells[2], file, lineno));
    out.d_norm.push_back(parse_cell(cells[3], file, lineno));
    out.s.push_back(parse_cell(cells[4], file, lineno));
    out.evidence.push_back(parse_cell(cells[5], file, lineno));
    if (!cells[6].empty()) {
      if (cells[6] != "0" && cells[6] != "1") {
        throw ParseError(file.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
      }
      labels.labels.push_back(cells[6] == "1");
      ++labelled;
    }
  }
  if (labelled != 0 && labelled != out.frame_index.size()) {
    throw ParseError("'" + file.string() + "': labels present on only some rows");
  }
  if (labelled) out.labels = std::move(labels);
  out.validate();
  return out;
}

}  // namespace stemgan
