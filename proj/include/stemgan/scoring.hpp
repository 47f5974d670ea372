#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stemgan/data_io.hpp"
#include "stemgan/frame.hpp"
#include "stemgan/model.hpp"

namespace stemgan {

inline constexpr double kPsnrPeakFloor = 1e-3;
inline constexpr double kPsnrMseFloor = 1e-10;
inline constexpr double kDefaultLambdaD = 0.3;
inline constexpr std::size_t kDefaultThresholds = 1000;

// PSNR in dB of values already in [0, 1]: 10 log10(peak^2 / MSE) where peak
// is the largest predicted value (floored at 1e-3) and MSE is floored at 1e-10.
double psnr_unit(const Tensor& truth, const Tensor& pred);
// Frames in [-1, 1] are mapped to [0, 1] first.
double psnr(const Frame& truth, const Frame& pred);

// Per-clip min-max normalisation to [0, 1]. A constant series maps to all
// ones (uniformly normal) with a logged warning.
std::vector<double> normalize_scores(const std::vector<double>& series);

// S = p + lambda_d * d_norm; higher is more normal.
double anomaly_score(double p, double d_norm, double lambda_d = kDefaultLambdaD);
// a = (1 + lambda_d) - S >= 0; higher is more anomalous.
double anomaly_evidence(double s, double lambda_d = kDefaultLambdaD);

struct SweepPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  std::size_t flagged = 0;  // frames with evidence >= threshold
};

// Evenly spaced thresholds over [0, max(evidence)] inclusive; a frame is
// flagged abnormal when its evidence reaches the threshold. Abnormal is the
// positive class.
std::vector<SweepPoint> threshold_sweep(const std::vector<double>& evidence, const LabelTrack& labels,
                                        std::size_t num_thresholds = kDefaultThresholds);
std::vector<std::uint8_t> classify(const std::vector<double>& evidence, double threshold);

// Mean S over normal frames minus mean S over abnormal frames.
double score_gap(const std::vector<double>& s, const LabelTrack& labels);

// Per-frame scores of one clip, starting at the first predictable frame.
struct ScoreSeries {
  std::string clip_id;
  std::vector<std::size_t> frame_index;
  std::vector<double> psnr;
  std::vector<double> p;
  std::vector<double> d_norm;
  std::vector<double> s;
  std::vector<double> evidence;
  std::optional<LabelTrack> labels;  // aligned with frame_index

  std::size_t size() const { return psnr.size(); }
  void validate() const;
};

// Assemble a series from raw PSNR values and raw critic means (both per frame).
// `labels`, when given, covers the whole clip and is sliced at frame_index.
ScoreSeries make_series(const std::string& clip_id, std::vector<std::size_t> frame_index, std::vector<double> psnr,
                        const std::vector<double>& critic, double lambda_d = kDefaultLambdaD,
                        const std::optional<LabelTrack>& clip_labels = std::nullopt);

// Predict every frame from the preceding input_frames frames (inference mode)
// and score it. Frames are preprocessed [-1, 1] tensors of the model's size.
ScoreSeries score_clip(Generator& g, Discriminator& d, const std::vector<FramePtr>& frames, const std::string& clip_id,
                       const std::optional<LabelTrack>& clip_labels = std::nullopt,
                       double lambda_d = kDefaultLambdaD, std::size_t batch_size = 8);

// CSV `frame_index,psnr,p,d_norm,s,evidence,label`; label is empty when absent.
void write_score_csv(const ScoreSeries& series, const std::filesystem::path& file);
ScoreSeries read_score_csv(const std::filesystem::path& file, const std::string& clip_id);

}  // namespace stemgan
