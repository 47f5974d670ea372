#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stemgan/data_io.hpp"
#include "stemgan/frame.hpp"

namespace stemgan {

inline constexpr std::size_t kDefaultFrameSize = 160;

// Bilinear resize to size x size, then v -> v / 127.5 - 1. Grayscale input is
// replicated to three channels.
Frame preprocess(const RawImage& raw, std::size_t size = kDefaultFrameSize);
// Inverse value map back to 8-bit RGB (rounded, clamped).
RawImage denormalize(const Frame& frame);

struct FrameWindow {
  std::vector<FramePtr> inputs;  // consecutive conditioning frames
  FramePtr target;               // the frame right after the inputs
  std::string clip_id;
  std::size_t start_index = 0;
};

// floor((n - window_total) / stride) + 1 windows; the last frame of each is the
// target. Fewer than window_total frames yields no windows.
std::vector<FrameWindow> make_windows(const std::vector<FramePtr>& frames, std::size_t window_total = 5,
                                      std::size_t stride = 1, const std::string& clip_id = "");

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch = 0;
  std::vector<Frame> patches;  // row-major

  Frame assemble() const;
};

// Non-overlapping patch x patch tiles; dimensions must divide evenly.
PatchGrid make_patches(const Frame& frame, std::size_t patch = 20);

// Optional dataset standardisation (zero mean, unit variance). Off by default:
// the networks expect the bounded [-1, 1] map.
struct Standardization {
  double mean = 0.0;
  double stddev = 1.0;
};
Standardization fit_standardization(const std::vector<FramePtr>& frames);
Frame standardize(const Frame& frame, const Standardization& s);

struct LoaderConfig {
  bool caching = false;
  bool prefetching = false;
  bool parallelizing = false;
  std::size_t worker_count = 1;  // capped at the hardware core count
  std::size_t buffer_capacity = 64;  // frames
  std::size_t window_total = 5;
  std::size_t stride = 1;
  std::size_t frame_size = kDefaultFrameSize;

  void validate() const;
};

struct LoaderStats {
  std::size_t frames_decoded = 0;
  std::size_t cache_hits = 0;
  std::size_t windows_emitted = 0;
};

// Streams FrameWindows over a set of clips in a fixed order. Caching, read-ahead
// and parallel decoding change timing only; the emitted sequence is identical
// for every configuration. Single consumer.
class WindowLoader {
 public:
  WindowLoader(std::vector<ClipEntry> clips, LoaderConfig config);
  ~WindowLoader();
  WindowLoader(const WindowLoader&) = delete;
  WindowLoader& operator=(const WindowLoader&) = delete;

  std::optional<FrameWindow> next();
  std::size_t window_count() const;
  LoaderStats stats() const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

// Windows per second delivered by a loader over all clips of the manifest,
// measured for `duration_seconds` (restarting the pass if it runs out).
double throughput_benchmark(const DatasetManifest& manifest, const LoaderConfig& config, double duration_seconds);

struct BenchmarkRow {
  bool caching = false;
  bool prefetching = false;
  bool parallelizing = false;
  double fps = 0.0;
};

// caching,prefetching,parallelizing,fps
void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& file);

// Load every frame of a clip, preprocessed.
std::vector<FramePtr> load_preprocessed(const ClipEntry& clip, std::size_t frame_size);

}  // namespace stemgan
