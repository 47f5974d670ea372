#include "stemgan/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <fstream>
#include <future>
#include <list>
#include <map>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <opencv2/imgproc.hpp>

#include "stemgan/error.hpp"

namespace stemgan {

Frame preprocess(const RawImage& raw, std::size_t size) {
  if (raw.empty() || raw.height == 0 || raw.width == 0) throw ArgumentError("preprocess: empty image");
  if (raw.channels != 1 && raw.channels != 3) {
    throw ArgumentError("preprocess: expected 1 or 3 channels, got " + std::to_string(raw.channels));
  }
  if (size == 0) throw ArgumentError("preprocess: target size must be positive");
  const int type = raw.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat src(static_cast<int>(raw.height), static_cast<int>(raw.width), type,
              const_cast<std::uint8_t*>(raw.pixels.data()));
  cv::Mat resized;
  if (raw.height == size && raw.width == size) {
    resized = src;
  } else {
    // Float output keeps the interpolated values unrounded.
    cv::Mat f;
    src.convertTo(f, raw.channels == 1 ? CV_32FC1 : CV_32FC3);
    cv::resize(f, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
  }
  Frame out(3, size, size);
  const bool is_float = resized.depth() == CV_32F;
  for (std::size_t h = 0; h < size; ++h) {
    for (std::size_t w = 0; w < size; ++w) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t sc = raw.channels == 1 ? 0 : c;
        double v;
        if (is_float) {
          v = resized.ptr<float>(static_cast<int>(h))[w * raw.channels + sc];
        } else {
          v = resized.ptr<std::uint8_t>(static_cast<int>(h))[w * raw.channels + sc];
        }
        out.at(c, h, w) = std::clamp(v / 127.5 - 1.0, -1.0, 1.0);
      }
    }
  }
  return out;
}

RawImage denormalize(const Frame& frame) {
  RawImage img;
  img.height = frame.height();
  img.width = frame.width();
  img.channels = frame.channels();
  img.pixels.resize(img.height * img.width * img.channels);
  for (std::size_t h = 0; h < img.height; ++h)
    for (std::size_t w = 0; w < img.width; ++w)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = std::round((frame.at(c, h, w) + 1.0) * 127.5);
        img.pixels[(h * img.width + w) * img.channels + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return img;
}

std::vector<FrameWindow> make_windows(const std::vector<FramePtr>& frames, std::size_t window_total,
                                      std::size_t stride, const std::string& clip_id) {
  if (window_total < 2) throw ArgumentError("window needs at least one input and one target frame");
  if (stride == 0) throw ArgumentError("window stride must be positive");
  std::vector<FrameWindow> out;
  if (frames.size() < window_total) return out;
  const std::size_t count = (frames.size() - window_total) / stride + 1;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    FrameWindow w;
    w.clip_id = clip_id;
    w.start_index = k * stride;
    w.inputs.assign(frames.begin() + static_cast<std::ptrdiff_t>(w.start_index),
                    frames.begin() + static_cast<std::ptrdiff_t>(w.start_index + window_total - 1));
    w.target = frames[w.start_index + window_total - 1];
    out.push_back(std::move(w));
  }
  return out;
}

PatchGrid make_patches(const Frame& frame, std::size_t patch) {
  if (patch == 0) throw ArgumentError("patch size must be positive");
  if (frame.height() % patch != 0 || frame.width() % patch != 0) {
    throw ArgumentError("frame " + std::to_string(frame.height()) + "x" + std::to_string(frame.width()) +
                        " not divisible into " + std::to_string(patch) + "x" + std::to_string(patch) + " patches");
  }
  PatchGrid g;
  g.rows = frame.height() / patch;
  g.cols = frame.width() / patch;
  g.patch = patch;
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t q = 0; q < g.cols; ++q) {
      Frame p(frame.channels(), patch, patch);
      for (std::size_t c = 0; c < frame.channels(); ++c)
        for (std::size_t h = 0; h < patch; ++h)
          for (std::size_t w = 0; w < patch; ++w) p.at(c, h, w) = frame.at(c, r * patch + h, q * patch + w);
      g.patches.push_back(std::move(p));
    }
  return g;
}

Frame PatchGrid::assemble() const {
  if (patches.empty()) throw ArgumentError("empty patch grid");
  const std::size_t channels = patches.front().channels();
  Frame f(channels, rows * patch, cols * patch);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) {
      const Frame& p = patches[r * cols + q];
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t h = 0; h < patch; ++h)
          for (std::size_t w = 0; w < patch; ++w) f.at(c, r * patch + h, q * patch + w) = p.at(c, h, w);
    }
  return f;
}

Standardization fit_standardization(const std::vector<FramePtr>& frames) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const FramePtr& f : frames) {
    for (double v : f->tensor().values()) {
      sum += v;
      sq += v * v;
    }
    n += f->tensor().size();
  }
  if (n == 0) throw ArgumentError("cannot standardise an empty frame set");
  Standardization s;
  s.mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - s.mean * s.mean);
  s.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
  return s;
}

Frame standardize(const Frame& frame, const Standardization& s) {
  Frame out = frame;
  for (double& v : out.tensor().values()) v = (v - s.mean) / s.stddev;
  return out;
}

void LoaderConfig::validate() const {
  if (worker_count < 1) throw ConfigError("loader worker_count must be at least 1");
  if (window_total < 2) throw ConfigError("loader window must hold at least 2 frames");
  if (buffer_capacity < window_total) throw ConfigError("loader buffer_capacity must be at least the window size");
  if (stride == 0) throw ConfigError("loader stride must be positive");
  if (frame_size == 0) throw ConfigError("loader frame_size must be positive");
}

std::vector<FramePtr> load_preprocessed(const ClipEntry& clip, std::size_t frame_size) {
  std::vector<FramePtr> out;
  for (const RawImage& raw : load_clip_frames(clip)) out.push_back(std::make_shared<const Frame>(preprocess(raw, frame_size)));
  return out;
}

// ------------------------------------------------------------ WindowLoader

class WindowLoader::Impl {
 public:
  Impl(std::vector<ClipEntry> clips, LoaderConfig config) : clips_(std::move(clips)), config_(config) {
    config_.validate();
    for (std::size_t ci = 0; ci < clips_.size(); ++ci) {
      const ClipEntry& c = clips_[ci];
      ClipFrames cf;
      if (c.source == ClipSource::FramesDir) {
        cf.files = list_frame_files(c.path);
        cf.count = cf.files.size();
      } else {
        // Videos are not randomly addressable; decode once up front.
        cf.decoded = load_preprocessed(c, config_.frame_size);
        cf.count = cf.decoded.size();
      }
      if (cf.count >= config_.window_total) {
        const std::size_t n = (cf.count - config_.window_total) / config_.stride + 1;
        for (std::size_t k = 0; k < n; ++k) plan_.push_back({ci, k * config_.stride});
      }
      frames_.push_back(std::move(cf));
    }
    ahead_ = std::max<std::size_t>(1, config_.buffer_capacity / config_.window_total);
    // Decode threads beyond the core count only add switching overhead.
    const std::size_t cores = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    workers_ = config_.parallelizing ? std::min(config_.worker_count, cores) : 1;
    if (config_.prefetching) {
      for (std::size_t i = 0; i < workers_; ++i) threads_.emplace_back([this] { prefetch_worker(); });
    }
  }

  ~Impl() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    threads_.clear();  // jthread joins
  }

  std::size_t window_count() const { return plan_.size(); }

  LoaderStats stats() const {
    std::lock_guard lk(stats_mu_);
    return stats_;
  }

  std::optional<FrameWindow> next() {
    if (pos_ >= plan_.size()) return std::nullopt;
    FrameWindow w;
    if (config_.prefetching) {
      w = take_prefetched(pos_);
    } else if (workers_ > 1) {
      if (ready_.empty()) fill_parallel_chunk();
      w = std::move(ready_.front());
      ready_.erase(ready_.begin());
    } else {
      w = build(pos_);
    }
    ++pos_;
    {
      std::lock_guard lk(stats_mu_);
      ++stats_.windows_emitted;
    }
    return w;
  }

 private:
  struct ClipFrames {
    std::vector<fs::path> files;
    std::vector<FramePtr> decoded;
    std::size_t count = 0;
  };
  struct PlanItem {
    std::size_t clip;
    std::size_t start;
  };
  struct Slot {
    std::optional<FrameWindow> window;
    std::exception_ptr error;
  };
  using Key = std::pair<std::size_t, std::size_t>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const { return k.first * 1000003u ^ k.second; }
  };

  FramePtr decode(std::size_t clip, std::size_t index) {
    const ClipFrames& cf = frames_[clip];
    if (!cf.decoded.empty()) return cf.decoded[index];
    auto f = std::make_shared<const Frame>(preprocess(read_image(cf.files[index]), config_.frame_size));
    std::lock_guard lk(stats_mu_);
    ++stats_.frames_decoded;
    return f;
  }

  // With caching on, a frame already being decoded by another worker is
  // waited for rather than decoded twice (overlapping windows share frames).
  FramePtr fetch(std::size_t clip, std::size_t index) {
    if (!config_.caching) return decode(clip, index);
    const Key key{clip, index};
    std::promise<FramePtr> mine;
    std::shared_future<FramePtr> theirs;
    {
      std::lock_guard lk(cache_mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second.second);
        std::lock_guard sl(stats_mu_);
        ++stats_.cache_hits;
        return it->second.first;
      }
      auto pending = inflight_.find(key);
      if (pending != inflight_.end()) {
        theirs = pending->second;
      } else {
        inflight_.emplace(key, mine.get_future().share());
      }
    }
    if (theirs.valid()) {
      FramePtr f = theirs.get();
      std::lock_guard sl(stats_mu_);
      ++stats_.cache_hits;
      return f;
    }
    FramePtr f;
    try {
      f = decode(clip, index);
    } catch (...) {
      std::lock_guard lk(cache_mu_);
      inflight_.erase(key);
      mine.set_exception(std::current_exception());
      throw;
    }
    {
      std::lock_guard lk(cache_mu_);
      inflight_.erase(key);
      lru_.push_front(key);
      cache_.emplace(key, std::make_pair(f, lru_.begin()));
      while (cache_.size() > config_.buffer_capacity) {
        cache_.erase(lru_.back());
        lru_.pop_back();
      }
    }
    mine.set_value(f);
    return f;
  }

  FrameWindow build(std::size_t i) {
    const PlanItem& p = plan_[i];
    FrameWindow w;
    w.clip_id = clips_[p.clip].clip_id;
    w.start_index = p.start;
    for (std::size_t k = 0; k + 1 < config_.window_total; ++k) w.inputs.push_back(fetch(p.clip, p.start + k));
    w.target = fetch(p.clip, p.start + config_.window_total - 1);
    return w;
  }

  void fill_parallel_chunk() {
    const std::size_t n = std::min(workers_, plan_.size() - pos_);
    std::vector<std::future<FrameWindow>> jobs;
    for (std::size_t k = 0; k < n; ++k) jobs.push_back(std::async(std::launch::async, [this, i = pos_ + k] { return build(i); }));
    for (auto& j : jobs) ready_.push_back(j.get());
  }

  void prefetch_worker() {
    for (;;) {
      std::size_t i;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (claimed_ < plan_.size() && claimed_ < consumed_ + ahead_); });
        if (stop_) return;
        i = claimed_++;
      }
      Slot slot;
      try {
        slot.window = build(i);
      } catch (...) {
        slot.error = std::current_exception();
      }
      {
        std::lock_guard lk(mu_);
        slots_.emplace(i, std::move(slot));
      }
      cv_.notify_all();
    }
  }

  FrameWindow take_prefetched(std::size_t i) {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return slots_.count(i) > 0; });
    Slot slot = std::move(slots_.at(i));
    slots_.erase(i);
    consumed_ = i + 1;
    lk.unlock();
    cv_.notify_all();
    if (slot.error) std::rethrow_exception(slot.error);
    return std::move(*slot.window);
  }

  std::vector<ClipEntry> clips_;
  LoaderConfig config_;
  std::vector<ClipFrames> frames_;
  std::vector<PlanItem> plan_;
  std::size_t pos_ = 0;
  std::size_t ahead_ = 1;
  std::size_t workers_ = 1;
  std::vector<FrameWindow> ready_;

  std::mutex cache_mu_;
  std::list<Key> lru_;
  std::unordered_map<Key, std::pair<FramePtr, std::list<Key>::iterator>, KeyHash> cache_;
  std::unordered_map<Key, std::shared_future<FramePtr>, KeyHash> inflight_;

  mutable std::mutex stats_mu_;
  LoaderStats stats_;

  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::size_t claimed_ = 0;
  std::size_t consumed_ = 0;
  std::map<std::size_t, Slot> slots_;
  std::vector<std::jthread> threads_;
};

WindowLoader::WindowLoader(std::vector<ClipEntry> clips, LoaderConfig config)
    : impl_(std::make_unique<Impl>(std::move(clips), config)) {}

WindowLoader::~WindowLoader() = default;

std::optional<FrameWindow> WindowLoader::next() { return impl_->next(); }

std::size_t WindowLoader::window_count() const { return impl_->window_count(); }

LoaderStats WindowLoader::stats() const { return impl_->stats(); }

double throughput_benchmark(const DatasetManifest& manifest, const LoaderConfig& config, double duration_seconds) {
  if (!(duration_seconds > 0.0)) throw ArgumentError("benchmark duration must be positive");
  if (manifest.clips.empty()) throw ConfigError("benchmark needs a non-empty manifest");
  config.validate();
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto limit = t0 + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(duration_seconds));
  std::size_t windows = 0;
  while (clock::now() < limit) {
    WindowLoader loader(manifest.clips, config);
    if (loader.window_count() == 0) throw ConfigError("manifest clips are shorter than one window");
    while (clock::now() < limit) {
      auto w = loader.next();
      if (!w) break;
      ++windows;
    }
  }
  const double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
  return static_cast<double>(windows) / elapsed;
}

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << "caching,prefetching,parallelizing,fps\n";
  for (const BenchmarkRow& r : rows) {
    os << (r.caching ? 1 : 0) << ',' << (r.prefetching ? 1 : 0) << ',' << (r.parallelizing ? 1 : 0) << ',' << r.fps
       << '\n';
  }
}

}  // namespace stemgan
