#include "stemgan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "stemgan/error.hpp"

namespace stemgan {

SynthShape parse_synth_shape(const std::string& s) {
  if (s == "square") return SynthShape::Square;
  if (s == "circle") return SynthShape::Circle;
  throw ConfigError("unknown synthetic shape '" + s + "' (square, circle)");
}

std::string to_string(SynthShape s) { return s == SynthShape::Square ? "square" : "circle"; }

void SynthConfig::validate() const {
  if (object_size == 0 || object_size * 2 > frame_size) throw ConfigError("synth.object_size must be in [1, frame_size/2]");
  if (speed_x == 0 && speed_y == 0) throw ConfigError("synth speed must be non-zero");
  if (speed_factor < 1) throw ConfigError("synth.speed_factor must be at least 1");
  if (train_clips == 0 || train_clip_length == 0) throw ConfigError("synth needs at least one training frame");
  if (test_clips > 0 && anomaly_start + anomaly_length > test_clip_length) {
    throw ConfigError("synth anomaly interval exceeds the test clip length");
  }
  if (test_clips > 0 && (anomaly_length == 0 || anomaly_start == 0 || anomaly_start + anomaly_length == test_clip_length)) {
    throw ConfigError("synth test clips need normal frames on both sides of the anomaly");
  }
  const int room = static_cast<int>(frame_size - object_size);
  if (std::abs(speed_x) * speed_factor > room || std::abs(speed_y) * speed_factor > room) {
    throw ConfigError("synth speed too large for the frame");
  }
  if (!bounce) {
    const std::size_t longest = std::max(train_clip_length, test_clips > 0 ? test_clip_length : 0);
    const int travel_x = std::abs(speed_x) * static_cast<int>(longest - 1);
    const int travel_y = std::abs(speed_y) * static_cast<int>(longest - 1);
    if (travel_x > room || travel_y > room) {
      throw ConfigError("synth.bounce=false needs clips short enough to stay inside the frame");
    }
    if (test_clips > 0 && speed_factor > 1) {
      throw ConfigError("synth.bounce=false cannot host speed anomalies; set test_clips 0 or speed_factor 1");
    }
  }
}

namespace {

struct Mover {
  double x, y;
  int vx, vy;
};

void step(Mover& m, int factor, int room) {
  auto axis = [room](double& p, int& v, int f) {
    p += v * f;
    if (p < 0) {
      p = -p;
      v = -v;
    } else if (p > room) {
      p = 2.0 * room - p;
      v = -v;
    }
  };
  axis(m.x, m.vx, factor);
  axis(m.y, m.vy, factor);
}

void draw(RawImage& img, double x, double y, std::size_t size, SynthShape shape) {
  const long x0 = std::lround(x), y0 = std::lround(y);
  const double r = static_cast<double>(size) / 2.0;
  const double cx = static_cast<double>(x0) + r, cy = static_cast<double>(y0) + r;
  for (long py = y0; py < y0 + static_cast<long>(size); ++py) {
    for (long px = x0; px < x0 + static_cast<long>(size); ++px) {
      if (py < 0 || px < 0 || py >= static_cast<long>(img.height) || px >= static_cast<long>(img.width)) continue;
      if (shape == SynthShape::Circle) {
        const double dx = static_cast<double>(px) + 0.5 - cx, dy = static_cast<double>(py) + 0.5 - cy;
        if (dx * dx + dy * dy > r * r) continue;
      }
      img.pixels[static_cast<std::size_t>(py) * img.width + static_cast<std::size_t>(px)] = 255;
    }
  }
}

RawImage blank(std::size_t side) {
  RawImage img;
  img.height = img.width = side;
  img.channels = 1;
  img.pixels.assign(side * side, 0);
  return img;
}

Mover spawn(const SynthConfig& c, std::mt19937_64& rng, std::size_t length) {
  const int room = static_cast<int>(c.frame_size - c.object_size);
  std::bernoulli_distribution flip(0.5);
  Mover m{0, 0, flip(rng) ? c.speed_x : -c.speed_x, flip(rng) ? c.speed_y : -c.speed_y};
  if (c.bounce) {
    std::uniform_int_distribution<int> pos(0, room);
    m.x = pos(rng);
    m.y = pos(rng);
  } else {
    // Start far enough from the wall the object heads towards.
    const int tx = std::abs(m.vx) * static_cast<int>(length - 1);
    const int ty = std::abs(m.vy) * static_cast<int>(length - 1);
    std::uniform_int_distribution<int> px(0, room - tx), py(0, room - ty);
    m.x = m.vx > 0 ? px(rng) : room - px(rng);
    m.y = m.vy > 0 ? py(rng) : room - py(rng);
  }
  return m;
}

SynthClip make_clip(const SynthConfig& c, std::mt19937_64& rng, const std::string& id, Split split,
                    std::size_t length, int anomaly_kind) {
  const int room = static_cast<int>(c.frame_size - c.object_size);
  SynthClip clip;
  clip.clip_id = id;
  clip.split = split;
  Mover m = spawn(c, rng, length);
  std::uniform_int_distribution<int> jump(-6, 6), pos(0, room);
  Mover intruder{static_cast<double>(pos(rng)), static_cast<double>(pos(rng)), 0, 0};
  for (std::size_t t = 0; t < length; ++t) {
    const bool abnormal = anomaly_kind >= 0 && t >= c.anomaly_start && t < c.anomaly_start + c.anomaly_length;
    if (t > 0) step(m, abnormal && anomaly_kind == 0 ? c.speed_factor : 1, room);
    RawImage img = blank(c.frame_size);
    draw(img, m.x, m.y, c.object_size, c.shape);
    if (abnormal && anomaly_kind == 1) {
      intruder.x = std::clamp(intruder.x + jump(rng), 0.0, static_cast<double>(room));
      intruder.y = std::clamp(intruder.y + jump(rng), 0.0, static_cast<double>(room));
      draw(img, intruder.x, intruder.y, c.object_size, c.shape);
    }
    clip.frames.push_back(std::move(img));
    clip.labels.push_back(abnormal ? 1 : 0);
  }
  return clip;
}

}  // namespace

std::vector<SynthClip> synthesize(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::vector<SynthClip> clips;
  char id[32];
  for (std::size_t i = 0; i < config.train_clips; ++i) {
    std::snprintf(id, sizeof id, "train_%02zu", i + 1);
    clips.push_back(make_clip(config, rng, id, Split::Train, config.train_clip_length, -1));
  }
  for (std::size_t i = 0; i < config.test_clips; ++i) {
    std::snprintf(id, sizeof id, "test_%02zu", i + 1);
    clips.push_back(make_clip(config, rng, id, Split::Test, config.test_clip_length, static_cast<int>(i % 2)));
  }
  return clips;
}

DatasetManifest write_synthetic(const SynthConfig& config, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const std::vector<SynthClip> clips = synthesize(config);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
  DatasetManifest manifest;
  manifest.dataset_name = "synthetic";
  const double fps = DatasetSpec::preset("synthetic").fps;
  char name[32];
  for (const SynthClip& clip : clips) {
    const fs::path dir = root / (clip.split == Split::Train ? "train" : "test") / clip.clip_id;
    fs::create_directories(dir);
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      std::snprintf(name, sizeof name, "%06zu.png", t);
      write_image(clip.frames[t], dir / name);
    }
    ClipEntry e;
    e.clip_id = clip.clip_id;
    e.split = clip.split;
    e.path = dir;
    e.fps = fps;
    if (clip.split == Split::Test) {
      e.label_path = root / "labels" / (clip.clip_id + ".txt");
      write_labels(LabelTrack{clip.clip_id, clip.labels}, *e.label_path);
    }
    manifest.clips.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace stemgan
