#include "stemgan/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "stemgan/error.hpp"

namespace stemgan {

namespace {

const std::set<std::string> kImageExt{".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"};
const std::set<std::string> kVideoExt{".avi", ".mp4", ".mov", ".mkv", ".mpg", ".mpeg", ".m4v"};

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

RawImage from_mat(const cv::Mat& bgr) {
  cv::Mat m;
  if (bgr.channels() == 3) {
    cv::cvtColor(bgr, m, cv::COLOR_BGR2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, m, cv::COLOR_BGRA2RGB);
  } else {
    m = bgr;
  }
  if (m.depth() != CV_8U) {
    cv::Mat tmp;
    m.convertTo(tmp, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    m = tmp;
  }
  if (!m.isContinuous()) m = m.clone();
  RawImage img;
  img.height = static_cast<std::size_t>(m.rows);
  img.width = static_cast<std::size_t>(m.cols);
  img.channels = static_cast<std::size_t>(m.channels());
  img.pixels.assign(m.data, m.data + img.height * img.width * img.channels);
  return img;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ParseError("unknown split '" + s + "'");
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const ClipEntry& c : clips) {
    if (!ids.insert(c.clip_id).second) throw ValidationError("duplicate clip id '" + c.clip_id + "'");
    if (!(c.fps > 0.0)) throw ValidationError("clip '" + c.clip_id + "' has non-positive fps");
    if (c.split == Split::Test && !c.label_path) {
      throw ValidationError("test clip '" + c.clip_id + "' has no label file");
    }
    if (c.split == Split::Train && c.label_path) {
      throw ValidationError("train clip '" + c.clip_id + "' carries labels; training data is normal-only");
    }
  }
}

std::vector<const ClipEntry*> DatasetManifest::clips_in(Split split) const {
  std::vector<const ClipEntry*> out;
  for (const ClipEntry& c : clips)
    if (c.split == split) out.push_back(&c);
  return out;
}

const ClipEntry& DatasetManifest::find(const std::string& clip_id) const {
  for (const ClipEntry& c : clips)
    if (c.clip_id == clip_id) return c;
  throw ConfigError("clip '" + clip_id + "' not in manifest");
}

DatasetSpec DatasetSpec::preset(const std::string& name) {
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  DatasetSpec s;
  s.name = name;
  if (key == "ucsdped" || key == "ucsdped1" || key == "ucsdped2" || key == "ucsd") {
    s.fps = 10;
    s.train_dir = "Train";
    s.test_dir = "Test";
  } else if (key == "umn") {
    s.fps = 25;
  } else if (key == "avenue") {
    s.fps = 15;
    s.train_dir = "training_videos";
    s.test_dir = "testing_videos";
  } else if (key == "subway") {
    s.fps = 20;
  } else if (key == "synthetic") {
    s.fps = 10;
  } else {
    throw ConfigError("unknown dataset preset '" + name + "' (ucsdped, umn, avenue, subway, synthetic)");
  }
  return s;
}

DatasetManifest build_manifest(const fs::path& root, const DatasetSpec& spec) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root '" + root.string() + "' does not exist");
  if (!(spec.fps > 0.0)) throw ConfigError("dataset fps must be positive");
  DatasetManifest m;
  m.dataset_name = spec.name;
  for (Split split : {Split::Train, Split::Test}) {
    const fs::path dir = root / (split == Split::Train ? spec.train_dir : spec.test_dir);
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const fs::path& p : entries) {
      const std::string name = p.filename().string();
      if (name.empty() || name[0] == '.') continue;
      ClipEntry c;
      c.split = split;
      c.fps = spec.fps;
      c.path = p;
      if (fs::is_directory(p)) {
        if (std::any_of(spec.ignore_suffixes.begin(), spec.ignore_suffixes.end(),
                        [&](const std::string& s) { return has_suffix(name, s); })) {
          continue;
        }
        if (list_frame_files(p).empty()) continue;
        c.source = ClipSource::FramesDir;
        c.clip_id = name;
      } else if (kVideoExt.count(lower_ext(p))) {
        c.source = ClipSource::Video;
        c.clip_id = p.stem().string();
      } else {
        continue;
      }
      if (split == Split::Test) {
        const fs::path label = root / spec.label_dir / (c.clip_id + spec.label_ext);
        if (!fs::is_regular_file(label)) {
          throw ValidationError("test clip '" + c.clip_id + "' has no label file at " + label.string());
        }
        c.label_path = label;
      }
      m.clips.push_back(std::move(c));
    }
  }
  if (m.clips.empty()) throw ConfigError("no clips found under '" + root.string() + "'");
  m.validate();
  return m;
}

void write_manifest_csv(const DatasetManifest& manifest, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw IoError("cannot write manifest '" + file.string() + "'");
  os << "clip_id,split,path,fps,label_path\n";
  os.precision(17);
  for (const ClipEntry& c : manifest.clips) {
    os << c.clip_id << ',' << to_string(c.split) << ',' << c.path.string() << ',' << c.fps << ','
       << (c.label_path ? c.label_path->string() : "") << '\n';
  }
}

DatasetManifest read_manifest_csv(const fs::path& file, const std::string& dataset_name) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot read manifest '" + file.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != "clip_id,split,path,fps,label_path") {
    throw ParseError("manifest '" + file.string() + "' lacks the clip_id,split,path,fps,label_path header");
  }
  DatasetManifest m;
  m.dataset_name = dataset_name.empty() ? file.stem().string() : dataset_name;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5) throw ParseError(file.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    ClipEntry c;
    c.clip_id = cells[0];
    c.split = parse_split(cells[1]);
    c.path = cells[2];
    try {
      c.fps = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": bad fps '" + cells[3] + "'");
    }
    if (!cells[4].empty()) c.label_path = fs::path(cells[4]);
    c.source = fs::is_directory(c.path) ? ClipSource::FramesDir : ClipSource::Video;
    m.clips.push_back(std::move(c));
  }
  m.validate();
  return m;
}

std::vector<RawImage> extract_frames(const fs::path& video_path, double fps) {
  if (!(fps > 0.0)) throw ArgumentError("extraction fps must be positive");
  if (!fs::is_regular_file(video_path)) throw DecodeError("video '" + video_path.string() + "' not found");
  cv::VideoCapture cap(video_path.string(), cv::CAP_FFMPEG);
  if (!cap.isOpened()) throw DecodeError("cannot decode video '" + video_path.string() + "'");
  double native = cap.get(cv::CAP_PROP_FPS);
  if (!(native > 0.0) || !std::isfinite(native)) native = fps;
  const double step = native / fps;  // source frames per output frame

  std::vector<RawImage> out;
  cv::Mat frame;
  std::size_t next_out = 0;
  for (std::size_t src = 0; cap.read(frame); ++src) {
    if (frame.empty()) break;
    // Emit every output timestamp whose nearest-earlier source frame is `src`.
    while (static_cast<std::size_t>(std::floor(static_cast<double>(next_out) * step + 1e-9)) == src) {
      out.push_back(from_mat(frame));
      ++next_out;
    }
  }
  return out;
}

std::vector<fs::path> list_frame_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && kImageExt.count(lower_ext(e.path()))) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

RawImage read_image(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DecodeError("cannot decode image '" + file.string() + "'");
  return from_mat(m);
}

void write_image(const RawImage& image, const fs::path& file) {
  if (image.empty()) throw ArgumentError("cannot write an empty image");
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat m(static_cast<int>(image.height), static_cast<int>(image.width), type,
            const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat out;
  if (image.channels == 3) {
    cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
  } else {
    out = m;
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  if (!cv::imwrite(file.string(), out)) throw IoError("cannot write image '" + file.string() + "'");
}

std::vector<RawImage> load_clip_frames(const ClipEntry& clip) {
  if (clip.source == ClipSource::Video) return extract_frames(clip.path, clip.fps);
  std::vector<RawImage> frames;
  for (const fs::path& f : list_frame_files(clip.path)) frames.push_back(read_image(f));
  return frames;
}

std::size_t clip_frame_count(const ClipEntry& clip) {
  if (clip.source == ClipSource::FramesDir) return list_frame_files(clip.path).size();
  return extract_frames(clip.path, clip.fps).size();
}

std::size_t LabelTrack::abnormal_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

LabelTrack load_labels(const fs::path& label_path, std::size_t expected_len, const std::string& clip_id) {
  std::ifstream is(label_path);
  if (!is) throw IoError("cannot read label file '" + label_path.string() + "'");
  LabelTrack t;
  t.clip_id = clip_id.empty() ? label_path.stem().string() : clip_id;
  std::string tok;
  while (is >> tok) {
    if (tok == "0") {
      t.labels.push_back(0);
    } else if (tok == "1") {
      t.labels.push_back(1);
    } else {
      throw ParseError("label file '" + label_path.string() + "': token '" + tok + "' at position " +
                       std::to_string(t.labels.size()) + " is not 0 or 1");
    }
  }
  if (t.labels.size() != expected_len) {
    throw ValidationError("label file '" + label_path.string() + "' has " + std::to_string(t.labels.size()) +
                          " labels, expected " + std::to_string(expected_len));
  }
  return t;
}

void write_labels(const LabelTrack& track, const fs::path& label_path) {
  if (label_path.has_parent_path()) fs::create_directories(label_path.parent_path());
  std::ofstream os(label_path);
  if (!os) throw IoError("cannot write label file '" + label_path.string() + "'");
  for (std::size_t i = 0; i < track.labels.size(); ++i) os << static_cast<int>(track.labels[i]) << '\n';
}

}  // namespace stemgan
