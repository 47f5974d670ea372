#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stemgan {

namespace fs = std::filesystem;

// Decoded 8-bit image, interleaved H x W x C, RGB channel order.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  bool empty() const { return pixels.empty(); }
  std::uint8_t at(std::size_t h, std::size_t w, std::size_t c) const { return pixels[(h * width + w) * channels + c]; }
  friend bool operator==(const RawImage&, const RawImage&) = default;
};

enum class Split { Train, Test };
enum class ClipSource { FramesDir, Video };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ClipEntry {
  std::string clip_id;
  Split split = Split::Train;
  fs::path path;
  ClipSource source = ClipSource::FramesDir;
  double fps = 0.0;
  std::optional<fs::path> label_path;
};

struct DatasetManifest {
  std::string dataset_name;
  std::vector<ClipEntry> clips;

  // Unique ids, positive fps, labels on every test clip and none on train.
  void validate() const;
  std::vector<const ClipEntry*> clips_in(Split split) const;
  const ClipEntry& find(const std::string& clip_id) const;
};

// Directory layout and frame rate of a dataset. Clips are subdirectories of
// frames or video files under <root>/<train_dir> and <root>/<test_dir>; test
// labels live at <root>/<label_dir>/<clip_id><label_ext>.
struct DatasetSpec {
  std::string name = "custom";
  double fps = 25.0;
  std::string train_dir = "train";
  std::string test_dir = "test";
  std::string label_dir = "labels";
  std::string label_ext = ".txt";
  // Subdirectories with these suffixes are skipped (e.g. UCSD pixel masks).
  std::vector<std::string> ignore_suffixes{"_gt"};

  // Known layouts: ucsdped, umn, avenue, subway, synthetic.
  static DatasetSpec preset(const std::string& name);
};

DatasetManifest build_manifest(const fs::path& root, const DatasetSpec& spec);

// CSV with header clip_id,split,path,fps,label_path.
void write_manifest_csv(const DatasetManifest& manifest, const fs::path& file);
DatasetManifest read_manifest_csv(const fs::path& file, const std::string& dataset_name = "");

// Frames of a video resampled to `fps` (source frame nearest at or before each
// output timestamp), in temporal order, RGB.
std::vector<RawImage> extract_frames(const fs::path& video_path, double fps);
// Image files of a frame folder, sorted by file name.
std::vector<fs::path> list_frame_files(const fs::path& dir);
RawImage read_image(const fs::path& file);
void write_image(const RawImage& image, const fs::path& file);
// All frames of a clip, whichever form it was found in.
std::vector<RawImage> load_clip_frames(const ClipEntry& clip);
std::size_t clip_frame_count(const ClipEntry& clip);

struct LabelTrack {
  std::string clip_id;
  std::vector<std::uint8_t> labels;  // 1 = abnormal

  std::size_t size() const { return labels.size(); }
  std::size_t abnormal_count() const;
};

LabelTrack load_labels(const fs::path& label_path, std::size_t expected_len, const std::string& clip_id = "");
void write_labels(const LabelTrack& track, const fs::path& label_path);

}  // namespace stemgan
