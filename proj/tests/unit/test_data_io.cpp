#include <gtest/gtest.h>

#include <fstream>

#include <opencv2/videoio.hpp>

#include "stemgan/data_io.hpp"
#include "stemgan/error.hpp"
#include "stemgan/synth.hpp"
#include "temp_dir.hpp"

using namespace stemgan;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

void touch_frames(const fs::path& dir, int count) {
  fs::create_directories(dir);
  RawImage img{4, 4, 1, std::vector<std::uint8_t>(16, 7)};
  for (int i = 0; i < count; ++i) write_image(img, dir / (std::to_string(100 + i) + ".png"));
}

// Frame i is a flat gray of 10*i so the source index survives lossy coding.
fs::path write_video(const fs::path& file, double fps, int frames) {
  cv::VideoWriter vw(file.string(), cv::CAP_FFMPEG, cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), fps,
                     cv::Size(32, 32));
  for (int i = 0; i < frames; ++i) vw.write(cv::Mat(32, 32, CV_8UC3, cv::Scalar::all(10 * i % 250)));
  return file;
}

int source_index(const RawImage& img) { return (img.at(16, 16, 0) + 5) / 10; }

}  // namespace

TEST(DatasetSpec, PresetFrameRates) {
  EXPECT_EQ(DatasetSpec::preset("ucsdped").fps, 10.0);
  EXPECT_EQ(DatasetSpec::preset("umn").fps, 25.0);
  EXPECT_EQ(DatasetSpec::preset("avenue").fps, 15.0);
  EXPECT_EQ(DatasetSpec::preset("subway").fps, 20.0);
  EXPECT_THROW(DatasetSpec::preset("imagenet"), ConfigError);
}

TEST(BuildManifest, UcsdLayout) {
  TempDir root("ucsd");
  touch_frames(root / "Train/Train001", 3);
  touch_frames(root / "Test/Test001", 3);
  touch_frames(root / "Test/Test001_gt", 3);  // pixel masks are skipped
  write_text(root / "labels/Test001.txt", "0 1 0");
  DatasetManifest m = build_manifest(root.path(), DatasetSpec::preset("ucsdped"));
  ASSERT_EQ(m.clips.size(), 2u);
  EXPECT_EQ(m.clips[0].clip_id, "Train001");
  EXPECT_EQ(m.clips[0].split, Split::Train);
  EXPECT_FALSE(m.clips[0].label_path.has_value());
  EXPECT_EQ(m.clips[1].split, Split::Test);
  EXPECT_TRUE(m.clips[1].label_path.has_value());
  for (const ClipEntry& c : m.clips) EXPECT_EQ(c.fps, 10.0);
}

TEST(BuildManifest, UmnVideosAt25) {
  TempDir root("umn");
  fs::create_directories(root / "train");
  fs::create_directories(root / "test");
  write_video(root / "train/scene1.avi", 25, 5);
  write_video(root / "test/scene1_test.avi", 25, 5);
  write_text(root / "labels/scene1_test.txt", "0 0 0 0 0");
  DatasetManifest m = build_manifest(root.path(), DatasetSpec::preset("umn"));
  ASSERT_EQ(m.clips.size(), 2u);
  EXPECT_EQ(m.clips[0].source, ClipSource::Video);
  EXPECT_EQ(m.clips[0].clip_id, "scene1");
  EXPECT_EQ(m.clips[0].fps, 25.0);
}

TEST(BuildManifest, Errors) {
  TempDir root("err");
  EXPECT_THROW(build_manifest(root / "missing", DatasetSpec{}), ConfigError);
  try {
    build_manifest(root.path(), DatasetSpec{});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no clips found"), std::string::npos);
  }
  touch_frames(root / "test/c1", 2);
  EXPECT_THROW(build_manifest(root.path(), DatasetSpec{}), ValidationError);
}

TEST(Manifest, CsvRoundTrip) {
  TempDir root("csv");
  touch_frames(root / "train/a", 2);
  touch_frames(root / "test/b", 2);
  write_text(root / "labels/b.txt", "0\n1\n");
  DatasetManifest m = build_manifest(root.path(), DatasetSpec{});
  write_manifest_csv(m, root / "manifest.csv");
  std::ifstream is(root / "manifest.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "clip_id,split,path,fps,label_path");
  DatasetManifest back = read_manifest_csv(root / "manifest.csv", m.dataset_name);
  ASSERT_EQ(back.clips.size(), m.clips.size());
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    EXPECT_EQ(back.clips[i].clip_id, m.clips[i].clip_id);
    EXPECT_EQ(back.clips[i].split, m.clips[i].split);
    EXPECT_EQ(back.clips[i].path, m.clips[i].path);
    EXPECT_EQ(back.clips[i].fps, m.clips[i].fps);
    EXPECT_EQ(back.clips[i].label_path, m.clips[i].label_path);
  }
}

TEST(Manifest, ValidateRejectsDuplicatesAndBadFps) {
  DatasetManifest m;
  ClipEntry c;
  c.clip_id = "a";
  c.fps = 10;
  m.clips = {c, c};
  EXPECT_THROW(m.validate(), ValidationError);
  m.clips = {c};
  m.clips[0].fps = 0;
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Labels, Parsing) {
  TempDir root("lab");
  write_text(root / "a.txt", "0 0 1 1 0");
  EXPECT_EQ(load_labels(root / "a.txt", 5).labels, (std::vector<std::uint8_t>{0, 0, 1, 1, 0}));
  EXPECT_EQ(load_labels(root / "a.txt", 5).abnormal_count(), 2u);
  write_text(root / "b.txt", "0 0 1 1");
  EXPECT_THROW(load_labels(root / "b.txt", 5), ValidationError);
  write_text(root / "c.txt", "0 2 0");
  EXPECT_THROW(load_labels(root / "c.txt", 3), ParseError);
}

TEST(Labels, WriteReadRoundTrip) {
  TempDir root("lab2");
  LabelTrack t{"x", {1, 0, 0, 1}};
  write_labels(t, root / "x.txt");
  EXPECT_EQ(load_labels(root / "x.txt", 4).labels, t.labels);
}

TEST(ExtractFrames, OneSecondAtTen) {
  TempDir root("vid");
  const fs::path v = write_video(root / "a.avi", 10, 10);
  auto frames = extract_frames(v, 10);
  ASSERT_EQ(frames.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(source_index(frames[i]), i);
  EXPECT_EQ(frames[0].channels, 3u);
}

TEST(ExtractFrames, DownsamplesNearestEarlier) {
  TempDir root("vid2");
  const fs::path v = write_video(root / "a.avi", 25, 25);
  auto frames = extract_frames(v, 10);
  ASSERT_EQ(frames.size(), 10u);
  // output k at t = k/10 s takes source floor(2.5 k)
  for (int k = 0; k < 10; ++k) EXPECT_EQ(source_index(frames[k]), static_cast<int>(2.5 * k)) << k;
}

TEST(ExtractFrames, DeterministicAndRgbOrder) {
  TempDir root("vid3");
  cv::VideoWriter vw((root / "c.avi").string(), cv::CAP_FFMPEG, cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), 10,
                     cv::Size(32, 32));
  for (int i = 0; i < 3; ++i) vw.write(cv::Mat(32, 32, CV_8UC3, cv::Scalar(0, 0, 255)));  // BGR red
  vw.release();
  auto a = extract_frames(root / "c.avi", 10);
  auto b = extract_frames(root / "c.avi", 10);
  EXPECT_EQ(a, b);
  ASSERT_FALSE(a.empty());
  EXPECT_GT(a[0].at(16, 16, 0), 200);  // R first
  EXPECT_LT(a[0].at(16, 16, 2), 50);
}

TEST(ExtractFrames, EmptyAndBrokenInputs) {
  TempDir root("vid4");
  write_video(root / "empty.avi", 10, 0);
  EXPECT_TRUE(extract_frames(root / "empty.avi", 10).empty());
  write_text(root / "junk.avi", "definitely not a video");
  EXPECT_THROW(extract_frames(root / "junk.avi", 10), DecodeError);
  EXPECT_THROW(extract_frames(root / "missing.avi", 10), DecodeError);
  EXPECT_THROW(extract_frames(root / "empty.avi", 0), ArgumentError);
}

TEST(Synth, LabelsCoverFrameCounts) {
  TempDir root("syn");
  SynthConfig c;
  c.train_clips = 2;
  c.train_clip_length = 20;
  c.test_clip_length = 30;
  c.anomaly_start = 10;
  c.anomaly_length = 8;
  write_synthetic(c, root.path());
  DatasetManifest m = build_manifest(root.path(), DatasetSpec::preset("synthetic"));
  std::size_t frames = 0, labels = 0, abnormal = 0;
  for (const ClipEntry* clip : m.clips_in(Split::Test)) {
    const std::size_t n = clip_frame_count(*clip);
    frames += n;
    LabelTrack t = load_labels(*clip->label_path, n);
    labels += t.size();
    abnormal += t.abnormal_count();
  }
  EXPECT_EQ(frames, labels);
  EXPECT_EQ(frames, 60u);
  EXPECT_EQ(abnormal, 16u);
  EXPECT_EQ(m.clips_in(Split::Train).size(), 2u);
}

TEST(Synth, DeterministicAndMoving) {
  SynthConfig c;
  c.train_clips = 1;
  c.test_clips = 0;
  c.train_clip_length = 10;
  auto a = synthesize(c), b = synthesize(c);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].frames, b[0].frames);
  EXPECT_NE(a[0].frames[0], a[0].frames[1]);
  std::size_t lit = 0;
  for (auto p : a[0].frames[0].pixels) lit += p == 255;
  EXPECT_EQ(lit, 64u);  // one 8x8 square
}

TEST(Synth, NoBounceStaysInside) {
  SynthConfig c;
  c.bounce = false;
  c.test_clips = 0;
  c.train_clip_length = 20;
  c.shape = SynthShape::Circle;
  for (const SynthClip& clip : synthesize(c)) {
    for (const RawImage& f : clip.frames) {
      std::size_t lit = 0;
      for (auto p : f.pixels) lit += p == 255;
      EXPECT_EQ(lit, 52u);  // disk of diameter 8 on the pixel grid
    }
  }
  c.train_clip_length = 100;
  EXPECT_THROW(synthesize(c), ConfigError);
}
