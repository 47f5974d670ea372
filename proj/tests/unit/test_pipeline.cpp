#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "stemgan/error.hpp"
#include "stemgan/pipeline.hpp"
#include "stemgan/synth.hpp"
#include "temp_dir.hpp"

using namespace stemgan;

namespace {

RawImage noise_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  RawImage img{h, w, c, std::vector<std::uint8_t>(h * w * c)};
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
  return img;
}

std::vector<FramePtr> numbered_frames(std::size_t n) {
  std::vector<FramePtr> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::make_shared<const Frame>(1, 1, 1, static_cast<double>(i)));
  return out;
}

DatasetManifest small_corpus(const fs::path& root) {
  SynthConfig c;
  c.frame_size = 32;
  c.object_size = 4;
  c.train_clips = 3;
  c.train_clip_length = 12;
  c.test_clip_length = 15;
  c.anomaly_start = 5;
  c.anomaly_length = 4;
  return write_synthetic(c, root);
}

std::vector<FrameWindow> drain(WindowLoader& loader) {
  std::vector<FrameWindow> out;
  while (auto w = loader.next()) out.push_back(std::move(*w));
  return out;
}

void expect_same_windows(const std::vector<FrameWindow>& a, const std::vector<FrameWindow>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].clip_id, b[i].clip_id);
    EXPECT_EQ(a[i].start_index, b[i].start_index);
    ASSERT_EQ(a[i].inputs.size(), b[i].inputs.size());
    for (std::size_t k = 0; k < a[i].inputs.size(); ++k) EXPECT_EQ(a[i].inputs[k]->tensor(), b[i].inputs[k]->tensor());
    EXPECT_EQ(a[i].target->tensor(), b[i].target->tensor());
  }
}

}  // namespace

TEST(Preprocess, EndpointsOfTheValueMap) {
  RawImage img{2, 2, 1, {0, 255, 127, 128}};
  Frame f = preprocess(img, 2);
  EXPECT_EQ(f.at(0, 0, 0), -1.0);
  EXPECT_EQ(f.at(0, 0, 1), 1.0);
  EXPECT_LE(std::abs(f.at(0, 1, 0)), 1.0 / 127.5);
  EXPECT_LE(std::abs(f.at(0, 1, 1)), 1.0 / 127.5);
  EXPECT_EQ(f.at(2, 0, 1), 1.0);  // grayscale replicated
}

TEST(Preprocess, UmnFrameSize) {
  std::mt19937_64 rng(1);
  Frame f = preprocess(noise_image(240, 320, 3, rng));
  EXPECT_EQ(f.tensor().shape(), (Shape{3, 160, 160}));
  EXPECT_TRUE(f.valid());
}

TEST(Preprocess, RejectsEmptyAndOddChannels) {
  EXPECT_THROW(preprocess(RawImage{}), ArgumentError);
  RawImage two{2, 2, 2, std::vector<std::uint8_t>(8)};
  EXPECT_THROW(preprocess(two), ArgumentError);
}

TEST(Preprocess, IdempotentThroughDenormalize) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    Frame once = preprocess(noise_image(120 + 20 * trial, 200, trial % 2 ? 1 : 3, rng), 64);
    Frame twice = preprocess(denormalize(once), 64);
    for (std::size_t i = 0; i < once.tensor().size(); ++i) {
      EXPECT_LE(std::abs(once.tensor()[i] - twice.tensor()[i]), 1.0 / 127.5);
    }
  }
}

TEST(MakeWindows, Counts) {
  EXPECT_EQ(make_windows(numbered_frames(200)).size(), 196u);
  EXPECT_EQ(make_windows(numbered_frames(5)).size(), 1u);
  EXPECT_TRUE(make_windows(numbered_frames(4)).empty());
  EXPECT_EQ(make_windows(numbered_frames(20), 5, 3).size(), 6u);  // floor(15/3)+1
  EXPECT_THROW(make_windows(numbered_frames(5), 1), ArgumentError);
  EXPECT_THROW(make_windows(numbered_frames(5), 5, 0), ArgumentError);
}

TEST(MakeWindows, ConsecutiveInputsThenTarget) {
  auto frames = numbered_frames(12);
  auto windows = make_windows(frames, 5, 2, "c");
  for (const FrameWindow& w : windows) {
    ASSERT_EQ(w.inputs.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(w.inputs[k]->at(0, 0, 0), static_cast<double>(w.start_index + k));
    EXPECT_EQ(w.target->at(0, 0, 0), static_cast<double>(w.start_index + 4));
    EXPECT_EQ(w.clip_id, "c");
  }
}

TEST(MakePatches, GridAndReconstruction) {
  std::mt19937_64 rng(3);
  Frame f = preprocess(noise_image(160, 160, 3, rng));
  PatchGrid g = make_patches(f);
  EXPECT_EQ(g.patches.size(), 64u);
  EXPECT_EQ(g.rows, 8u);
  EXPECT_EQ(g.assemble().tensor(), f.tensor());
  Frame small = preprocess(noise_image(20, 20, 3, rng), 20);
  PatchGrid one = make_patches(small);
  ASSERT_EQ(one.patches.size(), 1u);
  EXPECT_EQ(one.patches[0].tensor(), small.tensor());
  EXPECT_THROW(make_patches(Frame(3, 150, 160)), ArgumentError);
}

TEST(Standardization, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(4);
  std::vector<FramePtr> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(std::make_shared<const Frame>(preprocess(noise_image(8, 8, 3, rng), 8)));
  Standardization s = fit_standardization(frames);
  double sum = 0, sq = 0, n = 0;
  for (const FramePtr& f : frames) {
    Frame z = standardize(*f, s);
    for (double v : z.tensor().values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-12);
  EXPECT_NEAR(sq / n, 1.0, 1e-12);
}

TEST(LoaderConfig, Validation) {
  LoaderConfig c;
  EXPECT_NO_THROW(c.validate());
  c.worker_count = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LoaderConfig{};
  c.buffer_capacity = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(WindowLoader, IdenticalStreamForEveryConfig) {
  TempDir root("loader");
  DatasetManifest m = small_corpus(root.path());
  LoaderConfig base;
  base.frame_size = 32;
  WindowLoader reference(m.clips, base);
  const auto expected = drain(reference);
  // 3 train clips of 12 and 2 test clips of 15 -> 3*8 + 2*11
  EXPECT_EQ(expected.size(), 46u);
  for (int mask = 1; mask < 8; ++mask) {
    for (std::size_t workers : {1u, 3u}) {
      LoaderConfig c = base;
      c.caching = mask & 1;
      c.prefetching = mask & 2;
      c.parallelizing = mask & 4;
      c.worker_count = workers;
      c.buffer_capacity = 7;
      WindowLoader loader(m.clips, c);
      EXPECT_EQ(loader.window_count(), expected.size());
      const auto got = drain(loader);
      expect_same_windows(got, expected);
      for (const FrameWindow& w : got) EXPECT_TRUE(w.target->valid());
    }
  }
}

TEST(WindowLoader, CacheAvoidsRedundantDecodes) {
  TempDir root("cache");
  DatasetManifest m = small_corpus(root.path());
  LoaderConfig c;
  c.frame_size = 32;
  WindowLoader plain(m.clips, c);
  drain(plain);
  c.caching = true;
  WindowLoader cached(m.clips, c);
  drain(cached);
  EXPECT_EQ(plain.stats().frames_decoded, 46u * 5u);
  EXPECT_EQ(cached.stats().frames_decoded, 3u * 12u + 2u * 15u);  // each frame once
  EXPECT_GT(cached.stats().cache_hits, 0u);
}

TEST(WindowLoader, StrideAndShortClips) {
  TempDir root("stride");
  DatasetManifest m = small_corpus(root.path());
  LoaderConfig c;
  c.frame_size = 32;
  c.stride = 4;
  c.window_total = 13;
  c.buffer_capacity = 13;
  WindowLoader loader(m.clips, c);
  // train clips (12 frames) are too short; test clips give floor(2/4)+1
  EXPECT_EQ(loader.window_count(), 2u);
}

TEST(WindowLoader, DecodeErrorsSurfaceInOrder) {
  TempDir root("broken");
  DatasetManifest m = small_corpus(root.path());
  std::ofstream(m.clips[1].path / "000003.png") << "garbage";
  for (bool prefetch : {false, true}) {
    LoaderConfig c;
    c.frame_size = 32;
    c.prefetching = prefetch;
    c.parallelizing = prefetch;
    c.worker_count = 2;
    WindowLoader loader(m.clips, c);
    std::size_t ok = 0;
    EXPECT_THROW(
        {
          while (loader.next()) ++ok;
        },
        DecodeError);
    EXPECT_EQ(ok, 8u);  // all of clip 0, then the first window of clip 1 fails
  }
}

TEST(ThroughputBenchmark, ErrorsAndPositiveRate) {
  TempDir root("bench");
  DatasetManifest m = small_corpus(root.path());
  LoaderConfig c;
  c.frame_size = 32;
  EXPECT_THROW(throughput_benchmark(m, c, 0.0), ArgumentError);
  EXPECT_THROW(throughput_benchmark(DatasetManifest{}, c, 0.1), ConfigError);
  EXPECT_GT(throughput_benchmark(m, c, 0.2), 0.0);
}

TEST(ThroughputBenchmark, CsvLayout) {
  TempDir root("csv");
  write_benchmark_csv({{false, false, false, 8.5}, {true, true, true, 15.4}}, root / "bench.csv");
  std::ifstream is(root / "bench.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "caching,prefetching,parallelizing,fps");
  std::getline(is, line);
  EXPECT_EQ(line, "0,0,0,8.5");
}
