#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stemgan/data_io.hpp"

namespace stemgan {

enum class SynthShape { Square, Circle };

SynthShape parse_synth_shape(const std::string& s);
std::string to_string(SynthShape s);

// Desk-scale moving-object footage: one white object on black moving at a
// constant velocity. Each test clip carries one anomaly interval, alternating
// between a sudden speed-up and a second, erratically moving object.
struct SynthConfig {
  std::size_t frame_size = 64;
  std::size_t object_size = 8;
  SynthShape shape = SynthShape::Square;
  int speed_x = 2;  // pixels per frame
  int speed_y = 1;
  std::size_t train_clips = 5;
  std::size_t train_clip_length = 100;
  std::size_t test_clips = 2;
  std::size_t test_clip_length = 100;
  std::size_t anomaly_start = 40;
  std::size_t anomaly_length = 30;
  int speed_factor = 3;
  // When false, start positions are chosen so the object never reaches a wall.
  bool bounce = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthClip {
  std::string clip_id;
  Split split = Split::Train;
  std::vector<RawImage> frames;  // single channel
  std::vector<std::uint8_t> labels;
};

std::vector<SynthClip> synthesize(const SynthConfig& config);

// Writes <root>/train/<clip>/NNNNNN.png, <root>/test/<clip>/..., and
// <root>/labels/<clip>.txt (the "synthetic" dataset layout). Returns the
// manifest of what was written.
DatasetManifest write_synthetic(const SynthConfig& config, const std::filesystem::path& root);

}  // namespace stemgan
