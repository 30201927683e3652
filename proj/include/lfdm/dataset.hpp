#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfdm/nn.hpp"
#include "lfdm/tensor.hpp"

namespace lfdm::data {

enum class MotionKind { kTranslate, kGrow, kShrink, kRotate };

struct MotionSpec {
  std::string name;
  MotionKind kind;
  // Translate: pixels per frame. Rotate: vx holds radians per frame (signed).
  // Grow/shrink: vx holds scale factor per frame.
  float vx = 0.0f;
  float vy = 0.0f;
};

// The default 8-class motion family.
std::vector<MotionSpec> default_motions();

struct ToyDatasetSpec {
  int frame_size = 64;   // H_x = W_x; must be divisible by 4
  int clip_length = 17;  // K + 1 frames
  int num_classes = 8;
  std::vector<MotionSpec> class_motions = default_motions();
  int num_subjects = 4;
  int clips_per_subject_class = 1;
  uint64_t rng_seed = 0;

  void validate() const;
};

struct VideoClip {
  std::vector<Tensor> frames;  // each [3,H,W], values in [0,1]
  int label = 0;
  std::string label_name;
  int subject_id = 0;
};

struct ClipRecord {
  int subject_id = 0;
  int label = 0;
  std::string label_name;
  std::string path;  // clip directory relative to manifest root
  int frame_count = 0;
};

struct DatasetManifest {
  std::string root;
  uint64_t spec_hash = 0;
  int format_version = 1;
  int frame_size = 0;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<ClipRecord> train;
  std::vector<ClipRecord> test;

  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

// Renders the corpus to out/<subject_s>/class_<c>/clip_<n>/frame_%04d.png and
// writes out/manifest.json. Deterministic for a fixed spec.
DatasetManifest generate_toy_dataset(const ToyDatasetSpec& spec,
                                     const std::string& out);

VideoClip load_clip(const DatasetManifest& m, const ClipRecord& rec);

// Pure renderers, exposed for oracle tests.
Tensor render_frame(const ToyDatasetSpec& spec, int subject, int label,
                    int clip_index, int frame_index);
Tensor render_background(const ToyDatasetSpec& spec, int subject);

// Ground-truth backward pixel flow between x_0 and x_i for translation
// classes (constant -i*v inside the sprite support); nullopt for classes
// without a constant analytic flow.
std::optional<std::pair<float, float>> analytic_translation_flow(
    const ToyDatasetSpec& spec, int label, int frame_index);

// Two distinct frames from the same clip, uniform over index pairs.
std::pair<int, int> sample_frame_pair_indices(int num_frames, Rng& rng);
inline std::pair<const Tensor&, const Tensor&> sample_frame_pair(
    const VideoClip& clip, Rng& rng) {
  auto [i, j] = sample_frame_pair_indices(static_cast<int>(clip.frames.size()), rng);
  return {clip.frames[static_cast<size_t>(i)], clip.frames[static_cast<size_t>(j)]};
}

// x_0 plus K frames sampled over the whole clip and sorted by original
// index; with replacement when the source is shorter than K+1.
std::vector<int> sample_training_clip_indices(int num_frames, int k, Rng& rng);
VideoClip sample_training_clip(const VideoClip& clip, int k, Rng& rng);

uint64_t spec_hash(const ToyDatasetSpec& spec);

}  // namespace lfdm::data
