#include "lfdm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lfdm/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lfdm::data {

std::vector<MotionSpec> default_motions() {
  return {
      {"translate-right", MotionKind::kTranslate, 2.0f, 0.0f},
      {"translate-left", MotionKind::kTranslate, -2.0f, 0.0f},
      {"translate-down", MotionKind::kTranslate, 0.0f, 2.0f},
      {"translate-up", MotionKind::kTranslate, 0.0f, -2.0f},
      {"grow", MotionKind::kGrow, 1.05f, 0.0f},
      {"shrink", MotionKind::kShrink, 0.95f, 0.0f},
      {"rotate-cw", MotionKind::kRotate, 0.20f, 0.0f},
      {"rotate-ccw", MotionKind::kRotate, -0.20f, 0.0f},
  };
}

void ToyDatasetSpec::validate() const {
  check(frame_size > 0 && frame_size % 4 == 0,
        "frame_size must be positive and divisible by 4");
  check(clip_length >= 2, "clip_length must be >= 2");
  check(num_classes >= 1 &&
            num_classes <= static_cast<int>(class_motions.size()),
        "num_classes must be in [1, number of configured motions]");
  check(num_subjects >= 1, "num_subjects must be >= 1");
  check(clips_per_subject_class >= 1, "clips_per_subject_class must be >= 1");
}

namespace {

struct Rgb {
  float r, g, b;
};

// Small deterministic palette keyed by an arbitrary integer.
Rgb palette(uint64_t key) {
  const uint64_t h = Rng::mix(key, 0x517cc1b727220a95ULL);
  auto chan = [&](int i) {
    return 0.15f + 0.7f * static_cast<float>((h >> (i * 8)) & 0xff) / 255.0f;
  };
  return {chan(0), chan(1), chan(2)};
}

struct SpriteState {
  float cx, cy;     // center in pixels
  float scale;      // multiplies base radius
  float angle;      // radians
  float radius;     // base radius in pixels
  int shape;        // 0 circle, 1 square, 2 triangle, 3 diamond
};

SpriteState sprite_state(const ToyDatasetSpec& spec, int subject, int label,
                         int clip_index, int frame_index) {
  const MotionSpec& mo = spec.class_motions[static_cast<size_t>(label)];
  const float size = static_cast<float>(spec.frame_size);
  const float r0 = size * 0.16f;
  const int last = spec.clip_length - 1;

  float dx_total = 0.0f, dy_total = 0.0f, max_scale = 1.0f;
  if (mo.kind == MotionKind::kTranslate) {
    dx_total = mo.vx * static_cast<float>(last);
    dy_total = mo.vy * static_cast<float>(last);
  } else if (mo.kind == MotionKind::kGrow) {
    max_scale = std::pow(mo.vx, static_cast<float>(last));
  }
  const float margin = r0 * max_scale * 1.35f;

  // Start position chosen so the sprite stays inside the frame for the whole
  // clip; jittered per clip for corpus diversity.
  auto range = [&](float d) {
    float lo = margin - std::min(0.0f, d);
    float hi = size - margin - std::max(0.0f, d);
    if (hi < lo) lo = hi = 0.5f * (lo + hi);
    return std::pair<float, float>{lo, hi};
  };
  auto [lox, hix] = range(dx_total);
  auto [loy, hiy] = range(dy_total);
  Rng clip_rng(Rng::mix(Rng::mix(Rng::mix(spec.rng_seed, static_cast<uint64_t>(subject)),
                                 static_cast<uint64_t>(label)),
                        static_cast<uint64_t>(clip_index)));
  const float jx = clip_rng.uniform();
  const float jy = clip_rng.uniform();

  SpriteState st;
  st.radius = r0;
  st.shape = subject % 4;
  st.cx = lox + jx * (hix - lox);
  st.cy = loy + jy * (hiy - loy);
  st.scale = 1.0f;
  st.angle = 0.0f;
  const float i = static_cast<float>(frame_index);
  switch (mo.kind) {
    case MotionKind::kTranslate:
      st.cx += mo.vx * i;
      st.cy += mo.vy * i;
      break;
    case MotionKind::kGrow:
    case MotionKind::kShrink:
      st.scale = std::pow(mo.vx, i);
      break;
    case MotionKind::kRotate:
      st.angle = mo.vx * i;
      break;
  }
  return st;
}

bool inside_shape(int shape, float ux, float uy) {
  switch (shape) {
    case 0:
      return ux * ux + uy * uy <= 1.0f;
    case 1:
      return std::max(std::abs(ux), std::abs(uy)) <= 0.85f;
    case 2:  // triangle with apex up
      return uy >= -0.95f && uy <= 0.85f &&
             std::abs(ux) <= 0.55f * (uy + 0.95f);
    default:  // diamond
      return std::abs(ux) + std::abs(uy) <= 1.0f;
  }
}

Rgb bg_color(const ToyDatasetSpec& spec, int subject, float x, float y) {
  const Rgb a = palette(Rng::mix(static_cast<uint64_t>(subject), 11));
  const Rgb b = palette(Rng::mix(static_cast<uint64_t>(subject), 23));
  const float t = (x + y) / (2.0f * static_cast<float>(spec.frame_size));
  return {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b)};
}

}  // namespace

Tensor render_background(const ToyDatasetSpec& spec, int subject) {
  const int s = spec.frame_size;
  Tensor frame({3, s, s});
  const int64_t plane = static_cast<int64_t>(s) * s;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const Rgb c = bg_color(spec, subject, static_cast<float>(x) + 0.5f,
                             static_cast<float>(y) + 0.5f);
      frame[0 * plane + y * s + x] = c.r;
      frame[1 * plane + y * s + x] = c.g;
      frame[2 * plane + y * s + x] = c.b;
    }
  return frame;
}

Tensor render_frame(const ToyDatasetSpec& spec, int subject, int label,
                    int clip_index, int frame_index) {
  spec.validate();
  check(label >= 0 && label < spec.num_classes, "label out of range");
  const SpriteState st = sprite_state(spec, subject, label, clip_index,
                                      frame_index);
  const Rgb ca = palette(Rng::mix(static_cast<uint64_t>(subject), 37));
  const Rgb cb = palette(Rng::mix(static_cast<uint64_t>(subject), 53));
  const int s = spec.frame_size;
  Tensor frame({3, s, s});
  const int64_t plane = static_cast<int64_t>(s) * s;
  const float cosa = std::cos(st.angle), sina = std::sin(st.angle);
  const float inv_r = 1.0f / (st.radius * st.scale);
  // 2x2 supersampling for stable sub-pixel motion.
  static const float offs[2] = {0.25f, 0.75f};
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      float r = 0.0f, g = 0.0f, b = 0.0f;
      for (float oy : offs) {
        for (float ox : offs) {
          const float px = static_cast<float>(x) + ox;
          const float py = static_cast<float>(y) + oy;
          const float dx = px - st.cx;
          const float dy = py - st.cy;
          const float ux = (cosa * dx + sina * dy) * inv_r;
          const float uy = (-sina * dx + cosa * dy) * inv_r;
          Rgb c;
          if (inside_shape(st.shape, ux, uy)) {
            const int stripe = static_cast<int>(
                std::floor((ux + uy) * 2.5f + 64.0f)) & 1;
            c = stripe ? ca : cb;
          } else {
            c = bg_color(spec, subject, px, py);
          }
          r += c.r;
          g += c.g;
          b += c.b;
        }
      }
      frame[0 * plane + y * s + x] = r * 0.25f;
      frame[1 * plane + y * s + x] = g * 0.25f;
      frame[2 * plane + y * s + x] = b * 0.25f;
    }
  }
  return frame;
}

std::optional<std::pair<float, float>> analytic_translation_flow(
    const ToyDatasetSpec& spec, int label, int frame_index) {
  const MotionSpec& mo = spec.class_motions[static_cast<size_t>(label)];
  if (mo.kind != MotionKind::kTranslate) return std::nullopt;
  const float i = static_cast<float>(frame_index);
  return std::make_pair(-mo.vx * i, -mo.vy * i);
}

uint64_t spec_hash(const ToyDatasetSpec& spec) {
  std::string s = std::to_string(spec.frame_size) + "|" +
                  std::to_string(spec.clip_length) + "|" +
                  std::to_string(spec.num_classes) + "|" +
                  std::to_string(spec.num_subjects) + "|" +
                  std::to_string(spec.clips_per_subject_class) + "|" +
                  std::to_string(spec.rng_seed);
  for (const auto& m : spec.class_motions)
    s += "|" + m.name + "," + std::to_string(static_cast<int>(m.kind)) + "," +
         std::to_string(m.vx) + "," + std::to_string(m.vy);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void DatasetManifest::save(const std::string& path) const {
  json j;
  j["format_version"] = format_version;
  j["spec_hash"] = spec_hash;
  j["frame_size"] = frame_size;
  j["num_classes"] = num_classes;
  j["class_names"] = class_names;
  auto dump = [](const std::vector<ClipRecord>& recs) {
    json arr = json::array();
    for (const auto& r : recs)
      arr.push_back({{"subject_id", r.subject_id},
                     {"label", r.label},
                     {"label_name", r.label_name},
                     {"path", r.path},
                     {"frame_count", r.frame_count}});
    return arr;
  };
  j["train"] = dump(train);
  j["test"] = dump(test);
  std::ofstream f(path);
  check(f.good(), "cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open manifest: " + path);
  json j;
  f >> j;
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  m.format_version = j.at("format_version").get<int>();
  check(m.format_version == 1, "unsupported manifest format_version");
  m.spec_hash = j.at("spec_hash").get<uint64_t>();
  m.frame_size = j.at("frame_size").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  auto parse = [](const json& arr) {
    std::vector<ClipRecord> recs;
    for (const auto& e : arr) {
      ClipRecord r;
      r.subject_id = e.at("subject_id").get<int>();
      r.label = e.at("label").get<int>();
      r.label_name = e.at("label_name").get<std::string>();
      r.path = e.at("path").get<std::string>();
      r.frame_count = e.at("frame_count").get<int>();
      recs.push_back(std::move(r));
    }
    return recs;
  };
  m.train = parse(j.at("train"));
  m.test = parse(j.at("test"));
  return m;
}

DatasetManifest generate_toy_dataset(const ToyDatasetSpec& spec,
                                     const std::string& out) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out, ec);
  check(!ec && fs::is_directory(out), "output directory not writable: " + out);

  DatasetManifest m;
  m.root = out;
  m.spec_hash = spec_hash(spec);
  m.frame_size = spec.frame_size;
  m.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c)
    m.class_names.push_back(spec.class_motions[static_cast<size_t>(c)].name);

  // Subjects are split disjointly; the tail quarter (at least one subject
  // when there are two or more) is held out for testing.
  const int num_test =
      spec.num_subjects >= 2 ? std::max(1, spec.num_subjects / 4) : 0;
  const int first_test = spec.num_subjects - num_test;

  for (int sub = 0; sub < spec.num_subjects; ++sub) {
    for (int cls = 0; cls < spec.num_classes; ++cls) {
      for (int clip = 0; clip < spec.clips_per_subject_class; ++clip) {
        const std::string rel = "subject_" + std::to_string(sub) + "/class_" +
                                std::to_string(cls) + "/clip_" +
                                std::to_string(clip);
        fs::create_directories(fs::path(out) / rel);
        for (int i = 0; i < spec.clip_length; ++i) {
          char name[32];
          std::snprintf(name, sizeof(name), "frame_%04d.png", i);
          write_png_rgb((fs::path(out) / rel / name).string(),
                        render_frame(spec, sub, cls, clip, i));
        }
        ClipRecord rec;
        rec.subject_id = sub;
        rec.label = cls;
        rec.label_name = m.class_names[static_cast<size_t>(cls)];
        rec.path = rel;
        rec.frame_count = spec.clip_length;
        (sub >= first_test ? m.test : m.train).push_back(std::move(rec));
      }
    }
  }
  m.save((fs::path(out) / "manifest.json").string());
  return m;
}

VideoClip load_clip(const DatasetManifest& m, const ClipRecord& rec) {
  VideoClip clip;
  clip.label = rec.label;
  clip.label_name = rec.label_name;
  clip.subject_id = rec.subject_id;
  for (int i = 0; i < rec.frame_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.png", i);
    clip.frames.push_back(
        read_png_rgb((fs::path(m.root) / rec.path / name).string()));
  }
  return clip;
}

std::pair<int, int> sample_frame_pair_indices(int num_frames, Rng& rng) {
  check(num_frames >= 2, "clip too short to sample a frame pair");
  const int i = rng.uniform_int(0, num_frames - 1);
  int j = rng.uniform_int(0, num_frames - 2);
  if (j >= i) ++j;
  return {i, j};
}

std::vector<int> sample_training_clip_indices(int num_frames, int k,
                                              Rng& rng) {
  check(num_frames >= 1, "empty clip");
  check(k >= 1, "K must be >= 1");
  std::vector<int> idx;
  if (num_frames >= k + 1) {
    // Without replacement: partial Fisher-Yates over [0, num_frames).
    std::vector<int> pool(static_cast<size_t>(num_frames));
    for (int i = 0; i < num_frames; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      const int j = rng.uniform_int(i, num_frames - 1);
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      idx.push_back(pool[static_cast<size_t>(i)]);
    }
  } else {
    for (int i = 0; i < k; ++i) idx.push_back(rng.uniform_int(0, num_frames - 1));
  }
  std::sort(idx.begin(), idx.end());
  idx.insert(idx.begin(), 0);  // x_0 always leads
  return idx;
}

VideoClip sample_training_clip(const VideoClip& clip, int k, Rng& rng) {
  const auto idx =
      sample_training_clip_indices(static_cast<int>(clip.frames.size()), k, rng);
  VideoClip out;
  out.label = clip.label;
  out.label_name = clip.label_name;
  out.subject_id = clip.subject_id;
  for (int i : idx) out.frames.push_back(clip.frames[static_cast<size_t>(i)]);
  return out;
}

}  // namespace lfdm::data
