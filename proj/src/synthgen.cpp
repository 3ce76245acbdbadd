#include "aptrack/synthgen.hpp"

#include "aptrack/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace aptrack {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Track {
  std::vector<double> cx, cy;
};

// Trajectory of a (w x h) object under the spec's motion model. Walks are
// clamped to the margin; linear/sine trajectories may violate it, which
// validation reports.
Track trajectory(const SceneSpec& spec, double w, double h, Rng& rng, double phase) {
  Track t;
  t.cx.resize(spec.frames);
  t.cy.resize(spec.frames);
  const double margin_x = w / 2.0 + 2.0;
  const double margin_y = h / 2.0 + 2.0;
  const double lo_x = margin_x, hi_x = spec.canvas - margin_x;
  const double lo_y = margin_y, hi_y = spec.canvas - margin_y;
  const double mid_x = spec.canvas / 2.0, mid_y = spec.canvas / 2.0;

  switch (spec.motion) {
    case MotionModel::kLinear: {
      double x = rng.uniform(lo_x, hi_x);
      double y = rng.uniform(lo_y, hi_y);
      double angle = rng.uniform(0.0, 2.0 * kPi);
      double vx = spec.motion_speed * std::cos(angle);
      double vy = spec.motion_speed * std::sin(angle);
      for (std::size_t f = 0; f < spec.frames; ++f) {
        t.cx[f] = x;
        t.cy[f] = y;
        x += vx;
        y += vy;
        // reflect off the margins so long sequences remain valid
        if (x < lo_x || x > hi_x) {
          vx = -vx;
          x = std::clamp(x, lo_x, hi_x);
        }
        if (y < lo_y || y > hi_y) {
          vy = -vy;
          y = std::clamp(y, lo_y, hi_y);
        }
      }
      break;
    }
    case MotionModel::kSine: {
      // raw amplitude; validation rejects trajectories that escape
      const double ax = spec.motion_amplitude;
      const double ay = spec.motion_amplitude;
      const double w0 = 2.0 * kPi / spec.motion_period;
      const double p2 = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t f = 0; f < spec.frames; ++f) {
        t.cx[f] = mid_x + ax * std::sin(w0 * f + phase);
        t.cy[f] = mid_y + ay * std::sin(0.6 * w0 * f + p2);
      }
      break;
    }
    case MotionModel::kWalk: {
      double x = rng.uniform(lo_x, hi_x);
      double y = rng.uniform(lo_y, hi_y);
      for (std::size_t f = 0; f < spec.frames; ++f) {
        t.cx[f] = x;
        t.cy[f] = y;
        x = std::clamp(x + rng.uniform(-spec.motion_speed, spec.motion_speed), lo_x, hi_x);
        y = std::clamp(y + rng.uniform(-spec.motion_speed, spec.motion_speed), lo_y, hi_y);
      }
      break;
    }
  }
  return t;
}

void fill_shape(std::vector<double>& lum, std::size_t canvas, TargetShape shape, double cx,
                double cy, double w, double h, double intensity) {
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - w / 2.0)));
  const long x1 = std::min<long>(canvas - 1, static_cast<long>(std::ceil(cx + w / 2.0)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - h / 2.0)));
  const long y1 = std::min<long>(canvas - 1, static_cast<long>(std::ceil(cy + h / 2.0)));
  const double rx = w / 2.0, ry = h / 2.0;
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      bool inside = false;
      if (shape == TargetShape::kBox) {
        inside = std::fabs(dx) <= rx && std::fabs(dy) <= ry;
      } else {
        inside = (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) <= 1.0;
      }
      if (inside) lum[static_cast<std::size_t>(y) * canvas + static_cast<std::size_t>(x)] =
          intensity;
    }
  }
}

Image luminance_to_image(const std::vector<double>& lum, std::size_t canvas, bool invert) {
  Image img(canvas, canvas);
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const double v = std::clamp(invert ? 1.0 - lum[i] : lum[i], 0.0, 1.0);
    img.px[3 * i] = v;
    img.px[3 * i + 1] = v;
    img.px[3 * i + 2] = v;
  }
  return img;
}

void apply_event_frame(Image& img, const DegradeEvent& event, std::uint64_t noise_seed,
                       const BBox& gt) {
  switch (event.mode) {
    case DegradeMode::kBlackout:
      std::fill(img.px.begin(), img.px.end(), 0.0);
      break;
    case DegradeMode::kNoise: {
      if (event.noise_sigma == 0.0) return;
      Rng rng(noise_seed);
      for (double& v : img.px)
        v = std::clamp(v + rng.normal(0.0, event.noise_sigma), 0.0, 1.0);
      break;
    }
    case DegradeMode::kBlur: {
      const std::size_t k = event.blur_kernel;
      if (k % 2 == 0 || k == 0)
        throw std::runtime_error("synthgen: blur kernel must be odd, got " + std::to_string(k));
      const long r = static_cast<long>(k / 2);
      Image out(img.h, img.w);
      const double inv = 1.0 / static_cast<double>(k * k);
      for (long y = 0; y < static_cast<long>(img.h); ++y) {
        for (long x = 0; x < static_cast<long>(img.w); ++x) {
          double acc[3] = {0.0, 0.0, 0.0};
          for (long dy = -r; dy <= r; ++dy) {
            for (long dx = -r; dx <= r; ++dx) {
              const long sy = y + dy, sx = x + dx;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(img.h) ||
                  sx >= static_cast<long>(img.w))
                continue;  // zero padding
              for (std::size_t c = 0; c < 3; ++c)
                acc[c] += img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
            }
          }
          for (std::size_t c = 0; c < 3; ++c)
            out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc[c] * inv;
        }
      }
      img = std::move(out);
      break;
    }
    case DegradeMode::kOccluder: {
      const double ow = event.occluder_fraction * gt.w;
      const double oh = event.occluder_fraction * gt.h;
      const long x0 = std::max(0L, static_cast<long>(std::floor(gt.x - ow / 2.0)));
      const long x1 = std::min<long>(img.w - 1, static_cast<long>(std::ceil(gt.x + ow / 2.0)));
      const long y0 = std::max(0L, static_cast<long>(std::floor(gt.y - oh / 2.0)));
      const long y1 = std::min<long>(img.h - 1, static_cast<long>(std::ceil(gt.y + oh / 2.0)));
      for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = 0.5;
      break;
    }
  }
}

}  // namespace

void SceneSpec::validate() const {
  if (frames == 0) throw std::runtime_error("synthgen: frames must be positive");
  if (canvas < 16) throw std::runtime_error("synthgen: canvas too small");
  if (target_w < 2.0 || target_h < 2.0)
    throw std::runtime_error("synthgen: target extents must be at least 2px");
  if (target_w + 4.0 > canvas || target_h + 4.0 > canvas)
    throw std::runtime_error("synthgen: target cannot keep a 2px margin inside the canvas");
  for (const auto& e : events) {
    if (e.first_frame > e.last_frame || e.last_frame >= frames)
      throw std::runtime_error("synthgen: event interval [" + std::to_string(e.first_frame) +
                               "," + std::to_string(e.last_frame) + "] outside sequence");
    if (e.mode == DegradeMode::kBlur && (e.blur_kernel == 0 || e.blur_kernel % 2 == 0))
      throw std::runtime_error("synthgen: blur kernel must be odd");
  }
}

SequenceDataset generate_sequence(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng motion_rng(mix_seed(seed, 0x5CE0));
  Track target = trajectory(spec, spec.target_w, spec.target_h, motion_rng, 0.0);

  // motion models other than the clamped walk can escape; reject at
  // validation time as a spec error
  const double mx = spec.target_w / 2.0 + 2.0;
  const double my = spec.target_h / 2.0 + 2.0;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    if (target.cx[f] < mx || target.cx[f] > spec.canvas - mx || target.cy[f] < my ||
        target.cy[f] > spec.canvas - my)
      throw std::runtime_error("synthgen: target leaves the canvas at frame " +
                               std::to_string(f));
  }

  std::vector<Track> distractors;
  std::vector<std::pair<double, double>> distractor_sizes;
  for (std::size_t i = 0; i < spec.distractors; ++i) {
    const double dw = spec.target_w * motion_rng.uniform(0.7, 1.3);
    const double dh = spec.target_h * motion_rng.uniform(0.7, 1.3);
    distractors.push_back(trajectory(spec, dw, dh, motion_rng, motion_rng.uniform(0.0, kPi)));
    distractor_sizes.emplace_back(dw, dh);
  }

  // static background texture
  Rng tex_rng(mix_seed(spec.texture_seed, 0x7E47));
  std::vector<double> background(spec.canvas * spec.canvas);
  for (double& v : background)
    v = spec.rgb_background + spec.texture_amplitude * (2.0 * tex_rng.uniform() - 1.0);

  Rng jitter_rng(mix_seed(seed, 0x11A9));
  SequenceDataset ds;
  ds.frames.resize(spec.frames);
  ds.gt.resize(spec.frames);
  ds.visibility.assign(spec.frames, 1);
  if (spec.alignment_jitter > 0.0) ds.gt_x = std::vector<BBox>(spec.frames);

  for (std::size_t f = 0; f < spec.frames; ++f) {
    std::vector<double> lum = background;
    for (std::size_t i = 0; i < distractors.size(); ++i)
      fill_shape(lum, spec.canvas, spec.target_shape, distractors[i].cx[f],
                 distractors[i].cy[f], distractor_sizes[i].first, distractor_sizes[i].second,
                 spec.distractor_intensity);
    fill_shape(lum, spec.canvas, spec.target_shape, target.cx[f], target.cy[f], spec.target_w,
               spec.target_h, spec.rgb_target_intensity);

    FramePair fp;
    fp.frame_index = static_cast<int>(f);
    fp.rgb = luminance_to_image(lum, spec.canvas, false);
    fp.x = luminance_to_image(lum, spec.canvas, true);
    quantize_u8(fp.rgb);
    quantize_u8(fp.x);
    ds.frames[f] = std::move(fp);

    BBox gt{target.cx[f], target.cy[f], spec.target_w, spec.target_h, std::nullopt};
    ds.gt[f] = gt;
    if (ds.gt_x) {
      BBox gx = gt;
      gx.x += jitter_rng.uniform(-spec.alignment_jitter, spec.alignment_jitter);
      gx.y += jitter_rng.uniform(-spec.alignment_jitter, spec.alignment_jitter);
      (*ds.gt_x)[f] = gx;
    }
  }

  SequenceDataset out = std::move(ds);
  for (const auto& event : spec.events) out = degrade(out, event);
  return out;
}

SequenceDataset degrade(const SequenceDataset& ds, const DegradeEvent& event) {
  if (event.first_frame > event.last_frame || event.last_frame >= ds.size())
    throw std::runtime_error("synthgen: degrade interval outside dataset");
  SequenceDataset out = ds;
  for (std::size_t f = event.first_frame; f <= event.last_frame; ++f) {
    Image& img = event.modality == Modality::kRgb ? out.frames[f].rgb : out.frames[f].x;
    const std::uint64_t noise_seed =
        mix_seed(static_cast<std::uint64_t>(event.noise_sigma * 1e6) + event.first_frame, f);
    apply_event_frame(img, event, noise_seed, out.gt[f]);
    quantize_u8(img);
  }
  return out;
}

// ---------------------------------------------------------------------------
// on-disk format

std::string to_string(DegradeMode m) {
  switch (m) {
    case DegradeMode::kBlackout: return "blackout";
    case DegradeMode::kNoise: return "noise";
    case DegradeMode::kBlur: return "blur";
    case DegradeMode::kOccluder: return "occluder";
  }
  return "blackout";
}

std::string to_string(Modality m) { return m == Modality::kRgb ? "rgb" : "x"; }

namespace {

DegradeMode degrade_mode_from_string(const std::string& s) {
  if (s == "blackout") return DegradeMode::kBlackout;
  if (s == "noise") return DegradeMode::kNoise;
  if (s == "blur") return DegradeMode::kBlur;
  if (s == "occluder") return DegradeMode::kOccluder;
  throw std::runtime_error("synthgen: unknown degrade mode '" + s + "'");
}

Modality modality_from_string(const std::string& s) {
  if (s == "rgb") return Modality::kRgb;
  if (s == "x") return Modality::kX;
  throw std::runtime_error("synthgen: unknown modality '" + s + "'");
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.ppm", i);
  return buf;
}

void write_boxes(const std::string& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("synthgen: cannot open '" + path + "'");
  char line[128];
  for (const BBox& b : boxes) {
    std::snprintf(line, sizeof(line), "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
    out << line;
  }
}

std::vector<BBox> read_boxes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("synthgen: cannot open '" + path + "'");
  std::vector<BBox> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    BBox b;
    char comma;
    std::istringstream ls(line);
    if (!(ls >> b.x >> comma >> b.y >> comma >> b.w >> comma >> b.h))
      throw std::runtime_error("synthgen: malformed box line '" + line + "' in " + path);
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace

void save_dataset(const SequenceDataset& ds, const std::string& dir, const SceneSpec* spec) {
  fs::create_directories(fs::path(dir) / "rgb");
  fs::create_directories(fs::path(dir) / "x");
  for (std::size_t f = 0; f < ds.size(); ++f) {
    save_ppm((fs::path(dir) / "rgb" / frame_name(f)).string(), ds.frames[f].rgb);
    save_ppm((fs::path(dir) / "x" / frame_name(f)).string(), ds.frames[f].x);
  }
  write_boxes((fs::path(dir) / "groundtruth.txt").string(), ds.gt);
  if (ds.gt_x) write_boxes((fs::path(dir) / "groundtruth_x.txt").string(), *ds.gt_x);
  std::ofstream vis((fs::path(dir) / "visibility.txt").string());
  for (int v : ds.visibility) vis << v << "\n";
  if (spec) save_scene_spec(*spec, (fs::path(dir) / "spec.txt").string());
}

SequenceDataset load_dataset(const std::string& dir) {
  SequenceDataset ds;
  ds.gt = read_boxes((fs::path(dir) / "groundtruth.txt").string());
  const std::size_t n = ds.gt.size();
  ds.frames.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    ds.frames[f].rgb = load_ppm((fs::path(dir) / "rgb" / frame_name(f)).string());
    ds.frames[f].x = load_ppm((fs::path(dir) / "x" / frame_name(f)).string());
    ds.frames[f].frame_index = static_cast<int>(f);
  }
  if (fs::exists(fs::path(dir) / "groundtruth_x.txt"))
    ds.gt_x = read_boxes((fs::path(dir) / "groundtruth_x.txt").string());
  ds.visibility.assign(n, 1);
  std::ifstream vis((fs::path(dir) / "visibility.txt").string());
  if (vis) {
    ds.visibility.clear();
    int v;
    while (vis >> v) ds.visibility.push_back(v);
    if (ds.visibility.size() != n)
      throw std::runtime_error("synthgen: visibility length mismatch in '" + dir + "'");
  }
  return ds;
}

void save_scene_spec(const SceneSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("synthgen: cannot open '" + path + "'");
  out << "frames = " << spec.frames << "\n";
  out << "canvas = " << spec.canvas << "\n";
  out << "target_shape = " << (spec.target_shape == TargetShape::kBox ? "box" : "disc") << "\n";
  out << "target_w = " << spec.target_w << "\n";
  out << "target_h = " << spec.target_h << "\n";
  out << "rgb_target_intensity = " << spec.rgb_target_intensity << "\n";
  out << "rgb_background = " << spec.rgb_background << "\n";
  out << "texture_amplitude = " << spec.texture_amplitude << "\n";
  out << "texture_seed = " << spec.texture_seed << "\n";
  out << "motion = "
      << (spec.motion == MotionModel::kLinear ? "linear"
                                              : spec.motion == MotionModel::kSine ? "sine"
                                                                                  : "walk")
      << "\n";
  out << "motion_speed = " << spec.motion_speed << "\n";
  out << "motion_amplitude = " << spec.motion_amplitude << "\n";
  out << "motion_period = " << spec.motion_period << "\n";
  out << "distractors = " << spec.distractors << "\n";
  out << "distractor_intensity = " << spec.distractor_intensity << "\n";
  out << "alignment_jitter = " << spec.alignment_jitter << "\n";
  for (const auto& e : spec.events) {
    out << "event = " << to_string(e.modality) << "," << e.first_frame << "," << e.last_frame
        << "," << to_string(e.mode) << "," << e.noise_sigma << "," << e.blur_kernel << ","
        << e.occluder_fraction << "\n";
  }
}

SceneSpec load_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("synthgen: cannot open '" + path + "'");
  SceneSpec spec;
  spec.events.clear();
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
    };
    trim(key);
    trim(value);
    if (key == "frames") spec.frames = std::stoul(value);
    else if (key == "canvas") spec.canvas = std::stoul(value);
    else if (key == "target_shape")
      spec.target_shape = value == "disc" ? TargetShape::kDisc : TargetShape::kBox;
    else if (key == "target_w") spec.target_w = std::stod(value);
    else if (key == "target_h") spec.target_h = std::stod(value);
    else if (key == "rgb_target_intensity") spec.rgb_target_intensity = std::stod(value);
    else if (key == "rgb_background") spec.rgb_background = std::stod(value);
    else if (key == "texture_amplitude") spec.texture_amplitude = std::stod(value);
    else if (key == "texture_seed") spec.texture_seed = std::stoull(value);
    else if (key == "motion")
      spec.motion = value == "sine" ? MotionModel::kSine
                                    : value == "walk" ? MotionModel::kWalk : MotionModel::kLinear;
    else if (key == "motion_speed") spec.motion_speed = std::stod(value);
    else if (key == "motion_amplitude") spec.motion_amplitude = std::stod(value);
    else if (key == "motion_period") spec.motion_period = std::stod(value);
    else if (key == "distractors") spec.distractors = std::stoul(value);
    else if (key == "distractor_intensity") spec.distractor_intensity = std::stod(value);
    else if (key == "alignment_jitter") spec.alignment_jitter = std::stod(value);
    else if (key == "event") {
      DegradeEvent e;
      std::istringstream es(value);
      std::string tok;
      auto next = [&es, &tok, &value]() {
        if (!std::getline(es, tok, ','))
          throw std::runtime_error("synthgen: malformed event '" + value + "'");
        return tok;
      };
      e.modality = modality_from_string(next());
      e.first_frame = std::stoul(next());
      e.last_frame = std::stoul(next());
      e.mode = degrade_mode_from_string(next());
      e.noise_sigma = std::stod(next());
      e.blur_kernel = std::stoul(next());
      e.occluder_fraction = std::stod(next());
      spec.events.push_back(e);
    } else {
      throw std::runtime_error("synthgen: unknown spec key '" + key + "'");
    }
  }
  return spec;
}

}  // namespace aptrack
