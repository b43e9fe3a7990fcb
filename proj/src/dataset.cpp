#include "ae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ae/image_io.hpp"

namespace fs = std::filesystem;

namespace ae {

const std::array<const char*, kNumClasses>& class_names() {
  static const std::array<const char*, kNumClasses> names = {
      "sky", "tree", "road", "grass", "water", "building", "mountain", "foreground", "unknown"};
  return names;
}

RegionLabelMap parse_regions(const std::string& text) {
  RegionLabelMap map;
  std::istringstream lines(text);
  std::string line;
  int64_t row = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    int64_t cols = 0;
    int v;
    while (fields >> v) {
      if (v < -1 || v > 7) {
        throw ParseError("region label " + std::to_string(v) + " out of range at row " +
                         std::to_string(row + 1));
      }
      map.labels.push_back(v);
      ++cols;
    }
    if (!fields.eof()) {
      throw ParseError("non-integer region data at row " + std::to_string(row + 1));
    }
    if (cols == 0) continue;  // blank line, e.g. trailing newline
    if (map.cols == 0) {
      map.cols = cols;
    } else if (cols != map.cols) {
      throw ParseError("ragged region file: row " + std::to_string(row + 1) + " has " +
                       std::to_string(cols) + " columns, expected " + std::to_string(map.cols));
    }
    ++row;
  }
  map.rows = row;
  if (map.rows == 0) throw ParseError("empty region file");
  return map;
}

RegionLabelMap load_regions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_regions(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string serialize_regions(const RegionLabelMap& map) {
  std::ostringstream out;
  for (int64_t y = 0; y < map.rows; ++y) {
    for (int64_t x = 0; x < map.cols; ++x) {
      if (x) out << ' ';
      out << map.at(y, x);
    }
    out << '\n';
  }
  return out.str();
}

int patch_label(const RegionLabelMap& map, const Rect& r) {
  if (r.h <= 0 || r.w <= 0) throw ValueError("patch_label: empty rectangle");
  if (r.y < 0 || r.x < 0 || r.y + r.h > map.rows || r.x + r.w > map.cols) {
    throw ValueError("patch_label: rectangle outside the label map");
  }
  std::array<int64_t, kNumClasses> counts{};
  for (int64_t y = r.y; y < r.y + r.h; ++y) {
    for (int64_t x = r.x; x < r.x + r.w; ++x) {
      const int raw = map.at(y, x);
      counts[static_cast<size_t>(raw < 0 ? kUnknownClass : raw)]++;
    }
  }
  // Scanning ids in ascending order makes ties land on the smaller id.
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
  }
  return best;
}

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Painter {
  Tensor& t;
  int64_t p;

  double* plane(int64_t c) { return t.mutable_data() + c * p * p; }

  void fill(double r, double g, double b) {
    std::fill_n(plane(0), p * p, r);
    std::fill_n(plane(1), p * p, g);
    std::fill_n(plane(2), p * p, b);
  }

  // Adds v to all channels at (y, x).
  void bump(int64_t y, int64_t x, double v) {
    for (int64_t c = 0; c < 3; ++c) plane(c)[y * p + x] += v;
  }

  void clip() {
    double* d = t.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = std::clamp(d[i], 0.0, 1.0);
  }
};

// Each family keeps a distinct mean color except road and mountain, which
// share a gray base and differ only in texture. That pair is what makes the
// corpus nontrivial for a linear read-out of raw pixels.
Tensor synth_patch(int cls, int64_t p, Rng& rng) {
  Tensor t = Tensor::zeros({3, p, p});
  Painter pt{t, p};
  auto jit = [&](double scale) { return (rng.uniform() * 2.0 - 1.0) * scale; };

  switch (cls) {
    case 0: {  // sky: blue with a vertical brightness ramp
      pt.fill(0.45 + jit(0.04), 0.65 + jit(0.04), 0.92 + jit(0.04));
      const double ramp = 0.12 + jit(0.04);
      for (int64_t y = 0; y < p; ++y) {
        const double dv = ramp * (1.0 - 2.0 * static_cast<double>(y) / static_cast<double>(p - 1));
        for (int64_t x = 0; x < p; ++x) pt.bump(y, x, dv);
      }
      break;
    }
    case 1: {  // tree: green speckle
      pt.fill(0.18 + jit(0.03), 0.52 + jit(0.04), 0.20 + jit(0.03));
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) pt.bump(y, x, jit(0.18));
      }
      break;
    }
    case 2: {  // road: flat gray
      pt.fill(0.45 + jit(0.02), 0.45 + jit(0.02), 0.47 + jit(0.02));
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) pt.bump(y, x, jit(0.03));
      }
      break;
    }
    case 3: {  // grass: bright green horizontal stripes
      pt.fill(0.35 + jit(0.03), 0.72 + jit(0.03), 0.25 + jit(0.03));
      const double period = 4.0 + rng.uniform() * 2.0;
      const double phase = rng.uniform() * kTwoPi;
      for (int64_t y = 0; y < p; ++y) {
        const double dv = 0.12 * std::sin(kTwoPi * static_cast<double>(y) / period + phase);
        for (int64_t x = 0; x < p; ++x) pt.bump(y, x, dv + jit(0.02));
      }
      break;
    }
    case 4: {  // water: dark blue rolling waves
      pt.fill(0.12 + jit(0.03), 0.35 + jit(0.03), 0.68 + jit(0.03));
      const double period = 6.0 + rng.uniform() * 3.0;
      const double phase = rng.uniform() * kTwoPi;
      const double shear = 0.2 + rng.uniform() * 0.3;
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) {
          const double arg =
              kTwoPi * (static_cast<double>(y) + shear * static_cast<double>(x)) / period + phase;
          pt.bump(y, x, 0.15 * std::sin(arg) + jit(0.02));
        }
      }
      break;
    }
    case 5: {  // building: warm facade with a dark window grid
      pt.fill(0.62 + jit(0.03), 0.55 + jit(0.03), 0.48 + jit(0.03));
      const int64_t step = 6 + static_cast<int64_t>(rng.uniform() * 3.0);
      const int64_t off_y = static_cast<int64_t>(rng.uniform() * static_cast<double>(step));
      const int64_t off_x = static_cast<int64_t>(rng.uniform() * static_cast<double>(step));
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) {
          const bool line = ((y + off_y) % step == 0) || ((x + off_x) % step == 0);
          pt.bump(y, x, (line ? -0.25 : 0.0) + jit(0.02));
        }
      }
      break;
    }
    case 6: {  // mountain: road-gray base under strong diagonal ridges
      pt.fill(0.45 + jit(0.02), 0.45 + jit(0.02), 0.47 + jit(0.02));
      const double period = 5.0 + rng.uniform() * 3.0;
      const double phase = rng.uniform() * kTwoPi;
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) {
          const double arg = kTwoPi * static_cast<double>(y + x) / period + phase;
          pt.bump(y, x, 0.22 * std::sin(arg) + jit(0.03));
        }
      }
      break;
    }
    case 7: {  // foreground: saturated red checkerboard
      pt.fill(0.75 + jit(0.03), 0.25 + jit(0.03), 0.22 + jit(0.03));
      const int64_t cell = 4 + static_cast<int64_t>(rng.uniform() * 3.0);
      const int64_t parity = rng.uniform() < 0.5 ? 0 : 1;
      for (int64_t y = 0; y < p; ++y) {
        for (int64_t x = 0; x < p; ++x) {
          const bool on = ((y / cell + x / cell) & 1) == parity;
          pt.bump(y, x, (on ? 0.18 : -0.18) + jit(0.02));
        }
      }
      break;
    }
    default: {  // unknown: full-range noise
      double* d = t.mutable_data();
      for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform();
      break;
    }
  }
  pt.clip();
  return t;
}

}  // namespace

std::vector<LabeledPatch> synth_corpus(uint64_t seed, int64_t per_class, int64_t patch) {
  if (per_class < 1) throw ValueError("per_class must be at least 1");
  if (patch < 8 || patch % 8 != 0) throw ValueError("patch side must be a positive multiple of 8");
  Rng rng(seed);
  std::vector<LabeledPatch> corpus;
  corpus.reserve(static_cast<size_t>(kNumClasses * per_class));
  for (int cls = 0; cls < kNumClasses; ++cls) {
    for (int64_t i = 0; i < per_class; ++i) {
      corpus.push_back({synth_patch(cls, patch, rng), cls});
    }
  }
  return corpus;
}

std::vector<LabeledPatch> load_patch_corpus(const std::string& dir, int64_t patch) {
  if (patch < 8 || patch % 8 != 0) throw ValueError("patch side must be a positive multiple of 8");
  const fs::path root(dir);
  const fs::path images = root / "images";
  const fs::path labels = root / "labels";
  if (!fs::is_directory(images) || !fs::is_directory(labels)) {
    throw IoError(dir + " must contain images/ and labels/ directories");
  }

  std::vector<fs::path> label_files;
  for (const auto& entry : fs::directory_iterator(labels)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == ".regions.txt") {
      label_files.push_back(entry.path());
    }
  }
  std::sort(label_files.begin(), label_files.end());
  if (label_files.empty()) throw IoError("no *.regions.txt files under " + labels.string());

  std::vector<LabeledPatch> corpus;
  for (const fs::path& lf : label_files) {
    std::string stem = lf.filename().string();
    stem.resize(stem.size() - 12);
    fs::path img_path = images / (stem + ".ppm");
    if (!fs::exists(img_path)) img_path = images / (stem + ".pgm");
    if (!fs::exists(img_path)) {
      throw IoError("no image for label file " + lf.string());
    }
    const Image img = read_netpbm(img_path.string());
    const RegionLabelMap map = load_regions(lf.string());
    if (map.rows != img.height || map.cols != img.width) {
      throw ParseError(lf.string() + ": label grid does not match image size");
    }
    for (int64_t y = 0; y + patch <= img.height; y += patch) {
      for (int64_t x = 0; x + patch <= img.width; x += patch) {
        LabeledPatch lp;
        lp.pixels = Tensor::zeros({3, patch, patch});
        double* d = lp.pixels.mutable_data();
        for (int64_t c = 0; c < 3; ++c) {
          // Graymaps broadcast the single plane over all three channels.
          const int64_t src_c = img.channels == 3 ? c : 0;
          for (int64_t py = 0; py < patch; ++py) {
            for (int64_t px = 0; px < patch; ++px) {
              d[(c * patch + py) * patch + px] = img.at(src_c, y + py, x + px);
            }
          }
        }
        lp.label = patch_label(map, {y, x, patch, patch});
        corpus.push_back(std::move(lp));
      }
    }
  }
  if (corpus.empty()) throw IoError("dataset produced no patches at size " + std::to_string(patch));
  return corpus;
}

}  // namespace ae
