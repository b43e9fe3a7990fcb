#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ae/rng.hpp"
#include "ae/tensor.hpp"

namespace ae {

// Nine background categories: eight semantic ids from the region files plus
// "unknown" for pixels marked -1.
inline constexpr int kNumClasses = 9;
inline constexpr int kUnknownClass = 8;

const std::array<const char*, kNumClasses>& class_names();

// Per-pixel region labels as read from a *.regions.txt file. Values are kept
// raw (-1 .. 7); the mapping onto the class manifest happens in patch_label.
struct RegionLabelMap {
  int64_t rows = 0, cols = 0;
  std::vector<int> labels;  // row-major, rows*cols entries

  int at(int64_t y, int64_t x) const {
    return labels[static_cast<size_t>(y * cols + x)];
  }
};

// Parses whitespace-separated integers, one image row per line. Throws
// ParseError for ragged rows (naming the row) or out-of-range labels.
RegionLabelMap parse_regions(const std::string& text);
RegionLabelMap load_regions(const std::string& path);

// Inverse of parse_regions: one line per row, single-space separated.
std::string serialize_regions(const RegionLabelMap& map);

struct Rect {
  int64_t y = 0, x = 0, h = 0, w = 0;
};

// Majority class over the rectangle with -1 counted as the unknown class;
// ties go to the smaller class id. Throws on empty or out-of-bounds rects.
int patch_label(const RegionLabelMap& map, const Rect& r);

struct LabeledPatch {
  Tensor pixels;  // (3, P, P), values in [0, 1]
  int label = 0;
};

// Procedural nine-class texture corpus, `per_class` patches per class in
// class-major order, deterministic under the seed. Patch side must be a
// positive multiple of 8 so the shared backbone stem applies cleanly.
std::vector<LabeledPatch> synth_corpus(uint64_t seed, int64_t per_class, int64_t patch = 32);

// Loads a directory holding images/*.ppm|pgm and labels/*.regions.txt, cuts
// each image into non-overlapping patch x patch tiles and labels every tile
// by region majority. Throws IoError when the layout is missing.
std::vector<LabeledPatch> load_patch_corpus(const std::string& dir, int64_t patch = 32);

}  // namespace ae
