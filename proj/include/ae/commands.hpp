#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ae/gradcheck.hpp"
#include "ae/pipeline.hpp"

namespace ae {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailure = 1;
inline constexpr int kExitUsage = 2;

// Leading "# key: value" lines stamped onto every text artifact: command,
// config snapshot, seed, version, start/end timestamps.
std::string manifest_header(const std::string& command, const std::string& config,
                            uint64_t seed, const std::string& extra = "");

// Min-max normalization onto 0..255 with the degenerate guard: an all-equal
// input maps to all zeros.
std::vector<uint8_t> normalize_to_bytes(const std::vector<double>& values);

// Runs the cases, streaming one `op,input-shape,rel-err,pass` line each.
// Returns the failure count.
int gradcheck_report(const std::vector<GradCase>& cases, std::ostream& out,
                     std::vector<std::string>* failed_names = nullptr);

int run_gradcheck(const std::string& scope, uint64_t seed, std::ostream& out);

struct ShapesArgs {
  int64_t size = 640;
  Preset preset = Preset::toy;
  uint64_t seed = 0;
  std::string queries_out;  // optional CSV path for the selection
};
int run_shapes(const ShapesArgs& args, std::ostream& out);

int run_params(Preset preset, uint64_t seed, std::ostream& out);

struct BenchArgs {
  std::string attention = "both";  // window | full | both
  std::vector<int64_t> sizes = {256, 1024, 4096, 16384};
  int64_t repeats = 3;
  uint64_t seed = 0;
  std::string out_path;  // optional copy of the CSV
};
int run_bench(const BenchArgs& args, std::ostream& out);

struct PretrainArgs {
  bool synthetic = false;
  std::string data_dir;
  int64_t per_class = 50;
  int64_t epochs = 5;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int64_t batch = 8;
  uint64_t seed = 0;
  Preset preset = Preset::toy;
  std::string out = "bam_pretrained.aew1";
  std::string metrics;  // defaults to <out>.metrics.csv
};
int run_pretrain(const PretrainArgs& args, std::ostream& out);

struct AttnmapArgs {
  std::string weights;
  std::string image;
  std::string prefix = "attnmap";
  int64_t window = 0;
  Preset preset = Preset::toy;
  uint64_t seed = 0;
};
int run_attnmap(const AttnmapArgs& args, std::ostream& out);

}  // namespace ae
