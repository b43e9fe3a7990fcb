#include "ae/commands.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "ae/bench.hpp"
#include "ae/dataset.hpp"
#include "ae/gradsuite.hpp"
#include "ae/image_io.hpp"
#include "ae/module.hpp"
#include "ae/ops.hpp"
#include "ae/pretrain.hpp"

namespace ae {

namespace {

std::string iso_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string& command_start() {
  static std::string start = iso_now();
  return start;
}

// Manifest lines without the comment prefix, for embedding in PGM headers.
std::string manifest_body(const std::string& command, const std::string& config,
                          uint64_t seed, const std::string& extra) {
  std::ostringstream out;
  out << "command: " << command << '\n';
  out << "config: " << (config.empty() ? "defaults" : config) << '\n';
  out << "seed: " << seed << '\n';
  out << "version: " << kToolVersion << '\n';
  out << "started: " << command_start() << '\n';
  out << "finished: " << iso_now() << '\n';
  if (!extra.empty()) out << extra << '\n';
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << content;
  if (!f) throw IoError("short write to " + path);
}

std::string csv_matrix(const std::vector<double>& values, int64_t rows, int64_t cols) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (int64_t y = 0; y < rows; ++y) {
    for (int64_t x = 0; x < cols; ++x) {
      if (x) out << ',';
      out << values[static_cast<size_t>(y * cols + x)];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string manifest_header(const std::string& command, const std::string& config,
                            uint64_t seed, const std::string& extra) {
  std::istringstream body(manifest_body(command, config, seed, extra));
  std::ostringstream out;
  std::string line;
  while (std::getline(body, line)) out << "# " << line << '\n';
  return out.str();
}

std::vector<uint8_t> normalize_to_bytes(const std::vector<double>& values) {
  std::vector<uint8_t> bytes(values.size(), 0);
  if (values.empty()) return bytes;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi <= lo) return bytes;  // all equal: leave zeros
  const double scale = 255.0 / (hi - lo);
  for (size_t i = 0; i < values.size(); ++i) {
    bytes[i] = static_cast<uint8_t>(std::llround((values[i] - lo) * scale));
  }
  return bytes;
}

int gradcheck_report(const std::vector<GradCase>& cases, std::ostream& out,
                     std::vector<std::string>* failed_names) {
  int failures = 0;
  for (const GradCase& c : cases) {
    const GradCheckResult r = run_grad_case(c);
    out << r.name << ',' << r.input_shape << ','
        << std::scientific << std::setprecision(3) << r.rel_err << std::defaultfloat << ','
        << (r.pass ? "pass" : "fail") << '\n';
    if (!r.pass) {
      ++failures;
      if (failed_names) failed_names->push_back(r.name);
    }
  }
  return failures;
}

int run_gradcheck(const std::string& scope, uint64_t seed, std::ostream& out) {
  if (scope != "ops" && scope != "blocks" && scope != "pipeline") {
    throw ParseError("unknown scope '" + scope + "' (expected ops, blocks, pipeline)");
  }
  out << manifest_header("gradcheck", "scope=" + scope, seed);
  out << "op,input-shape,rel-err,pass\n";

  int total = 0, failures = 0;
  std::vector<std::string> failed;
  for (uint64_t s = seed; s < seed + 3; ++s) {
    std::vector<GradCase> cases = ops_cases(s);
    if (scope != "ops") {
      std::vector<GradCase> more = block_cases(s);
      std::move(more.begin(), more.end(), std::back_inserter(cases));
    }
    if (scope == "pipeline") {
      std::vector<GradCase> more = pipeline_cases(s);
      std::move(more.begin(), more.end(), std::back_inserter(cases));
    }
    total += static_cast<int>(cases.size());
    failures += gradcheck_report(cases, out, &failed);
  }
  out << "# checks: " << total << " failures: " << failures << '\n';
  if (failures > 0) {
    out << "# failed-ops:";
    for (const std::string& name : failed) out << ' ' << name;
    out << '\n';
    return kExitVerificationFailure;
  }
  return kExitOk;
}

int run_shapes(const ShapesArgs& args, std::ostream& out) {
  if (args.size <= 0 || args.size % 32 != 0) {
    throw ParseError("input size " + std::to_string(args.size) +
                     " must be a positive multiple of 32");
  }
  PipelineConfig cfg;
  cfg.preset = args.preset;
  cfg.seed = args.seed;
  AssociationPipeline model(cfg);

  Rng rng(args.seed ^ 0xc0ffee11ULL);
  Tensor image = Tensor::zeros({1, 3, args.size, args.size});
  double* d = image.mutable_data();
  for (int64_t i = 0; i < image.numel(); ++i) d[i] = rng.uniform();

  PipelineOut res = model.forward(image, /*train=*/false);
  out << manifest_header("shapes",
                         "size=" + std::to_string(args.size) + " preset=" + preset_name(args.preset),
                         args.seed);
  for (const TraceLine& line : res.trace) {
    out << line.name << '\t' << shape_str(line.shape, ',') << '\n';
  }
  if (!args.queries_out.empty()) {
    write_text_file(args.queries_out,
                    manifest_header("shapes", "artifact=queries", args.seed) +
                        selection_csv(res.sel));
  }
  return kExitOk;
}

namespace {

void budget_line(std::ostream& out, const char* name, int64_t actual, int64_t target) {
  const double dev = 100.0 * (static_cast<double>(actual) / static_cast<double>(target) - 1.0);
  out << "budget\t" << name << "\tactual=" << actual << "\ttarget=" << target << "\tdeviation="
      << std::showpos << std::fixed << std::setprecision(1) << dev << std::noshowpos
      << std::defaultfloat << "%\twithin30=" << (std::abs(dev) <= 30.0 ? "yes" : "no") << '\n';
}

}  // namespace

int run_params(Preset preset, uint64_t seed, std::ostream& out) {
  PipelineConfig cfg;
  cfg.preset = preset;
  cfg.seed = seed;
  AssociationPipeline model(cfg);
  ModuleGraph g = model.graph();

  const int64_t backbone = g.count_params("backbone");
  const int64_t encoder = g.count_params("encoder");
  const int64_t qsel = g.count_params("qsel");
  const int64_t bam = g.count_params("bam");
  const int64_t am = g.count_params("am");
  const int64_t ae_total = bam + am;
  const int64_t total = g.count_params();

  out << manifest_header("params", "preset=" + preset_name(preset), seed);
  out << "component\tparams\n";
  out << "backbone\t" << backbone << '\n';
  out << "encoder\t" << encoder << '\n';
  out << "qsel\t" << qsel << '\n';
  out << "bam\t" << bam << '\n';
  out << "am\t" << am << '\n';
  out << "ae_total\t" << ae_total << '\n';
  out << "model_total\t" << total << '\n';
  budget_line(out, "bam", bam, 2'400'000);
  budget_line(out, "am", am, 700'000);
  budget_line(out, "ae_total", ae_total, 3'100'000);
  out << "note\tshared stem and early stages counted once, under backbone\n";
  return kExitOk;
}

int run_bench(const BenchArgs& args, std::ostream& out) {
  if (args.attention != "window" && args.attention != "full" && args.attention != "both") {
    throw ParseError("unknown attention kind '" + args.attention + "'");
  }
  if (args.repeats < 3) {
    throw ParseError("repeats must be at least 3 for a stable median");
  }
  BenchResult res = run_attention_bench(args.sizes, args.repeats, args.seed);

  std::ostringstream csv;
  std::string config = "attention=" + args.attention + " repeats=" + std::to_string(args.repeats);
  const std::string machine =
      "machine: single thread, wall clock, " +
      std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " logical cores";
  csv << manifest_header("bench", config, args.seed, machine);
  csv << "impl,n,median_seconds\n";
  csv << std::setprecision(9);
  for (const BenchPoint& p : res.points) {
    if (args.attention != "both" && p.impl != args.attention) continue;
    csv << p.impl << ',' << p.n << ',' << p.median_seconds << '\n';
  }
  csv << std::setprecision(4);
  if (args.attention != "full") csv << "# slope,window," << res.window_slope << '\n';
  if (args.attention != "window") csv << "# slope,full," << res.full_slope << '\n';

  out << csv.str();
  if (!args.out_path.empty()) write_text_file(args.out_path, csv.str());
  return kExitOk;
}

int run_pretrain(const PretrainArgs& args, std::ostream& out) {
  std::vector<LabeledPatch> corpus;
  if (args.synthetic) {
    corpus = synth_corpus(args.seed, args.per_class);
  } else if (!args.data_dir.empty()) {
    corpus = load_patch_corpus(args.data_dir);
  } else {
    throw ParseError("pretrain needs a dataset directory or --synthetic");
  }

  PipelineConfig cfg;
  cfg.preset = args.preset;
  cfg.seed = args.seed;
  AssociationPipeline model(cfg);
  Rng head_rng(args.seed ^ 0x7f4a7c159e3779b9ULL);
  BamClassifier clf = attach_head(model, kNumClasses, head_rng);

  TrainConfig tc;
  tc.learning_rate = args.lr;
  tc.weight_decay = args.weight_decay;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch;
  tc.seed = args.seed;

  const std::string config = "preset=" + preset_name(args.preset) +
                             " corpus=" + (args.synthetic ? "synthetic" : args.data_dir) +
                             " patches=" + std::to_string(corpus.size()) +
                             " epochs=" + std::to_string(tc.epochs) +
                             " batch=" + std::to_string(tc.batch_size) + " lr=" +
                             std::to_string(tc.learning_rate);
  out << manifest_header("pretrain", config, args.seed);

  std::ostringstream metrics;
  metrics << "epoch,split,loss,accuracy\n";
  auto metric_line = [&](int64_t epoch, const char* split, double loss, double acc) {
    std::ostringstream row;
    row << epoch << ',' << split << ',' << std::setprecision(10) << loss << ','
        << std::setprecision(6) << acc << '\n';
    metrics << row.str();
    out << row.str();
  };

  TrainResult res = train_classifier(clf, corpus, tc, [&](const EpochMetrics& em) {
    metric_line(em.epoch, "train", em.train_loss, em.train_accuracy);
    metric_line(em.epoch, "val", em.val_loss, em.val_accuracy);
  });
  // The initial row is known only after train_classifier starts, but belongs
  // first in the log; splice it ahead of the epoch rows.
  std::ostringstream head;
  head << "epoch,split,loss,accuracy\n"
       << 0 << ",val," << std::setprecision(10) << res.initial_val_loss << ','
       << std::setprecision(6) << res.initial_val_accuracy << '\n';
  std::string rows = metrics.str();
  rows = head.str() + rows.substr(rows.find('\n') + 1);

  const std::string metrics_path =
      args.metrics.empty() ? args.out + ".metrics.csv" : args.metrics;
  write_text_file(metrics_path, manifest_header("pretrain", config, args.seed) + rows);

  ModuleGraph g = clf.graph();
  save_weights(g, args.out);

  out << "initial_val_loss\t" << std::setprecision(10) << res.initial_val_loss << '\n';
  out << "final_val_accuracy\t" << std::setprecision(6) << res.final_val_accuracy << '\n';
  out << "weights\t" << args.out << '\n';
  out << "metrics\t" << metrics_path << '\n';
  return kExitOk;
}

int run_attnmap(const AttnmapArgs& args, std::ostream& out) {
  PipelineConfig cfg;
  cfg.preset = args.preset;
  cfg.seed = args.seed;
  AssociationPipeline model(cfg);
  ModuleGraph g = model.graph();
  const std::vector<std::string> unmatched = load_weights_partial(g, args.weights);

  const Image img = read_netpbm(args.image);
  if (img.height % 32 != 0 || img.width % 32 != 0) {
    throw ParseError("image extents must be multiples of 32, got " +
                     std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  Tensor batch = Tensor::zeros({1, 3, img.height, img.width});
  double* d = batch.mutable_data();
  const int64_t hw = img.height * img.width;
  for (int64_t c = 0; c < 3; ++c) {
    const int64_t src = img.channels == 3 ? c : 0;
    for (int64_t i = 0; i < hw; ++i) d[c * hw + i] = img.pixels[static_cast<size_t>(src * hw + i)];
  }

  PipelineOut res = model.forward(batch, /*train=*/false);
  const Tensor& fb = res.fb;
  const int64_t ch = fb.extent(1), fh = fb.extent(2), fw = fb.extent(3);

  // Channel-averaged magnitude of the background feature.
  std::vector<double> magnitude(static_cast<size_t>(fh * fw), 0.0);
  const double* fp = fb.data();
  for (int64_t c = 0; c < ch; ++c) {
    for (int64_t i = 0; i < fh * fw; ++i) {
      magnitude[static_cast<size_t>(i)] += std::abs(fp[c * fh * fw + i]);
    }
  }
  for (double& v : magnitude) v /= static_cast<double>(ch);

  // Attention weights of one window, averaged over heads.
  WindowPartition part = window_partition(model.am.ln.forward(fb), model.config().window);
  if (args.window < 0 || args.window >= part.nwin) {
    throw ValueError("window index must be in [0, " + std::to_string(part.nwin) + ")");
  }
  Tensor probs =
      mha_attention_probs(part.windows, model.am.mha, model.config().am_heads, &part.mask);
  const int64_t heads = probs.extent(1), t = probs.extent(2);
  std::vector<double> attn(static_cast<size_t>(t * t), 0.0);
  const double* pp = probs.data() + args.window * heads * t * t;
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t i = 0; i < t * t; ++i) attn[static_cast<size_t>(i)] += pp[h * t * t + i];
  }
  for (double& v : attn) v /= static_cast<double>(heads);

  const std::string config = "preset=" + preset_name(args.preset) +
                             " weights=" + args.weights + " window=" +
                             std::to_string(args.window);
  std::string note;
  if (!unmatched.empty()) {
    note = "unmatched-weight-entries: " + std::to_string(unmatched.size());
  }

  write_pgm(args.prefix + "_fb.pgm", normalize_to_bytes(magnitude), fh, fw,
            manifest_body("attnmap", config, args.seed, note));
  write_text_file(args.prefix + "_fb.csv", manifest_header("attnmap", config, args.seed, note) +
                                               csv_matrix(magnitude, fh, fw));
  write_pgm(args.prefix + "_attn.pgm", normalize_to_bytes(attn), t, t,
            manifest_body("attnmap", config, args.seed, note));
  write_text_file(args.prefix + "_attn.csv", manifest_header("attnmap", config, args.seed, note) +
                                                 csv_matrix(attn, t, t));

  out << manifest_header("attnmap", config, args.seed, note);
  for (const std::string& name : unmatched) out << "# unmatched: " << name << '\n';
  out << "fb_map\t" << args.prefix << "_fb.pgm\t" << fw << 'x' << fh << '\n';
  out << "attention_map\t" << args.prefix << "_attn.pgm\t" << t << 'x' << t << '\n';
  return kExitOk;
}

}  // namespace ae
