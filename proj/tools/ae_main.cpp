#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ae/commands.hpp"
#include "ae/pipeline.hpp"
#include "ae/pretrain.hpp"
#include "ae/tensor.hpp"

namespace {

ae::Preset preset_of(const std::string& name) { return ae::parse_preset(name); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"association encoder toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ae::kToolVersion));

  uint64_t seed = 0;
  std::string preset = "toy";
  const std::vector<std::string> preset_names = {"toy", "r34-shape", "r50-shape"};

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "rng seed")->capture_default_str();
    sub->add_option("--preset", preset, "backbone preset")
        ->check(CLI::IsMember(preset_names))
        ->capture_default_str();
  };

  // gradcheck
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  std::string scope = "ops";
  gradcheck->add_option("--scope", scope, "ops, blocks, or pipeline")
      ->check(CLI::IsMember({"ops", "blocks", "pipeline"}))
      ->capture_default_str();
  gradcheck->add_option("--seed", seed, "rng seed")->capture_default_str();

  // shapes
  CLI::App* shapes = app.add_subcommand("shapes", "print the forward shape trace");
  ae::ShapesArgs shapes_args;
  shapes->add_option("--size", shapes_args.size, "square input extent, multiple of 32")
      ->capture_default_str();
  shapes->add_option("--queries-out", shapes_args.queries_out, "write selected queries as CSV");
  add_common(shapes);

  // params
  CLI::App* params = app.add_subcommand("params", "per-component parameter counts");
  add_common(params);

  // bench
  CLI::App* bench = app.add_subcommand("bench", "attention timing sweep");
  ae::BenchArgs bench_args;
  bench->add_option("--attention", bench_args.attention, "window, full, or both")
      ->check(CLI::IsMember({"window", "full", "both"}))
      ->capture_default_str();
  bench->add_option("--sizes", bench_args.sizes, "token counts, ascending")->delimiter(',');
  bench->add_option("--repeats", bench_args.repeats, "timing repeats per point")
      ->capture_default_str();
  bench->add_option("--out", bench_args.out_path, "also write the CSV here");
  bench->add_option("--seed", seed, "rng seed")->capture_default_str();

  // pretrain
  CLI::App* pretrain = app.add_subcommand("pretrain", "patch-classification pretraining");
  ae::PretrainArgs pre_args;
  pretrain->add_option("data_dir", pre_args.data_dir, "directory of images and region labels");
  pretrain->add_flag("--synthetic", pre_args.synthetic, "generate the synthetic patch corpus");
  pretrain->add_option("--per-class", pre_args.per_class, "synthetic patches per class")
      ->capture_default_str();
  pretrain->add_option("--epochs", pre_args.epochs, "training epochs")->capture_default_str();
  pretrain->add_option("--lr", pre_args.lr, "learning rate")->capture_default_str();
  pretrain->add_option("--weight-decay", pre_args.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  pretrain->add_option("--batch", pre_args.batch, "batch size")->capture_default_str();
  pretrain->add_option("--out", pre_args.out, "weights output path")->capture_default_str();
  pretrain->add_option("--metrics", pre_args.metrics, "metrics CSV path (default <out>.metrics.csv)");
  add_common(pretrain);

  // attnmap
  CLI::App* attnmap = app.add_subcommand("attnmap", "render background features and attention");
  ae::AttnmapArgs attn_args;
  attnmap->add_option("--weights", attn_args.weights, "weights file")->required();
  attnmap->add_option("--image", attn_args.image, "input image (ppm or pgm)")->required();
  attnmap->add_option("--prefix", attn_args.prefix, "output path prefix")->capture_default_str();
  attnmap->add_option("--window", attn_args.window, "window index to render")
      ->capture_default_str();
  add_common(attnmap);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ae::kExitOk : ae::kExitUsage;
  }

  try {
    if (gradcheck->parsed()) return ae::run_gradcheck(scope, seed, std::cout);
    if (shapes->parsed()) {
      shapes_args.preset = preset_of(preset);
      shapes_args.seed = seed;
      return ae::run_shapes(shapes_args, std::cout);
    }
    if (params->parsed()) return ae::run_params(preset_of(preset), seed, std::cout);
    if (bench->parsed()) {
      bench_args.seed = seed;
      return ae::run_bench(bench_args, std::cout);
    }
    if (pretrain->parsed()) {
      pre_args.preset = preset_of(preset);
      pre_args.seed = seed;
      return ae::run_pretrain(pre_args, std::cout);
    }
    if (attnmap->parsed()) {
      attn_args.preset = preset_of(preset);
      attn_args.seed = seed;
      return ae::run_attnmap(attn_args, std::cout);
    }
  } catch (const ae::TrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ae::kExitVerificationFailure;
  } catch (const ae::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ae::kExitUsage;
  }
  return ae::kExitUsage;
}
