// higsfa: dataset preparation, benchmark protocols, feature export and
// reporting.

#include "higsfa/error.hpp"
#include "higsfa/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace higsfa;
namespace fs = std::filesystem;

/// One line on stderr: `error kind=<kind> message=<json string>`.
int report_error(std::string_view kind, const std::string& message) {
  std::cerr << "error kind=" << kind << " message=" << nlohmann::json(message).dump()
            << '\n';
  return 1;
}

void print_summary(const harness::RunRecord& rec) {
  std::cout << harness::summary_markdown(rec.summary);
  std::cout << "trials: " << rec.trials.size() << " (" << rec.skipped
            << " resumed from previous runs), wall " << rec.wall_seconds << " s\n";
  std::cout << "results: " << (rec.config.out_dir / "summary.csv").string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical graph-based slow feature analysis benchmark"};
  app.require_subcommand(1);

  harness::PrepareOptions prep;
  std::string mnist_dir, omniglot_dir;
  auto* prepare = app.add_subcommand("prepare", "Convert raw datasets into the cache format");
  prepare->add_option("--mnist-dir", mnist_dir, "Directory with uncompressed IDX files");
  prepare->add_option("--omniglot-dir", omniglot_dir,
                      "Directory holding images_background/ and images_evaluation/");
  prepare->add_option("--cache-dir", prep.cache_dir, "Output cache directory");

  harness::ExperimentConfig mnist;
  mnist.task = "mnist-curve";
  auto* curve = app.add_subcommand("mnist-curve", "MNIST learning curve over per-class sizes");
  curve->add_option("--sizes", mnist.sizes, "Training samples per class")->delimiter(',');
  curve->add_option("--trials", mnist.trials, "Seeded trials per size");
  curve->add_option("--seed", mnist.seed, "Base seed");
  curve->add_option("--out", mnist.out_dir, "Results directory");
  curve->add_option("--cache", mnist.cache_dir, "Prepared cache directory");
  curve->add_option("--val-per-class", mnist.val_per_class, "Validation samples per class");
  curve->add_option("--workers", mnist.workers, "Trials run concurrently");

  harness::ExperimentConfig omni;
  omni.task = "omniglot";
  omni.trials = 20;
  std::string features_path;
  auto* omniglot = app.add_subcommand("omniglot", "Omniglot 16-way one-shot challenges");
  omniglot->add_option("--challenges", omni.challenges)->delimiter(',');
  omniglot->add_option("--alphabets", omni.alphabets)->delimiter(',');
  omniglot->add_option("--chars", omni.chars, "Characters per alphabet")->delimiter(',');
  omniglot->add_option("--samples", omni.samples, "Samples per character")->delimiter(',');
  omniglot->add_option("--episodes", omni.episodes, "Episodes per trial and challenge");
  omniglot->add_option("--trials", omni.trials);
  omniglot->add_option("--seed", omni.seed);
  omniglot->add_option("--out", omni.out_dir);
  omniglot->add_option("--cache", omni.cache_dir);
  omniglot->add_option("--workers", omni.workers);
  omniglot->add_option("--features", features_path,
                       "FEAT file for background rows then evaluation rows; skips training");

  std::string net_path, in_path, out_path;
  auto* features = app.add_subcommand("features", "Run a saved network over a cache file");
  features->add_option("--net", net_path)->required();
  features->add_option("--in", in_path, "SBDM cache .dat file")->required();
  features->add_option("--out", out_path, "FEAT output file")->required();

  harness::ExperimentConfig train_cfg;
  std::string train_out;
  int train_per_class = 50;
  auto* train = app.add_subcommand("train", "Train a network on an MNIST split and save it");
  train->add_option("--cache", train_cfg.cache_dir);
  train->add_option("--per-class", train_per_class);
  train->add_option("--seed", train_cfg.seed);
  train->add_option("--out", train_out, "Network file")->required();

  std::string report_dir, report_format = "csv";
  auto* report = app.add_subcommand("report", "Summarize trials.jsonl files under a directory");
  report->add_option("--in", report_dir)->required();
  report->add_option("--format", report_format)->check(CLI::IsMember({"csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("usage", e.what());
  }

  try {
    if (*prepare) {
      if (!mnist_dir.empty()) prep.mnist_dir = mnist_dir;
      if (!omniglot_dir.empty()) prep.omniglot_dir = omniglot_dir;
      for (const auto& line : harness::prepare(prep)) std::cout << line << '\n';
    } else if (*curve) {
      print_summary(harness::run_mnist_curve(mnist));
    } else if (*omniglot) {
      if (!features_path.empty()) omni.features = features_path;
      print_summary(harness::run_omniglot(omni));
    } else if (*features) {
      harness::export_features(net_path, in_path, out_path);
      std::cout << "wrote " << out_path << '\n';
    } else if (*train) {
      const auto pool = dataio::load_dataset_cache(train_cfg.cache_dir / "mnist_train");
      const auto split = dataio::sample_split(
          pool, {static_cast<std::size_t>(train_per_class), 0, train_cfg.seed});
      const auto side = static_cast<int>(std::lround(std::sqrt(pool.data.cols())));
      const auto network = net::train_network(split.train.data, split.train.labels,
                                              {side, side, 1}, train_cfg.architecture);
      net::save_network(network, train_out);
      std::cout << "wrote " << train_out << " (" << network.output_dim << " outputs, "
                << network.parameter_count() << " parameters)\n";
    } else if (*report) {
      const auto path = harness::report(report_dir, report_format == "md"
                                                        ? harness::ReportFormat::Markdown
                                                        : harness::ReportFormat::Csv);
      std::cout << "wrote " << path.string() << '\n';
    }
  } catch (const Error& e) {
    return report_error(to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
