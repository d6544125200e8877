// Command line front end: one subcommand per pipeline stage plus an
// end-to-end `reproduce`. Exit codes: 0 ok, 1 runtime failure, 2 usage.

#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "consis/consis.hpp"

namespace fs = std::filesystem;

namespace {

consis::RunConfig config_from_flag(const std::string& config_path) {
  if (config_path.empty()) return consis::RunConfig{};
  return consis::load_run_config(config_path);
}

// `--dataset` accepts either a container file or a directory produced by
// `generate` (train.cds/val.cds inside).
std::string resolve_dataset(const std::string& path, const std::string& name) {
  if (fs::is_directory(path)) return (fs::path(path) / name).string();
  return path;
}

struct CliFlags {
  std::string config_path;
  std::string dataset, out, checkpoint, adv, store, taxonomy, tap = "conv3";
  std::string mode = "fgsm";
  double epsilon = 8.0 / 255.0;
  double lambda = 5.0;
  double sigma = 2.0;
  double quantile_q = 0.05;      // activation policy (record/analyze/figures)
  double mask_quantile = 0.02;   // dissection mask threshold
  double tau = 0.1;
  int steps = 100;
  double step_size = 0.01;
  std::uint64_t seed = 7;
  int bins = 20;
  int neurons = 4;
  int topk = 8;
};

int run_generate(const CliFlags& f) {
  consis::RunConfig config = config_from_flag(f.config_path);
  config.seed = f.seed;
  fs::create_directories(f.out);
  const auto data =
      consis::generate_dataset(config.dataset, consis::mix_seed(f.seed, 1));
  consis::save_dataset(data.train, (fs::path(f.out) / "train.cds").string());
  consis::save_dataset(data.val, (fs::path(f.out) / "val.cds").string());
  consis::save_dataset(data.dissect, (fs::path(f.out) / "dissect.cds").string());
  consis::write_text_file((fs::path(f.out) / "taxonomy.json").string(),
                          data.taxonomy_doc.dump(2) + "\n");
  std::cout << "generated " << data.train.size() << " train / " << data.val.size()
            << " val / " << data.dissect.size() << " dissect images ("
            << config.dataset.class_count() << " classes) in " << f.out << "\n";
  return 0;
}

int run_train(const CliFlags& f) {
  consis::RunConfig config = config_from_flag(f.config_path);
  const auto trainset =
      consis::load_dataset(resolve_dataset(f.dataset, "train.cds"));
  consis::Dataset valset;
  bool has_val = false;
  if (fs::is_directory(f.dataset) &&
      fs::exists(fs::path(f.dataset) / "val.cds")) {
    valset = consis::load_dataset((fs::path(f.dataset) / "val.cds").string());
    has_val = true;
  }
  const auto state =
      consis::train(trainset, has_val ? &valset : nullptr, config.train);
  const std::string config_hash =
      consis::hash_string_hex(config.train.to_json().dump());
  consis::save_checkpoint(state.model, f.out, config_hash);
  std::cout << "trained " << config.train.mode << " model for "
            << state.completed_epochs << " epochs";
  if (!state.log.empty()) {
    std::cout << "; final loss " << state.log.back().total_loss;
    if (state.log.back().val_accuracy >= 0.0)
      std::cout << ", val top-1 " << state.log.back().val_accuracy;
  }
  std::cout << "; checkpoint " << f.out << "\n";
  return 0;
}

int run_attack(const CliFlags& f) {
  const auto model = consis::load_checkpoint(f.checkpoint);
  const auto source = consis::load_dataset(resolve_dataset(f.dataset, "val.cds"));
  consis::AttackConfig attack;
  if (f.mode == "fgsm") attack.mode = consis::AttackMode::fgsm;
  else if (f.mode == "targeted") attack.mode = consis::AttackMode::targeted_l2;
  else if (f.mode == "least-likely") attack.mode = consis::AttackMode::least_likely;
  else consis::raise(consis::ErrorCode::invalid_config,
                     "unknown attack mode '" + f.mode + "'");
  attack.epsilon = f.epsilon;
  attack.lambda = f.lambda;
  attack.steps = f.steps;
  attack.step_size = f.step_size;
  attack.seed = f.seed;
  const auto adv = consis::attack_dataset(model, source, attack);
  consis::save_dataset(adv, f.out);
  std::cout << "attacked " << adv.size() << " images (" << f.mode
            << ", success rate " << adv.provenance["success_rate"] << ") -> "
            << f.out << "\n";
  return 0;
}

int run_record(const CliFlags& f) {
  const auto model = consis::load_checkpoint(f.checkpoint);
  const auto clean = consis::load_dataset(resolve_dataset(f.dataset, "val.cds"));
  std::vector<const consis::Dataset*> sets{&clean};
  consis::Dataset adv;
  if (!f.adv.empty()) {
    adv = consis::load_dataset(f.adv);
    sets.push_back(&adv);
  }
  auto store = consis::record_activations(model, sets, f.tap);
  store.recorded_quantile_q = f.quantile_q;
  consis::save_store(store, f.out);
  std::cout << "recorded " << store.neuron_count << " neurons x "
            << store.image_count() << " images at tap " << f.tap << " -> " << f.out
            << "\n";
  return 0;
}

int run_analyze(const CliFlags& f) {
  const auto store = consis::load_store(f.store);
  const auto tree = consis::load_taxonomy(f.taxonomy);
  const auto A = consis::correlation_matrix(tree, f.sigma);
  consis::ActivationPolicy policy{f.quantile_q};
  const auto summary = consis::layer_summary(store, policy, A, f.bins);
  std::cout << consis::summary_csv(summary);
  std::cout << "# mean_consis=" << summary.mean_consis
            << " mean_consis_adv=" << summary.mean_consis_adv
            << " empty_clean=" << summary.empty_clean
            << " empty_adv=" << summary.empty_adv << "\n";
  if (!f.out.empty()) consis::write_summary_csv(summary, f.out);
  return 0;
}

int run_dissect(const CliFlags& f) {
  const auto model = consis::load_checkpoint(f.checkpoint);
  const auto maskset = consis::load_dataset(resolve_dataset(f.dataset, "dissect.cds"));
  consis::Dataset adv;
  const consis::Dataset* adv_ptr = nullptr;
  if (!f.adv.empty()) {
    adv = consis::load_dataset(f.adv);
    adv_ptr = &adv;
  }
  consis::DissectionConfig cfg{f.tap, f.mask_quantile, f.tau};
  const auto report = consis::alignment_table(model, maskset, adv_ptr, cfg);
  const std::string text = consis::alignment_report_text(report, "model");
  std::cout << text;
  if (!f.out.empty()) consis::write_text_file(f.out, text);
  return 0;
}

int run_figures(const CliFlags& f) {
  const auto store = consis::load_store(f.store);
  const auto tree = consis::load_taxonomy(f.taxonomy);
  const auto A = consis::correlation_matrix(tree, f.sigma);
  consis::ActivationPolicy policy{f.quantile_q};
  const auto summary = consis::layer_summary(store, policy, A, f.bins);

  const auto clean = consis::load_dataset(resolve_dataset(f.dataset, "val.cds"));
  consis::Dataset adv;
  bool has_adv = false;
  if (!f.adv.empty()) {
    adv = consis::load_dataset(f.adv);
    has_adv = true;
  }

  consis::FigureInputs fig;
  fig.layer = store.layer;
  fig.summaries = {{"model", &summary}};
  std::vector<consis::NeuronSummary> ranked = summary.rows;
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.consis != b.consis) return a.consis > b.consis;
    return a.neuron < b.neuron;
  });
  for (int i = 0; i < std::min<int>(f.neurons, static_cast<int>(ranked.size())); ++i)
    fig.galleries.push_back(consis::make_gallery(
        store, static_cast<int>(ranked[i].neuron), static_cast<std::size_t>(f.topk)));
  const std::size_t clean_count = clean.size();
  fig.image_of = [&](const consis::GalleryEntry& entry) {
    if (entry.image_column < clean_count) return clean.image(entry.image_column);
    consis::require(has_adv, consis::ErrorCode::invalid_config,
                    "store has adversarial images but no --adv container given");
    return adv.image(entry.image_column - clean_count);
  };
  const auto written = consis::emit_figures(fig, f.out);
  std::cout << "wrote " << written.size() << " figure files under " << f.out << "\n";
  return 0;
}

int run_reproduce(const CliFlags& f) {
  consis::RunConfig config = config_from_flag(f.config_path);
  config.seed = f.seed;
  const auto summary = consis::reproduce(config, f.out, &std::cout);
  std::cout << "reproduce complete; seed " << summary.seed << "\n"
            << "  normal:      consis " << summary.normal.mean_consis
            << " -> adv " << summary.normal.mean_consis_adv << ", acc "
            << summary.normal.clean_accuracy << " -> fgsm "
            << summary.normal.fgsm_accuracy << "\n"
            << "  adversarial: consis " << summary.adversarial.mean_consis
            << " -> adv " << summary.adversarial.mean_consis_adv << ", acc "
            << summary.adversarial.clean_accuracy << " -> fgsm "
            << summary.adversarial.fgsm_accuracy << "\n"
            << "  manifest " << summary.manifest_hash << " (" << summary.out_dir
            << "/manifest.json)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuron-consistency toolkit: measure how consistently classifier "
               "neurons respond to related concepts, expose the collapse under "
               "adversarial inputs, and train models that resist it"};
  app.require_subcommand(1);
  CliFlags f;

  auto* generate = app.add_subcommand("generate", "render the synthetic dataset and taxonomy");
  generate->add_option("--out", f.out, "output directory")->required();
  generate->add_option("--seed", f.seed, "run seed");
  generate->add_option("--config", f.config_path, "run config JSON");

  auto* train = app.add_subcommand("train", "train a classifier (normal or adversarial)");
  train->add_option("--config", f.config_path, "run config JSON (train section)");
  train->add_option("--dataset", f.dataset, "dataset directory or train container")->required();
  train->add_option("--out", f.out, "checkpoint path")->required();

  auto* attack = app.add_subcommand("attack", "generate adversarial examples");
  attack->add_option("--mode", f.mode, "fgsm | targeted | least-likely");
  attack->add_option("--epsilon", f.epsilon, "L-inf budget in [0,1]");
  attack->add_option("--lambda", f.lambda, "targeted attack loss weight");
  attack->add_option("--steps", f.steps, "iteration count");
  attack->add_option("--step-size", f.step_size, "per-step size");
  attack->add_option("--seed", f.seed, "attack seed (target sampling)");
  attack->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  attack->add_option("--dataset", f.dataset, "source container")->required();
  attack->add_option("--out", f.out, "adversarial container path")->required();

  auto* record = app.add_subcommand("record", "record per-neuron activations");
  record->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  record->add_option("--dataset", f.dataset, "clean container")->required();
  record->add_option("--adv", f.adv, "adversarial container (optional)");
  record->add_option("--tap", f.tap, "feature tap name");
  record->add_option("--quantile-q", f.quantile_q, "activation policy quantile");
  record->add_option("--out", f.out, "activation store path")->required();

  auto* analyze = app.add_subcommand("analyze", "per-neuron consistency table and means");
  analyze->add_option("--store", f.store, "activation store")->required();
  analyze->add_option("--taxonomy", f.taxonomy, "taxonomy JSON")->required();
  analyze->add_option("--sigma", f.sigma, "correlation decay rate");
  analyze->add_option("--quantile-q", f.quantile_q, "activation policy quantile");
  analyze->add_option("--bins", f.bins, "histogram bins");
  analyze->add_option("--out", f.out, "write the per-neuron CSV here");

  auto* dissect = app.add_subcommand("dissect", "concept-alignment ratios (IoU)");
  dissect->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  dissect->add_option("--dataset", f.dataset, "mask container")->required();
  dissect->add_option("--adv", f.adv, "adversarial counterpart (optional)");
  dissect->add_option("--tap", f.tap, "feature tap name");
  dissect->add_option("--tau", f.tau, "alignment IoU threshold");
  dissect->add_option("--quantile-q", f.mask_quantile, "mask threshold quantile");
  dissect->add_option("--out", f.out, "write the report here");

  auto* figures = app.add_subcommand("figures", "histograms and top-activation galleries");
  figures->add_option("--store", f.store, "activation store")->required();
  figures->add_option("--taxonomy", f.taxonomy, "taxonomy JSON")->required();
  figures->add_option("--dataset", f.dataset, "clean container backing the store")->required();
  figures->add_option("--adv", f.adv, "adversarial container backing the store");
  figures->add_option("--sigma", f.sigma, "correlation decay rate");
  figures->add_option("--quantile-q", f.quantile_q, "activation policy quantile");
  figures->add_option("--bins", f.bins, "histogram bins");
  figures->add_option("--neurons", f.neurons, "gallery neuron count");
  figures->add_option("--topk", f.topk, "images per gallery");
  figures->add_option("--out", f.out, "output directory")->required();

  auto* reproduce = app.add_subcommand("reproduce", "full pipeline into one directory");
  reproduce->add_option("--seed", f.seed, "run seed");
  reproduce->add_option("--out", f.out, "run directory")->required();
  reproduce->add_option("--config", f.config_path, "run config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (generate->parsed()) return run_generate(f);
    if (train->parsed()) return run_train(f);
    if (attack->parsed()) return run_attack(f);
    if (record->parsed()) return run_record(f);
    if (analyze->parsed()) return run_analyze(f);
    if (dissect->parsed()) return run_dissect(f);
    if (figures->parsed()) return run_figures(f);
    if (reproduce->parsed()) return run_reproduce(f);
  } catch (const consis::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
