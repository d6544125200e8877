#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "consis/activation_store.hpp"
#include "consis/attacks.hpp"
#include "consis/checkpoint.hpp"
#include "consis/dissection.hpp"
#include "consis/figures.hpp"
#include "consis/interpret.hpp"
#include "consis/synth.hpp"
#include "consis/taxonomy.hpp"
#include "consis/training.hpp"
#include "consis/version.hpp"

namespace consis {

// Whole-run configuration; one file drives every stage.
struct RunConfig {
  std::uint64_t seed = 7;
  double sigma = 2.0;
  SynthSpec dataset;
  TrainConfig train;  // mode is set per run; alpha/beta/epsilon feed the
                      // adversarial variant
  ActivationPolicy metric_policy;
  DissectionConfig dissection;
  double eval_epsilon = 8.0 / 255.0;  // FGSM strength for the evaluation sets
  AttackConfig least_likely{AttackMode::least_likely, 32.0 / 255.0, 5.0, 20,
                            32.0 / 255.0 / 5.0, 0};
  int histogram_bins = 20;
  int gallery_neurons = 4;
  int gallery_topk = 8;

  void validate() const {
    dataset.validate();
    train.validate();
    metric_policy.validate();
    dissection.validate();
    least_likely.validate();
    require(eval_epsilon >= 0.0 && eval_epsilon <= 1.0, ErrorCode::invalid_config,
            "eval_epsilon must lie in [0,1]");
    require(histogram_bins >= 1, ErrorCode::invalid_config, "histogram_bins >= 1");
    require(gallery_neurons >= 0 && gallery_topk >= 1, ErrorCode::invalid_config,
            "gallery settings must be positive");
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"sigma", sigma},
            {"dataset", dataset.to_json()},
            {"train", train.to_json()},
            {"metric_policy", {{"quantile_q", metric_policy.quantile_q}}},
            {"dissection",
             {{"tap", dissection.tap},
              {"quantile_q", dissection.quantile_q},
              {"tau", dissection.tau}}},
            {"eval_epsilon", eval_epsilon},
            {"least_likely",
             {{"epsilon", least_likely.epsilon},
              {"steps", least_likely.steps},
              {"step_size", least_likely.step_size}}},
            {"histogram_bins", histogram_bins},
            {"gallery_neurons", gallery_neurons},
            {"gallery_topk", gallery_topk}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.sigma = j.value("sigma", c.sigma);
    if (j.contains("dataset")) c.dataset = SynthSpec::from_json(j.at("dataset"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("metric_policy"))
      c.metric_policy.quantile_q =
          j.at("metric_policy").value("quantile_q", c.metric_policy.quantile_q);
    if (j.contains("dissection")) {
      const auto& d = j.at("dissection");
      c.dissection.tap = d.value("tap", c.dissection.tap);
      c.dissection.quantile_q = d.value("quantile_q", c.dissection.quantile_q);
      c.dissection.tau = d.value("tau", c.dissection.tau);
    }
    c.eval_epsilon = j.value("eval_epsilon", c.eval_epsilon);
    if (j.contains("least_likely")) {
      const auto& a = j.at("least_likely");
      c.least_likely.epsilon = a.value("epsilon", c.least_likely.epsilon);
      c.least_likely.steps = a.value("steps", c.least_likely.steps);
      c.least_likely.step_size = a.value("step_size", c.least_likely.step_size);
    }
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
    c.gallery_neurons = j.value("gallery_neurons", c.gallery_neurons);
    c.gallery_topk = j.value("gallery_topk", c.gallery_topk);
    c.validate();
    return c;
  }
};

inline RunConfig load_run_config(const std::string& path) {
  try {
    return RunConfig::from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::invalid_config, std::string("config parse: ") + e.what());
  }
}

struct ModelOutcome {
  std::string name;
  double clean_accuracy = 0.0;
  double fgsm_accuracy = 0.0;
  double mean_consis = 0.0;
  double mean_consis_adv = 0.0;
  std::map<std::string, double> dissect_clean_ratio;
  std::map<std::string, double> dissect_adv_ratio;
};

struct RunSummary {
  std::uint64_t seed = 0;
  std::string out_dir;
  ModelOutcome normal;
  ModelOutcome adversarial;
  std::string summary_csv;
  std::string manifest_hash;  // hash of manifest.json bytes
};

namespace pipeline_detail {

struct StageClock {
  std::ostream* log;
  std::string stage;
  std::chrono::steady_clock::time_point start;

  StageClock(std::ostream* log, const std::string& stage)
      : log(log), stage(stage), start(std::chrono::steady_clock::now()) {
    if (log) *log << "[stage] " << stage << "..." << std::flush;
  }
  ~StageClock() {
    if (log) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
              .count();
      char buf[64];
      std::snprintf(buf, sizeof(buf), " %.1fs\n", secs);
      *log << buf << std::flush;
    }
  }
};

template <typename Fn>
auto run_stage(std::ostream* log, const std::string& stage, Fn&& fn) {
  StageClock clock(log, stage);
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "stage '" + stage + "': " + e.what());
  }
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace pipeline_detail

// Full desk-scale run: generate data, train both models, attack, record,
// analyze, dissect, draw figures, evaluate, and write summary plus manifest.
// Every stage is a pure function of (config, seed); rerunning into any
// directory reproduces identical artifact bytes.
inline RunSummary reproduce(const RunConfig& config, const std::string& out_dir,
                            std::ostream* log = nullptr) {
  using pipeline_detail::run_stage;
  namespace fs = std::filesystem;
  config.validate();
  fs::create_directories(out_dir);
  const auto path_of = [&](const std::string& rel) {
    return (fs::path(out_dir) / rel).string();
  };

  RunSummary summary;
  summary.seed = config.seed;
  summary.out_dir = out_dir;
  std::vector<std::string> artifacts;  // relative paths

  const auto save_artifact = [&](const std::string& rel) { artifacts.push_back(rel); };

  // generate
  SynthOutput data = run_stage(log, "generate", [&] {
    SynthOutput out = generate_dataset(config.dataset, mix_seed(config.seed, 1));
    save_dataset(out.train, path_of("train.cds"));
    save_dataset(out.val, path_of("val.cds"));
    save_dataset(out.dissect, path_of("dissect.cds"));
    write_text_file(path_of("taxonomy.json"), out.taxonomy_doc.dump(2) + "\n");
    return out;
  });
  save_artifact("train.cds");
  save_artifact("val.cds");
  save_artifact("dissect.cds");
  save_artifact("taxonomy.json");

  const std::string config_hash = hash_string_hex(config.to_json().dump());

  // train both variants
  const auto train_model = [&](const std::string& mode, std::uint64_t salt) {
    TrainConfig tc = config.train;
    tc.mode = mode;
    tc.seed = mix_seed(config.seed, salt);
    TrainState<float> state = train(data.train, &data.val, tc);
    const std::string name = mode == "normal" ? "normal" : "adversarial";
    save_checkpoint(state.model, path_of("model_" + name + ".ckpt"), config_hash);
    std::string csv = "epoch,clean_loss,adv_loss,consistent_loss,total_loss,train_acc,val_acc\n";
    for (std::size_t e = 0; e < state.log.size(); ++e) {
      const auto& m = state.log[e];
      csv += std::to_string(e) + "," + pipeline_detail::format_double(m.clean_loss) +
             "," + pipeline_detail::format_double(m.adv_loss) + "," +
             pipeline_detail::format_double(m.consistent_loss) + "," +
             pipeline_detail::format_double(m.total_loss) + "," +
             pipeline_detail::format_double(m.train_accuracy) + "," +
             pipeline_detail::format_double(m.val_accuracy) + "\n";
    }
    write_text_file(path_of("train_log_" + name + ".csv"), csv);
    save_artifact("model_" + name + ".ckpt");
    save_artifact("train_log_" + name + ".csv");
    return state.model;
  };
  const ClassifierModel<float> model_normal =
      run_stage(log, "train-normal", [&] { return train_model("normal", 2); });
  const ClassifierModel<float> model_adv = run_stage(
      log, "train-adversarial", [&] { return train_model("adversarial", 3); });

  // adversarial evaluation sets: FGSM on val, least-likely on the mask set,
  // each crafted against the model under test
  struct PerModel {
    const ClassifierModel<float>* model;
    std::string name;
    Dataset adv_val;
    Dataset adv_dissect;
    ActivationRecordStore store;
    LayerSummary summary;
    AlignmentReport alignment;
  };
  PerModel models[2] = {{&model_normal, "normal"}, {&model_adv, "adversarial"}};

  run_stage(log, "attack", [&] {
    for (auto& pm : models) {
      AttackConfig fg;
      fg.mode = AttackMode::fgsm;
      fg.epsilon = config.eval_epsilon;
      fg.seed = mix_seed(config.seed, 10);
      pm.adv_val = attack_dataset(*pm.model, data.val, fg);
      save_dataset(pm.adv_val, path_of("adv_val_" + pm.name + ".cds"));
      save_artifact("adv_val_" + pm.name + ".cds");

      AttackConfig ll = config.least_likely;
      ll.mode = AttackMode::least_likely;
      ll.seed = mix_seed(config.seed, 11);
      pm.adv_dissect = attack_dataset(*pm.model, data.dissect, ll);
      save_dataset(pm.adv_dissect, path_of("adv_dissect_" + pm.name + ".cds"));
      save_artifact("adv_dissect_" + pm.name + ".cds");
    }
    return 0;
  });

  run_stage(log, "record", [&] {
    for (auto& pm : models) {
      pm.store = record_activations(*pm.model, {&data.val, &pm.adv_val},
                                    config.dissection.tap);
      pm.store.recorded_quantile_q = config.metric_policy.quantile_q;
      save_store(pm.store, path_of("store_" + pm.name + ".cas"));
      save_artifact("store_" + pm.name + ".cas");
    }
    return 0;
  });

  const TaxonomyTree tree = parse_taxonomy(data.taxonomy_doc);
  const CorrelationMatrix A = correlation_matrix(tree, config.sigma);

  run_stage(log, "analyze", [&] {
    for (auto& pm : models) {
      pm.summary = layer_summary(pm.store, config.metric_policy, A,
                                 config.histogram_bins);
      write_summary_csv(pm.summary, path_of("reports_consis_" + pm.name + ".csv"));
      save_artifact("reports_consis_" + pm.name + ".csv");
    }
    return 0;
  });

  run_stage(log, "dissect", [&] {
    for (auto& pm : models) {
      pm.alignment =
          alignment_table(*pm.model, data.dissect, &pm.adv_dissect, config.dissection);
      write_text_file(path_of("dissect_" + pm.name + ".txt"),
                      alignment_report_text(pm.alignment, pm.name));
      save_artifact("dissect_" + pm.name + ".txt");
    }
    return 0;
  });

  run_stage(log, "figures", [&] {
    FigureInputs fig;
    fig.layer = config.dissection.tap;
    fig.summaries = {{"normal", &models[0].summary},
                     {"adv-trained", &models[1].summary}};
    // galleries: the normal model's most consistent neurons
    std::vector<NeuronSummary> ranked = models[0].summary.rows;
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.consis != b.consis) return a.consis > b.consis;
      return a.neuron < b.neuron;
    });
    const int n_galleries =
        std::min<int>(config.gallery_neurons, static_cast<int>(ranked.size()));
    for (int i = 0; i < n_galleries; ++i)
      fig.galleries.push_back(
          make_gallery(models[0].store, static_cast<int>(ranked[i].neuron),
                       static_cast<std::size_t>(config.gallery_topk)));
    const std::size_t val_count = data.val.size();
    fig.image_of = [&](const GalleryEntry& entry) {
      return entry.image_column < val_count
                 ? data.val.image(entry.image_column)
                 : models[0].adv_val.image(entry.image_column - val_count);
    };
    for (const auto& path : emit_figures(fig, out_dir))
      save_artifact(fs::relative(path, out_dir).string());
    return 0;
  });

  run_stage(log, "evaluate", [&] {
    for (auto& pm : models) {
      pm.alignment.tau = config.dissection.tau;
      ModelOutcome& outcome =
          pm.name == "normal" ? summary.normal : summary.adversarial;
      outcome.name = pm.name;
      outcome.clean_accuracy = evaluate_accuracy(*pm.model, data.val);
      outcome.fgsm_accuracy = evaluate_accuracy(*pm.model, pm.adv_val);
      outcome.mean_consis = pm.summary.mean_consis;
      outcome.mean_consis_adv = pm.summary.mean_consis_adv;
      outcome.dissect_clean_ratio = pm.alignment.clean_ratio;
      outcome.dissect_adv_ratio = pm.alignment.adv_ratio;
    }
    return 0;
  });

  // summary tables
  run_stage(log, "summary", [&] {
    using pipeline_detail::format_double;
    std::string csv = "section,model,metric,value\n";
    for (const ModelOutcome* o : {&summary.normal, &summary.adversarial}) {
      csv += "consis," + o->name + ",mean_consis," + format_double(o->mean_consis) + "\n";
      csv += "consis," + o->name + ",mean_consis_adv," +
             format_double(o->mean_consis_adv) + "\n";
      csv += "accuracy," + o->name + ",clean_top1," +
             format_double(o->clean_accuracy) + "\n";
      csv += "accuracy," + o->name + ",fgsm_top1," + format_double(o->fgsm_accuracy) +
             "\n";
      for (const auto& [cat, ratio] : o->dissect_clean_ratio)
        csv += "dissection," + o->name + "," + cat + "_clean," + format_double(ratio) +
               "\n";
      for (const auto& [cat, ratio] : o->dissect_adv_ratio)
        csv += "dissection," + o->name + "," + cat + "_adv," + format_double(ratio) +
               "\n";
    }
    csv += "meta,run,seed," + std::to_string(config.seed) + "\n";
    summary.summary_csv = csv;
    write_text_file(path_of("summary.csv"), csv);
    save_artifact("summary.csv");

    std::string txt;
    char line[256];
    txt += "neuron consistency (tap " + config.dissection.tap + ", sigma " +
           format_double(config.sigma) + ")\n";
    std::snprintf(line, sizeof(line), "  %-14s %12s %12s\n", "model", "consis",
                  "consis_adv");
    txt += line;
    for (const ModelOutcome* o : {&summary.normal, &summary.adversarial}) {
      std::snprintf(line, sizeof(line), "  %-14s %12.4f %12.4f\n", o->name.c_str(),
                    o->mean_consis, o->mean_consis_adv);
      txt += line;
    }
    txt += "\naligned-neuron ratio (%), clean -> adversarial images\n";
    std::snprintf(line, sizeof(line), "  %-14s", "model");
    txt += line;
    for (const auto& [cat, _] : summary.normal.dissect_clean_ratio) {
      std::snprintf(line, sizeof(line), " %16s", cat.c_str());
      txt += line;
    }
    txt += "\n";
    for (const ModelOutcome* o : {&summary.normal, &summary.adversarial}) {
      std::snprintf(line, sizeof(line), "  %-14s", o->name.c_str());
      txt += line;
      for (const auto& [cat, clean_ratio] : o->dissect_clean_ratio) {
        std::snprintf(line, sizeof(line), "   %5.1f -> %5.1f ", 100.0 * clean_ratio,
                      100.0 * o->dissect_adv_ratio.at(cat));
        txt += line;
      }
      txt += "\n";
    }
    txt += "\naccuracy (%), clean / FGSM eps=" + format_double(config.eval_epsilon) +
           "\n";
    for (const ModelOutcome* o : {&summary.normal, &summary.adversarial}) {
      std::snprintf(line, sizeof(line), "  %-14s %6.2f / %6.2f\n", o->name.c_str(),
                    100.0 * o->clean_accuracy, 100.0 * o->fgsm_accuracy);
      txt += line;
    }
    write_text_file(path_of("summary.txt"), txt);
    save_artifact("summary.txt");
    return 0;
  });

  // manifest: relative paths + content hashes, written last
  run_stage(log, "manifest", [&] {
    std::sort(artifacts.begin(), artifacts.end());
    nlohmann::json listed = nlohmann::json::array();
    for (const auto& rel : artifacts) {
      const std::string full = path_of(rel);
      listed.push_back({{"path", rel},
                        {"bytes", fs::file_size(full)},
                        {"fnv1a64", hash_file_hex(full)}});
    }
    const nlohmann::json manifest{{"tool_version", kToolVersion},
                                  {"seed", config.seed},
                                  {"config", config.to_json()},
                                  {"config_hash", config_hash},
                                  {"artifacts", listed}};
    write_text_file(path_of("manifest.json"), manifest.dump(2) + "\n");
    summary.manifest_hash = hash_file_hex(path_of("manifest.json"));
    return 0;
  });

  return summary;
}

}  // namespace consis
