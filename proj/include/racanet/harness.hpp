#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "racanet/data/dataset.hpp"
#include "racanet/eval/heatmap.hpp"
#include "racanet/train/loops.hpp"

namespace racanet::harness {

namespace fs = std::filesystem;

struct CliOptions {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string ckpt;
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> ka, kn;
  std::optional<double> lambda_cons;
  bool no_cons = false;
  bool no_pretrain = false;
  std::string axis;
  std::vector<std::string> values;
};

// Precedence: CLI flags > config file > built-in defaults. The config file may
// carry "model" and "synth" sections.
inline json load_config_sections(const std::string& path) {
  if (path.empty()) return json::object();
  json j = load_json_file(path);
  detail::check_keys(j, {"model", "synth"}, "config file");
  return j;
}

inline ModelConfig resolve_model_config(const CliOptions& opt) {
  json sections = load_config_sections(opt.config_path);
  ModelConfig cfg = sections.contains("model") ? model_config_from_json(sections["model"])
                                               : ModelConfig::desk();
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.ka) {
    cfg.ka = *opt.ka;
  }
  if (opt.kn) cfg.kn = *opt.kn;
  if (opt.lambda_cons) cfg.lambda_cons = *opt.lambda_cons;
  if (opt.no_cons) cfg.lambda_cons = 0.0;
  cfg.validate();
  return cfg;
}

inline SynthConfig resolve_synth_config(const CliOptions& opt) {
  json sections = load_config_sections(opt.config_path);
  SynthConfig cfg = sections.contains("synth") ? synth_config_from_json(sections["synth"])
                                               : SynthConfig{};
  if (opt.seed) cfg.scene.seed = *opt.seed;
  cfg.scene.validate();
  return cfg;
}

inline std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<json>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("malformed-file", "cannot write " + path);
  f << "epoch,game0,game1,game2,game3,rmse\n";
  for (const auto& r : rows) {
    f << r["epoch"].get<int>() << "," << fmt4(r["game0"].get<double>()) << ","
      << fmt4(r["game1"].get<double>()) << "," << fmt4(r["game2"].get<double>()) << ","
      << fmt4(r["game3"].get<double>()) << "," << fmt4(r["rmse"].get<double>()) << "\n";
  }
}

inline std::ofstream open_jsonl(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("malformed-file", "cannot write " + path);
  return f;
}

// ---- synth --------------------------------------------------------------------

inline int run_synth(const CliOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError("config", "synth needs --out");
  SynthConfig cfg = resolve_synth_config(opt);
  fs::create_directories(opt.out_dir);
  dump_json_file(opt.out_dir + "/config.json", json{{"synth", to_json(cfg)}});

  struct Split {
    const char* name;
    int n;
    uint64_t offset;
  };
  const Split splits[3] = {{"train", cfg.n_train, 0ull},
                           {"val", cfg.n_val, 100000ull},
                           {"test", cfg.n_test, 200000ull}};
  for (const auto& sp : splits) {
    std::vector<SamplePair> samples;
    samples.reserve(static_cast<size_t>(sp.n));
    for (int i = 0; i < sp.n; ++i) {
      SceneSpec scene = cfg.scene;
      scene.seed = cfg.scene.seed + sp.offset + static_cast<uint64_t>(i);
      samples.push_back(generate_scene(scene));
    }
    write_dataset(opt.out_dir + "/" + sp.name, samples);
    size_t points = 0;
    for (const auto& s : samples) points += s.points.size();
    std::cout << sp.name << ": " << sp.n << " samples, " << points << " points ("
              << (sp.n ? static_cast<double>(points) / sp.n : 0.0) << " per sample)\n";
  }
  return 0;
}

// ---- pretrain -----------------------------------------------------------------

inline int run_pretrain(const CliOptions& opt) {
  if (opt.data_dir.empty() || opt.out_dir.empty())
    throw ConfigError("config", "pretrain needs --data and --out");
  ModelConfig cfg = resolve_model_config(opt);
  if (opt.epochs) cfg.epochs_pretrain = *opt.epochs;
  if (!fs::is_directory(opt.data_dir)) throw DataError("dataset-missing", opt.data_dir);

  auto train = with_labels(read_dataset(opt.data_dir + "/train"), cfg);
  std::vector<SamplePair> val;
  if (fs::is_directory(opt.data_dir + "/val")) val = read_dataset(opt.data_dir + "/val");

  fs::create_directories(opt.out_dir);
  dump_json_file(opt.out_dir + "/config.json", json{{"model", to_json(cfg)}});

  RacaNet model(cfg);
  nn::AdamW adam(cfg.lr_pretrain, cfg.weight_decay);
  std::ofstream log = open_jsonl(opt.out_dir + "/pretrain_log.jsonl");
  PretrainOutcome outcome =
      pretrain_loop(model, adam, train, [&](const json& rec) { log << rec.dump() << "\n"; });
  save_checkpoint(model, &adam, cfg.epochs_pretrain, "pretrain", opt.out_dir + "/pretrain.ckpt");

  if (!val.empty()) {
    double acc = 0.0;
    int n = 0;
    for (const auto& s : val) {
      double rate = shift_recovery_rate(model, s, make_soft_labels(s, cfg.sigma_policy, cfg.smooth_sigma));
      if (rate >= 0) {
        acc += rate;
        ++n;
      }
    }
    if (n > 0) std::cout << "shift-recovery(val): " << fmt4(acc / n) << "\n";
  }
  std::cout << "L_warm: first " << outcome.first_loss << " final " << outcome.final_loss << " ("
            << outcome.steps << " steps)\n";
  std::cout << "checkpoint: " << opt.out_dir << "/pretrain.ckpt\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

inline int run_train(const CliOptions& opt) {
  if (opt.data_dir.empty() || opt.out_dir.empty())
    throw ConfigError("config", "train needs --data and --out");
  ModelConfig cfg = resolve_model_config(opt);
  if (opt.epochs) cfg.epochs_train = *opt.epochs;
  if (!fs::is_directory(opt.data_dir)) throw DataError("dataset-missing", opt.data_dir);

  auto train = with_labels(read_dataset(opt.data_dir + "/train"), cfg);
  std::vector<SamplePair> val;
  if (fs::is_directory(opt.data_dir + "/val")) val = read_dataset(opt.data_dir + "/val");

  fs::create_directories(opt.out_dir);
  dump_json_file(opt.out_dir + "/config.json", json{{"model", to_json(cfg)}});

  std::optional<std::string> ckpt;
  if (!opt.no_pretrain && !opt.ckpt.empty()) ckpt = opt.ckpt;
  RacaNet model = build(cfg, ckpt);
  nn::AdamW adam(cfg.lr_train, cfg.weight_decay);
  std::ofstream log = open_jsonl(opt.out_dir + "/train_log.jsonl");
  TrainOutcome outcome = train_loop(model, adam, train, val, opt.out_dir + "/best.ckpt",
                                    [&](const json& rec) { log << rec.dump() << "\n"; });
  save_checkpoint(model, &adam, cfg.epochs_train, "train", opt.out_dir + "/last.ckpt");
  write_metrics_csv(opt.out_dir + "/metrics.csv", outcome.eval_rows);
  json summary{{"best_epoch", outcome.best_epoch},
               {"best_game0", outcome.best.game[0]},
               {"best_rmse", outcome.best.rmse},
               {"steps", outcome.steps}};
  dump_json_file(opt.out_dir + "/summary.json", summary);
  std::cout << "best GAME0 " << fmt4(outcome.best.game[0]) << " (epoch " << outcome.best_epoch
            << "), RMSE " << fmt4(outcome.best.rmse) << "\n";
  return 0;
}

// ---- eval ---------------------------------------------------------------------

inline void emit_heatmaps(const RacaNet& model, const std::vector<SamplePair>& samples,
                          const std::string& dir) {
  fs::create_directories(dir);
  ad::NoGradGuard ng;
  for (size_t i = 0; i < samples.size(); ++i) {
    const SamplePair& s = samples[i];
    std::string id = sample_id(static_cast<int>(i));
    SamplePair padded = s;
    padded.rgb = pad_reflect_to_multiple(s.rgb, 32);
    padded.thermal = pad_reflect_to_multiple(s.thermal, 32);
    ForwardResult f = model.forward(padded);

    // The seven-column layout: inputs, stage-1 prior and reliabilities, the
    // fused feature (channel mean) and the predicted density.
    write_png(dir + "/" + id + "_rgb.png", s.rgb);
    write_png(dir + "/" + id + "_t.png", s.thermal);
    write_heatmap_png(dir + "/" + id + "_prior1.png", f.stages[0].prior->value);
    write_heatmap_png(dir + "/" + id + "_rel_r1.png", f.stages[0].rel_r->value);
    write_heatmap_png(dir + "/" + id + "_rel_t1.png", f.stages[0].rel_t->value);
    write_heatmap_png(dir + "/" + id + "_fout1.png", channel_mean(f.stages[0].fused->value));
    write_heatmap_png(dir + "/" + id + "_pred.png", f.density->value);

    TensorArchive raw;
    raw.items["prior1"] = f.stages[0].prior->value;
    raw.items["rel_r1"] = f.stages[0].rel_r->value;
    raw.items["rel_t1"] = f.stages[0].rel_t->value;
    raw.items["fout1"] = f.stages[0].fused->value;
    raw.items["pred"] = f.density->value;
    raw.save(dir + "/" + id + "_maps.bin");
  }
}

inline int run_eval(const CliOptions& opt) {
  if (opt.ckpt.empty() || opt.data_dir.empty() || opt.out_dir.empty())
    throw ConfigError("config", "eval needs --ckpt, --data and --out");
  ModelConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = resolve_model_config(opt);
  } else {
    cfg = config_from_checkpoint(opt.ckpt);
    CliOptions tweaked = opt;
    if (tweaked.ka) cfg.ka = *tweaked.ka;
    if (tweaked.kn) cfg.kn = *tweaked.kn;
    cfg.validate();
  }
  RacaNet model = load_model(cfg, opt.ckpt);
  std::vector<SamplePair> samples = read_dataset(opt.data_dir);

  fs::create_directories(opt.out_dir);
  dump_json_file(opt.out_dir + "/config.json", json{{"model", to_json(cfg)}});
  EvalResult ev = evaluate(model, samples);
  std::vector<json> rows{{{"epoch", 0},
                          {"game0", ev.metrics.game[0]},
                          {"game1", ev.metrics.game[1]},
                          {"game2", ev.metrics.game[2]},
                          {"game3", ev.metrics.game[3]},
                          {"rmse", ev.metrics.rmse}}};
  write_metrics_csv(opt.out_dir + "/metrics.csv", rows);
  json summary{{"game0", ev.metrics.game[0]},   {"game1", ev.metrics.game[1]},
               {"game2", ev.metrics.game[2]},   {"game3", ev.metrics.game[3]},
               {"rmse", ev.metrics.rmse},       {"pred_counts", ev.pred_counts},
               {"gt_counts", ev.gt_counts}};
  dump_json_file(opt.out_dir + "/summary.json", summary);
  emit_heatmaps(model, samples, opt.out_dir + "/heatmaps");
  std::cout << "GAME0 " << fmt4(ev.metrics.game[0]) << " GAME1 " << fmt4(ev.metrics.game[1])
            << " GAME2 " << fmt4(ev.metrics.game[2]) << " GAME3 " << fmt4(ev.metrics.game[3])
            << " RMSE " << fmt4(ev.metrics.rmse) << "\n";
  return 0;
}

// ---- ablate -------------------------------------------------------------------

struct AblateCell {
  std::string value;
  ModelConfig cfg;
  bool use_pretrain = true;
};

inline std::vector<AblateCell> ablate_cells(const ModelConfig& base, const std::string& axis,
                                            const std::vector<std::string>& values) {
  std::vector<AblateCell> cells;
  for (const auto& v : values) {
    AblateCell c;
    c.value = v;
    c.cfg = base;
    try {
      if (axis == "ka")
        c.cfg.ka = std::stoi(v);
      else if (axis == "kn")
        c.cfg.kn = std::stoi(v);
      else if (axis == "lambda_cons")
        c.cfg.lambda_cons = std::stod(v);
      else if (axis == "components") {
        if (v == "full") {
        } else if (v == "no_pretrain")
          c.use_pretrain = false;
        else if (v == "no_cons")
          c.cfg.lambda_cons = 0.0;
        else if (v == "none") {
          c.use_pretrain = false;
          c.cfg.lambda_cons = 0.0;
        } else
          throw ConfigError("config", "unknown components value '" + v + "'");
      } else
        throw ConfigError("config", "unknown ablation axis '" + axis + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("config", "bad value '" + v + "' for axis " + axis);
    }
    c.cfg.validate();
    cells.push_back(c);
  }
  return cells;
}

// One training run per axis value on the desk benchmark; completed cells are
// skipped on re-run. Pretraining checkpoints are cached per matching radius.
inline int run_ablate(const CliOptions& opt) {
  if (opt.data_dir.empty() || opt.out_dir.empty() || opt.axis.empty() || opt.values.empty())
    throw ConfigError("config", "ablate needs --data, --out, --axis and --values");
  ModelConfig base = resolve_model_config(opt);
  if (opt.epochs) base.epochs_train = *opt.epochs;
  if (!fs::is_directory(opt.data_dir)) throw DataError("dataset-missing", opt.data_dir);
  fs::create_directories(opt.out_dir);

  auto train = with_labels(read_dataset(opt.data_dir + "/train"), base);
  std::vector<SamplePair> val, test;
  if (fs::is_directory(opt.data_dir + "/val")) val = read_dataset(opt.data_dir + "/val");
  test = fs::is_directory(opt.data_dir + "/test") ? read_dataset(opt.data_dir + "/test") : val;
  if (test.empty()) throw DataError("empty-dataset", "ablate needs a val or test split");

  auto pretrain_for = [&](const ModelConfig& cfg) -> std::string {
    std::string dir = opt.out_dir + "/_pretrain_kd" + std::to_string(cfg.k_delta());
    std::string path = dir + "/pretrain.ckpt";
    if (fs::exists(dir + "/done.json")) return path;
    fs::create_directories(dir);
    RacaNet model(cfg);
    nn::AdamW adam(cfg.lr_pretrain, cfg.weight_decay);
    pretrain_loop(model, adam, train);
    save_checkpoint(model, &adam, cfg.epochs_pretrain, "pretrain", path);
    dump_json_file(dir + "/done.json", json{{"k_delta", cfg.k_delta()}});
    return path;
  };

  std::vector<json> report;
  for (const AblateCell& cell : ablate_cells(base, opt.axis, opt.values)) {
    std::string cell_dir = opt.out_dir + "/" + opt.axis + "_" + cell.value;
    std::string done_path = cell_dir + "/done.json";
    if (fs::exists(done_path)) {
      report.push_back(load_json_file(done_path));
      std::cout << opt.axis << "=" << cell.value << ": cached\n";
      continue;
    }
    fs::create_directories(cell_dir);
    dump_json_file(cell_dir + "/config.json", json{{"model", to_json(cell.cfg)}});

    std::optional<std::string> ckpt;
    if (cell.use_pretrain) ckpt = pretrain_for(cell.cfg);
    RacaNet model = build(cell.cfg, ckpt);
    nn::AdamW adam(cell.cfg.lr_train, cell.cfg.weight_decay);
    std::ofstream log = open_jsonl(cell_dir + "/train_log.jsonl");
    TrainOutcome outcome = train_loop(model, adam, train, val, cell_dir + "/best.ckpt",
                                      [&](const json& rec) { log << rec.dump() << "\n"; });
    std::string eval_ckpt = outcome.best_epoch >= 0 ? cell_dir + "/best.ckpt" : cell_dir + "/last.ckpt";
    save_checkpoint(model, &adam, cell.cfg.epochs_train, "train", cell_dir + "/last.ckpt");
    RacaNet best = load_model(cell.cfg, fs::exists(eval_ckpt) ? eval_ckpt : cell_dir + "/last.ckpt");
    EvalResult ev = evaluate(best, test);
    json row{{"axis", opt.axis},          {"value", cell.value},
             {"game0", ev.metrics.game[0]}, {"game1", ev.metrics.game[1]},
             {"game2", ev.metrics.game[2]}, {"game3", ev.metrics.game[3]},
             {"rmse", ev.metrics.rmse},     {"ckpt", eval_ckpt}};
    dump_json_file(done_path, row);
    report.push_back(row);
    std::cout << opt.axis << "=" << cell.value << ": GAME0 " << fmt4(ev.metrics.game[0])
              << " RMSE " << fmt4(ev.metrics.rmse) << "\n";
  }

  std::ofstream f(opt.out_dir + "/report.csv", std::ios::trunc);
  f << "axis,value,game0,game1,game2,game3,rmse,ckpt\n";
  for (const auto& r : report)
    f << r["axis"].get<std::string>() << "," << r["value"].get<std::string>() << ","
      << fmt4(r["game0"].get<double>()) << "," << fmt4(r["game1"].get<double>()) << ","
      << fmt4(r["game2"].get<double>()) << "," << fmt4(r["game3"].get<double>()) << ","
      << fmt4(r["rmse"].get<double>()) << "," << r["ckpt"].get<std::string>() << "\n";
  return 0;
}

}  // namespace racanet::harness
