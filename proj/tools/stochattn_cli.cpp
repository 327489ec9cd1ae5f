// stochattn: train, evaluate and compare transformer text classifiers with
// deterministic, stochastic and hierarchical stochastic attention.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 data or checkpoint
// error, 3 training divergence, 4 verification failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stochattn.hpp"

namespace fs = std::filesystem;
using namespace stochattn;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kDiverged = 3, kVerifyFailed = 4 };

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> runs;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config) {
  auto* config = cmd->add_option("--config", f.config_path, "Config file (key = value lines)");
  if (needs_config) config->required();
  cmd->add_option("--seed", f.seed, "Top-level seed; overrides the config");
  cmd->add_option("--out", f.out, "Output directory; overrides the config");
  cmd->add_option("--runs", f.runs, "Inference runs T; overrides the config (default 10)");
  cmd->add_option("--set", f.overrides, "Extra key=value override, repeatable");
}

/// File values first, then --set, then the dedicated flags.
RunConfig resolve_config(const CommonFlags& f) {
  RunConfig config = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
  for (const auto& kv : f.overrides) apply_config_text(config, kv, "--set");
  if (f.seed) config.seed = *f.seed;
  if (f.out) config.out = *f.out;
  if (f.runs) config.runs = *f.runs;
  config.validate();
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path make_out_dir(const RunConfig& config) {
  fs::path dir(config.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

ModelConfig with_mode(ModelConfig m, AttentionMode mode) {
  m.attention.mode = mode;
  return m;
}

struct Evaluation {
  MethodResult row;
  std::vector<UncertaintyReport> reports;
  std::string examples_csv;
};

Evaluation evaluate_predictor(const std::string& method, const Predictor& predictor, const LabeledDataset& id,
                              const LabeledDataset* ood, const RunConfig& config) {
  const RngStream inference = RngStream::for_component(config.seed, "inference");
  Evaluation ev;
  ev.row.method = method;
  const auto id_truth = id.labels();
  const auto id_runs = multi_run_predict(predictor, id, config.runs, inference.split(0));
  ev.row.id = summarize(id_runs, id_truth, config.train.metric, method, "ID", config.seed);
  const auto id_examples = example_report(id_runs, id_truth);
  ev.row.id_prob_std = mean_prob_correct_std(id_examples);
  ev.reports.push_back(ev.row.id);
  append_examples_csv(ev.examples_csv, id_examples, "id");
  if (ood) {
    const auto ood_truth = ood->labels();
    const auto ood_runs = multi_run_predict(predictor, *ood, config.runs, inference.split(1));
    ev.row.ood = summarize(ood_runs, ood_truth, config.train.metric, method, "OOD", config.seed);
    const auto ood_examples = example_report(ood_runs, ood_truth);
    ev.row.ood_prob_std = mean_prob_correct_std(ood_examples);
    ev.reports.push_back(*ev.row.ood);
    append_examples_csv(ev.examples_csv, ood_examples, "ood");
  }
  return ev;
}

int cmd_train(const CommonFlags& flags) {
  const RunConfig config = resolve_config(flags);
  const PreparedData data = prepare_data(config);
  if (data.malformed) std::cerr << "warning: skipped " << data.malformed << " malformed lines\n";
  const fs::path out = make_out_dir(config);
  const ModelConfig model_config = model_config_for(config, data);
  std::cout << "training " << to_string(model_config.attention.mode) << " model: " << data.train.size() << " train, "
            << data.valid.size() << " valid examples, vocabulary " << data.vocab->size() << '\n';
  try {
    const TrainResult result = fit(model_config, data.train, data.valid, train_config_for(config));
    for (const auto& r : result.history.records) {
      std::printf("epoch %3zu  loss %.6f  valid %s %.4f\n", r.epoch, r.train_loss, to_string(config.train.metric).c_str(),
                  r.valid_metric);
    }
    save_checkpoint(result.model, out / "model.ckpt");
    result.history.write_csv(out / "history.csv");
    data.vocab->save(out / "vocab.txt");
    write_text(out / "config.txt", to_config_text(config));
    std::printf("selected epoch %zu (valid %.4f); wrote %s\n", result.history.selected_epoch,
                result.history.selected_metric, (out / "model.ckpt").string().c_str());
  } catch (const TrainingDiverged& e) {
    e.history().write_csv(out / "history.csv");
    throw;
  }
  return kOk;
}

struct EvalFlags {
  std::string checkpoint;
  std::string vocab;
  std::string data;
  std::string ood;
  std::optional<double> mc_dropout;
};

int cmd_eval(const CommonFlags& flags, const EvalFlags& e) {
  const RunConfig config = resolve_config(flags);
  const fs::path vocab_path = e.vocab.empty() ? fs::path(e.checkpoint).parent_path() / "vocab.txt" : fs::path(e.vocab);
  auto vocab = std::make_shared<const Vocab>(Vocab::load(vocab_path));
  const TransformerClassifier model =
      load_checkpoint(e.checkpoint, CheckpointExpectations{vocab->size(), std::nullopt});
  RunConfig data_config = config;
  data_config.model.max_seq_len = model.config().max_seq_len;
  data_config.model.num_classes = model.config().num_classes;

  LabeledDataset id;
  std::optional<LabeledDataset> ood;
  if (!e.data.empty()) {
    std::size_t malformed = 0;
    id = detail::load_split(e.data, data_config, Split::test, vocab, malformed);
    if (!e.ood.empty()) ood = detail::load_split(e.ood, data_config, Split::ood, vocab, malformed);
    if (malformed) std::cerr << "warning: skipped " << malformed << " malformed lines\n";
  } else {
    PreparedData data = prepare_data(data_config, vocab);
    id = std::move(data.test);
    ood = std::move(data.ood);
    if (!e.ood.empty()) {
      std::size_t malformed = 0;
      ood = detail::load_split(e.ood, data_config, Split::ood, vocab, malformed);
    }
  }

  std::optional<McDropoutModel> wrapper;
  std::string method = to_string(model.config().attention.mode);
  std::optional<Predictor> predictor;
  if (e.mc_dropout) {
    wrapper.emplace(model, *e.mc_dropout);
    method = "mc-dropout";
    predictor = mc_dropout_predictor(*wrapper, method);
  } else {
    predictor = model_predictor(model, method);
  }
  const Evaluation ev = evaluate_predictor(method, *predictor, id, ood ? &*ood : nullptr, config);
  const fs::path out = make_out_dir(config);
  const std::string table = render_table({ev.row});
  write_text(out / "report.txt", table);
  write_text(out / "report.jsonl", to_jsonl(ev.reports));
  write_text(out / "examples.csv", ev.examples_csv);
  std::cout << table;
  return kOk;
}

int cmd_compare(const CommonFlags& flags) {
  const RunConfig config = resolve_config(flags);
  const PreparedData data = prepare_data(config);
  const fs::path out = make_out_dir(config);
  const ModelConfig base = model_config_for(config, data);
  const TrainConfig train_config = train_config_for(config);
  const LabeledDataset* ood = data.ood ? &*data.ood : nullptr;

  std::map<std::string, TrainResult> trained;
  const auto train_mode = [&](const std::string& key, AttentionMode mode) -> const TransformerClassifier& {
    auto it = trained.find(key);
    if (it == trained.end()) {
      std::cout << "training " << key << '\n' << std::flush;
      it = trained.emplace(key, fit(with_mode(base, mode), data.train, data.valid, train_config)).first;
      it->second.history.write_csv(out / ("history_" + key + ".csv"));
    }
    return it->second.model;
  };

  std::vector<MethodResult> rows;
  std::vector<UncertaintyReport> reports;
  std::vector<TransformerClassifier> ensemble;
  for (const auto& method : config.methods) {
    std::optional<Evaluation> ev;
    if (method == "trans" || method == "sto" || method == "h-sto") {
      const AttentionMode mode = method == "trans" ? AttentionMode::deterministic
                                 : method == "sto" ? AttentionMode::stochastic
                                                   : AttentionMode::hierarchical;
      const auto& model = train_mode(method, mode);
      ev = evaluate_predictor(method, model_predictor(model, method), data.test, ood, config);
    } else if (method == "mc-dropout") {
      const McDropoutModel wrapper(train_mode("trans", AttentionMode::deterministic), config.mc_dropout_rate);
      ev = evaluate_predictor(method, mc_dropout_predictor(wrapper, method), data.test, ood, config);
    } else {
      std::cout << "training ensemble of " << config.ensemble_size << '\n' << std::flush;
      ensemble = train_ensemble(base, data.train, data.valid, train_config, config.ensemble_size, config.seed);
      ev = evaluate_predictor(method, ensemble_predictor(ensemble, method), data.test, ood, config);
    }
    rows.push_back(ev->row);
    reports.insert(reports.end(), ev->reports.begin(), ev->reports.end());
    write_text(out / ("examples_" + method + ".csv"), ev->examples_csv);
  }
  const auto trans = std::find(config.methods.begin(), config.methods.end(), "trans");
  const std::size_t baseline = trans == config.methods.end() ? 0 : static_cast<std::size_t>(trans - config.methods.begin());
  const std::string table = render_table(rows, baseline);
  write_text(out / "report.txt", table);
  write_text(out / "report.jsonl", to_jsonl(reports));
  std::cout << table;
  return kOk;
}

int cmd_verify(const VerifyOptions& options) {
  const auto results = run_verification(options);
  bool all = true;
  for (const auto& r : results) {
    std::printf("%s  %-28s %s  (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.statistic.c_str(), r.seconds);
    all = all && r.passed;
  }
  std::printf("%s: %zu properties, seed %llu\n", all ? "all properties pass" : "verification FAILED", results.size(),
              static_cast<unsigned long long>(options.seed));
  return all ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer text classification with stochastic self-attention"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, compare_flags;
  EvalFlags eval;
  VerifyOptions verify;

  auto* train = app.add_subcommand("train", "Train one model; writes model.ckpt, history.csv, vocab.txt");
  add_common(train, train_flags, true);

  auto* evalc = app.add_subcommand("eval", "Multi-run evaluation; writes report.txt, report.jsonl, examples.csv");
  add_common(evalc, eval_flags, false);
  evalc->add_option("--checkpoint", eval.checkpoint, "Checkpoint written by train")->required();
  evalc->add_option("--vocab", eval.vocab, "Vocabulary file (default: vocab.txt beside the checkpoint)");
  evalc->add_option("--data", eval.data, "In-domain TSV (default: the config's test split)");
  evalc->add_option("--ood", eval.ood, "Out-of-domain TSV (default: the config's OOD split, if any)");
  evalc->add_option("--mc-dropout", eval.mc_dropout, "Keep dropout on at this rate during inference");

  auto* compare = app.add_subcommand("compare", "Train and evaluate every configured method; writes a joint table");
  add_common(compare, compare_flags, true);

  auto* verifyc = app.add_subcommand("verify", "Run the property battery");
  verifyc->add_option("--seed", verify.seed, "Seed (default 0)");
  verifyc->add_option("--trials", verify.bound_trials, "Centroid bound trials (default 1000)")
      ->check(CLI::PositiveNumber);
  verifyc->add_option("--sweeps", verify.sweep_forwards, "Random forwards per mode in the normalization sweep")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*evalc) return cmd_eval(eval_flags, eval);
    if (*compare) return cmd_compare(compare_flags);
    if (*verifyc) return cmd_verify(verify);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kOk;
}
