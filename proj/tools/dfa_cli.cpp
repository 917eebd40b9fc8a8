// Command-line front end: train / attack / ood / analyze / report.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfa/dfa.hpp"

namespace {

using KV = std::vector<std::pair<std::string, std::string>>;

std::string fmt_g(double v) { return dfa::format_double_key(v); }

// Flat key=value run-config support: file entries are spliced in as options
// ahead of the real command line, so explicit flags override file keys and
// unknown keys fail parsing like any unknown option.
std::vector<std::string> splice_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;

  std::ifstream f(path);
  if (!f) throw dfa::ConfigError("cannot open config file '" + path + "'");
  std::vector<std::string> file_args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw dfa::ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(0, eq);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = line.substr(eq + 1);
    const auto vfirst = value.find_first_not_of(" \t");
    value = vfirst == std::string::npos ? "" : value.substr(vfirst);
    file_args.push_back("--" + key + "=" + value);
  }
  // file keys go right after the subcommand, before explicit flags
  std::vector<std::string> out;
  if (!args.empty()) out.push_back(args[0]);
  out.insert(out.end(), file_args.begin(), file_args.end());
  out.insert(out.end(), args.begin() + (args.empty() ? 0 : 1), args.end());
  return out;
}

dfa::Dataset load(const std::string& path, const std::string& format, const std::string& labels) {
  return dfa::load_dataset(path, dfa::data_format_from_string(format), labels);
}

std::vector<dfa::LrSpan> parse_lr_schedule(const std::string& s) {
  if (s == "full-scale") return dfa::TrainConfig::full_scale_schedule();
  std::vector<dfa::LrSpan> spans;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string tok = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (tok.empty()) throw dfa::ConfigError("lr-schedule: empty span in '" + s + "'");
    const auto x = tok.find('x');
    if (x == std::string::npos) {
      spans.push_back({dfa::parse_fraction(tok), std::numeric_limits<int>::max()});
    } else {
      spans.push_back({dfa::parse_fraction(tok.substr(0, x)), std::stoi(tok.substr(x + 1))});
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (spans.empty()) throw dfa::ConfigError("lr-schedule: no spans in '" + s + "'");
  return spans;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, format = "raw-array", data_labels;
  std::string mode = "dfa";
  double alpha = 1.0, sigma = 0.05;
  std::string reduction = "mean-squared";
  int epochs = 10;
  std::size_t batch_size = 64;
  std::string lr_schedule = "0.05";
  double momentum = 0.9, weight_decay = 5e-4;
  std::uint64_t seed = 1;
  std::string arch = "small-cnn", activation = "relu";
  std::size_t embed_dim = 64, conv1 = 8, conv2 = 16;
  double embed_scale = 8.0;
  double score_scale = 1.0;
  bool raw_embedding = false;
  std::string out = "out";
};

int run_train(const TrainArgs& a) {
  dfa::TrainConfig cfg;
  cfg.mode = dfa::train_mode_from_string(a.mode);
  cfg.alpha = a.alpha;
  cfg.sigma = a.sigma;
  cfg.reduction = dfa::reduction_from_string(a.reduction);
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.lr_schedule = parse_lr_schedule(a.lr_schedule);
  cfg.momentum = a.momentum;
  cfg.weight_decay = a.weight_decay;
  cfg.rng_seed = a.seed;
  cfg.score_scale = a.score_scale;

  const dfa::Dataset ds = load(a.data, a.format, a.data_labels);
  cfg.extractor.arch = dfa::arch_from_string(a.arch);
  cfg.extractor.activation = dfa::activation_from_string(a.activation);
  cfg.extractor.in_channels = ds.channels;
  cfg.extractor.height = ds.height;
  cfg.extractor.width = ds.width;
  cfg.extractor.embed_dim = a.embed_dim;
  cfg.extractor.embed_scale = a.embed_scale;
  cfg.extractor.normalize_embedding = !a.raw_embedding;
  cfg.extractor.conv1_channels = a.conv1;
  cfg.extractor.conv2_channels = a.conv2;

  const KV kv = {{"command", "train"},
                 {"data", a.data},
                 {"format", a.format},
                 {"mode", a.mode},
                 {"alpha", fmt_g(a.alpha)},
                 {"sigma", fmt_g(a.sigma)},
                 {"reduction", a.reduction},
                 {"epochs", std::to_string(a.epochs)},
                 {"batch_size", std::to_string(a.batch_size)},
                 {"lr_schedule", a.lr_schedule},
                 {"momentum", fmt_g(a.momentum)},
                 {"weight_decay", fmt_g(a.weight_decay)},
                 {"seed", std::to_string(a.seed)},
                 {"arch", a.arch},
                 {"activation", a.activation},
                 {"embed_dim", std::to_string(a.embed_dim)},
                 {"embed_scale", fmt_g(a.embed_scale)},
                 {"raw_embedding", a.raw_embedding ? "1" : "0"},
                 {"score_scale", fmt_g(a.score_scale)},
                 {"conv1", std::to_string(a.conv1)},
                 {"conv2", std::to_string(a.conv2)}};
  const std::string hash = dfa::config_hash(kv);

  std::filesystem::create_directories(a.out);
  dfa::MetricsWriter metrics(a.out + "/metrics.jsonl", hash);

  dfa::Trainer trainer(ds, cfg);
  trainer.snapshot().config_hash = hash;
  dfa::TrainResult result = trainer.run();
  result.snapshot.config_hash = hash;

  for (const auto& em : result.epochs) {
    nlohmann::json d;
    d["mode"] = a.mode;
    d["epoch"] = em.epoch;
    d["l_a"] = em.l_a;
    d["l_c"] = em.l_c;
    d["l_t"] = em.l_t;
    d["clean_accuracy"] = em.clean_accuracy * 100.0;
    metrics.append("epoch", d);
    std::printf("epoch %3d  l_a %.6f  l_c %.6f  acc %.2f%%\n", em.epoch, em.l_a, em.l_c,
                em.clean_accuracy * 100.0);
  }

  const std::string ckpt = a.out + "/checkpoint";
  dfa::save_checkpoint(ckpt, result.snapshot);
  std::printf("checkpoint: %s  (config %s)\n", ckpt.c_str(), hash.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackArgs {
  std::string checkpoint, data, format = "raw-array", data_labels;
  std::string method = "pgd";
  std::string epsilon = "4/255", step_size = "2/255";
  int steps = 8;
  double cw_c = 0.01, cw_lr = 0.01;
  bool no_random_start = false;
  std::uint64_t seed = 0;
  std::size_t limit = 0;
  std::string out = "out";
};

int run_attack(const AttackArgs& a) {
  dfa::AttackConfig cfg;
  cfg.method = dfa::attack_method_from_string(a.method);
  cfg.epsilon = dfa::parse_fraction(a.epsilon);
  cfg.step_size = dfa::parse_fraction(a.step_size);
  cfg.steps = a.steps;
  cfg.cw_c = a.cw_c;
  cfg.cw_lr = a.cw_lr;
  cfg.random_start = !a.no_random_start;
  cfg.rng_seed = a.seed;
  cfg.validate();

  dfa::Dataset ds = load(a.data, a.format, a.data_labels);
  if (a.limit && a.limit < ds.n) {
    ds.pixels.resize(a.limit * ds.sample_size());
    ds.labels.resize(a.limit);
    ds.n = a.limit;
  }

  const dfa::ModelSnapshot snap = dfa::load_checkpoint(a.checkpoint);

  const KV kv = {{"command", "attack"},   {"checkpoint", a.checkpoint},
                 {"data", a.data},        {"format", a.format},
                 {"method", a.method},    {"epsilon", a.epsilon},
                 {"step_size", a.step_size}, {"steps", std::to_string(a.steps)},
                 {"cw_c", fmt_g(a.cw_c)}, {"cw_lr", fmt_g(a.cw_lr)},
                 {"random_start", a.no_random_start ? "0" : "1"},
                 {"seed", std::to_string(a.seed)}, {"limit", std::to_string(a.limit)}};
  const std::string hash = dfa::config_hash(kv);

  const dfa::RobustnessReport report = dfa::evaluate_robustness(snap, ds, {cfg});

  std::filesystem::create_directories(a.out);
  dfa::MetricsWriter metrics(a.out + "/metrics.jsonl", hash);
  nlohmann::json d;
  d["name"] = report.attacks[0].name;
  d["method"] = a.method;
  d["epsilon"] = cfg.epsilon;
  d["step_size"] = cfg.step_size;
  d["steps"] = a.steps;
  d["cw_c"] = a.cw_c;
  d["accuracy"] = report.attacks[0].accuracy * 100.0;
  d["clean_accuracy"] = report.clean_accuracy * 100.0;
  metrics.append("attack", d);

  std::printf("clean %.2f%%  %s %.2f%%\n", report.clean_accuracy * 100.0,
              report.attacks[0].name.c_str(), report.attacks[0].accuracy * 100.0);
  return 0;
}

// ---------------------------------------------------------------------------
// ood
// ---------------------------------------------------------------------------

struct OodArgs {
  std::string checkpoint;
  std::string data, format = "raw-array", data_labels;
  std::string ood_data, ood_format = "raw-array", ood_data_labels;
  std::string train_data, train_format = "raw-array", train_data_labels;
  std::string out = "out";
  bool plot = false;
};

int run_ood(const OodArgs& a) {
  const dfa::ModelSnapshot snap = dfa::load_checkpoint(a.checkpoint);
  const dfa::Dataset id_test = load(a.data, a.format, a.data_labels);
  const dfa::Dataset ood_test = load(a.ood_data, a.ood_format, a.ood_data_labels);

  const KV kv = {{"command", "ood"},      {"checkpoint", a.checkpoint}, {"data", a.data},
                 {"ood_data", a.ood_data}, {"train_data", a.train_data}};
  const std::string hash = dfa::config_hash(kv);

  dfa::OODReport report;
  if (a.train_data.empty()) {
    report = dfa::evaluate_ood(snap, id_test, ood_test);
  } else {
    const dfa::Dataset proto_src = load(a.train_data, a.train_format, a.train_data_labels);
    report = dfa::evaluate_ood(snap, proto_src, id_test, ood_test);
  }

  std::filesystem::create_directories(a.out);
  dfa::MetricsWriter metrics(a.out + "/metrics.jsonl", hash);
  nlohmann::json d;
  d["best_f1"] = report.best_f1;
  d["best_threshold"] = report.best_threshold;
  d["n_id"] = id_test.n;
  d["n_ood"] = ood_test.n;
  metrics.append("ood", d);

  if (a.plot) {
    constexpr int kBins = 16;
    std::vector<double> id_hist(kBins, 0.0), ood_hist(kBins, 0.0);
    for (std::size_t i = 0; i < report.scores.size(); ++i) {
      int b = static_cast<int>(report.scores[i] / (1.5707963267948966 / kBins));
      b = std::min(b, kBins - 1);
      (report.labels[i] ? id_hist[b] : ood_hist[b]) += 1.0;
    }
    std::vector<std::string> labels;
    std::vector<double> values;
    for (int b = 0; b < kBins; ++b) {
      labels.push_back("i" + std::to_string(b));
      values.push_back(id_hist[b]);
    }
    for (int b = 0; b < kBins; ++b) {
      labels.push_back("o" + std::to_string(b));
      values.push_back(ood_hist[b]);
    }
    dfa::detail::write_text_file(a.out + "/ood_hist.svg",
                                 dfa::svg_bar_chart("angle score histogram (id | ood)", labels, values));
  }

  std::printf("best F1 %.4f at threshold %.6f (%zu id, %zu ood)\n", report.best_f1,
              report.best_threshold, id_test.n, ood_test.n);
  return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint, data, format = "raw-array", data_labels;
  std::size_t pairs = 1000;
  std::uint64_t seed = 0;
  std::string out = "out";
  bool plot = false;
};

int run_analyze(const AnalyzeArgs& a) {
  const dfa::ModelSnapshot snap = dfa::load_checkpoint(a.checkpoint);
  const dfa::Dataset ds = load(a.data, a.format, a.data_labels);

  const KV kv = {{"command", "analyze"},
                 {"checkpoint", a.checkpoint},
                 {"data", a.data},
                 {"pairs", std::to_string(a.pairs)},
                 {"seed", std::to_string(a.seed)}};
  const std::string hash = dfa::config_hash(kv);

  const dfa::CompactnessReport comp = dfa::compactness(snap, ds);
  dfa::Rng rng(a.seed);
  const dfa::LipschitzProbe probe = dfa::lipschitz_residual(snap, ds, a.pairs, rng);

  std::filesystem::create_directories(a.out);
  dfa::MetricsWriter metrics(a.out + "/metrics.jsonl", hash);
  nlohmann::json d;
  d["per_class_std"] = comp.per_class_std;
  d["total_std"] = comp.total_std;
  d["counts"] = comp.counts;
  d["lipschitz_mean"] = probe.mean_residual;
  d["lipschitz_max"] = probe.max_residual;
  d["pairs"] = a.pairs;
  metrics.append("analysis", d);

  if (a.plot) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (std::size_t k = 0; k < comp.per_class_std.size(); ++k) {
      labels.push_back("c" + std::to_string(k));
      values.push_back(comp.per_class_std[k]);
    }
    labels.push_back("total");
    values.push_back(comp.total_std);
    dfa::detail::write_text_file(a.out + "/compactness.svg",
                                 dfa::svg_bar_chart("embedding compactness (std)", labels, values));
  }

  std::printf("total std %.6f  mixing residual mean %.6f max %.6f\n", comp.total_std,
              probe.mean_residual, probe.max_residual);
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string metrics;
  std::string out = "report";
};

int run_report(const ReportArgs& a) {
  const auto files = dfa::generate_report(a.metrics, a.out);
  for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-aggregation training, white-box attacks, and OOD detection"};
  app.require_subcommand(1);

  TrainArgs ta;
  AttackArgs aa;
  OodArgs oa;
  AnalyzeArgs na;
  ReportArgs ra;

  auto add_config = [](CLI::App* sub) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", "flat key-value run-config file; flags override file keys")
        ->expected(1);
  };

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_config(train);
  train->add_option("--data", ta.data, "dataset path")->required();
  train->add_option("--format", ta.format, "idx | cifar-binary | raw-array");
  train->add_option("--data-labels", ta.data_labels, "labels file (idx format)");
  train->add_option("--mode", ta.mode, "vanilla | mixup | manifold-mixup | dfa");
  train->add_option("--alpha", ta.alpha, "Beta(alpha,alpha) mixing parameter");
  train->add_option("--sigma", ta.sigma, "aggregation noise stddev");
  train->add_option("--reduction", ta.reduction, "mean-squared | root-of-norm");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--lr-schedule", ta.lr_schedule, "RATE | RATExEPOCHS,... | full-scale");
  train->add_option("--momentum", ta.momentum);
  train->add_option("--weight-decay", ta.weight_decay);
  train->add_option("--seed", ta.seed);
  train->add_option("--arch", ta.arch, "small-cnn | linear | identity");
  train->add_option("--activation", ta.activation, "relu | identity");
  train->add_option("--embed-dim", ta.embed_dim);
  train->add_option("--embed-scale", ta.embed_scale, "embedding sphere radius (or plain gain with --raw-embedding)");
  train->add_flag("--raw-embedding", ta.raw_embedding, "skip the fixed-norm embedding projection");
  train->add_option("--score-scale", ta.score_scale, "softmax temperature on cosine scores");
  train->add_option("--conv1", ta.conv1);
  train->add_option("--conv2", ta.conv2);
  train->add_option("--out", ta.out, "output directory");

  CLI::App* attack = app.add_subcommand("attack", "evaluate a checkpoint under an attack");
  add_config(attack);
  attack->add_option("--checkpoint", aa.checkpoint)->required();
  attack->add_option("--data", aa.data)->required();
  attack->add_option("--format", aa.format);
  attack->add_option("--data-labels", aa.data_labels);
  attack->add_option("--method", aa.method, "fgsm | pgd | cw");
  attack->add_option("--epsilon", aa.epsilon, "l-inf budget, fraction accepted (8/255)");
  attack->add_option("--step-size", aa.step_size, "pgd step, fraction accepted");
  attack->add_option("--steps", aa.steps);
  attack->add_option("--cw-c", aa.cw_c);
  attack->add_option("--cw-lr", aa.cw_lr);
  attack->add_flag("--no-random-start", aa.no_random_start, "disable the pgd random start");
  attack->add_option("--seed", aa.seed);
  attack->add_option("--limit", aa.limit, "cap the number of test samples (0 = all)");
  attack->add_option("--out", aa.out);

  CLI::App* ood = app.add_subcommand("ood", "angle-based OOD detection");
  add_config(ood);
  ood->add_option("--checkpoint", oa.checkpoint)->required();
  ood->add_option("--data", oa.data, "in-distribution test set (labeled)")->required();
  ood->add_option("--format", oa.format);
  ood->add_option("--data-labels", oa.data_labels);
  ood->add_option("--ood-data", oa.ood_data, "out-of-distribution test set")->required();
  ood->add_option("--ood-format", oa.ood_format);
  ood->add_option("--ood-data-labels", oa.ood_data_labels);
  ood->add_option("--train-data", oa.train_data, "prototype source (defaults to --data)");
  ood->add_option("--train-format", oa.train_format);
  ood->add_option("--train-data-labels", oa.train_data_labels);
  ood->add_flag("--plot", oa.plot, "write a score histogram svg");
  ood->add_option("--out", oa.out);

  CLI::App* analyze = app.add_subcommand("analyze", "embedding compactness and mixing residual");
  add_config(analyze);
  analyze->add_option("--checkpoint", na.checkpoint)->required();
  analyze->add_option("--data", na.data)->required();
  analyze->add_option("--format", na.format);
  analyze->add_option("--data-labels", na.data_labels);
  analyze->add_option("--pairs", na.pairs, "number of sampled pairs for the residual probe");
  analyze->add_option("--seed", na.seed);
  analyze->add_flag("--plot", na.plot, "write a compactness bar chart svg");
  analyze->add_option("--out", na.out);

  CLI::App* report = app.add_subcommand("report", "render tables and charts from a metrics file");
  add_config(report);
  report->add_option("--metrics", ra.metrics, "metrics.jsonl path")->required();
  report->add_option("--out", ra.out, "report output directory");

  std::vector<std::string> args;
  try {
    args = splice_config(argc, argv);
  } catch (const dfa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    std::vector<const char*> cargs;
    cargs.push_back("dfa");
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train)) return run_train(ta);
    if (app.got_subcommand(attack)) return run_attack(aa);
    if (app.got_subcommand(ood)) return run_ood(oa);
    if (app.got_subcommand(analyze)) return run_analyze(na);
    if (app.got_subcommand(report)) return run_report(ra);
  } catch (const dfa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
