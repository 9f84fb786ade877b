#include "chaintree/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "chaintree/checkpoint.hpp"
#include "chaintree/config.hpp"
#include "chaintree/gnn.hpp"
#include "chaintree/gradcheck.hpp"
#include "chaintree/rng.hpp"
#include "chaintree/selftest.hpp"
#include "chaintree/sweeps.hpp"
#include "chaintree/training.hpp"

#ifndef CHAINTREE_VERSION
#define CHAINTREE_VERSION "dev"
#endif

namespace chaintree {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kSplitFiles[] = {"train.jsonl", "val.jsonl", "test.jsonl", "unlabeled.jsonl"};
constexpr Split kSplitOrder[] = {Split::Train, Split::Val, Split::Test, Split::Unlabeled};

struct Resolved {
  EncoderConfig enc;
  SequenceConfig seq;
  TrainConfig train;
  GcnConfig gcn;
  GenConfig gen;
};

json resolved_json(const Resolved& r) {
  return {{"encoder", r.enc}, {"sequence", r.seq}, {"train", r.train}, {"gcn", r.gcn}, {"gen", r.gen}};
}

void layer_config_file(Resolved& r, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "encoder") from_json(value, r.enc);
    else if (key == "sequence") from_json(value, r.seq);
    else if (key == "train") from_json(value, r.train);
    else if (key == "gcn") from_json(value, r.gcn);
    else if (key == "gen") from_json(value, r.gen);
    else throw std::invalid_argument("config file: unknown section '" + key + "'");
  }
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty())
      throw std::invalid_argument(std::string(what) + ": '" + item + "' is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

// A subcommand whose flags are layered over the config file and defaults.
class Command {
 public:
  Command(CLI::App& root, const std::string& name, const std::string& description)
      : app_(root.add_subcommand(name, description)), name_(name) {}

  CLI::App* app() const { return app_; }
  const std::string& name() const { return name_; }

  template <typename V>
  CLI::Option* flag(const std::string& names, V def, const std::string& help,
                    std::function<void(Resolved&, const V&)> set) {
    auto value = std::make_shared<V>(def);
    auto* opt = app_->add_option(names, *value, help)->capture_default_str();
    setters_.push_back({opt, [value, set](Resolved& r) { set(r, *value); }});
    return opt;
  }

  CLI::Option* toggle(const std::string& names, const std::string& help, std::function<void(Resolved&)> set) {
    auto* opt = app_->add_flag(names, help);
    setters_.push_back({opt, std::move(set)});
    return opt;
  }

  void config_flag() {
    app_->add_option("--config", config_path_, "JSON config file (sections: encoder, sequence, train, gcn, gen)");
  }

  Resolved resolve() const {
    Resolved r;
    if (!config_path_.empty()) layer_config_file(r, config_path_);
    for (const auto& [opt, set] : setters_)
      if (opt->count() > 0) set(r);
    return r;
  }

 private:
  CLI::App* app_;
  std::string name_;
  std::string config_path_;
  std::vector<std::pair<CLI::Option*, std::function<void(Resolved&)>>> setters_;
};

void add_encoder_flags(Command& c) {
  const EncoderConfig e;
  c.flag<std::size_t>("--d", e.d, "model width (must equal the tree feature dimension)",
                      [](Resolved& r, const std::size_t& v) { r.enc.d = v; });
  c.flag<std::size_t>("--heads", e.heads, "attention heads", [](Resolved& r, const std::size_t& v) { r.enc.heads = v; });
  c.flag<std::size_t>("--layers", e.layers, "encoder layers", [](Resolved& r, const std::size_t& v) { r.enc.layers = v; });
  c.flag<std::size_t>("--ffn-dim", e.ffn_dim, "feed-forward width",
                      [](Resolved& r, const std::size_t& v) { r.enc.ffn_dim = v; });
  c.flag<double>("--dropout", e.dropout, "dropout rate", [](Resolved& r, const double& v) { r.enc.dropout = v; });
  c.flag<std::size_t>("--id-dim", e.id_dim, "chain identifier dimension l",
                      [](Resolved& r, const std::size_t& v) { r.enc.id_dim = v; });
  c.flag<std::size_t>("--num-classes", 0, "class count; 0 infers it from the data",
                      [](Resolved& r, const std::size_t& v) { r.enc.num_classes = v; });
}

void add_sequence_flags(Command& c) {
  const SequenceConfig s;
  c.flag<std::size_t>("--max-tokens", s.embed.max_tokens, "token cap per tree (whole chains are dropped)",
                      [](Resolved& r, const std::size_t& v) { r.seq.embed.max_tokens = v; });
  c.flag<std::string>("--id-resample", std::string(to_string(s.id_resample)), "per_epoch or fixed",
                      [](Resolved& r, const std::string& v) { r.seq.id_resample = id_resample_from_string(v); });
  c.flag<std::size_t>("--deep-min-len", s.deep_min_len, "minimum chain length counted as deep",
                      [](Resolved& r, const std::size_t& v) { r.seq.deep_min_len = v; });
  c.flag<double>("--type-scale", s.embed.type_scale, "type embedding scale",
                 [](Resolved& r, const double& v) { r.seq.embed.type_scale = v; });
  c.toggle("--no-chain-id", "drop the chain identifier component", [](Resolved& r) { r.seq.embed.use_chain_id = false; });
  c.toggle("--no-depth", "drop the depth embedding", [](Resolved& r) { r.seq.embed.use_depth = false; });
  c.toggle("--no-type", "drop the type embedding", [](Resolved& r) { r.seq.embed.use_type = false; });
}

void add_train_flags(Command& c) {
  const TrainConfig t;
  c.flag<std::size_t>("--batch-size", t.batch_size, "trees per batch",
                      [](Resolved& r, const std::size_t& v) { r.train.batch_size = v; });
  c.flag<double>("--lr", t.learning_rate, "Adam learning rate",
                 [](Resolved& r, const double& v) { r.train.learning_rate = v; });
  c.flag<std::size_t>("--epochs", t.epochs, "training epochs", [](Resolved& r, const std::size_t& v) { r.train.epochs = v; });
  c.flag<double>("--tau", t.tau, "InfoNCE temperature", [](Resolved& r, const double& v) { r.train.tau = v; });
  c.flag<double>("--lambda-unsup", t.lambda_unsup, "weight of the contrastive term while fine-tuning",
                 [](Resolved& r, const double& v) { r.train.lambda_unsup = v; });
  c.flag<std::size_t>("--eval-avg-last", t.eval_avg_last, "final metric = mean of this many last test epochs",
                      [](Resolved& r, const std::size_t& v) { r.train.eval_avg_last = v; });
  c.flag<std::string>("--reduction", std::string(to_string(t.reduction)), "mean_over_pairs or sum_per_tree",
                      [](Resolved& r, const std::string& v) { r.train.reduction = pair_reduction_from_string(v); });
}

void add_seed_flag(Command& c) {
  c.flag<std::uint64_t>("--seed", 0, "master seed", [](Resolved& r, const std::uint64_t& v) { r.train.seed = v; });
}

void add_gcn_flags(Command& c, bool with_direction, bool with_layers) {
  const GcnConfig g;
  c.flag<std::size_t>("--hidden", g.hidden, "GCN hidden width", [](Resolved& r, const std::size_t& v) { r.gcn.hidden = v; });
  c.flag<std::string>("--readout", std::string(to_string(g.readout)), "mean or mean_root",
                      [](Resolved& r, const std::string& v) { r.gcn.readout = readout_from_string(v); });
  if (with_direction)
    c.flag<std::string>("--direction", "UD", "GCN direction: TD, BU, UD or Bi",
                        [](Resolved& r, const std::string& v) { r.gcn.direction = direction_from_string(v); });
  if (with_layers)
    c.flag<std::size_t>("--layers", g.layers, "GCN layers", [](Resolved& r, const std::size_t& v) { r.gcn.layers = v; });
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

struct LoadedData {
  Dataset data;
  std::vector<fs::path> files;
};

// A directory holds one file per split; a single file is read as train.
// Text-only nodes are featurized at `text_dim`.
LoadedData load_data(const std::string& path, std::size_t text_dim) {
  if (path.empty()) throw std::invalid_argument("--data is required");
  LoadedData out;
  ParseOptions po;
  po.text_dim = text_dim;
  auto add = [&](const fs::path& f, Split split) {
    po.split = split;
    for (auto& t : parse_dataset(f, po).trees) {
      if (!out.data.empty() && t.feature_dim() != out.data.trees.front().feature_dim())
        throw std::runtime_error(f.string() + ": feature dimension " + std::to_string(t.feature_dim()) +
                                 " differs from " + std::to_string(out.data.trees.front().feature_dim()));
      out.data.append(std::move(t), split);
    }
    out.files.push_back(f);
  };
  if (fs::is_directory(path)) {
    for (std::size_t s = 0; s < 4; ++s) {
      const fs::path f = fs::path(path) / kSplitFiles[s];
      if (fs::exists(f)) add(f, kSplitOrder[s]);
    }
    if (out.files.empty()) throw std::runtime_error("no split files (train.jsonl, ...) in " + path);
  } else {
    if (!fs::exists(path)) throw std::runtime_error("no such file or directory: " + path);
    add(path, Split::Train);
  }
  if (out.data.empty()) throw std::runtime_error("no trees in " + path);
  return out;
}

// Encoder commands need the data width to equal the model width.
void check_width(const Dataset& data, std::size_t d) {
  const std::size_t f = data.trees.front().feature_dim();
  if (f != d)
    throw std::invalid_argument("model width d=" + std::to_string(d) + " does not match the data feature dimension " +
                                std::to_string(f) + " (set --d " + std::to_string(f) + ")");
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Run directory with its manifest, written before any training starts.
class RunDir {
 public:
  RunDir(const std::string& out, const std::string& name, const std::string& command, int argc, char** argv,
         const json& config, const std::vector<std::uint64_t>& seeds, const std::vector<fs::path>& inputs)
      : dir_(fs::path(out) / name), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(dir_);
    manifest_["command"] = command;
    manifest_["argv"] = std::vector<std::string>(argv, argv + argc);
    manifest_["config"] = config;
    manifest_["seeds"] = seeds;
    manifest_["inputs"] = json::array();
    for (const auto& f : inputs) manifest_["inputs"].push_back({{"path", f.string()}, {"fnv1a64", hex64(file_hash(f))}});
    manifest_["code_version"] = CHAINTREE_VERSION;
    manifest_["precision"] = to_string(precision_from_env());
    manifest_["started_at"] = now_iso();
    manifest_["outputs"] = json::array();
    manifest_["wall_clock_seconds"] = nullptr;
    write_json("config.json", config);
    flush();
  }

  fs::path path(const std::string& file) {
    manifest_["outputs"].push_back((dir_ / file).string());
    return dir_ / file;
  }

  void write_text(const std::string& file, const std::string& text) {
    std::ofstream out(path(file), std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + (dir_ / file).string());
  }

  void write_json(const std::string& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

  void finish() {
    manifest_["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    flush();
  }

  const fs::path& dir() const { return dir_; }

 private:
  void flush() {
    std::ofstream out(dir_ / "manifest.json");
    out << manifest_.dump(2) << "\n";
  }

  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  json manifest_;
};

std::string metrics_csv(const ExperimentMetrics& m) {
  std::ostringstream os;
  write_metrics_csv(m, os);
  return os.str();
}

json summary_json(const ExperimentMetrics& m, const TrainConfig& cfg, Split split) {
  std::vector<double> acc;
  for (const auto& r : m.epochs)
    if (r.split == split) acc.push_back(r.metrics.accuracy);
  const std::size_t n = std::min(acc.size(), cfg.eval_avg_last);
  const auto tail = mean_std(std::span<const double>(acc).subspan(acc.size() - n));
  return {{"split", to_string(split)},
          {"epochs_averaged", n},
          {"acc_mean", m.final_accuracy},
          {"acc_std", tail.std},
          {"loss_mean", m.final_loss},
          {"precision", m.final_precision},
          {"recall", m.final_recall},
          {"f1", m.final_f1}};
}

std::size_t infer_classes(const Resolved& r, const Dataset& data) {
  if (r.enc.num_classes > 0) return r.enc.num_classes;
  return static_cast<std::size_t>(std::max(2, data.num_classes()));
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  if (count == 0) throw std::invalid_argument("--seeds must be >= 1");
  std::vector<std::uint64_t> s(count);
  for (std::size_t i = 0; i < count; ++i) s[i] = base + i;
  return s;
}

// Shared state of every subcommand invocation.
struct Context {
  int argc;
  char** argv;
  Resolved cfg;
  std::string data, out, name, checkpoint;
  std::size_t jobs = 1, seeds = 5;
};

void check_jobs(std::size_t jobs) {
  if (jobs < 1) throw std::invalid_argument("--jobs must be >= 1");
}

// ---------------------------------------------------------------- commands

int cmd_gen(const Context& ctx, std::uint64_t seed) {
  const GenConfig& g = ctx.cfg.gen;
  const Dataset data = generate_synthetic(g, seed);
  fs::create_directories(ctx.out);
  for (std::size_t s = 0; s < 4; ++s) {
    Dataset part;
    for (std::size_t i : data.indices(kSplitOrder[s])) part.append(data.trees[i], kSplitOrder[s]);
    if (part.empty()) continue;
    write_dataset(part, fs::path(ctx.out) / kSplitFiles[s]);
  }
  json cfg = ctx.cfg.gen;
  cfg["seed"] = seed;
  std::ofstream(fs::path(ctx.out) / "gen_config.json") << cfg.dump(2) << "\n";
  const auto p = depth_profile(data);
  std::cout << "wrote " << data.size() << " trees to " << ctx.out << " (level fractions " << p.frac_1level << ", "
            << p.frac_2level << ", " << p.frac_deeper << ")\n";
  return 0;
}

int cmd_stats(const Context& ctx, bool as_json) {
  const auto loaded = load_data(ctx.data, ctx.cfg.enc.d);
  const auto p = depth_profile(loaded.data);
  if (as_json) {
    std::cout << json{{"claim_count", p.claim_count}, {"avg_reply", p.avg_reply},
                      {"avg_1level", p.avg_1level},   {"frac_1level", p.frac_1level},
                      {"avg_2level", p.avg_2level},   {"frac_2level", p.frac_2level},
                      {"avg_deeper", p.avg_deeper},   {"frac_deeper", p.frac_deeper}}
                     .dump()
              << "\n";
    return 0;
  }
  auto cell = [](double avg, double frac) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << avg << "(" << std::setprecision(0) << frac * 100.0 << "%)";
    return os.str();
  };
  std::cout << std::left << std::setw(10) << "claims" << std::setw(12) << "avg_reply" << std::setw(14) << "1-level"
            << std::setw(14) << "2-level" << "deeper\n";
  std::ostringstream reply;
  reply << std::fixed << std::setprecision(1) << p.avg_reply;
  std::cout << std::left << std::setw(10) << p.claim_count << std::setw(12) << reply.str() << std::setw(14)
            << cell(p.avg_1level, p.frac_1level) << std::setw(14) << cell(p.avg_2level, p.frac_2level)
            << cell(p.avg_deeper, p.frac_deeper) << "\n";
  return 0;
}

json matrix_json(const Matrix<double>& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

template <typename T>
int cmd_extract(const Context& ctx, const std::string& dump_id) {
  const auto& r = ctx.cfg;
  const auto loaded = load_data(ctx.data, r.enc.d);
  const auto prepared = prepare(loaded.data, r.seq);
  if (dump_id.empty()) {
    std::cout << "tree_id,nodes,chains,deep,shallow,m,kept_chains\n";
    for (const auto& t : prepared) {
      std::size_t deep = 0;
      for (const auto& c : t.chains.chains) deep += c.conv_type == ConvType::Deep;
      std::size_t m = t.chains.m, keep = t.chains.chains.size();
      while (m > r.seq.embed.max_tokens && keep > 0) m -= t.chains.chains[--keep].size();
      std::cout << t.tree->id << ',' << t.tree->size() << ',' << t.chains.chains.size() << ',' << deep << ','
                << t.chains.chains.size() - deep << ',' << m << ',' << keep << "\n";
    }
    return 0;
  }
  for (const auto& t : prepared) {
    if (t.tree->id != dump_id) continue;
    EncoderModel<T> model;
    if (!ctx.checkpoint.empty()) {
      model = load_encoder<T>(ctx.checkpoint);
    } else {
      EncoderConfig enc = r.enc;
      enc.num_classes = infer_classes(r, loaded.data);
      model = EncoderModel<T>(enc, r.train.seed);
    }
    check_width(loaded.data, model.config().d);
    auto seq = make_sequence(t, r.seq, model.config().id_dim, identifier_seed(*t.tree, r.seq, 0, 0, false));
    project(seq, model.projection());
    json tokens = json::array();
    for (const auto& tm : seq.token_meta)
      tokens.push_back({{"node", tm.node}, {"chain", tm.chain}, {"depth", tm.depth}, {"type", to_string(tm.type)}});
    json j = {{"id", t.tree->id},         {"m", seq.m},
              {"d", seq.d},               {"l", seq.l},
              {"dropped_chains", seq.dropped_chains},
              {"chain_heads", seq.chain_heads},
              {"tokens", tokens},         {"S", matrix_json(seq.S)},
              {"ids", matrix_json(seq.ids)}, {"D", matrix_json(seq.D)},
              {"T", matrix_json(seq.T)},  {"S_C", matrix_json(seq.S_C)},
              {"S_CD", matrix_json(seq.S_CD)}, {"S_CDT", matrix_json(seq.S_CDT)}};
    std::cout << j.dump() << "\n";
    return 0;
  }
  throw std::invalid_argument("no tree with id '" + dump_id + "'");
}

template <typename T>
int cmd_pretrain(const Context& ctx) {
  const auto& r = ctx.cfg;
  const auto loaded = load_data(ctx.data, r.enc.d);
  EncoderConfig enc = r.enc;
  enc.num_classes = infer_classes(r, loaded.data);
  enc.validate();
  check_width(loaded.data, enc.d);
  RunDir run(ctx.out, ctx.name, "pretrain", ctx.argc, ctx.argv, resolved_json(r), {r.train.seed}, loaded.files);
  EncoderModel<T> model(enc, r.train.seed);
  const auto m = pretrain(model, loaded.data, r.train, r.seq);
  run.write_text("metrics.csv", metrics_csv(m));
  const double last_loss = m.epochs.empty() ? 0.0 : m.epochs.back().loss;
  run.write_json("summary.json", {{"final_loss", m.final_loss},
                                  {"last_epoch_loss", last_loss},
                                  {"epochs_averaged", std::min(r.train.eval_avg_last, m.epochs.size())},
                                  {"epochs", r.train.epochs}});
  save_encoder(run.path("epoch" + std::to_string(r.train.epochs) + ".ckpt"), model, r.seq);
  run.finish();
  std::cout << "pretrain: last epoch loss " << last_loss << ", mean of last "
            << std::min(r.train.eval_avg_last, m.epochs.size()) << " epochs " << m.final_loss << ", run dir " << run.dir().string() << "\n";
  return 0;
}

template <typename T>
EncoderModel<T> initial_model(const Context& ctx, const Dataset& data, std::uint64_t seed) {
  if (!ctx.checkpoint.empty()) {
    auto model = load_encoder<T>(ctx.checkpoint);
    check_width(data, model.config().d);
    const auto classes = infer_classes(ctx.cfg, data);
    if (model.config().num_classes != classes)
      throw std::invalid_argument("checkpoint has " + std::to_string(model.config().num_classes) +
                                  " classes, data has " + std::to_string(classes));
    return model;
  }
  EncoderConfig enc = ctx.cfg.enc;
  enc.num_classes = infer_classes(ctx.cfg, data);
  enc.validate();
  check_width(data, enc.d);
  return EncoderModel<T>(enc, seed);
}

template <typename T>
int cmd_finetune(const Context& ctx) {
  const auto& r = ctx.cfg;
  const auto loaded = load_data(ctx.data, r.enc.d);
  auto model = initial_model<T>(ctx, loaded.data, r.train.seed);
  json config = resolved_json(r);
  config["encoder"] = model.config();
  config["checkpoint"] = ctx.checkpoint;
  auto inputs = loaded.files;
  if (!ctx.checkpoint.empty()) inputs.push_back(ctx.checkpoint);
  RunDir run(ctx.out, ctx.name, "finetune", ctx.argc, ctx.argv, config, {r.train.seed}, inputs);
  const auto m = finetune(model, loaded.data, r.train, r.seq);
  run.write_text("metrics.csv", metrics_csv(m));
  run.write_json("summary.json", summary_json(m, r.train, Split::Test));
  save_encoder(run.path("epoch" + std::to_string(r.train.epochs) + ".ckpt"), model, r.seq);
  run.finish();
  std::cout << "finetune: test accuracy " << m.final_accuracy << " (mean of last " << r.train.eval_avg_last
            << " epochs), run dir " << run.dir().string() << "\n";
  return 0;
}

template <typename T>
int cmd_fewshot(const Context& ctx, const std::vector<std::size_t>& ks) {
  const auto& r = ctx.cfg;
  check_jobs(ctx.jobs);
  const auto loaded = load_data(ctx.data, r.enc.d);
  const auto seeds = seed_list(r.train.seed, ctx.seeds);
  const auto init = initial_model<T>(ctx, loaded.data, r.train.seed);
  for (std::size_t k : ks) balanced_subsample(loaded.data, k, 0);  // validates k before any training

  json config = resolved_json(r);
  config["encoder"] = init.config();
  config["checkpoint"] = ctx.checkpoint;
  config["k"] = ks;
  auto inputs = loaded.files;
  if (!ctx.checkpoint.empty()) inputs.push_back(ctx.checkpoint);
  RunDir run(ctx.out, ctx.name, "fewshot", ctx.argc, ctx.argv, config, seeds, inputs);

  struct Task {
    std::size_t k;
    std::uint64_t seed;
    ExperimentMetrics metrics;
  };
  std::vector<Task> tasks;
  for (std::size_t k : ks)
    for (std::uint64_t s : seeds) tasks.push_back({k, s, {}});
  const bool from_checkpoint = !ctx.checkpoint.empty();
  const auto n = static_cast<std::int64_t>(tasks.size());
  const int threads = static_cast<int>(ctx.jobs);
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (std::int64_t i = 0; i < n; ++i) {
    auto& t = tasks[static_cast<std::size_t>(i)];
    const EncoderConfig enc = init.config();
    const std::vector<std::uint64_t> one{t.seed};
    const auto res = fewshot<T>(from_checkpoint ? &init : nullptr, enc, loaded.data, t.k, r.train, r.seq, one);
    t.metrics = res.runs.front();
  }

  const std::size_t C = init.config().num_classes;
  std::ostringstream csv;
  csv << "k,seed,acc";
  for (std::size_t c = 0; c < C; ++c) csv << ",prec_" << c << ",rec_" << c << ",f1_" << c;
  csv << "\n";
  json summary = json::array();
  for (std::size_t k : ks) {
    std::vector<double> acc;
    for (const auto& t : tasks) {
      if (t.k != k) continue;
      acc.push_back(t.metrics.final_accuracy);
      csv << k << ',' << t.seed << ',' << format_double(t.metrics.final_accuracy);
      for (std::size_t c = 0; c < C; ++c)
        csv << ',' << format_double(t.metrics.final_precision[c]) << ',' << format_double(t.metrics.final_recall[c])
            << ',' << format_double(t.metrics.final_f1[c]);
      csv << "\n";
      run.write_text("metrics_k" + std::to_string(k) + "_seed" + std::to_string(t.seed) + ".csv",
                     metrics_csv(t.metrics));
    }
    const auto ms = mean_std(acc);
    summary.push_back({{"k", k}, {"acc_mean", ms.mean}, {"acc_std", ms.std}, {"seeds", acc.size()}});
    std::cout << "fewshot k=" << k << ": accuracy " << ms.mean << " +- " << ms.std << " over " << acc.size()
              << " seeds\n";
  }
  run.write_text("fewshot.csv", csv.str());
  run.write_json("summary.json", summary);
  run.finish();
  return 0;
}

GcnConfig gcn_for(const Resolved& r, const Dataset& data) {
  GcnConfig g = r.gcn;
  if (data.empty()) throw std::invalid_argument("empty dataset");
  g.input_dim = data.trees.front().feature_dim();
  g.num_classes = r.enc.num_classes > 0 ? r.enc.num_classes : static_cast<std::size_t>(std::max(2, data.num_classes()));
  g.validate();
  return g;
}

void report_sweep(RunDir& run, const SweepResult& res, const char* what) {
  std::ostringstream csv;
  write_sweep_csv(res, csv);
  run.write_text("sweep.csv", csv.str());
  run.write_json("summary.json", sweep_summary_json(res));
  for (const auto& [v, ms] : res.summary())
    std::cout << what << ' ' << v << ": accuracy " << ms.mean << " +- " << ms.std << "\n";
}

template <typename T>
int cmd_sweep_direction(const Context& ctx) {
  const auto& r = ctx.cfg;
  check_jobs(ctx.jobs);
  const auto loaded = load_data(ctx.data, r.enc.d);
  const auto gcn = gcn_for(r, loaded.data);
  const auto seeds = seed_list(r.train.seed, ctx.seeds);
  json config = resolved_json(r);
  config["gcn"] = gcn;
  RunDir run(ctx.out, ctx.name, "sweep-direction", ctx.argc, ctx.argv, config, seeds, loaded.files);
  const auto res = directionality_sweep<T>(loaded.data, gcn, r.train, seeds, ctx.jobs);
  report_sweep(run, res, "direction");
  run.finish();
  return 0;
}

template <typename T>
int cmd_sweep_layers(const Context& ctx, const std::string& model_kind, const std::vector<std::size_t>& layers) {
  const auto& r = ctx.cfg;
  check_jobs(ctx.jobs);
  if (model_kind != "gcn" && model_kind != "p2t3")
    throw std::invalid_argument("--model must be 'gcn' or 'p2t3', got '" + model_kind + "'");
  for (std::size_t L : layers)
    if (L < 1) throw std::invalid_argument("--layer-list entries must be >= 1");
  const auto loaded = load_data(ctx.data, r.enc.d);
  const auto seeds = seed_list(r.train.seed, ctx.seeds);
  json config = resolved_json(r);
  config["model"] = model_kind;
  config["layer_list"] = layers;
  SweepResult res;
  if (model_kind == "gcn") {
    const auto gcn = gcn_for(r, loaded.data);
    config["gcn"] = gcn;
    RunDir run(ctx.out, ctx.name, "sweep-layers", ctx.argc, ctx.argv, config, seeds, loaded.files);
    res = gcn_layer_sweep<T>(loaded.data, gcn, layers, r.train, seeds, ctx.jobs);
    report_sweep(run, res, "layers");
    run.finish();
  } else {
    EncoderConfig enc = r.enc;
    enc.num_classes = infer_classes(r, loaded.data);
    enc.validate();
    check_width(loaded.data, enc.d);
    config["encoder"] = enc;
    RunDir run(ctx.out, ctx.name, "sweep-layers", ctx.argc, ctx.argv, config, seeds, loaded.files);
    res = encoder_layer_sweep<T>(loaded.data, enc, r.seq, layers, r.train, seeds, ctx.jobs);
    report_sweep(run, res, "layers");
    run.finish();
  }
  return 0;
}

template <typename T>
int cmd_rank_attention(const Context& ctx, const std::string& tree_id, std::size_t top) {
  const auto& r = ctx.cfg;
  if (ctx.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  SequenceConfig seq = r.seq;
  const auto model = load_encoder<T>(ctx.checkpoint, &seq);
  const auto loaded = load_data(ctx.data, model.config().d);
  check_width(loaded.data, model.config().d);
  const auto prepared = prepare(loaded.data, seq);
  std::cout << "tree_id,rank,node,score\n";
  bool found = false;
  for (const auto& t : prepared) {
    if (!tree_id.empty() && t.tree->id != tree_id) continue;
    found = true;
    const auto s = make_sequence(t, seq, model.config().id_dim, identifier_seed(*t.tree, seq, 0, 0, false));
    const auto ranked = rank_replies_by_attention(model, s);
    for (std::size_t i = 0; i < ranked.size() && (top == 0 || i < top); ++i)
      std::cout << t.tree->id << ',' << i + 1 << ',' << ranked[i].first << ',' << format_double(ranked[i].second)
                << "\n";
  }
  if (!found) throw std::invalid_argument("no tree with id '" + tree_id + "'");
  return 0;
}

int cmd_gradcheck(std::size_t configs, std::uint64_t seed, bool verbose) {
  GradcheckOptions o;
  o.configs = configs;
  o.seed = seed;
  if (verbose) o.log = &std::cout;
  const auto rep = run_gradcheck(o);
  constexpr double kTol = 1e-4;
  std::size_t coords = 0;
  for (const auto& c : rep.cases) coords += c.coordinates;
  std::cout << "gradcheck: cases=" << rep.cases.size() << " coordinates=" << coords
            << " max_rel_error=" << rep.max_rel_error << " tol=" << kTol
            << " status=" << (rep.passed(kTol) ? "pass" : "fail") << "\n";
  return rep.passed(kTol) ? 0 : 1;
}

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_selftest(seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

void print_error(const char* kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App root("Propagation-tree encoder workbench", "chaintree");
  root.require_subcommand(1);
  root.set_version_flag("--version", CHAINTREE_VERSION);

  Context ctx{argc, argv, {}, {}, {}, {}, {}, 1, 5};
  std::vector<std::unique_ptr<Command>> cmds;
  auto make = [&](const std::string& name, const std::string& desc) -> Command& {
    cmds.push_back(std::make_unique<Command>(root, name, desc));
    return *cmds.back();
  };
  auto data_flag = [&](Command& c) { c.app()->add_option("--data", ctx.data, "split directory or a single .jsonl file"); };
  auto run_flags = [&](Command& c) {
    c.app()->add_option("--out", ctx.out, "output root; the run directory is <out>/<name>")->capture_default_str();
    c.app()->add_option("--name", ctx.name, "run name (default: the subcommand)");
  };
  auto jobs_flag = [&](Command& c) {
    c.app()->add_option("--jobs", ctx.jobs, "seeds/variants trained concurrently")->capture_default_str();
  };
  auto seeds_flag = [&](Command& c) {
    c.app()->add_option("--seeds", ctx.seeds, "number of seeds (seed, seed+1, ...)")->capture_default_str();
  };
  ctx.out = "runs";

  // gen
  auto& gen = make("gen", "generate a synthetic labeled dataset (one file per split)");
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data";
  {
    const GenConfig g;
    gen.config_flag();
    gen.flag<std::size_t>("--claims", g.claims, "number of trees", [](Resolved& r, const std::size_t& v) { r.gen.claims = v; });
    gen.flag<double>("--reply-mean", g.reply_mean, "mean replies per tree",
                     [](Resolved& r, const double& v) { r.gen.reply_mean = v; });
    gen.flag<double>("--reply-dispersion", g.reply_dispersion, "log-normal sigma of the reply count",
                     [](Resolved& r, const double& v) { r.gen.reply_dispersion = v; });
    gen.flag<std::size_t>("--min-replies", g.min_replies, "minimum replies per tree",
                          [](Resolved& r, const std::size_t& v) { r.gen.min_replies = v; });
    gen.flag<double>("--p1", g.p1, "target fraction of 1-level replies", [](Resolved& r, const double& v) { r.gen.p1 = v; });
    gen.flag<double>("--p2", g.p2, "target fraction of 2-level replies", [](Resolved& r, const double& v) { r.gen.p2 = v; });
    gen.flag<double>("--p-deeper", g.p_deeper, "target fraction of deeper replies",
                     [](Resolved& r, const double& v) { r.gen.p_deeper = v; });
    gen.flag<int>("--num-classes", g.num_classes, "number of classes", [](Resolved& r, const int& v) { r.gen.num_classes = v; });
    gen.flag<double>("--signal", g.signal, "planted class-signal strength",
                     [](Resolved& r, const double& v) { r.gen.signal = v; });
    gen.flag<double>("--noise", g.noise, "feature noise scale", [](Resolved& r, const double& v) { r.gen.noise = v; });
    gen.flag<std::uint64_t>("--direction-seed", g.direction_seed, "seed of the class directions",
                            [](Resolved& r, const std::uint64_t& v) { r.gen.direction_seed = v; });
    gen.flag<std::size_t>("--feature-dim", g.feature_dim, "node feature dimension",
                          [](Resolved& r, const std::size_t& v) { r.gen.feature_dim = v; });
    gen.flag<std::size_t>("--val", g.val, "validation trees", [](Resolved& r, const std::size_t& v) { r.gen.val = v; });
    gen.flag<std::size_t>("--test", g.test, "test trees", [](Resolved& r, const std::size_t& v) { r.gen.test = v; });
    gen.flag<std::size_t>("--unlabeled", g.unlabeled, "unlabeled trees",
                          [](Resolved& r, const std::size_t& v) { r.gen.unlabeled = v; });
    gen.app()->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
    gen.app()->add_option("--out", gen_out, "output directory")->capture_default_str();
  }

  // stats
  auto& stats = make("stats", "depth profile of a dataset");
  bool stats_json = false;
  data_flag(stats);
  stats.app()->add_flag("--json", stats_json, "print one JSON object instead of a table");

  // extract
  auto& extract = make("extract", "conversation-chain summary per tree, or one tree's token sequence");
  std::string dump_id;
  data_flag(extract);
  extract.config_flag();
  add_encoder_flags(extract);
  add_sequence_flags(extract);
  add_seed_flag(extract);
  extract.app()->add_option("--dump-sequence", dump_id, "tree id whose augmented sequence is printed as JSON");
  extract.app()->add_option("--checkpoint", ctx.checkpoint, "encoder checkpoint providing the projection");

  // training commands
  auto training = [&](Command& c) {
    data_flag(c);
    c.config_flag();
    add_encoder_flags(c);
    add_sequence_flags(c);
    add_train_flags(c);
    add_seed_flag(c);
    run_flags(c);
    jobs_flag(c);
  };
  auto& pre = make("pretrain", "contrastive pretraining on all trees of --data");
  training(pre);
  auto& fine = make("finetune", "supervised training on the train split");
  training(fine);
  fine.app()->add_option("--checkpoint", ctx.checkpoint, "start from this encoder checkpoint");
  auto& few = make("fewshot", "fine-tune on k class-balanced train trees per seed");
  training(few);
  seeds_flag(few);
  std::string ks_text = "10,50";
  few.app()->add_option("--k", ks_text, "comma-separated shot counts")->capture_default_str();
  few.app()->add_option("--checkpoint", ctx.checkpoint, "pretrained encoder (omit to train from scratch)");

  auto& sdir = make("sweep-direction", "GCN accuracy for TD, BU, UD and Bi propagation");
  data_flag(sdir);
  sdir.config_flag();
  add_gcn_flags(sdir, false, true);
  add_train_flags(sdir);
  add_seed_flag(sdir);
  run_flags(sdir);
  jobs_flag(sdir);
  seeds_flag(sdir);

  auto& slay = make("sweep-layers", "accuracy versus layer count for a GCN or the chain encoder");
  std::string model_kind = "gcn", layers_text = "1,2,3,4,5,6";
  data_flag(slay);
  slay.config_flag();
  slay.app()->add_option("--model", model_kind, "gcn or p2t3")->capture_default_str();
  slay.app()->add_option("--layer-list", layers_text, "comma-separated layer counts")->capture_default_str();
  add_gcn_flags(slay, true, false);
  {
    // Encoder flags except --layers, which the sweep sets.
    const EncoderConfig e;
    slay.flag<std::size_t>("--d", e.d, "model width", [](Resolved& r, const std::size_t& v) { r.enc.d = v; });
    slay.flag<std::size_t>("--heads", e.heads, "attention heads", [](Resolved& r, const std::size_t& v) { r.enc.heads = v; });
    slay.flag<std::size_t>("--ffn-dim", e.ffn_dim, "feed-forward width",
                           [](Resolved& r, const std::size_t& v) { r.enc.ffn_dim = v; });
    slay.flag<double>("--dropout", e.dropout, "dropout rate", [](Resolved& r, const double& v) { r.enc.dropout = v; });
    slay.flag<std::size_t>("--id-dim", e.id_dim, "chain identifier dimension l",
                           [](Resolved& r, const std::size_t& v) { r.enc.id_dim = v; });
    slay.flag<std::size_t>("--num-classes", 0, "class count; 0 infers it from the data",
                           [](Resolved& r, const std::size_t& v) { r.enc.num_classes = v; });
  }
  add_sequence_flags(slay);
  add_train_flags(slay);
  add_seed_flag(slay);
  run_flags(slay);
  jobs_flag(slay);
  seeds_flag(slay);

  auto& rank = make("rank-attention", "rank replies by last-layer source-token attention");
  std::string rank_tree;
  std::size_t rank_top = 0;
  data_flag(rank);
  add_sequence_flags(rank);
  rank.app()->add_option("--checkpoint", ctx.checkpoint, "encoder checkpoint (required)");
  rank.app()->add_option("--tree", rank_tree, "only this tree id");
  rank.app()->add_option("--top", rank_top, "print at most this many nodes per tree (0 = all)")->capture_default_str();

  auto& gc = make("gradcheck", "finite-difference gradient suite in double precision");
  std::size_t gc_configs = 100;
  std::uint64_t gc_seed = 0;
  bool gc_verbose = false;
  gc.app()->add_option("--configs", gc_configs, "random configurations per model family")->capture_default_str();
  gc.app()->add_option("--seed", gc_seed, "seed of the random configurations")->capture_default_str();
  gc.app()->add_flag("--verbose", gc_verbose, "print every case");

  auto& st = make("selftest", "oracle and property checks");
  std::uint64_t st_seed = 0;
  st.app()->add_option("--seed", st_seed, "seed of the random inputs")->capture_default_str();

  try {
    root.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return root.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return root.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return root.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    Command* active = nullptr;
    for (auto& c : cmds)
      if (c->app()->parsed()) active = c.get();
    ctx.cfg = active->resolve();
    if (ctx.name.empty()) ctx.name = active->name();
    const std::string& cmd = active->name();
    const bool high = precision_from_env() == Precision::High;

    if (cmd == "gen") {
      ctx.out = gen_out;
      return cmd_gen(ctx, gen_seed);
    }
    if (cmd == "stats") return cmd_stats(ctx, stats_json);
    if (cmd == "gradcheck") return cmd_gradcheck(gc_configs, gc_seed, gc_verbose);
    if (cmd == "selftest") return cmd_selftest(st_seed);

    ctx.cfg.train.validate();
    if (cmd == "extract") return high ? cmd_extract<double>(ctx, dump_id) : cmd_extract<float>(ctx, dump_id);
    if (cmd == "pretrain") return high ? cmd_pretrain<double>(ctx) : cmd_pretrain<float>(ctx);
    if (cmd == "finetune") return high ? cmd_finetune<double>(ctx) : cmd_finetune<float>(ctx);
    if (cmd == "fewshot") {
      const auto ks = parse_list(ks_text, "--k");
      return high ? cmd_fewshot<double>(ctx, ks) : cmd_fewshot<float>(ctx, ks);
    }
    if (cmd == "sweep-direction") return high ? cmd_sweep_direction<double>(ctx) : cmd_sweep_direction<float>(ctx);
    if (cmd == "sweep-layers") {
      const auto layers = parse_list(layers_text, "--layer-list");
      return high ? cmd_sweep_layers<double>(ctx, model_kind, layers) : cmd_sweep_layers<float>(ctx, model_kind, layers);
    }
    if (cmd == "rank-attention")
      return high ? cmd_rank_attention<double>(ctx, rank_tree, rank_top)
                  : cmd_rank_attention<float>(ctx, rank_tree, rank_top);
    throw std::logic_error("unhandled subcommand " + cmd);
  } catch (const ParseError& e) {
    print_error("parse", e.what());
    return 1;
  } catch (const InvalidTree& e) {
    print_error("invalid_tree", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    print_error("invalid_config", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
}

}  // namespace chaintree
