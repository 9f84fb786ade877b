// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chaintree/chains.hpp"
#include "chaintree/embedding.hpp"
#include "chaintree/encoder.hpp"
#include "chaintree/gnn.hpp"
#include "chaintree/gradcheck.hpp"
#include "chaintree/rng.hpp"
#include "chaintree/sweeps.hpp"
#include "chaintree/training.hpp"
#include "chaintree/tree.hpp"

using namespace chaintree;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i], 3);
  return s + "]";
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

// ---- 1 -------------------------------------------------------------------

void dfs_paths(const std::vector<std::vector<int>>& kids, int v, std::vector<int>& path,
               std::set<std::vector<int>>& out) {
  path.push_back(v);
  if (kids[static_cast<std::size_t>(v)].empty()) out.insert(path);
  for (int c : kids[static_cast<std::size_t>(v)]) dfs_paths(kids, c, path, out);
  path.pop_back();
}

Outcome chain_oracle() {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0, chains = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    Rng rng(derive_seed(101, "acceptance.trees", i));
    const auto tree = random_tree(1 + rng.uniform_int(50), 1, rng.next_u64());
    std::vector<std::vector<int>> kids(tree.size());
    for (std::size_t v = 1; v < tree.size(); ++v)
      kids[static_cast<std::size_t>(tree.nodes[v].parent)].push_back(static_cast<int>(v));
    std::set<std::vector<int>> want;
    std::vector<int> path;
    for (int c : kids[0]) dfs_paths(kids, c, path, want);

    const auto set = extract_chains(tree);
    std::set<std::vector<int>> got;
    for (const auto& c : set.chains) got.insert(c.token_node_indices);
    chains += set.chains.size();
    if (got != want || set.chains.size() != want.size()) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0, "1000 trees, " + std::to_string(chains) + " chains, " +
                                               std::to_string(mismatches) + " mismatches, " + fmt(secs, 3) + " s"};
}

// ---- 2 -------------------------------------------------------------------

Outcome identifier_orthonormality() {
  double worst_gram = 0.0;
  for (std::size_t l : {1, 8, 64, 256})
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto ids = sample_identifiers(l, derive_seed(202, "acceptance.ids", l, s));
      for (std::size_t a = 0; a < l; ++a)
        for (std::size_t b = 0; b < l; ++b) {
          double dot = 0.0;
          for (std::size_t k = 0; k < l; ++k) dot += ids.C(a, k) * ids.C(b, k);
          worst_gram = std::max(worst_gram, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
    }

  // Token-level identifiers of built sequences.
  double worst_same = 0.0, worst_cross = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng(derive_seed(202, "acceptance.seqs", i));
    const auto tree = random_tree(2 + rng.uniform_int(40), 4, rng.next_u64());
    const auto chains = extract_chains(tree);
    const auto ids = sample_identifiers(256, rng.next_u64(), chains.chains.size() + 1);
    const auto seq = build_inputs(chains, tree, ids);
    for (std::size_t a = 0; a < seq.m; ++a)
      for (std::size_t b = 0; b < seq.m; ++b) {
        const auto ra = seq.token_meta[a].id_row, rb = seq.token_meta[b].id_row;
        double dot = 0.0;
        for (std::size_t k = 0; k < seq.l; ++k) dot += seq.ids(ra, k) * seq.ids(rb, k);
        if (seq.token_meta[a].chain == seq.token_meta[b].chain)
          worst_same = std::max(worst_same, std::abs(dot - 1.0));
        else
          worst_cross = std::max(worst_cross, std::abs(dot));
      }
  }
  const bool ok = worst_gram < 1e-5 && worst_same < 1e-5 && worst_cross < 1e-5;
  return {ok, "max|CC^T-I| " + fmt(worst_gram, 3) + ", same-chain |dot-1| " + fmt(worst_same, 3) +
                  ", cross-chain |dot| " + fmt(worst_cross, 3)};
}

// ---- 3 -------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradcheckOptions opts;
  opts.configs = 100;
  opts.seed = 303;
  const auto report = run_gradcheck(opts);
  const double secs = seconds_since(t0);
  std::size_t coords = 0;
  for (const auto& c : report.cases) coords += c.coordinates;
  return {report.passed(1e-4) && secs < 300.0,
          std::to_string(report.cases.size()) + " cases, " + std::to_string(coords) +
              " coordinates, max rel error " + fmt(report.max_rel_error, 3) + ", " + fmt(secs, 3) + " s"};
}

// ---- 4 -------------------------------------------------------------------

Outcome permutation_invariance() {
  EncoderConfig cfg;  // defaults: d 64, 4 heads, 3 layers, l 256
  EncoderModel<float> model(cfg, 404);
  EncoderWorkspace<float> ws;
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng(derive_seed(404, "acceptance.perm", i));
    const auto tree = random_tree(2 + rng.uniform_int(49), cfg.d, rng.next_u64());
    const auto chains = extract_chains(tree);
    const auto ids = sample_identifiers(cfg.id_dim, rng.next_u64(), chains.chains.size() + 1);
    const auto seq = build_inputs(chains, tree, ids);
    std::vector<std::size_t> perm(seq.chain_heads.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const auto a = model.classify(model.forward(seq, ws).h_root);
    const auto b = model.classify(model.forward(permute_chain_blocks(seq, perm), ws).h_root);
    for (std::size_t c = 0; c < a.size(); ++c)
      worst = std::max(worst, std::abs(static_cast<double>(a[c]) - static_cast<double>(b[c])));
  }
  return {worst < 1e-5, "100 trees, max logit change " + fmt(worst, 3)};
}

// ---- shared experiment settings -------------------------------------------

// GCN baseline training used by criteria 5 and 6.
TrainConfig gcn_train(std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = 5e-3;
  t.epochs = 60;
  t.seed = seed;
  return t;
}

Dataset gcn_data(std::uint64_t seed) {
  GenConfig g;
  g.claims = 600;
  g.val = 50;
  g.test = 150;
  g.feature_dim = 32;
  g.signal = 0.3;  // keeps the 2-layer baseline off the accuracy ceiling
  return generate_synthetic(g, seed);
}

// ---- 5 -------------------------------------------------------------------

Outcome over_smoothing() {
  const auto t0 = Clock::now();
  const auto data = gcn_data(505);
  std::vector<const PropagationTree*> test;
  for (std::size_t i : data.indices(Split::Test)) test.push_back(&data.trees[i]);

  std::vector<double> acc2, acc6;
  std::size_t smoother = 0, total = 0;
  for (std::uint64_t seed : kSeeds) {
    for (std::size_t layers : {2u, 6u}) {
      GcnConfig cfg;
      cfg.direction = Direction::Undirected;
      cfg.layers = layers;
      cfg.input_dim = 32;
      cfg.hidden = 32;
      cfg.num_classes = data.num_classes();
      GcnModel<float> model(cfg, seed);
      const auto m = train_gcn(model, data, gcn_train(seed));
      (layers == 2 ? acc2 : acc6).push_back(m.final_accuracy);
      if (layers == 6) {
        const auto rep = smoothness_report(model, test);
        for (const auto& per_layer : rep.tree_cosine) {
          ++total;
          if (per_layer[6] > per_layer[1]) ++smoother;
        }
      }
    }
  }
  const double frac = static_cast<double>(smoother) / static_cast<double>(total);
  const double secs = seconds_since(t0);
  const bool ok = mean(acc6) < mean(acc2) && frac >= 0.9 && secs < 900.0;
  return {ok, "UD acc 2 layers " + fmt(mean(acc2)) + " " + list(acc2) + ", 6 layers " + fmt(mean(acc6)) + " " +
                  list(acc6) + "; cosine(6) > cosine(1) in " + fmt(100 * frac, 3) + "% of " +
                  std::to_string(total) + " tree-runs, " + fmt(secs, 3) + " s"};
}

// ---- 6 -------------------------------------------------------------------

Outcome directionality() {
  const auto data = gcn_data(606);
  GcnConfig base;
  base.input_dim = 32;
  base.hidden = 32;
  base.num_classes = data.num_classes();
  const auto res = directionality_sweep<float>(data, base, gcn_train(0), kSeeds, 1);
  const double td = res.mean_accuracy("TD"), bu = res.mean_accuracy("BU"), ud = res.mean_accuracy("UD"),
               bi = res.mean_accuracy("Bi");
  return {bi >= std::max(td, bu),
          "mean acc TD " + fmt(td) + ", BU " + fmt(bu) + ", UD " + fmt(ud) + ", Bi " + fmt(bi)};
}

// ---- 7, 8 ----------------------------------------------------------------

// 500 train / 100 val / 200 test planted-signal trees.
Dataset separable_data() {
  GenConfig g;
  g.claims = 800;
  g.val = 100;
  g.test = 200;
  g.feature_dim = 64;
  return generate_synthetic(g, 707);
}

double finetune_accuracy(const Dataset& data, const SequenceConfig& seq, std::uint64_t seed) {
  EncoderConfig enc;
  enc.num_classes = data.num_classes();
  EncoderModel<float> model(enc, seed);
  TrainConfig tc;  // defaults: 100 epochs
  tc.seed = seed;
  return finetune(model, data, tc, seq).final_accuracy;
}

double full_model_seed0 = -1.0;  // shared by criteria 7 and 8

Outcome separable() {
  const auto data = separable_data();
  const double acc = finetune_accuracy(data, {}, 0);
  full_model_seed0 = acc;

  // Control: train labels permuted, val/test untouched.
  auto shuffled = data;
  const auto train = shuffled.indices(Split::Train);
  std::vector<int> labels;
  for (std::size_t i : train) labels.push_back(*shuffled.trees[i].label);
  Rng rng(derive_seed(707, "acceptance.shuffle"));
  rng.shuffle(labels);
  for (std::size_t j = 0; j < train.size(); ++j) shuffled.trees[train[j]].label = labels[j];
  const double control = finetune_accuracy(shuffled, {}, 0);
  const double chance = 1.0 / static_cast<double>(data.num_classes());

  return {acc >= 0.95 && std::abs(control - chance) <= 0.10,
          "test acc " + fmt(acc) + " (mean of last 10 of 100 epochs); shuffled-label control " + fmt(control) +
              " vs chance " + fmt(chance)};
}

Outcome chain_id_ablation() {
  const auto data = separable_data();
  SequenceConfig without;
  without.embed.use_chain_id = false;
  std::vector<double> full, ablated;
  for (std::uint64_t seed : kSeeds) {
    full.push_back(seed == 0 && full_model_seed0 >= 0 ? full_model_seed0 : finetune_accuracy(data, {}, seed));
    ablated.push_back(finetune_accuracy(data, without, seed));
  }
  const double drop = mean(full) - mean(ablated);
  return {drop >= 0.02, "full " + fmt(mean(full)) + " " + list(full) + ", without chain id " + fmt(mean(ablated)) +
                            " " + list(ablated) + ", drop " + fmt(drop, 3)};
}

// ---- 9 -------------------------------------------------------------------

Outcome pretraining_benefit() {
  GenConfig pool_cfg;
  pool_cfg.claims = 2000;
  pool_cfg.unlabeled = 2000;
  pool_cfg.val = pool_cfg.test = 0;
  const auto pool = generate_synthetic(pool_cfg, 909);

  GenConfig labeled_cfg;
  labeled_cfg.claims = 520;
  labeled_cfg.val = 20;
  labeled_cfg.test = 200;
  const auto labeled = generate_synthetic(labeled_cfg, 910);

  EncoderConfig enc;
  enc.num_classes = labeled.num_classes();
  SequenceConfig seq;
  EncoderModel<float> pretrained(enc, 909);
  TrainConfig pt;
  pt.epochs = 10;
  pt.seed = 909;
  pretrain(pretrained, pool, pt, seq);

  TrainConfig ft;  // defaults
  std::string detail;
  bool ok = true;
  for (std::size_t k : {10u, 50u}) {
    const auto scratch = fewshot<float>(nullptr, enc, labeled, k, ft, seq, kSeeds);
    const auto warm = fewshot<float>(&pretrained, enc, labeled, k, ft, seq, kSeeds);
    ok = ok && warm.accuracy.mean > scratch.accuracy.mean;
    detail += (detail.empty() ? "" : "; ") + std::string("k=") + std::to_string(k) + " scratch " +
              fmt(scratch.accuracy.mean) + " pretrained " + fmt(warm.accuracy.mean);
  }
  return {ok, detail};
}

// ---- 10 ------------------------------------------------------------------

Outcome generator_fidelity() {
  GenConfig g;
  g.claims = 10000;
  g.val = g.test = 0;
  g.feature_dim = 2;
  const auto p = depth_profile(generate_synthetic(g, 1010));
  const bool ok = std::abs(p.frac_1level - 0.72) <= 0.03 && std::abs(p.frac_2level - 0.20) <= 0.03 &&
                  std::abs(p.frac_deeper - 0.08) <= 0.03;
  return {ok, "fractions " + fmt(p.frac_1level) + ", " + fmt(p.frac_2level) + ", " + fmt(p.frac_deeper)};
}

// ---- 11 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "chaintree_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = CHAINTREE_CLI;
  const std::string d = dir.string();
  if (run(cli + " gen --claims 120 --feature-dim 16 --seed 11 --out " + d + "/data") != 0)
    return {false, "gen failed"};

  struct Case {
    std::string args, csv;
  };
  const std::string common = " --data " + d + "/data --d 16 --id-dim 64 --epochs 3 --seed 5";
  const std::vector<Case> cases{
      {"finetune" + common, "metrics.csv"},
      {"fewshot" + common + " --k 10 --seeds 2 --jobs 2", "fewshot.csv"},
      {"sweep-direction --data " + d + "/data --hidden 8 --epochs 3 --seed 5 --jobs 2", "sweep.csv"},
      {"sweep-layers --model p2t3 --layer-list 1,2" + common, "sweep.csv"},
  };
  std::size_t identical = 0;
  std::string detail;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    std::string out[2];
    for (int r = 0; r < 2; ++r) {
      const std::string name = "c" + std::to_string(i) + "r" + std::to_string(r);
      if (run(cli + " " + cases[i].args + " --out " + d + "/runs --name " + name) != 0)
        return {false, "command failed: " + cases[i].args};
      out[r] = slurp(dir / "runs" / name / cases[i].csv);
    }
    if (!out[0].empty() && out[0] == out[1]) ++identical;
    else detail += " differs: " + cases[i].args.substr(0, cases[i].args.find(' '));
  }
  return {identical == cases.size(),
          std::to_string(identical) + "/" + std::to_string(cases.size()) + " commands byte-identical" + detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> all{
      {1, "chain extraction oracle", chain_oracle},
      {2, "identifier orthonormality", identifier_orthonormality},
      {3, "gradient suite", gradient_suite},
      {4, "chain permutation invariance", permutation_invariance},
      {5, "over-smoothing with depth (UD GCN)", over_smoothing},
      {6, "directionality (Bi vs TD/BU)", directionality},
      {7, "separable classification", separable},
      {8, "chain identifier ablation", chain_id_ablation},
      {9, "pretraining benefit", pretraining_benefit},
      {10, "generator fidelity", generator_fidelity},
      {11, "CLI determinism", cli_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.passed) ++failed;
    std::cout << (o.passed ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.name << " -- " << o.detail
              << " (" << fmt(seconds_since(t0), 3) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
