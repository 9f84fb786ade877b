#include "chaintree/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "chaintree/gnn.hpp"
#include "chaintree/losses.hpp"
#include "chaintree/rng.hpp"
#include "chaintree/training.hpp"

namespace chaintree {

double relative_error(double analytic, double numeric, double floor) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

namespace {

// Checks every coordinate of `x` against `analytic` using loss(x).
GradcheckCase check_all(std::string name, std::vector<double>& x, const std::vector<double>& analytic,
                        const std::function<double()>& loss, double h,
                        const std::function<std::string(std::size_t)>& label) {
  GradcheckCase c;
  c.name = std::move(name);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    // Five-point central stencil, O(h^4) truncation error.
    x[i] = orig + 2.0 * h;
    const double p2 = loss();
    x[i] = orig + h;
    const double p1 = loss();
    x[i] = orig - h;
    const double m1 = loss();
    x[i] = orig - 2.0 * h;
    const double m2 = loss();
    x[i] = orig;
    const double numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    const double err = relative_error(analytic[i], numeric);
    if (c.worst.empty() || err > c.max_rel_error) {
      c.max_rel_error = err;
      c.worst = label(i);
    }
  }
  c.coordinates = x.size();
  return c;
}

std::function<std::string(std::size_t)> param_label(const ParamSet<double>& params) {
  return [&params](std::size_t i) {
    for (const auto& b : params.blocks()) {
      if (i >= b.offset && i < b.offset + b.rows * b.cols) {
        const std::size_t k = i - b.offset;
        return b.name + "[" + std::to_string(k / b.cols) + "," + std::to_string(k % b.cols) + "]";
      }
    }
    return std::string("?");
  };
}

GradcheckCase encoder_case(std::size_t index, std::uint64_t seed, double h, bool constant_input) {
  Rng rng(seed);
  EncoderConfig cfg;
  static constexpr std::size_t kDims[] = {4, 6, 8};
  cfg.d = kDims[rng.uniform_int(3)];
  std::vector<std::size_t> heads;
  for (std::size_t hh = 1; hh <= cfg.d; ++hh)
    if (cfg.d % hh == 0) heads.push_back(hh);
  cfg.heads = heads[rng.uniform_int(heads.size())];
  cfg.layers = 1 + rng.uniform_int(3);
  cfg.ffn_dim = 2 + rng.uniform_int(10);
  cfg.num_classes = 2 + rng.uniform_int(3);
  cfg.dropout = rng.uniform() < 0.5 ? 0.0 : 0.1 + 0.3 * rng.uniform();

  SequenceConfig seq;
  seq.deep_min_len = 2 + rng.uniform_int(2);
  seq.embed.use_chain_id = rng.uniform() < 0.8;
  seq.embed.use_depth = rng.uniform() < 0.8;
  seq.embed.use_type = rng.uniform() < 0.8;
  seq.embed.type_scale = 0.5 + rng.uniform();

  const std::size_t batch = 2 + rng.uniform_int(3);
  std::vector<PropagationTree> trees;
  std::vector<int> labels;
  std::size_t max_m = 1;
  for (std::size_t b = 0; b < batch; ++b) {
    auto t = random_tree(1 + rng.uniform_int(6), cfg.d, derive_seed(seed, "tree", b));
    if (constant_input)
      for (auto& n : t.nodes) std::fill(n.features.begin(), n.features.end(), 0.0);
    trees.push_back(std::move(t));
    labels.push_back(static_cast<int>(rng.uniform_int(cfg.num_classes)));
  }
  std::vector<ConversationChainSet> chains;
  for (const auto& t : trees) {
    chains.push_back(extract_chains(t, {seq.deep_min_len}));
    max_m = std::max(max_m, chains.back().m);
  }
  cfg.id_dim = max_m + rng.uniform_int(4);
  if (constant_input) {
    // All-zero layer-norm inputs: the normalization runs at its epsilon floor.
    seq.embed.use_chain_id = seq.embed.use_depth = seq.embed.use_type = false;
    cfg.dropout = 0.0;
  }

  std::vector<AugmentedSequence> seqs;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto ids = sample_identifiers(cfg.id_dim, derive_seed(seed, "ids", b), chains[b].chains.size() + 1);
    seqs.push_back(build_inputs(chains[b], trees[b], ids, seq.embed));
  }

  BatchTerms terms;
  const auto mode = rng.uniform_int(3);
  terms.sup_weight = mode == 1 ? 0.0 : 1.0;
  terms.unsup_weight = mode == 0 ? 0.0 : 0.3 + rng.uniform();
  terms.tau = 0.2 + rng.uniform();
  terms.reduction = rng.uniform() < 0.5 ? PairReduction::MeanOverPairs : PairReduction::SumPerTree;
  const bool has_heads = std::any_of(seqs.begin(), seqs.end(), [](const auto& s) { return !s.chain_heads.empty(); });
  // With constant inputs every representation is identical, so the
  // contrastive loss is flat and only the supervised term is informative.
  if (!has_heads || constant_input) {
    terms.sup_weight = 1.0;
    terms.unsup_weight = 0.0;
  }

  EncoderModel<double> model(cfg, derive_seed(seed, "model"));
  // Larger weights than the training init so every path carries gradient.
  Rng wr(derive_seed(seed, "weights"));
  for (double& v : model.params().values()) v += 0.3 * wr.normal();
  const std::uint64_t dropout_seed = derive_seed(seed, "dropout");
  const bool train = cfg.dropout > 0.0;

  std::vector<double> grads(model.params().size(), 0.0);
  batch_loss<double>(model, seqs, labels, terms, &grads, train, dropout_seed);
  auto loss = [&] { return batch_loss<double>(model, seqs, labels, terms, nullptr, train, dropout_seed).total; };

  std::ostringstream name;
  name << (constant_input ? "encoder-const#" : "encoder#") << index << " d=" << cfg.d << " heads=" << cfg.heads
       << " layers=" << cfg.layers << " ffn=" << cfg.ffn_dim << " l=" << cfg.id_dim << " dropout=" << cfg.dropout
       << (terms.sup_weight > 0 ? " sup" : "") << (terms.unsup_weight > 0 ? " unsup" : "")
       << (terms.unsup_weight > 0 ? (terms.reduction == PairReduction::SumPerTree ? "(sum)" : "(mean)") : "");
  return check_all(name.str(), model.params().values(), grads, loss, h, param_label(model.params()));
}

GradcheckCase gcn_case(std::size_t index, std::uint64_t seed, double h) {
  Rng rng(seed);
  GcnConfig cfg;
  cfg.layers = 1 + rng.uniform_int(4);
  cfg.hidden = 2 + rng.uniform_int(5);
  cfg.input_dim = 2 + rng.uniform_int(5);
  cfg.num_classes = 2 + rng.uniform_int(2);
  cfg.direction = static_cast<Direction>(index % 4);
  cfg.readout = (index / 4) % 2 == 0 ? Readout::MeanPoolRoot : Readout::MeanPool;

  const std::size_t batch = 1 + rng.uniform_int(3);
  std::vector<PropagationTree> trees;
  std::vector<int> labels;
  for (std::size_t b = 0; b < batch; ++b) {
    trees.push_back(random_tree(1 + rng.uniform_int(8), cfg.input_dim, derive_seed(seed, "tree", b)));
    labels.push_back(static_cast<int>(rng.uniform_int(cfg.num_classes)));
  }

  // Resample weights until no ReLU input sits near its kink, where central
  // differences are meaningless.
  GcnModel<double> model;
  std::vector<GcnWorkspace<double>> ws(batch);
  for (std::uint64_t attempt = 0;; ++attempt) {
    model = GcnModel<double>(cfg, derive_seed(seed, "model", attempt));
    double closest = INFINITY;
    for (std::size_t b = 0; b < batch; ++b) {
      model.forward(trees[b], ws[b]);
      for (const auto& st : ws[b].stacks)
        for (const auto& z : st.z)
          for (double v : z.storage()) closest = std::min(closest, std::abs(v));
    }
    if (closest > 1e-3 || attempt > 50) break;
  }

  auto total_loss = [&](std::vector<double>* grads) {
    Matrix<double> logits(batch, cfg.num_classes);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto lg = model.forward(trees[b], ws[b]);
      std::copy(lg.begin(), lg.end(), logits.row(b).begin());
    }
    const auto sup = sup_loss<double>(logits, labels);
    if (grads)
      for (std::size_t b = 0; b < batch; ++b) {
        model.forward(trees[b], ws[b]);
        model.backward(ws[b], sup.dlogits.row(b), *grads);
      }
    return sup.loss;
  };
  std::vector<double> grads(model.params().size(), 0.0);
  total_loss(&grads);

  std::ostringstream name;
  name << "gcn#" << index << " " << to_string(cfg.direction) << " " << to_string(cfg.readout)
       << " layers=" << cfg.layers << " hidden=" << cfg.hidden;
  return check_all(name.str(), model.params().values(), grads, [&] { return total_loss(nullptr); }, h,
                   param_label(model.params()));
}

// The losses on their own, differentiated with respect to their inputs.
std::vector<GradcheckCase> loss_cases(std::size_t index, std::uint64_t seed, double h) {
  Rng rng(seed);
  std::vector<GradcheckCase> out;

  const std::size_t B = 2 + rng.uniform_int(4), C = 2 + rng.uniform_int(4), d = 2 + rng.uniform_int(6);
  std::vector<int> labels(B);
  for (int& y : labels) y = static_cast<int>(rng.uniform_int(C));
  std::vector<double> logits(B * C);
  for (double& v : logits) v = 2.0 * rng.normal();
  auto ce = [&] { return sup_loss<double>(ConstMatrixView<double>(logits.data(), B, C), labels); };
  const auto ce0 = ce();
  out.push_back(check_all("sup_loss#" + std::to_string(index), logits, ce0.dlogits.storage(),
                          [&] { return ce().loss; }, h, [](std::size_t i) { return "logit " + std::to_string(i); }));

  const double tau = 0.1 + rng.uniform();
  for (auto reduction : {PairReduction::MeanOverPairs, PairReduction::SumPerTree}) {
    ContrastiveBatch<double> batch;
    batch.roots.resize(B, d);
    for (double& v : batch.roots.storage()) v = rng.normal();
    batch.heads.resize(B);
    for (std::size_t i = 0; i < B; ++i) {
      batch.heads[i].resize(rng.uniform_int(4), d);
      for (double& v : batch.heads[i].storage()) v = rng.normal();
    }
    if (batch.heads[0].rows() == 0) {
      batch.heads[0].resize(1, d);
      for (double& v : batch.heads[0].storage()) v = rng.normal();
    }
    // Flatten roots and heads into one coordinate vector.
    std::vector<double*> slots;
    std::vector<double> analytic;
    const InfoNce<double> nce(tau, reduction);
    const auto res = nce.evaluate(batch);
    for (std::size_t k = 0; k < batch.roots.size(); ++k) {
      slots.push_back(batch.roots.data() + k);
      analytic.push_back(res.d_roots.data()[k]);
    }
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t k = 0; k < batch.heads[i].size(); ++k) {
        slots.push_back(batch.heads[i].data() + k);
        analytic.push_back(res.d_heads[i].data()[k]);
      }
    std::vector<double> x(slots.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = *slots[k];
    auto loss = [&] {
      for (std::size_t k = 0; k < x.size(); ++k) *slots[k] = x[k];
      return nce.evaluate(batch).loss;
    };
    out.push_back(check_all(std::string("infonce#") + std::to_string(index) +
                                (reduction == PairReduction::SumPerTree ? " sum" : " mean"),
                            x, analytic, loss, h, [](std::size_t i) { return "input " + std::to_string(i); }));
  }
  return out;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  GradcheckReport report;
  auto add = [&](GradcheckCase c) {
    if (opts.log)
      *opts.log << c.name << ": max_rel_err=" << c.max_rel_error << " over " << c.coordinates
                << " coords (worst " << c.worst << ")\n";
    report.max_rel_error = std::max(report.max_rel_error, c.max_rel_error);
    report.cases.push_back(std::move(c));
  };
  for (std::size_t i = 0; i < opts.configs; ++i) {
    const bool constant = i % 10 == 9;
    add(encoder_case(i, derive_seed(opts.seed, "gradcheck.encoder", i), opts.step, constant));
    add(gcn_case(i, derive_seed(opts.seed, "gradcheck.gcn", i), opts.step));
    for (auto& c : loss_cases(i, derive_seed(opts.seed, "gradcheck.loss", i), opts.step)) add(std::move(c));
  }
  return report;
}

}  // namespace chaintree
