#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "chaintree/encoder.hpp"
#include "chaintree/kernels.hpp"
#include "chaintree/rng.hpp"

namespace chaintree {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

template <typename T>
void add_bias(MatrixView<T> y, ConstMatrixView<T> bias) {
  for (std::size_t i = 0; i < y.rows; ++i) {
    T* row = y.data + i * y.cols;
    for (std::size_t j = 0; j < y.cols; ++j) row[j] += bias.data[j];
  }
}

template <typename T>
void add_column_sums(ConstMatrixView<T> dy, MatrixView<T> dbias) {
  for (std::size_t i = 0; i < dy.rows; ++i)
    for (std::size_t j = 0; j < dy.cols; ++j) dbias.data[j] += dy(i, j);
}

template <typename T>
void layer_norm(const Matrix<T>& x, ConstMatrixView<T> gamma, ConstMatrixView<T> beta,
                Matrix<T>& y, std::vector<T>& mean, std::vector<T>& rstd) {
  const std::size_t m = x.rows(), d = x.cols();
  y.resize(m, d);
  mean.assign(m, T{0});
  rstd.assign(m, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = x.row(i);
    T mu{0};
    for (T v : row) mu += v;
    mu /= static_cast<T>(d);
    T var{0};
    for (T v : row) var += (v - mu) * (v - mu);
    var /= static_cast<T>(d);
    const T r = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    mean[i] = mu;
    rstd[i] = r;
    auto out = y.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = (row[j] - mu) * r * gamma.data[j] + beta.data[j];
  }
}

// dx += LN'(dy); accumulates dgamma, dbeta.
template <typename T>
void layer_norm_backward(const Matrix<T>& x, const std::vector<T>& mean, const std::vector<T>& rstd,
                         ConstMatrixView<T> gamma, const Matrix<T>& dy, MatrixView<T> dgamma,
                         MatrixView<T> dbeta, Matrix<T>& dx) {
  const std::size_t m = x.rows(), d = x.cols();
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t i = 0; i < m; ++i) {
    T mean_dxhat{0}, mean_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (x(i, j) - mean[i]) * rstd[i];
      dgamma.data[j] += dy(i, j) * xhat[j];
      dbeta.data[j] += dy(i, j);
      dxhat[j] = dy(i, j) * gamma.data[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[j];
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) += rstd[i] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T>
void fill_normal(MatrixView<T> v, Rng& rng, double std) {
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<T>(std * rng.normal());
}

template <typename T>
void fill_value(MatrixView<T> v, T value) {
  std::fill(v.data, v.data + v.size(), value);
}

template <typename T>
Matrix<T> dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? T{0} : keep_scale;
  return mask;
}

template <typename T>
bool all_finite(const Matrix<T>& x) {
  return std::all_of(x.storage().begin(), x.storage().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace

std::string_view to_string(Precision p) { return p == Precision::High ? "high" : "standard"; }

Precision precision_from_string(std::string_view s) {
  if (s == "standard") return Precision::Standard;
  if (s == "high") return Precision::High;
  throw std::invalid_argument("precision must be 'standard' or 'high', got '" + std::string(s) + "'");
}

Precision precision_from_env() {
  const char* v = std::getenv("CHAINTREE_PRECISION");
  return (v && *v) ? precision_from_string(v) : Precision::Standard;
}

void EncoderConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0)
    throw std::invalid_argument("encoder: d must be a positive multiple of heads");
  if (layers < 1) throw std::invalid_argument("encoder: layers must be >= 1");
  if (ffn_dim == 0) throw std::invalid_argument("encoder: ffn_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder: dropout must be in [0, 1)");
  if (id_dim == 0) throw std::invalid_argument("encoder: id_dim must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("encoder: num_classes must be >= 1");
}

std::size_t parameter_count(const EncoderConfig& c) {
  const std::size_t d = c.d, f = c.ffn_dim;
  return (d + c.id_dim) * d + c.layers * (4 * d * d + 9 * d + 2 * d * f + f) + d * c.num_classes +
         c.num_classes;
}

template <typename T>
EncoderModel<T>::EncoderModel(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d, f = cfg_.ffn_dim;
  proj_ = params_.add("proj.w", d + cfg_.id_dim, d);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerBlocks b{};
    b.ln1_g = params_.add(p + "ln1.gamma", 1, d);
    b.ln1_b = params_.add(p + "ln1.beta", 1, d);
    b.wq = params_.add(p + "attn.wq", d, d);
    b.bq = params_.add(p + "attn.bq", 1, d);
    b.wk = params_.add(p + "attn.wk", d, d);
    b.bk = params_.add(p + "attn.bk", 1, d);
    b.wv = params_.add(p + "attn.wv", d, d);
    b.bv = params_.add(p + "attn.bv", 1, d);
    b.wo = params_.add(p + "attn.wo", d, d);
    b.bo = params_.add(p + "attn.bo", 1, d);
    b.ln2_g = params_.add(p + "ln2.gamma", 1, d);
    b.ln2_b = params_.add(p + "ln2.beta", 1, d);
    b.w1 = params_.add(p + "ffn.w1", d, f);
    b.b1 = params_.add(p + "ffn.b1", 1, f);
    b.w2 = params_.add(p + "ffn.w2", f, d);
    b.b2 = params_.add(p + "ffn.b2", 1, d);
    layer_blocks_.push_back(b);
  }
  cls_w_ = params_.add("cls.w", d, cfg_.num_classes);
  cls_b_ = params_.add("cls.b", 1, cfg_.num_classes);

  // Weight maps ~ N(0, 0.02^2), biases 0, layer-norm scales 1.
  Rng rng(derive_seed(seed, "init"));
  fill_normal(params_.view(proj_), rng, kInitStd);
  for (const auto& b : layer_blocks_) {
    fill_value(params_.view(b.ln1_g), T{1});
    fill_value(params_.view(b.ln2_g), T{1});
    for (std::size_t w : {b.wq, b.wk, b.wv, b.wo, b.w1, b.w2}) fill_normal(params_.view(w), rng, kInitStd);
  }
  fill_normal(params_.view(cls_w_), rng, kInitStd);
}

template <typename T>
Matrix<double> EncoderModel<T>::projection() const {
  const auto v = params_.view(proj_);
  Matrix<double> w(v.rows, v.cols);
  for (std::size_t i = 0; i < v.size(); ++i) w.data()[i] = static_cast<double>(v.data[i]);
  return w;
}

template <typename T>
EncoderOutput<T> EncoderModel<T>::forward(const AugmentedSequence& seq, EncoderWorkspace<T>& ws,
                                          const ForwardOptions& opts) const {
  const std::size_t d = cfg_.d, m = seq.m, H = cfg_.heads, dh = d / H;
  if (seq.d != d) throw std::invalid_argument("encoder: sequence dimension does not match model d");
  if (seq.l != cfg_.id_dim) throw std::invalid_argument("encoder: identifier dimension does not match model l");
  if (m == 0) throw std::invalid_argument("encoder: empty sequence");

  ws.ready = false;
  ws.m = m;
  ws.S = seq.S.cast<T>();
  ws.ids = seq.ids.cast<T>();
  ws.id_row.resize(m);
  for (std::size_t t = 0; t < m; ++t) ws.id_row[t] = seq.token_meta[t].id_row;

  // x0 = S w_feat + (C w_id)[id_row] + D + T
  const auto w = params_.view(proj_);
  const ConstMatrixView<T> w_feat(w.data, d, d);
  const ConstMatrixView<T> w_id(w.data + d * d, cfg_.id_dim, d);
  ws.cw.resize(ws.ids.rows(), d);
  kernels::gemm_nn<T>(ws.ids, w_id, ws.cw);
  ws.x0.resize(m, d);
  kernels::gemm_nn<T>(ws.S, w_feat, ws.x0);
  for (std::size_t t = 0; t < m; ++t) {
    auto row = ws.x0.row(t);
    const auto c = ws.cw.row(ws.id_row[t]);
    for (std::size_t j = 0; j < d; ++j)
      row[j] += c[j] + static_cast<T>(seq.D(t, j)) + static_cast<T>(seq.T(t, j));
  }

  const bool dropout = opts.train && cfg_.dropout > 0.0;
  Rng rng(opts.dropout_seed);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ws.layers.resize(cfg_.layers);
  const Matrix<T>* x = &ws.x0;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const auto& b = layer_blocks_[l];
    auto& c = ws.layers[l];
    c.x_in = *x;

    layer_norm(c.x_in, params_.view(b.ln1_g), params_.view(b.ln1_b), c.a, c.mean1, c.rstd1);
    c.q.resize(m, d);
    c.k.resize(m, d);
    c.v.resize(m, d);
    kernels::gemm_nn<T>(c.a, params_.view(b.wq), c.q);
    kernels::gemm_nn<T>(c.a, params_.view(b.wk), c.k);
    kernels::gemm_nn<T>(c.a, params_.view(b.wv), c.v);
    add_bias<T>(c.q, params_.view(b.bq));
    add_bias<T>(c.k, params_.view(b.bk));
    add_bias<T>(c.v, params_.view(b.bv));

    c.probs.resize(H);
    c.ctx.resize(m, d);
    for (std::size_t h = 0; h < H; ++h) {
      auto& p = c.probs[h];
      p.resize(m, m);
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < m; ++i) {
        const T* qi = c.q.data() + i * d + off;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
          const T* kj = c.k.data() + j * d + off;
          T s{0};
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          s *= scale;
          p(i, j) = s;
          mx = std::max(mx, s);
        }
        T z{0};
        for (std::size_t j = 0; j < m; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) p(i, j) /= z;
        T* out = c.ctx.data() + i * d + off;
        for (std::size_t j = 0; j < m; ++j) {
          const T pij = p(i, j);
          const T* vj = c.v.data() + j * d + off;
          for (std::size_t e = 0; e < dh; ++e) out[e] += pij * vj[e];
        }
      }
    }

    c.attn_out.resize(m, d);
    kernels::gemm_nn<T>(c.ctx, params_.view(b.wo), c.attn_out);
    add_bias<T>(c.attn_out, params_.view(b.bo));
    if (dropout) {
      c.mask1 = dropout_mask<T>(m, d, cfg_.dropout, rng);
      for (std::size_t i = 0; i < c.attn_out.size(); ++i) c.attn_out.data()[i] *= c.mask1.data()[i];
    } else {
      c.mask1 = Matrix<T>();
    }
    c.x_mid = c.x_in;
    for (std::size_t i = 0; i < c.x_mid.size(); ++i) c.x_mid.data()[i] += c.attn_out.data()[i];

    layer_norm(c.x_mid, params_.view(b.ln2_g), params_.view(b.ln2_b), c.b, c.mean2, c.rstd2);
    c.hpre.resize(m, cfg_.ffn_dim);
    kernels::gemm_nn<T>(c.b, params_.view(b.w1), c.hpre);
    add_bias<T>(c.hpre, params_.view(b.b1));
    c.g = c.hpre;
    for (T& v : c.g.storage()) v = gelu(v);
    c.f.resize(m, d);
    kernels::gemm_nn<T>(c.g, params_.view(b.w2), c.f);
    add_bias<T>(c.f, params_.view(b.b2));
    if (dropout) {
      c.mask2 = dropout_mask<T>(m, d, cfg_.dropout, rng);
      for (std::size_t i = 0; i < c.f.size(); ++i) c.f.data()[i] *= c.mask2.data()[i];
    } else {
      c.mask2 = Matrix<T>();
    }

    Matrix<T>& next = (l + 1 < cfg_.layers) ? ws.layers[l + 1].x_in : ws.H;
    next = c.x_mid;
    for (std::size_t i = 0; i < next.size(); ++i) next.data()[i] += c.f.data()[i];
    if (!all_finite(next))
      throw std::runtime_error("encoder: non-finite activation in layer " + std::to_string(l));
    x = &next;
  }
  ws.ready = true;

  EncoderOutput<T> out;
  out.H = ws.H;
  out.h_root.assign(ws.H.row(0).begin(), ws.H.row(0).end());
  if (opts.retain_attention) {
    out.attn.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) out.attn[l] = ws.layers[l].probs;
  }
  return out;
}

template <typename T>
void EncoderModel<T>::backward(EncoderWorkspace<T>& ws, ConstMatrixView<T> dH,
                               std::vector<T>& grads) const {
  if (!ws.ready) throw std::logic_error("encoder: backward called without a preceding forward");
  const std::size_t d = cfg_.d, m = ws.m, H = cfg_.heads, dh = d / H, f = cfg_.ffn_dim;
  if (dH.rows != m || dH.cols != d) throw std::invalid_argument("encoder: upstream gradient shape");
  if (grads.size() != params_.size()) throw std::invalid_argument("encoder: gradient buffer size");
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Matrix<T> dx(m, d);
  std::copy(dH.data, dH.data + dH.size(), dx.data());
  Matrix<T> df(m, d), dg(m, f), dhpre(m, f), dlnb(m, d), dattn(m, d), dctx(m, d);
  Matrix<T> dq(m, d), dk(m, d), dv(m, d), da(m, d), dp(m, m);

  for (std::size_t li = cfg_.layers; li-- > 0;) {
    const auto& b = layer_blocks_[li];
    auto& c = ws.layers[li];

    // Feed-forward branch: x_out = x_mid + drop(ffn(LN2(x_mid)))
    df = dx;
    if (!c.mask2.empty())
      for (std::size_t i = 0; i < df.size(); ++i) df.data()[i] *= c.mask2.data()[i];
    kernels::gemm_tn<T>(c.g, df, params_.view(grads, b.w2), true);
    add_column_sums<T>(df, params_.view(grads, b.b2));
    kernels::gemm_nt<T>(df, params_.view(b.w2), dg);
    for (std::size_t i = 0; i < dhpre.size(); ++i)
      dhpre.data()[i] = dg.data()[i] * gelu_grad(c.hpre.data()[i]);
    kernels::gemm_tn<T>(c.b, dhpre, params_.view(grads, b.w1), true);
    add_column_sums<T>(dhpre, params_.view(grads, b.b1));
    kernels::gemm_nt<T>(dhpre, params_.view(b.w1), dlnb);
    layer_norm_backward<T>(c.x_mid, c.mean2, c.rstd2, params_.view(b.ln2_g), dlnb,
                           params_.view(grads, b.ln2_g), params_.view(grads, b.ln2_b), dx);

    // Attention branch: x_mid = x_in + drop(attn(LN1(x_in)))
    dattn = dx;
    if (!c.mask1.empty())
      for (std::size_t i = 0; i < dattn.size(); ++i) dattn.data()[i] *= c.mask1.data()[i];
    kernels::gemm_tn<T>(c.ctx, dattn, params_.view(grads, b.wo), true);
    add_column_sums<T>(dattn, params_.view(grads, b.bo));
    kernels::gemm_nt<T>(dattn, params_.view(b.wo), dctx);

    dq.fill(T{0});
    dk.fill(T{0});
    dv.fill(T{0});
    for (std::size_t h = 0; h < H; ++h) {
      const auto& p = c.probs[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < m; ++i) {
        const T* gi = dctx.data() + i * d + off;
        T row_dot{0};
        for (std::size_t j = 0; j < m; ++j) {
          const T* vj = c.v.data() + j * d + off;
          T s{0};
          for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
          dp(i, j) = s;
          row_dot += s * p(i, j);
          T* dvj = dv.data() + j * d + off;
          const T pij = p(i, j);
          for (std::size_t e = 0; e < dh; ++e) dvj[e] += pij * gi[e];
        }
        const T* qi = c.q.data() + i * d + off;
        T* dqi = dq.data() + i * d + off;
        for (std::size_t j = 0; j < m; ++j) {
          const T ds = p(i, j) * (dp(i, j) - row_dot) * scale;
          if (ds == T{0}) continue;
          const T* kj = c.k.data() + j * d + off;
          T* dkj = dk.data() + j * d + off;
          for (std::size_t e = 0; e < dh; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
    kernels::gemm_tn<T>(c.a, dq, params_.view(grads, b.wq), true);
    kernels::gemm_tn<T>(c.a, dk, params_.view(grads, b.wk), true);
    kernels::gemm_tn<T>(c.a, dv, params_.view(grads, b.wv), true);
    add_column_sums<T>(dq, params_.view(grads, b.bq));
    add_column_sums<T>(dk, params_.view(grads, b.bk));
    add_column_sums<T>(dv, params_.view(grads, b.bv));
    kernels::gemm_nt<T>(dq, params_.view(b.wq), da);
    kernels::gemm_nt<T>(dk, params_.view(b.wk), da, true);
    kernels::gemm_nt<T>(dv, params_.view(b.wv), da, true);
    layer_norm_backward<T>(c.x_in, c.mean1, c.rstd1, params_.view(b.ln1_g), da,
                           params_.view(grads, b.ln1_g), params_.view(grads, b.ln1_b), dx);
  }

  // Input projection.
  auto gw = params_.view(grads, proj_);
  MatrixView<T> gw_feat{gw.data, d, d};
  MatrixView<T> gw_id{gw.data + d * d, cfg_.id_dim, d};
  kernels::gemm_tn<T>(ws.S, dx, gw_feat, true);
  Matrix<T> dcw(ws.ids.rows(), d);
  for (std::size_t t = 0; t < m; ++t) {
    auto dst = dcw.row(ws.id_row[t]);
    const auto src = dx.row(t);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  kernels::gemm_tn<T>(ws.ids, dcw, gw_id, true);
}

template <typename T>
std::vector<T> EncoderModel<T>::classify(std::span<const T> h) const {
  const auto w = params_.view(cls_w_);
  const auto bias = params_.view(cls_b_);
  std::vector<T> logits(bias.data, bias.data + bias.cols);
  for (std::size_t k = 0; k < w.rows; ++k)
    for (std::size_t c = 0; c < w.cols; ++c) logits[c] += h[k] * w(k, c);
  return logits;
}

template <typename T>
void EncoderModel<T>::classifier_backward(std::span<const T> h, std::span<const T> dlogits,
                                          std::vector<T>& grads, std::span<T> dh) const {
  const auto w = params_.view(cls_w_);
  auto gw = params_.view(grads, cls_w_);
  auto gb = params_.view(grads, cls_b_);
  for (std::size_t c = 0; c < w.cols; ++c) gb.data[c] += dlogits[c];
  for (std::size_t k = 0; k < w.rows; ++k) {
    T acc{0};
    for (std::size_t c = 0; c < w.cols; ++c) {
      gw(k, c) += h[k] * dlogits[c];
      acc += w(k, c) * dlogits[c];
    }
    dh[k] += acc;
  }
}

template <typename T>
std::vector<std::pair<int, double>> rank_replies_by_attention(const EncoderModel<T>& model,
                                                              const AugmentedSequence& seq) {
  EncoderWorkspace<T> ws;
  ForwardOptions opts;
  opts.retain_attention = true;
  const auto out = model.forward(seq, ws, opts);
  const auto& last = out.attn.back();
  std::map<int, double> best;
  for (std::size_t t = 0; t < seq.m; ++t) {
    double score = 0.0;
    for (const auto& p : last) score += static_cast<double>(p(0, t));
    score /= static_cast<double>(last.size());
    const int node = seq.token_meta[t].node;
    auto [it, inserted] = best.emplace(node, score);
    if (!inserted) it->second = std::max(it->second, score);
  }
  std::vector<std::pair<int, double>> ranked(best.begin(), best.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return ranked;
}

template class EncoderModel<float>;
template class EncoderModel<double>;
template std::vector<std::pair<int, double>> rank_replies_by_attention(const EncoderModel<float>&,
                                                                       const AugmentedSequence&);
template std::vector<std::pair<int, double>> rank_replies_by_attention(const EncoderModel<double>&,
                                                                       const AugmentedSequence&);

}  // namespace chaintree
