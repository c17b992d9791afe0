#include "maestro/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "maestro/util.hpp"

namespace maestro {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

thread_local uint64_t t_forward_passes = 0;

double gelu(double x) {
  double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  double u = kGeluC * (x + kGeluA * x * x * x);
  double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Matrix positional_encoding(int length, int d_model) {
  Matrix pe(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      double rate = std::pow(10000.0, static_cast<double>(i) / d_model);
      pe(pos, i) = std::sin(pos / rate);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(pos / rate);
    }
  }
  return pe;
}

struct LayerNormCache {
  Matrix xhat;  // rows x d
  Vector rstd;  // rows
};

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, LayerNormCache* cache) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  Matrix out(rows, cols);
  Matrix xhat(rows, cols);
  Vector rstd(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().mean();
    double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd(r) = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    out.row(r) = xhat.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return out;
}

/// dx for a layer-norm given upstream dy; accumulates dgain/dbias.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Vector& gain,
                           Vector& dgain, Vector& dbias) {
  const auto rows = dy.rows();
  const auto cols = dy.cols();
  Matrix dx(rows, cols);
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  dbias += dy.colwise().sum().transpose();
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gain.transpose());
    double m1 = dxhat.mean();
    double m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
    dx.row(r) = cache.rstd(r) * (dxhat.array() - m1 - cache.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

Matrix softmax_rows(Matrix scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    double m = scores.row(r).maxCoeff();
    Eigen::ArrayXd e = (scores.row(r).array() - m).exp();
    scores.row(r) = (e / e.sum()).matrix();
  }
  return scores;
}

struct LayerCache {
  LayerNormCache ln1, ln2;
  Matrix h1;                       // LN1 output, attention input
  Matrix q, k, v;                  // L x d_model, all heads assembled
  std::vector<Matrix> head_probs;  // per head, L x L
  Matrix att_concat;               // L x d_model
  Matrix attn_mask;                // dropout mask (empty when not training)
  Matrix h2;                       // LN2 output, feed-forward input
  Matrix ff_pre;                   // L x d_ff, before activation
  Matrix ff_act;                   // L x d_ff
  Matrix ff_mask;
};

struct ForwardCache {
  std::vector<int32_t> tokens;
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
  Matrix h_final;  // LN_f output
};

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 - rate;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = uni(rng) < keep ? 1.0 / keep : 0.0;
  return mask;
}

Matrix forward_impl(const ModelParameters& params, std::span<const int32_t> tokens, bool training,
                    std::mt19937_64* dropout_rng, ForwardCache* cache) {
  const ModelConfig& cfg = params.config;
  const auto L = static_cast<Eigen::Index>(tokens.size());
  if (L == 0) throw std::length_error("forward: empty token sequence");
  if (L > cfg.max_seq_len)
    throw std::length_error("forward: sequence length " + std::to_string(L) +
                            " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (int32_t t : tokens) {
    if (t < 0 || t >= cfg.vocab_size)
      throw std::out_of_range("forward: token id " + std::to_string(t) + " outside vocabulary");
  }
  ++t_forward_passes;

  const int n_heads = cfg.n_heads;
  const int dh = cfg.d_model / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_dropout = training && cfg.dropout > 0.0 && dropout_rng != nullptr;

  Matrix x(L, cfg.d_model);
  for (Eigen::Index i = 0; i < L; ++i) x.row(i) = params.embedding.row(tokens[i]);
  x += positional_encoding(static_cast<int>(L), cfg.d_model);

  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.resize(cfg.n_layers);
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParameters& lp = params.layers[l];
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    LayerNormCache ln1_local;
    Matrix h1 = layer_norm(x, lp.ln1_gain, lp.ln1_bias, lc ? &lc->ln1 : &ln1_local);

    Matrix q = h1 * lp.wq;
    Matrix k = h1 * lp.wk;
    Matrix v = h1 * lp.wv;
    Matrix att(L, cfg.d_model);
    std::vector<Matrix> probs;
    if (lc) probs.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
      auto qh = q.middleCols(h * dh, dh);
      auto kh = k.middleCols(h * dh, dh);
      auto vh = v.middleCols(h * dh, dh);
      Matrix scores = qh * kh.transpose() * scale;
      for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = i + 1; j < L; ++j)
          scores(i, j) = -std::numeric_limits<double>::infinity();
      Matrix p = softmax_rows(std::move(scores));
      att.middleCols(h * dh, dh) = p * vh;
      if (lc) probs.push_back(std::move(p));
    }
    Matrix attn_out = att * lp.wo;
    if (use_dropout) {
      Matrix mask = dropout_mask(L, cfg.d_model, cfg.dropout, *dropout_rng);
      attn_out = attn_out.cwiseProduct(mask);
      if (lc) lc->attn_mask = std::move(mask);
    }
    x += attn_out;

    LayerNormCache ln2_local;
    Matrix h2 = layer_norm(x, lp.ln2_gain, lp.ln2_bias, lc ? &lc->ln2 : &ln2_local);
    Matrix pre = h2 * lp.w1;
    pre.rowwise() += lp.b1.transpose();
    Matrix act = pre.unaryExpr([](double t) { return gelu(t); });
    Matrix ff_out = act * lp.w2;
    ff_out.rowwise() += lp.b2.transpose();
    if (use_dropout) {
      Matrix mask = dropout_mask(L, cfg.d_model, cfg.dropout, *dropout_rng);
      ff_out = ff_out.cwiseProduct(mask);
      if (lc) lc->ff_mask = std::move(mask);
    }
    x += ff_out;

    if (lc) {
      lc->h1 = std::move(h1);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->head_probs = std::move(probs);
      lc->att_concat = std::move(att);
      lc->h2 = std::move(h2);
      lc->ff_pre = std::move(pre);
      lc->ff_act = std::move(act);
    }
  }

  LayerNormCache lnf_local;
  Matrix h = layer_norm(x, params.lnf_gain, params.lnf_bias, cache ? &cache->lnf : &lnf_local);
  Matrix logits = h * params.embedding.transpose();
  if (cache) cache->h_final = std::move(h);
  return logits;
}

/// Backprop one sequence given dlogits; accumulates into grads.
void backward_impl(const ModelParameters& params, const ForwardCache& cache, const Matrix& dlogits,
                   ModelParameters& grads) {
  const ModelConfig& cfg = params.config;
  const auto L = static_cast<Eigen::Index>(cache.tokens.size());
  const int n_heads = cfg.n_heads;
  const int dh = cfg.d_model / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Tied output projection: logits = h E^T.
  Matrix dh_final = dlogits * params.embedding;
  grads.embedding += dlogits.transpose() * cache.h_final;

  Matrix dx = layer_norm_backward(dh_final, cache.lnf, params.lnf_gain, grads.lnf_gain,
                                  grads.lnf_bias);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParameters& lp = params.layers[l];
    const LayerCache& lc = cache.layers[l];
    LayerParameters& gl = grads.layers[l];

    // Feed-forward block.
    Matrix dffout = dx;
    if (lc.ff_mask.size()) dffout = dx.cwiseProduct(lc.ff_mask);
    gl.b2 += dffout.colwise().sum().transpose();
    gl.w2 += lc.ff_act.transpose() * dffout;
    Matrix dact = dffout * lp.w2.transpose();
    Matrix dpre = dact.cwiseProduct(lc.ff_pre.unaryExpr([](double t) { return gelu_grad(t); }));
    gl.b1 += dpre.colwise().sum().transpose();
    gl.w1 += lc.h2.transpose() * dpre;
    Matrix dh2 = dpre * lp.w1.transpose();
    dx += layer_norm_backward(dh2, lc.ln2, lp.ln2_gain, gl.ln2_gain, gl.ln2_bias);

    // Attention block.
    Matrix dattnout = dx;
    if (lc.attn_mask.size()) dattnout = dx.cwiseProduct(lc.attn_mask);
    gl.wo += lc.att_concat.transpose() * dattnout;
    Matrix da = dattnout * lp.wo.transpose();
    Matrix dq = Matrix::Zero(L, cfg.d_model);
    Matrix dk = Matrix::Zero(L, cfg.d_model);
    Matrix dv = Matrix::Zero(L, cfg.d_model);
    for (int h = 0; h < n_heads; ++h) {
      auto dah = da.middleCols(h * dh, dh);
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      const Matrix& p = lc.head_probs[h];
      Matrix dp = dah * vh.transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dah;
      // softmax backward: dS = P .* (dP - rowsum(dP .* P))
      Matrix ds(L, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
      }
      dq.middleCols(h * dh, dh) = ds * kh * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
    }
    gl.wq += lc.h1.transpose() * dq;
    gl.wk += lc.h1.transpose() * dk;
    gl.wv += lc.h1.transpose() * dv;
    Matrix dh1 = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    dx += layer_norm_backward(dh1, lc.ln1, lp.ln1_gain, gl.ln1_gain, gl.ln1_bias);
  }

  for (Eigen::Index i = 0; i < L; ++i) grads.embedding.row(cache.tokens[i]) += dx.row(i);
}

void write_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void write_u64_le(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32_le(std::span<const uint8_t> b, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

uint64_t read_u64_le(std::span<const uint8_t> b, size_t pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be positive");
  if (d_model <= 0 || d_model % 2 != 0) throw std::invalid_argument("d_model must be positive and even");
  if (n_heads <= 0 || d_model % n_heads != 0)
    throw std::invalid_argument("n_heads must divide d_model");
  if (n_layers <= 0) throw std::invalid_argument("n_layers must be positive");
  if (d_ff <= 0) throw std::invalid_argument("d_ff must be positive");
  if (max_seq_len < 2) throw std::invalid_argument("max_seq_len must be at least 2");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
}

int64_t ModelConfig::parameter_count() const {
  int64_t d = d_model, f = d_ff;
  int64_t per_layer = 4 * d * d + 2 * d * f + 5 * d + f;
  return static_cast<int64_t>(vocab_size) * d + n_layers * per_layer + 2 * d;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 64;
  c.max_seq_len = 64;
  c.dropout = 0.0;
  return c;
}

std::vector<TensorView> tensor_views(ModelParameters& params) {
  std::vector<TensorView> views;
  views.push_back({"embedding", params.embedding.data(), params.embedding.size()});
  for (size_t l = 0; l < params.layers.size(); ++l) {
    auto& lp = params.layers[l];
    std::string prefix = "layer" + std::to_string(l) + ".";
    views.push_back({prefix + "ln1_gain", lp.ln1_gain.data(), lp.ln1_gain.size()});
    views.push_back({prefix + "ln1_bias", lp.ln1_bias.data(), lp.ln1_bias.size()});
    views.push_back({prefix + "wq", lp.wq.data(), lp.wq.size()});
    views.push_back({prefix + "wk", lp.wk.data(), lp.wk.size()});
    views.push_back({prefix + "wv", lp.wv.data(), lp.wv.size()});
    views.push_back({prefix + "wo", lp.wo.data(), lp.wo.size()});
    views.push_back({prefix + "ln2_gain", lp.ln2_gain.data(), lp.ln2_gain.size()});
    views.push_back({prefix + "ln2_bias", lp.ln2_bias.data(), lp.ln2_bias.size()});
    views.push_back({prefix + "w1", lp.w1.data(), lp.w1.size()});
    views.push_back({prefix + "b1", lp.b1.data(), lp.b1.size()});
    views.push_back({prefix + "w2", lp.w2.data(), lp.w2.size()});
    views.push_back({prefix + "b2", lp.b2.data(), lp.b2.size()});
  }
  views.push_back({"lnf_gain", params.lnf_gain.data(), params.lnf_gain.size()});
  views.push_back({"lnf_bias", params.lnf_bias.data(), params.lnf_bias.size()});
  return views;
}

std::vector<TensorView> tensor_views(const ModelParameters& params) {
  return tensor_views(const_cast<ModelParameters&>(params));
}

ModelParameters init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto fill_normal = [&](Matrix& m, int rows, int cols) {
    m.resize(rows, cols);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = normal(rng);
  };

  ModelParameters p;
  p.config = config;
  fill_normal(p.embedding, config.vocab_size, config.d_model);
  p.layers.resize(config.n_layers);
  for (auto& lp : p.layers) {
    lp.ln1_gain = Vector::Ones(config.d_model);
    lp.ln1_bias = Vector::Zero(config.d_model);
    fill_normal(lp.wq, config.d_model, config.d_model);
    fill_normal(lp.wk, config.d_model, config.d_model);
    fill_normal(lp.wv, config.d_model, config.d_model);
    fill_normal(lp.wo, config.d_model, config.d_model);
    lp.ln2_gain = Vector::Ones(config.d_model);
    lp.ln2_bias = Vector::Zero(config.d_model);
    fill_normal(lp.w1, config.d_model, config.d_ff);
    lp.b1 = Vector::Zero(config.d_ff);
    fill_normal(lp.w2, config.d_ff, config.d_model);
    lp.b2 = Vector::Zero(config.d_model);
  }
  p.lnf_gain = Vector::Ones(config.d_model);
  p.lnf_bias = Vector::Zero(config.d_model);
  return p;
}

ModelParameters zeros_like(const ModelParameters& params) {
  ModelParameters z;
  z.config = params.config;
  z.embedding = Matrix::Zero(params.embedding.rows(), params.embedding.cols());
  z.layers.resize(params.layers.size());
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const auto& s = params.layers[l];
    auto& d = z.layers[l];
    d.ln1_gain = Vector::Zero(s.ln1_gain.size());
    d.ln1_bias = Vector::Zero(s.ln1_bias.size());
    d.wq = Matrix::Zero(s.wq.rows(), s.wq.cols());
    d.wk = Matrix::Zero(s.wk.rows(), s.wk.cols());
    d.wv = Matrix::Zero(s.wv.rows(), s.wv.cols());
    d.wo = Matrix::Zero(s.wo.rows(), s.wo.cols());
    d.ln2_gain = Vector::Zero(s.ln2_gain.size());
    d.ln2_bias = Vector::Zero(s.ln2_bias.size());
    d.w1 = Matrix::Zero(s.w1.rows(), s.w1.cols());
    d.b1 = Vector::Zero(s.b1.size());
    d.w2 = Matrix::Zero(s.w2.rows(), s.w2.cols());
    d.b2 = Vector::Zero(s.b2.size());
  }
  z.lnf_gain = Vector::Zero(params.lnf_gain.size());
  z.lnf_bias = Vector::Zero(params.lnf_bias.size());
  return z;
}

Matrix attention_weights(const Matrix& q, const Matrix& k, bool causal) {
  if (q.cols() != k.cols()) throw std::invalid_argument("attention: Q and K column mismatch");
  if (causal && q.rows() != k.rows())
    throw std::invalid_argument("attention: causal mask needs square score matrix");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix scores = q * k.transpose() * scale;
  if (causal) {
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
      for (Eigen::Index j = i + 1; j < scores.cols(); ++j)
        scores(i, j) = -std::numeric_limits<double>::infinity();
  }
  return softmax_rows(std::move(scores));
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal) {
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: K and V row mismatch");
  return attention_weights(q, k, causal) * v;
}

Matrix forward(const ModelParameters& params, std::span<const int32_t> tokens) {
  return forward_impl(params, tokens, /*training=*/false, nullptr, nullptr);
}

uint64_t forward_passes_this_thread() { return t_forward_passes; }

double loss(const Matrix& logits, std::span<const int32_t> targets) {
  if (static_cast<size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("loss: logits rows and target count differ");
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double m = logits.row(r).maxCoeff();
    double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, targets[r]);
  }
  return total / static_cast<double>(logits.rows());
}

void TrainingBatch::validate() const {
  if (inputs.size() != targets.size())
    throw std::invalid_argument("batch: inputs/targets row count differs");
  if (inputs.empty()) throw std::invalid_argument("batch: empty");
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != targets[i].size() || inputs[i].size() < 2)
      throw std::invalid_argument("batch: row " + std::to_string(i) + " shape invalid");
    for (size_t j = 0; j + 1 < inputs[i].size(); ++j) {
      if (targets[i][j] != inputs[i][j + 1])
        throw std::invalid_argument("batch: targets are not inputs shifted left by one");
    }
  }
}

double loss_and_gradients(const ModelParameters& params, const TrainingBatch& batch,
                          ModelParameters& grads, double loss_scale, uint64_t dropout_seed) {
  size_t total_positions = 0;
  for (const auto& row : batch.targets) total_positions += row.size();
  if (total_positions == 0) throw std::invalid_argument("gradients: empty batch");

  double total_loss = 0.0;
  const double w = loss_scale / static_cast<double>(total_positions);
  for (size_t b = 0; b < batch.inputs.size(); ++b) {
    std::mt19937_64 drop_rng(mix_seed(dropout_seed, b));
    ForwardCache cache;
    Matrix logits = forward_impl(params, batch.inputs[b], /*training=*/true, &drop_rng, &cache);
    const auto& targets = batch.targets[b];
    Matrix dlogits(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      double m = logits.row(r).maxCoeff();
      Eigen::ArrayXd e = (logits.row(r).array() - m).exp();
      Eigen::ArrayXd p = e / e.sum();
      total_loss += -std::log(std::max(p(targets[r]), 1e-300));
      dlogits.row(r) = (p * w).matrix();
      dlogits(r, targets[r]) -= w;
    }
    backward_impl(params, cache, dlogits, grads);
  }
  return loss_scale * total_loss / static_cast<double>(total_positions);
}

ModelParameters gradients(const ModelParameters& params, const TrainingBatch& batch,
                          double loss_scale, uint64_t dropout_seed) {
  batch.validate();
  ModelParameters grads = zeros_like(params);
  loss_and_gradients(params, batch, grads, loss_scale, dropout_seed);
  return grads;
}

Optimizer::Optimizer(const ModelParameters& reference, OptimizerOptions options)
    : options_(options) {
  if (options_.kind == OptimizerKind::adam) {
    for (const auto& view : tensor_views(reference)) {
      m_.push_back(Vector::Zero(view.size));
      v_.push_back(Vector::Zero(view.size));
    }
  }
}

double Optimizer::step(ModelParameters& params, const TrainingBatch& batch, double learning_rate) {
  if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  ModelParameters grads = zeros_like(params);
  double batch_loss =
      loss_and_gradients(params, batch, grads, 1.0, mix_seed(options_.dropout_seed, step_));
  if (!std::isfinite(batch_loss)) throw TrainingError("loss is not finite", step_);
  ++step_;

  auto pviews = tensor_views(params);
  auto gviews = tensor_views(grads);
  if (options_.kind == OptimizerKind::sgd) {
    for (size_t i = 0; i < pviews.size(); ++i) {
      Eigen::Map<Vector> p(pviews[i].data, pviews[i].size);
      Eigen::Map<const Vector> g(gviews[i].data, gviews[i].size);
      p -= learning_rate * g;
    }
    return batch_loss;
  }

  const double t = static_cast<double>(step_);
  const double lr = options_.warmup_steps > 0
                        ? learning_rate * std::min(1.0, t / options_.warmup_steps)
                        : learning_rate;
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (size_t i = 0; i < pviews.size(); ++i) {
    Eigen::Map<Vector> p(pviews[i].data, pviews[i].size);
    Eigen::Map<const Vector> g(gviews[i].data, gviews[i].size);
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + options_.epsilon);
  }
  return batch_loss;
}

Vector softmax_with_temperature(const Vector& logits, double temperature) {
  Vector p = Vector::Zero(logits.size());
  if (temperature <= 0.0) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits(i) > logits(best)) best = i;
    p(best) = 1.0;
    return p;
  }
  Eigen::ArrayXd scaled = logits.array() / temperature;
  double m = scaled.maxCoeff();
  Eigen::ArrayXd e = (scaled - m).exp();
  p = (e / e.sum()).matrix();
  return p;
}

int32_t sample_from_logits(const Vector& logits, double temperature, std::mt19937_64& rng) {
  if (temperature <= 0.0) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits(i) > logits(best)) best = i;  // ties keep the lowest id
    return static_cast<int32_t>(best);
  }
  Vector p = softmax_with_temperature(logits, temperature);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return static_cast<int32_t>(i);
  }
  return static_cast<int32_t>(p.size() - 1);
}

int32_t sample_next(const ModelParameters& params, std::span<const int32_t> context,
                    double temperature, uint64_t rng_seed) {
  Matrix logits = forward(params, context);
  std::mt19937_64 rng(rng_seed);
  return sample_from_logits(logits.row(logits.rows() - 1).transpose(), temperature, rng);
}

TokenSequence generate(const ModelParameters& params, const TokenSequence& seed_tokens, int length,
                       double temperature, uint64_t rng_seed) {
  if (length <= 0) throw std::invalid_argument("generate: length must be positive");
  if (seed_tokens.empty()) throw std::invalid_argument("generate: seed must be non-empty");
  TokenSequence out = seed_tokens;
  out.reserve(seed_tokens.size() + static_cast<size_t>(length));
  std::mt19937_64 rng(rng_seed);
  const size_t window = static_cast<size_t>(params.config.max_seq_len) - 1;
  for (int i = 0; i < length; ++i) {
    size_t begin = out.size() > window ? out.size() - window : 0;
    std::span<const int32_t> context(out.data() + begin, out.size() - begin);
    Matrix logits = forward(params, context);
    out.push_back(sample_from_logits(logits.row(logits.rows() - 1).transpose(), temperature, rng));
  }
  return out;
}

std::vector<uint8_t> save_checkpoint(const ModelParameters& params) {
  nlohmann::json cfg = {
      {"vocab_size", params.config.vocab_size}, {"d_model", params.config.d_model},
      {"n_heads", params.config.n_heads},       {"n_layers", params.config.n_layers},
      {"d_ff", params.config.d_ff},             {"max_seq_len", params.config.max_seq_len},
      {"dropout", params.config.dropout},
  };
  std::string cfg_text = cfg.dump();

  std::vector<uint8_t> out;
  out.insert(out.end(), {'M', 'G', 'E', 'N'});
  write_u32_le(out, 1);
  write_u32_le(out, static_cast<uint32_t>(cfg_text.size()));
  out.insert(out.end(), cfg_text.begin(), cfg_text.end());

  auto views = tensor_views(params);
  uint64_t count = 0;
  for (const auto& v : views) count += static_cast<uint64_t>(v.size);
  write_u64_le(out, count);
  out.reserve(out.size() + count * 8);
  for (const auto& view : views) {
    for (int64_t i = 0; i < view.size; ++i) {
      uint64_t bits = std::bit_cast<uint64_t>(view.data[i]);
      write_u64_le(out, bits);
    }
  }
  return out;
}

ModelParameters load_checkpoint(std::span<const uint8_t> bytes) {
  if (bytes.size() < 12 || bytes[0] != 'M' || bytes[1] != 'G' || bytes[2] != 'E' || bytes[3] != 'N')
    throw CheckpointError("checkpoint: bad magic bytes");
  uint32_t version = read_u32_le(bytes, 4);
  if (version != 1)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  uint32_t cfg_len = read_u32_le(bytes, 8);
  if (bytes.size() < 12 + static_cast<size_t>(cfg_len) + 8)
    throw CheckpointError("checkpoint: truncated config record");

  ModelConfig config;
  try {
    auto cfg = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + cfg_len);
    config.vocab_size = cfg.at("vocab_size").get<int>();
    config.d_model = cfg.at("d_model").get<int>();
    config.n_heads = cfg.at("n_heads").get<int>();
    config.n_layers = cfg.at("n_layers").get<int>();
    config.d_ff = cfg.at("d_ff").get<int>();
    config.max_seq_len = cfg.at("max_seq_len").get<int>();
    config.dropout = cfg.at("dropout").get<double>();
    config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: invalid config record: ") + e.what());
  }

  size_t pos = 12 + cfg_len;
  uint64_t declared = read_u64_le(bytes, pos);
  pos += 8;
  if (declared != static_cast<uint64_t>(config.parameter_count()))
    throw CheckpointError("checkpoint: declared weight count does not match config shapes");
  if (bytes.size() - pos != declared * 8)
    throw CheckpointError("checkpoint: weight payload truncated or oversized");

  ModelParameters params = init_params(config, 0);  // every value is overwritten below
  for (auto& view : tensor_views(params)) {
    for (int64_t i = 0; i < view.size; ++i) {
      view.data[i] = std::bit_cast<double>(read_u64_le(bytes, pos));
      pos += 8;
    }
  }
  return params;
}

void save_checkpoint_file(const ModelParameters& params, const std::string& path) {
  write_file_bytes(path, save_checkpoint(params));
}

ModelParameters load_checkpoint_file(const std::string& path) {
  return load_checkpoint(read_file_bytes(path));
}

}  // namespace maestro
