#include "layoutattn/encoder.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/rng.hpp"

#include <cmath>
#include <numbers>

namespace layoutattn {

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& t : tensors) out.tensors.push_back({t.name, Matrix::Zero(t.value.rows(), t.value.cols())});
  return out;
}

void ParameterSet::set_zero() {
  for (auto& t : tensors) t.value.setZero();
}

void ParameterSet::add(const ParameterSet& other, double scale) {
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i].value += scale * other.tensors[i].value;
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors) s += t.value.squaredNorm();
  return s;
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

double& ParameterSet::scalar(std::size_t flat_index) {
  for (auto& t : tensors) {
    const auto n = static_cast<std::size_t>(t.value.size());
    if (flat_index < n) return t.value.data()[flat_index];
    flat_index -= n;
  }
  throw std::out_of_range("ParameterSet::scalar");
}

double ParameterSet::scalar(std::size_t flat_index) const {
  return const_cast<ParameterSet*>(this)->scalar(flat_index);
}

const std::string& ParameterSet::tensor_name_of(std::size_t flat_index) const {
  for (const auto& t : tensors) {
    const auto n = static_cast<std::size_t>(t.value.size());
    if (flat_index < n) return t.name;
    flat_index -= n;
  }
  throw std::out_of_range("ParameterSet::tensor_name_of");
}

namespace {

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

Matrix random_matrix(Rng& rng, int rows, int cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat, Vector& rstd,
                Matrix& y) {
  const auto rows = x.rows();
  const auto cols = static_cast<double>(x.cols());
  xhat.resize(rows, x.cols());
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).sum() / cols;
    const double var = (x.row(r).array() - mu).square().sum() / cols;
    rstd(r) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd,
                           const Matrix& gain, Matrix& d_gain, Matrix& d_bias) {
  d_gain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_bias.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  const auto cols = static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).sum() / cols;
    const double m2 = dxhat.row(r).dot(xhat.row(r)) / cols;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace

Encoder::Encoder(EncoderConfig config) : config_(config) {
  if (config_.vocab <= 0 || config_.d_model <= 0 || config_.heads <= 0 ||
      config_.d_model % config_.heads != 0 || config_.layers <= 0 || config_.components <= 0 ||
      config_.ff <= 0 || config_.max_len <= 0) {
    throw ConfigError("invalid encoder configuration");
  }
}

ParameterSet Encoder::init_parameters(std::uint64_t seed) const {
  Rng rng(seed);
  const int d = config_.d_model;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid_std = w_std / std::sqrt(2.0 * config_.layers);
  ParameterSet p;
  p.tensors.push_back({"tok_emb", random_matrix(rng, config_.vocab, d, 0.5)});
  p.tensors.push_back({"pos_emb", random_matrix(rng, config_.max_len, d, 0.1)});
  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p.tensors.push_back({pre + "ln1_g", Matrix::Ones(1, d)});
    p.tensors.push_back({pre + "ln1_b", Matrix::Zero(1, d)});
    p.tensors.push_back({pre + "wq", random_matrix(rng, d, d, w_std)});
    p.tensors.push_back({pre + "bq", Matrix::Zero(1, d)});
    p.tensors.push_back({pre + "wk", random_matrix(rng, d, d, w_std)});
    p.tensors.push_back({pre + "bk", Matrix::Zero(1, d)});
    p.tensors.push_back({pre + "wv", random_matrix(rng, d, d, w_std)});
    p.tensors.push_back({pre + "bv", Matrix::Zero(1, d)});
    p.tensors.push_back({pre + "wo", random_matrix(rng, d, d, resid_std)});
    p.tensors.push_back({pre + "bo", Matrix::Zero(1, d)});
    p.tensors.push_back({pre + "ln2_g", Matrix::Ones(1, d)});
    p.tensors.push_back({pre + "ln2_b", Matrix::Zero(1, d)});
    p.tensors.push_back({pre + "w1", random_matrix(rng, d, config_.ff, w_std)});
    p.tensors.push_back({pre + "b1", Matrix::Zero(1, config_.ff)});
    p.tensors.push_back({pre + "w2", random_matrix(rng, config_.ff, d,
                                                   resid_std * std::sqrt(static_cast<double>(d) / config_.ff))});
    p.tensors.push_back({pre + "b2", Matrix::Zero(1, d)});
  }
  p.tensors.push_back({"lnf_g", Matrix::Ones(1, d)});
  p.tensors.push_back({"lnf_b", Matrix::Zero(1, d)});
  const int out = config_.head_outputs();
  p.tensors.push_back({"head_w", random_matrix(rng, d, out, 0.05)});
  Matrix head_b = Matrix::Zero(1, out);
  for (int k = 0; k < config_.components; ++k) {
    head_b(0, 5 * k + 0) = rng.uniform(-1.5, 1.5);
    head_b(0, 5 * k + 1) = rng.uniform(-1.5, 1.5);
    head_b(0, 5 * k + 2) = std::log(0.03);
    head_b(0, 5 * k + 3) = std::log(0.03);
  }
  p.tensors.push_back({"head_b", head_b});
  return p;
}

bool Encoder::is_head_tensor(std::size_t tensor_index) const {
  return tensor_index >= final_tensor(2);
}

Matrix Encoder::forward(const ParameterSet& params, std::span<const int> ids) const {
  Cache cache;
  return forward(params, ids, cache);
}

Matrix Encoder::forward(const ParameterSet& params, std::span<const int> ids, Cache& cache) const {
  const int len = static_cast<int>(ids.size());
  if (len == 0) throw ShapeError("empty token sequence");
  if (len > config_.max_len) {
    throw ShapeError("sequence of " + std::to_string(len) + " tokens exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  const auto& T = params.tensors;
  const int d = config_.d_model;
  const int dh = d / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  cache.ids.assign(ids.begin(), ids.end());
  cache.layers.resize(static_cast<std::size_t>(config_.layers));
  Matrix h(len, d);
  for (int i = 0; i < len; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= config_.vocab) throw ShapeError("token id out of range");
    h.row(i) = T[kTok].value.row(id) + T[kPos].value.row(i);
  }
  for (int l = 0; l < config_.layers; ++l) {
    auto& c = cache.layers[static_cast<std::size_t>(l)];
    auto W = [&](LayerSlot s) -> const Matrix& { return T[layer_tensor(l, s)].value; };
    c.h_in = h;
    layer_norm(h, W(kLn1G), W(kLn1B), c.xhat1, c.rstd1, c.ln1);
    c.q = (c.ln1 * W(kWq)).rowwise() + W(kBq).row(0);
    c.k = (c.ln1 * W(kWk)).rowwise() + W(kBk).row(0);
    c.v = (c.ln1 * W(kWv)).rowwise() + W(kBv).row(0);
    c.ctx.resize(len, d);
    c.probs.resize(static_cast<std::size_t>(config_.heads));
    for (int hd = 0; hd < config_.heads; ++hd) {
      Matrix s = c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose() * scale;
      for (int r = 0; r < len; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      c.ctx.middleCols(hd * dh, dh) = s * c.v.middleCols(hd * dh, dh);
      c.probs[static_cast<std::size_t>(hd)] = std::move(s);
    }
    h = h + ((c.ctx * W(kWo)).rowwise() + W(kBo).row(0));
    c.h_mid = h;
    layer_norm(h, W(kLn2G), W(kLn2B), c.xhat2, c.rstd2, c.ln2);
    c.pre_act = (c.ln2 * W(kW1)).rowwise() + W(kB1).row(0);
    c.act = c.pre_act.unaryExpr([](double x) { return gelu(x); });
    h = h + ((c.act * W(kW2)).rowwise() + W(kB2).row(0));
  }
  cache.h_last = h;
  layer_norm(h, T[final_tensor(0)].value, T[final_tensor(1)].value, cache.xhat_f, cache.rstd_f, cache.ln_f);
  return (cache.ln_f * T[final_tensor(2)].value).rowwise() + T[final_tensor(3)].value.row(0);
}

void Encoder::backward(const ParameterSet& params, const Cache& cache, const Matrix& d_out,
                       ParameterSet& grad) const {
  const auto& T = params.tensors;
  auto& G = grad.tensors;
  const int d = config_.d_model;
  const int dh = d / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto len = static_cast<Eigen::Index>(cache.ids.size());

  G[final_tensor(2)].value += cache.ln_f.transpose() * d_out;
  G[final_tensor(3)].value.row(0) += d_out.colwise().sum();
  Matrix d_ln = d_out * T[final_tensor(2)].value.transpose();
  Matrix dh_res = layer_norm_backward(d_ln, cache.xhat_f, cache.rstd_f, T[final_tensor(0)].value,
                                      G[final_tensor(0)].value, G[final_tensor(1)].value);

  for (int l = config_.layers - 1; l >= 0; --l) {
    const auto& c = cache.layers[static_cast<std::size_t>(l)];
    auto W = [&](LayerSlot s) -> const Matrix& { return T[layer_tensor(l, s)].value; };
    auto D = [&](LayerSlot s) -> Matrix& { return G[layer_tensor(l, s)].value; };

    // feed-forward branch
    D(kW2) += c.act.transpose() * dh_res;
    D(kB2).row(0) += dh_res.colwise().sum();
    Matrix d_act = dh_res * W(kW2).transpose();
    Matrix d_pre = d_act.array() * c.pre_act.unaryExpr([](double x) { return gelu_grad(x); }).array();
    D(kW1) += c.ln2.transpose() * d_pre;
    D(kB1).row(0) += d_pre.colwise().sum();
    Matrix d_ln2 = d_pre * W(kW1).transpose();
    dh_res += layer_norm_backward(d_ln2, c.xhat2, c.rstd2, W(kLn2G), D(kLn2G), D(kLn2B));

    // attention branch
    D(kWo) += c.ctx.transpose() * dh_res;
    D(kBo).row(0) += dh_res.colwise().sum();
    Matrix d_ctx = dh_res * W(kWo).transpose();
    Matrix dq(len, d), dk(len, d), dv(len, d);
    for (int hd = 0; hd < config_.heads; ++hd) {
      const Matrix& p = c.probs[static_cast<std::size_t>(hd)];
      const auto d_ctx_h = d_ctx.middleCols(hd * dh, dh);
      dv.middleCols(hd * dh, dh) = p.transpose() * d_ctx_h;
      Matrix dp = d_ctx_h * c.v.middleCols(hd * dh, dh).transpose();
      Matrix ds(len, len);
      for (Eigen::Index r = 0; r < len; ++r) {
        const double dot = dp.row(r).dot(p.row(r));
        ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
      }
      dq.middleCols(hd * dh, dh) = ds * c.k.middleCols(hd * dh, dh) * scale;
      dk.middleCols(hd * dh, dh) = ds.transpose() * c.q.middleCols(hd * dh, dh) * scale;
    }
    D(kWq) += c.ln1.transpose() * dq;
    D(kBq).row(0) += dq.colwise().sum();
    D(kWk) += c.ln1.transpose() * dk;
    D(kBk).row(0) += dk.colwise().sum();
    D(kWv) += c.ln1.transpose() * dv;
    D(kBv).row(0) += dv.colwise().sum();
    Matrix d_ln1 = dq * W(kWq).transpose() + dk * W(kWk).transpose() + dv * W(kWv).transpose();
    dh_res += layer_norm_backward(d_ln1, c.xhat1, c.rstd1, W(kLn1G), D(kLn1G), D(kLn1B));
  }
  for (Eigen::Index i = 0; i < len; ++i) {
    G[kTok].value.row(cache.ids[static_cast<std::size_t>(i)]) += dh_res.row(i);
    G[kPos].value.row(i) += dh_res.row(i);
  }
}

}  // namespace layoutattn
