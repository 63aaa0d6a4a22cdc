#include "layoutattn/toy_generator.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace layoutattn {

namespace {

constexpr int kContentDims = kNumNouns + kNumColors;

Matrix perturbed_identity(int d, double noise, Rng& rng) {
  Matrix m = Matrix::Identity(d, d);
  const double s = noise / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += s * rng.normal();
  return m;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TokenEmbeddings::TokenEmbeddings(const GeneratorConfig& config) {
  const int d = config.latent_dim;
  if (d <= kContentDims) {
    throw ConfigError("latent_dim must exceed " + std::to_string(kContentDims) +
                      " (noun and color directions plus a function-word subspace)");
  }
  const auto& vocab = Vocabulary::instance();
  attribute_binding_ = config.attribute_binding;
  Rng rng(config.embedding_seed);
  table_ = Matrix::Zero(vocab.size(), d);
  for (int tok = 0; tok < vocab.size(); ++tok) {
    if (vocab.is_noun_token(tok)) {
      table_(tok, tok - vocab.noun_token(0)) = 1.0;
    } else if (vocab.is_color_token(tok)) {
      table_(tok, kNumNouns + tok - vocab.color_token(0)) = 1.0;
    } else {
      for (int k = kContentDims; k < d; ++k) table_(tok, k) = rng.normal();
      table_.row(tok).normalize();
      table_.row(tok) *= config.function_word_scale;
    }
  }
  // logits = z W_Q W_K^T e^T / sqrt(d) ~ attention_gain * <z, e>
  const double qk = std::sqrt(config.attention_gain * std::sqrt(static_cast<double>(d)));
  w_q_ = qk * perturbed_identity(d, config.projection_noise, rng);
  w_k_ = qk * perturbed_identity(d, config.projection_noise, rng);
  w_v_ = config.value_gain * perturbed_identity(d, config.projection_noise, rng);
}

TokenKV TokenEmbeddings::embed_ids(std::span<const int> ids) const {
  if (ids.empty()) throw ShapeError("cannot embed an empty text");
  const auto& vocab = Vocabulary::instance();
  Matrix e(static_cast<Eigen::Index>(ids.size()), table_.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    e.row(static_cast<Eigen::Index>(i)) = table_.row(ids[i]);
    // A noun carries the color word right before it.
    if (i > 0 && vocab.is_noun_token(ids[i]) && vocab.is_color_token(ids[i - 1])) {
      e.row(static_cast<Eigen::Index>(i)) += attribute_binding_ * table_.row(ids[i - 1]);
    }
  }
  return {e * w_k_, e * w_v_};
}

TokenKV TokenEmbeddings::embed(std::string_view text) const {
  const auto ids = encode_tokens(text);
  return embed_ids(ids);
}

double ToyScene::signature(Eigen::Index p, const ObjectSpec& obj) const {
  double s = nouns(p, obj.noun);
  if (obj.color) s *= colors(p, *obj.color);
  return s;
}

ToyScene blank_scene(GridSize grid) {
  return {grid, Matrix::Zero(grid.pixels(), kNumNouns), Matrix::Zero(grid.pixels(), kNumColors)};
}

Matrix initial_latent(const GeneratorConfig& config, std::uint64_t seed) {
  const int h = config.grid.h, w = config.grid.w, d = config.latent_dim;
  Rng rng(seed);
  Matrix z(static_cast<Eigen::Index>(h) * w, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  const double sigma = config.noise_smoothing;
  if (sigma <= 0.0) return z;

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kern(static_cast<std::size_t>(2 * radius + 1));
  for (int o = -radius; o <= radius; ++o) {
    kern[static_cast<std::size_t>(o + radius)] = std::exp(-0.5 * o * o / (sigma * sigma));
  }
  // Blur along one axis; `norm2` collects the squared kernel mass that
  // actually lands inside the grid so the result can be rescaled exactly.
  auto blur = [&](const Matrix& in, bool along_rows, std::vector<double>& norm2) {
    Matrix out = Matrix::Zero(in.rows(), in.cols());
    norm2.assign(static_cast<std::size_t>(h) * w, 0.0);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Eigen::Index p = static_cast<Eigen::Index>(r) * w + c;
        for (int o = -radius; o <= radius; ++o) {
          const int rr = along_rows ? r + o : r;
          const int cc = along_rows ? c : c + o;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const double k = kern[static_cast<std::size_t>(o + radius)];
          out.row(p) += k * in.row(static_cast<Eigen::Index>(rr) * w + cc);
          norm2[static_cast<std::size_t>(p)] += k * k;
        }
      }
    }
    return out;
  };
  std::vector<double> n_rows, n_cols;
  const Matrix tmp = blur(z, false, n_cols);
  Matrix out = blur(tmp, true, n_rows);
  // The separable kernel's squared mass factorizes over the two axes.
  for (Eigen::Index p = 0; p < out.rows(); ++p) {
    const auto sp = static_cast<std::size_t>(p);
    out.row(p) /= std::sqrt(n_rows[sp] * n_cols[sp]);
  }
  return out;
}

GenerationProblem::GenerationProblem(const TokenEmbeddings& embeddings, const GeneratorConfig& config,
                                     const SceneDescription& desc, MaskSet weights, std::uint64_t seed)
    : config_(config), weights_(std::move(weights)) {
  if (config.steps < 1) throw ConfigError("generator needs at least one step");
  if (config.grid.h < 4 || config.grid.w < 4) throw ShapeError("grid must be at least 4 x 4");
  if (embeddings.dim() != config.latent_dim) throw ShapeError("embedding width differs from latent_dim");
  const auto n = static_cast<std::size_t>(desc.num_objects());
  if (weights_.size() != n) throw ShapeError("need one region weight map per object");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));

  auto prepare = [&](const TokenKV& kv) {
    return Attn{embeddings.w_q() * kv.k.transpose() * inv_sqrt_d, kv.v};
  };
  global_ = prepare(embeddings.embed(desc.global_text));
  for (std::size_t i = 0; i < n; ++i) {
    const std::string text = i < desc.local_texts.size() ? desc.local_texts[i] : render_local_description(desc.objects[i]);
    locals_.push_back(prepare(embeddings.embed(text)));
    if (weights_[i].rows() != config.grid.h || weights_[i].cols() != config.grid.w) {
      throw ShapeError("region weight map does not match the grid");
    }
  }

  z_init_ = initial_latent(config, seed);
  const Eigen::Index pixels = config.grid.pixels();
  is_active_.assign(static_cast<std::size_t>(pixels), false);
  active_by_row_.resize(static_cast<std::size_t>(config.grid.h));
  for (Eigen::Index p = 0; p < pixels; ++p) {
    for (const auto& m : weights_) {
      if (m.data()[p] != 0.0) {
        is_active_[static_cast<std::size_t>(p)] = true;
        break;
      }
    }
    if (is_active_[static_cast<std::size_t>(p)]) {
      active_.push_back(p);
      active_by_row_[static_cast<std::size_t>(p / config.grid.w)].push_back(p);
    }
  }

  z_final_static_ = Matrix::Zero(pixels, config.latent_dim);
  const Matrix zero_lambda = Matrix::Zero(static_cast<Eigen::Index>(n), config.steps);
  const auto rows = static_cast<std::ptrdiff_t>(pixels);
#pragma omp parallel for schedule(static) if (config.policy == ExecPolicy::Parallel)
  for (std::ptrdiff_t p = 0; p < rows; ++p) {
    if (!is_active_[static_cast<std::size_t>(p)]) integrate_pixel(p, zero_lambda, z_final_static_.row(p).data());
  }
}

void GenerationProblem::check_lambda(const Matrix& lambda) const {
  if (lambda.rows() != objects() || lambda.cols() != steps()) {
    throw ShapeError("lambda must be objects x steps (" + std::to_string(objects()) + " x " +
                     std::to_string(steps()) + ")");
  }
}

void GenerationProblem::integrate_pixel(Eigen::Index p, const Matrix& lambda, double* z) const {
  const int d = config_.latent_dim;
  const int T = config_.steps;
  const double eta = config_.eta();
  Eigen::Map<RowVector> zv(z, d);
  zv = z_init_.row(p);
  std::vector<double> probs(static_cast<std::size_t>(max_tokens()));
  RowVector og(d), ol(d);
  for (int s = 0; s < T; ++s) {
    const int col = T - 1 - s;
    kernels::attend_row(z, global_.proj, global_.values, probs.data(), og.data());
    double c = 1.0;
    for (std::size_t i = 0; i < locals_.size(); ++i) c -= lambda(static_cast<Eigen::Index>(i), col) * weights_[i].data()[p];
    // Same association order as forward_tape so both paths agree bitwise.
    RowVector next = zv + (eta * c) * og;
    for (std::size_t i = 0; i < locals_.size(); ++i) {
      if (weights_[i].data()[p] == 0.0) continue;
      const double coef = lambda(static_cast<Eigen::Index>(i), col) * weights_[i].data()[p];
      kernels::attend_row(z, locals_[i].proj, locals_[i].values, probs.data(), ol.data());
      next += (eta * coef) * ol;
    }
    zv = next;
  }
}

void GenerationProblem::decode_row(const double* z, Eigen::Index p, ToyScene& scene) const {
  const double g = config_.decode_gain, th = config_.decode_threshold;
  for (int n = 0; n < kNumNouns; ++n) scene.nouns(p, n) = sigmoid(g * (z[n] - th));
  for (int c = 0; c < kNumColors; ++c) scene.colors(p, c) = sigmoid(g * (z[kNumNouns + c] - th));
}

Matrix GenerationProblem::final_latent(const Matrix& lambda) const {
  check_lambda(lambda);
  Matrix z = z_final_static_;
  const auto n = static_cast<std::ptrdiff_t>(active_.size());
#pragma omp parallel for schedule(static) if (config_.policy == ExecPolicy::Parallel)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto p = active_[static_cast<std::size_t>(k)];
    integrate_pixel(p, lambda, z.row(p).data());
  }
  return z;
}

ToyScene GenerationProblem::run(const Matrix& lambda) const {
  const Matrix z = final_latent(lambda);
  ToyScene scene = blank_scene(config_.grid);
  for (Eigen::Index p = 0; p < z.rows(); ++p) decode_row(z.row(p).data(), p, scene);
  return scene;
}

std::size_t GenerationProblem::tape_size() const {
  const auto d = static_cast<std::size_t>(config_.latent_dim);
  const auto T = static_cast<std::size_t>(config_.steps);
  std::size_t n = (T + 1) * d + T * (static_cast<std::size_t>(global_.proj.cols()) + d);
  for (const auto& a : locals_) n += T * (static_cast<std::size_t>(a.proj.cols()) + d);
  return n;
}

GenerationProblem::Tape GenerationProblem::tape_at(double* base) const {
  const int d = config_.latent_dim;
  const int T = config_.steps;
  Tape t;
  t.traj = base;
  base += static_cast<std::ptrdiff_t>(T + 1) * d;
  t.pg = base;
  base += static_cast<std::ptrdiff_t>(T) * global_.proj.cols();
  t.og = base;
  base += static_cast<std::ptrdiff_t>(T) * d;
  for (const auto& a : locals_) {
    t.pl.push_back(base);
    base += static_cast<std::ptrdiff_t>(T) * a.proj.cols();
    t.ol.push_back(base);
    base += static_cast<std::ptrdiff_t>(T) * d;
  }
  return t;
}

void GenerationProblem::forward_tape(Eigen::Index p, const Matrix& lambda, const Tape& tape) const {
  const int d = config_.latent_dim;
  const int T = config_.steps;
  const double eta = config_.eta();
  const auto lg = global_.proj.cols();
  Eigen::Map<RowVector>(tape.traj, d) = z_init_.row(p);
  for (int s = 0; s < T; ++s) {
    const int col = T - 1 - s;
    const double* z = tape.traj + static_cast<std::ptrdiff_t>(s) * d;
    double* og = tape.og + static_cast<std::ptrdiff_t>(s) * d;
    kernels::attend_row(z, global_.proj, global_.values, tape.pg + s * lg, og);
    double c = 1.0;
    for (std::size_t i = 0; i < locals_.size(); ++i) c -= lambda(static_cast<Eigen::Index>(i), col) * weights_[i].data()[p];
    Eigen::Map<RowVector> next(tape.traj + static_cast<std::ptrdiff_t>(s + 1) * d, d);
    next = Eigen::Map<const RowVector>(z, d) + (eta * c) * Eigen::Map<const RowVector>(og, d);
    for (std::size_t i = 0; i < locals_.size(); ++i) {
      if (weights_[i].data()[p] == 0.0) continue;
      const double coef = lambda(static_cast<Eigen::Index>(i), col) * weights_[i].data()[p];
      double* ol = tape.ol[i] + static_cast<std::ptrdiff_t>(s) * d;
      kernels::attend_row(z, locals_[i].proj, locals_[i].values, tape.pl[i] + s * locals_[i].proj.cols(), ol);
      next += (eta * coef) * Eigen::Map<const RowVector>(ol, d);
    }
  }
}

void GenerationProblem::backward_tape(Eigen::Index p, const Matrix& lambda, const Tape& tape,
                                      const SceneGradient& grad, Matrix& acc, double* scratch) const {
  const int d = config_.latent_dim;
  const int T = config_.steps;
  const double eta = config_.eta();
  const double g = config_.decode_gain, th = config_.decode_threshold;
  const auto lg = global_.proj.cols();
  RowVector u = RowVector::Zero(d), gz(d);
  const double* zf = tape.traj + static_cast<std::ptrdiff_t>(T) * d;
  for (int k = 0; k < kNumNouns; ++k) {
    const double a = sigmoid(g * (zf[k] - th));
    u[k] = grad.nouns(p, k) * g * a * (1.0 - a);
  }
  for (int k = 0; k < kNumColors; ++k) {
    const double a = sigmoid(g * (zf[kNumNouns + k] - th));
    u[kNumNouns + k] = grad.colors(p, k) * g * a * (1.0 - a);
  }
  for (int s = T - 1; s >= 0; --s) {
    const int col = T - 1 - s;
    Eigen::Map<const RowVector> og(tape.og + static_cast<std::ptrdiff_t>(s) * d, d);
    double c = 1.0;
    for (std::size_t i = 0; i < locals_.size(); ++i) {
      const double w = weights_[i].data()[p];
      if (w == 0.0) continue;
      c -= lambda(static_cast<Eigen::Index>(i), col) * w;
      Eigen::Map<const RowVector> ol(tape.ol[i] + static_cast<std::ptrdiff_t>(s) * d, d);
      acc(static_cast<Eigen::Index>(i), col) += eta * w * u.dot(ol - og);
    }
    gz = u;
    kernels::attend_row_backward(u.data(), global_.proj, global_.values, tape.pg + s * lg, eta * c, gz.data(),
                                 scratch);
    for (std::size_t i = 0; i < locals_.size(); ++i) {
      const double coef = lambda(static_cast<Eigen::Index>(i), col) * weights_[i].data()[p];
      if (coef == 0.0) continue;
      kernels::attend_row_backward(u.data(), locals_[i].proj, locals_[i].values,
                                   tape.pl[i] + s * locals_[i].proj.cols(), eta * coef, gz.data(), scratch);
    }
    u = gz;
  }
}

Eigen::Index GenerationProblem::max_tokens() const {
  Eigen::Index max_l = global_.proj.cols();
  for (const auto& a : locals_) max_l = std::max(max_l, a.proj.cols());
  return max_l;
}

Matrix GenerationProblem::lambda_gradient(const Matrix& lambda, const SceneGradient& grad) const {
  check_lambda(lambda);
  check_scene_gradient(grad);
  const auto h = static_cast<std::ptrdiff_t>(config_.grid.h);
  const auto n_obj = static_cast<Eigen::Index>(locals_.size());
  // One partial sum per grid row, reduced in row order afterwards.
  std::vector<Matrix> partial(static_cast<std::size_t>(h));
#pragma omp parallel if (config_.policy == ExecPolicy::Parallel)
  {
    std::vector<double> buf(tape_size());
    const Tape tape = tape_at(buf.data());
    std::vector<double> scratch(static_cast<std::size_t>(max_tokens()));
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t r = 0; r < h; ++r) {
      Matrix acc = Matrix::Zero(n_obj, config_.steps);
      for (const auto p : active_by_row_[static_cast<std::size_t>(r)]) {
        forward_tape(p, lambda, tape);
        backward_tape(p, lambda, tape, grad, acc, scratch.data());
      }
      partial[static_cast<std::size_t>(r)] = std::move(acc);
    }
  }
  Matrix total = Matrix::Zero(n_obj, config_.steps);
  for (const auto& m : partial) total += m;
  return total;
}

Matrix GenerationProblem::run_with_gradient(const Matrix& lambda,
                                            const std::function<SceneGradient(const ToyScene&)>& scene_grad,
                                            ToyScene& scene) const {
  check_lambda(lambda);
  const std::size_t per = tape_size();
  const auto n_active = static_cast<std::ptrdiff_t>(active_.size());
  std::vector<double>& buf = tape_buffer_;
  if (buf.size() < per * active_.size()) buf.resize(per * active_.size());
  std::vector<std::size_t> slot(is_active_.size(), 0);
  for (std::size_t k = 0; k < active_.size(); ++k) slot[static_cast<std::size_t>(active_[k])] = k;

  scene = blank_scene(config_.grid);
  const int d = config_.latent_dim;
  for (Eigen::Index p = 0; p < config_.grid.pixels(); ++p) {
    if (!is_active_[static_cast<std::size_t>(p)]) decode_row(z_final_static_.row(p).data(), p, scene);
  }
#pragma omp parallel for schedule(static) if (config_.policy == ExecPolicy::Parallel)
  for (std::ptrdiff_t k = 0; k < n_active; ++k) {
    const auto p = active_[static_cast<std::size_t>(k)];
    const Tape tape = tape_at(buf.data() + static_cast<std::size_t>(k) * per);
    forward_tape(p, lambda, tape);
    decode_row(tape.traj + static_cast<std::ptrdiff_t>(config_.steps) * d, p, scene);
  }

  const SceneGradient grad = scene_grad(scene);
  check_scene_gradient(grad);
  const auto h = static_cast<std::ptrdiff_t>(config_.grid.h);
  const auto n_obj = static_cast<Eigen::Index>(locals_.size());
  std::vector<Matrix> partial(static_cast<std::size_t>(h));
#pragma omp parallel if (config_.policy == ExecPolicy::Parallel)
  {
    std::vector<double> scratch(static_cast<std::size_t>(max_tokens()));
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t r = 0; r < h; ++r) {
      Matrix acc = Matrix::Zero(n_obj, config_.steps);
      for (const auto p : active_by_row_[static_cast<std::size_t>(r)]) {
        const Tape tape = tape_at(buf.data() + slot[static_cast<std::size_t>(p)] * per);
        backward_tape(p, lambda, tape, grad, acc, scratch.data());
      }
      partial[static_cast<std::size_t>(r)] = std::move(acc);
    }
  }
  Matrix total = Matrix::Zero(n_obj, config_.steps);
  for (const auto& m : partial) total += m;
  return total;
}

void GenerationProblem::check_scene_gradient(const SceneGradient& grad) const {
  const Eigen::Index pixels = config_.grid.pixels();
  if (grad.nouns.rows() != pixels || grad.nouns.cols() != kNumNouns || grad.colors.rows() != pixels ||
      grad.colors.cols() != kNumColors) {
    throw ShapeError("scene gradient shape does not match the grid");
  }
}

ToyScene generate(const SceneDescription& desc, const Layout& layout, const Matrix& lambda,
                  const GeneratorConfig& config, std::uint64_t seed, double soft_sigma) {
  if (static_cast<int>(layout.regions.size()) != desc.num_objects()) {
    throw ShapeError("layout must have one region per object");
  }
  const TokenEmbeddings emb(config);
  MaskSet weights = soft_sigma > 0.0 ? soft_regions(layout, soft_sigma, config.grid) : region_mask(layout, config.grid);
  const GenerationProblem problem(emb, config, desc, std::move(weights), seed);
  return problem.run(lambda);
}

int CropWindow::col_begin() const { return static_cast<int>(std::floor(x0 + 1e-9)); }
int CropWindow::col_end() const { return static_cast<int>(std::ceil(x1 - 1e-9)); }
int CropWindow::row_begin() const { return static_cast<int>(std::floor(y0 + 1e-9)); }
int CropWindow::row_end() const { return static_cast<int>(std::ceil(y1 - 1e-9)); }

CropWindow crop_window(const Region& region, GridSize grid) {
  CropWindow win;
  if (region.mask) {
    const Matrix& m = *region.mask;
    int r0 = grid.h, r1 = -1, c0 = grid.w, c1 = -1;
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        if (m(r, c) == 0.0) continue;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
    if (r1 < 0) return {0.0, 0.0, static_cast<double>(grid.w), static_cast<double>(grid.h)};
    double x0 = c0, x1 = c1 + 1.0, y0 = r0, y1 = r1 + 1.0;
    const double side = std::max(x1 - x0, y1 - y0);
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    win = {cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2};
  } else {
    const double cx = region.center.x * grid.w, cy = region.center.y * grid.h;
    const double rx = region.radius * grid.w, ry = region.radius * grid.h;
    win = {cx - rx, cy - ry, cx + rx, cy + ry};
  }
  win.x0 = std::clamp(win.x0, 0.0, static_cast<double>(grid.w));
  win.x1 = std::clamp(win.x1, 0.0, static_cast<double>(grid.w));
  win.y0 = std::clamp(win.y0, 0.0, static_cast<double>(grid.h));
  win.y1 = std::clamp(win.y1, 0.0, static_cast<double>(grid.h));
  return win;
}

namespace {

struct Tap {
  Eigen::Index pixel;
  double weight;
};

// Two linear-interpolation taps per axis for a continuous pixel coordinate.
std::array<std::pair<int, double>, 2> axis_taps(double coord, int size) {
  const double u = coord - 0.5;
  const int lo = static_cast<int>(std::floor(u));
  const double f = u - lo;
  return {{{std::clamp(lo, 0, size - 1), 1.0 - f}, {std::clamp(lo + 1, 0, size - 1), f}}};
}

std::vector<std::array<Tap, 4>> crop_taps(const Region& region, GridSize grid, int patch) {
  const CropWindow win = crop_window(region, grid);
  std::vector<std::array<Tap, 4>> taps(static_cast<std::size_t>(patch) * patch);
  for (int a = 0; a < patch; ++a) {
    const double y = win.y0 + (a + 0.5) * (win.y1 - win.y0) / patch;
    const auto ty = axis_taps(y, grid.h);
    for (int b = 0; b < patch; ++b) {
      const double x = win.x0 + (b + 0.5) * (win.x1 - win.x0) / patch;
      const auto tx = axis_taps(x, grid.w);
      auto& t = taps[static_cast<std::size_t>(a) * patch + b];
      int k = 0;
      for (const auto& [r, wy] : ty) {
        for (const auto& [c, wx] : tx) {
          t[static_cast<std::size_t>(k++)] = {static_cast<Eigen::Index>(r) * grid.w + c, wy * wx};
        }
      }
    }
  }
  return taps;
}

}  // namespace

ToyScene crop_region(const ToyScene& scene, const Region& region, int patch) {
  const auto taps = crop_taps(region, scene.grid, patch);
  ToyScene out = blank_scene({patch, patch});
  for (std::size_t q = 0; q < taps.size(); ++q) {
    const auto row = static_cast<Eigen::Index>(q);
    for (const auto& t : taps[q]) {
      out.nouns.row(row) += t.weight * scene.nouns.row(t.pixel);
      out.colors.row(row) += t.weight * scene.colors.row(t.pixel);
    }
  }
  return out;
}

void crop_region_adjoint(const SceneGradient& patch_grad, const Region& region, GridSize grid,
                         SceneGradient& full, int patch) {
  const auto taps = crop_taps(region, grid, patch);
  for (std::size_t q = 0; q < taps.size(); ++q) {
    const auto row = static_cast<Eigen::Index>(q);
    for (const auto& t : taps[q]) {
      full.nouns.row(t.pixel) += t.weight * patch_grad.nouns.row(row);
      full.colors.row(t.pixel) += t.weight * patch_grad.colors.row(row);
    }
  }
}

}  // namespace layoutattn
