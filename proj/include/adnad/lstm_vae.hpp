#pragma once

// Sequence variational autoencoder used as the unsupervised anomaly scorer.
//
// One LSTM layer encodes a (T x D) window; its final hidden state is mapped to
// the mean and log-variance of a diagonal Gaussian latent. A second LSTM layer
// receives the latent sample as input at every step and a linear layer maps
// each decoder hidden state back to a feature row. The loss is the negative
// ELBO with a unit-variance Gaussian observation model:
//
//   recon = sum over the window of squared reconstruction error
//   kl    = -1/2 * sum_i (1 + logvar_i - mu_i^2 - exp(logvar_i))
//
// All parameters live in one flat buffer so the optimizer, gradient checks and
// checkpoints can treat them uniformly; named tensors are views into it.

#include <adnad/error.hpp>
#include <adnad/random.hpp>

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace adnad {

struct ScorerConfig {
  int timestep = 30;
  int features = 1;
  int hidden = 64;
  int latent = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 16;

  bool operator==(const ScorerConfig&) const = default;
};

/// T consecutive feature rows (one per stream record) ending at `end_index`.
struct SequenceWindow {
  Eigen::MatrixXd rows;  // T x D
  std::int64_t end_index = 0;
};

struct LossValue {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

struct Encoded {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

struct TrainReport {
  std::vector<double> epoch_mean_loss;
  std::size_t windows = 0;
};

struct TensorInfo {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  std::size_t offset;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

class LstmVae {
 public:
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;

  /// Number of trainable scalars:
  /// 4H(D+H+1) + 2(HL+L) + 4H(L+H+1) + (HD+D).
  static std::size_t parameter_count(const ScorerConfig& c) {
    const auto H = static_cast<std::size_t>(c.hidden);
    const auto L = static_cast<std::size_t>(c.latent);
    const auto D = static_cast<std::size_t>(c.features);
    return 4 * H * (D + H + 1) + 2 * (H * L + L) + 4 * H * (L + H + 1) + (H * D + D);
  }

  /// Weights uniform in [-1/sqrt(H), 1/sqrt(H)] from a seeded generator.
  static LstmVae init(const ScorerConfig& config, std::uint64_t seed) {
    LstmVae m(config);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden));
    for (double& w : m.params_) w = rng.uniform(-bound, bound);
    return m;
  }

  /// Wraps an explicit parameter vector (tests, checkpoints).
  LstmVae(const ScorerConfig& config, std::vector<double> params) : LstmVae(config) {
    if (params.size() != params_.size())
      fail(Errc::ShapeMismatch, "parameter vector has " + std::to_string(params.size()) +
                                    " entries, expected " + std::to_string(params_.size()));
    params_ = std::move(params);
  }

  const ScorerConfig& config() const { return config_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  // -------------------------------------------------------------------------
  // Forward pieces

  Encoded encode(const Matrix& window) const {
    check_window(window);
    std::vector<StepCache> cache;
    const auto layer = enc_view(params_.data());
    run_lstm(layer, window, cache);
    const Vector& h = cache.back().h;
    const auto lat = latent_view(params_.data());
    return {lat.w_mu * h + lat.b_mu, lat.w_logvar * h + lat.b_logvar};
  }

  static Vector reparameterize(const Vector& mu, const Vector& logvar, const Vector& noise) {
    if (mu.size() != logvar.size() || mu.size() != noise.size())
      fail(Errc::ShapeMismatch, "reparameterize: mu/logvar/noise sizes differ");
    return mu.array() + (0.5 * logvar.array()).exp() * noise.array();
  }

  Matrix decode(const Vector& z) const { return decode(z, config_.timestep); }

  Matrix decode(const Vector& z, int steps) const {
    if (z.size() != config_.latent) fail(Errc::ShapeMismatch, "decode: latent size mismatch");
    if (steps < 1) fail(Errc::ShapeMismatch, "decode: steps must be >= 1");
    std::vector<StepCache> cache;
    const Matrix inputs = z.transpose().replicate(steps, 1);
    run_lstm(dec_view(params_.data()), inputs, cache);
    const auto out = out_view(params_.data());
    Matrix recon(steps, config_.features);
    for (int t = 0; t < steps; ++t) recon.row(t) = (out.w * cache[t].h + out.b).transpose();
    return recon;
  }

  LossValue loss(const Matrix& window, const Vector& noise) const {
    return forward_backward(window, noise, nullptr);
  }

  /// Loss of one window plus its gradient, added into `grad` (same layout as
  /// parameters()).
  LossValue loss_and_gradient(const Matrix& window, const Vector& noise,
                              std::span<double> grad) const {
    if (grad.size() != params_.size()) fail(Errc::ShapeMismatch, "gradient buffer size mismatch");
    return forward_backward(window, noise, grad.data());
  }

  /// Deterministic anomaly score: the total loss with zero latent noise.
  double score(const Matrix& window) const {
    return loss(window, Vector::Zero(config_.latent)).total;
  }
  double score(const SequenceWindow& w) const { return score(w.rows); }

  // -------------------------------------------------------------------------
  // Training

  /// Minibatch Adam on the mean total loss, one latent sample per window per
  /// epoch. Optimizer moments persist across calls so incremental updates
  /// continue the same optimisation.
  TrainReport train(std::span<const SequenceWindow> windows, int epochs, Rng& rng) {
    TrainReport report;
    report.windows = windows.size();
    if (epochs <= 0 || windows.empty()) return report;
    for (const auto& w : windows) check_window(w.rows);

    if (adam_m_.size() != params_.size()) {
      adam_m_.assign(params_.size(), 0.0);
      adam_v_.assign(params_.size(), 0.0);
    }
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(params_.size());
    Vector noise(config_.latent);
    const auto batch = static_cast<std::size_t>(std::max(1, config_.batch_size));

    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[rng.below(i + 1)]);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t k = start; k < stop; ++k) {
          for (Eigen::Index j = 0; j < noise.size(); ++j) noise[j] = rng.normal();
          const LossValue lv = forward_backward(windows[order[k]].rows, noise, grad.data());
          epoch_loss += lv.total;
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (double& g : grad) {
          g *= inv;
          if (!std::isfinite(g)) fail(Errc::NonFinite, "gradient diverged during training");
        }
        adam_step(grad);
      }
      const double mean = epoch_loss / static_cast<double>(windows.size());
      if (!std::isfinite(mean)) fail(Errc::NonFinite, "training loss diverged");
      report.epoch_mean_loss.push_back(mean);
    }
    return report;
  }

  // -------------------------------------------------------------------------
  // Checkpoints. Text format, one tensor per block, hexadecimal floats so a
  // load reproduces every bit:
  //
  //   adnad-lstm-vae 1
  //   config <T> <D> <H> <L> <batch> <lr> <beta1> <beta2> <eps>
  //   tensor <name> <rows> <cols>
  //   <rows*cols hexfloats, column-major, whitespace separated>
  //   ...
  //   end

  void save(std::ostream& os) const {
    const auto& c = config_;
    os << "adnad-lstm-vae 1\n";
    os << "config " << c.timestep << ' ' << c.features << ' ' << c.hidden << ' ' << c.latent
       << ' ' << c.batch_size << ' ' << hex(c.learning_rate) << ' ' << hex(c.beta1) << ' '
       << hex(c.beta2) << ' ' << hex(c.epsilon) << '\n';
    for (const auto& t : tensors_) {
      os << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
      for (std::size_t k = 0; k < t.size(); ++k)
        os << hex(params_[t.offset + k]) << (k + 1 == t.size() ? '\n' : ' ');
    }
    os << "end\n";
  }

  static LstmVae load(std::istream& is) {
    std::string magic, token;
    int version = 0;
    if (!(is >> magic >> version) || magic != "adnad-lstm-vae" || version != 1)
      fail(Errc::SchemaMismatch, "not an adnad-lstm-vae v1 checkpoint");
    ScorerConfig c;
    std::string lr, b1, b2, eps;
    if (!(is >> token) || token != "config" ||
        !(is >> c.timestep >> c.features >> c.hidden >> c.latent >> c.batch_size >> lr >> b1 >>
          b2 >> eps))
      fail(Errc::SchemaMismatch, "bad scorer config line");
    c.learning_rate = unhex(lr);
    c.beta1 = unhex(b1);
    c.beta2 = unhex(b2);
    c.epsilon = unhex(eps);
    LstmVae m(c);
    for (const auto& t : m.tensors_) {
      std::string name;
      Eigen::Index rows = 0, cols = 0;
      if (!(is >> token >> name >> rows >> cols) || token != "tensor" || name != t.name ||
          rows != t.rows || cols != t.cols)
        fail(Errc::SchemaMismatch, "expected tensor " + t.name);
      for (std::size_t k = 0; k < t.size(); ++k) {
        if (!(is >> token)) fail(Errc::SchemaMismatch, "truncated tensor " + t.name);
        m.params_[t.offset + k] = unhex(token);
      }
    }
    if (!(is >> token) || token != "end") fail(Errc::SchemaMismatch, "missing end marker");
    return m;
  }

 private:
  explicit LstmVae(const ScorerConfig& config) : config_(config) {
    if (config.timestep < 1 || config.features < 1 || config.hidden < 1 || config.latent < 1)
      fail(Errc::InvalidConfig, "scorer dimensions must be >= 1");
    const Eigen::Index H = config.hidden, L = config.latent, D = config.features;
    std::size_t offset = 0;
    auto add = [&](std::string name, Eigen::Index r, Eigen::Index c) {
      tensors_.push_back({std::move(name), r, c, offset});
      offset += static_cast<std::size_t>(r * c);
    };
    add("enc.w_x", 4 * H, D);
    add("enc.w_h", 4 * H, H);
    add("enc.b", 4 * H, 1);
    add("lat.w_mu", L, H);
    add("lat.b_mu", L, 1);
    add("lat.w_logvar", L, H);
    add("lat.b_logvar", L, 1);
    add("dec.w_x", 4 * H, L);
    add("dec.w_h", 4 * H, H);
    add("dec.b", 4 * H, 1);
    add("out.w", D, H);
    add("out.b", D, 1);
    params_.assign(offset, 0.0);
  }

  template <class T>
  using MatMap = Eigen::Map<std::conditional_t<std::is_const_v<T>, const Matrix, Matrix>>;
  template <class T>
  using VecMap = Eigen::Map<std::conditional_t<std::is_const_v<T>, const Vector, Vector>>;

  template <class T>
  struct LstmView {
    MatMap<T> w_x, w_h;
    VecMap<T> b;
  };
  template <class T>
  struct LatentView {
    MatMap<T> w_mu;
    VecMap<T> b_mu;
    MatMap<T> w_logvar;
    VecMap<T> b_logvar;
  };
  template <class T>
  struct OutView {
    MatMap<T> w;
    VecMap<T> b;
  };

  template <class T>
  MatMap<T> mat(T* base, int idx) const {
    const auto& t = tensors_[static_cast<std::size_t>(idx)];
    return MatMap<T>(base + t.offset, t.rows, t.cols);
  }
  template <class T>
  VecMap<T> vec(T* base, int idx) const {
    const auto& t = tensors_[static_cast<std::size_t>(idx)];
    return VecMap<T>(base + t.offset, t.rows);
  }
  template <class T>
  LstmView<T> enc_view(T* base) const { return {mat(base, 0), mat(base, 1), vec(base, 2)}; }
  template <class T>
  LatentView<T> latent_view(T* base) const {
    return {mat(base, 3), vec(base, 4), mat(base, 5), vec(base, 6)};
  }
  template <class T>
  LstmView<T> dec_view(T* base) const { return {mat(base, 7), mat(base, 8), vec(base, 9)}; }
  template <class T>
  OutView<T> out_view(T* base) const { return {mat(base, 10), vec(base, 11)}; }

  struct StepCache {
    Vector x, h_prev, c_prev, i, f, g, o, c, tanh_c, h;
  };

  static Vector sigmoid(const Vector& a) {
    return a.unaryExpr([](double v) {
      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
  }

  // Runs one LSTM layer over the rows of `inputs` from a zero state.
  void run_lstm(const LstmView<const double>& p, const Matrix& inputs,
                std::vector<StepCache>& cache) const {
    const Eigen::Index H = config_.hidden;
    cache.resize(static_cast<std::size_t>(inputs.rows()));
    Vector h = Vector::Zero(H), c = Vector::Zero(H);
    for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
      StepCache& s = cache[static_cast<std::size_t>(t)];
      s.x = inputs.row(t).transpose();
      s.h_prev = h;
      s.c_prev = c;
      const Vector a = p.w_x * s.x + p.w_h * h + p.b;
      s.i = sigmoid(a.segment(0, H));
      s.f = sigmoid(a.segment(H, H));
      s.g = a.segment(2 * H, H).array().tanh();
      s.o = sigmoid(a.segment(3 * H, H));
      s.c = s.f.cwiseProduct(c) + s.i.cwiseProduct(s.g);
      s.tanh_c = s.c.array().tanh();
      s.h = s.o.cwiseProduct(s.tanh_c);
      h = s.h;
      c = s.c;
    }
  }

  // Backpropagation through time. `dh_out[t]` is the loss gradient arriving
  // at h_t from outside the recurrence. Returns dL/dx_t for every step.
  std::vector<Vector> backprop_lstm(const LstmView<const double>& p, LstmView<double> g,
                                    const std::vector<StepCache>& cache,
                                    const std::vector<Vector>& dh_out) const {
    const Eigen::Index H = config_.hidden;
    std::vector<Vector> dx(cache.size());
    Vector dh_next = Vector::Zero(H), dc_next = Vector::Zero(H);
    Vector da(4 * H);
    for (std::size_t k = cache.size(); k-- > 0;) {
      const StepCache& s = cache[k];
      const Vector dh = dh_out[k] + dh_next;
      const Vector d_o = dh.cwiseProduct(s.tanh_c);
      const Vector dc =
          dc_next + dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());
      const Vector di = dc.cwiseProduct(s.g);
      const Vector dg = dc.cwiseProduct(s.i);
      const Vector df = dc.cwiseProduct(s.c_prev);
      da.segment(0, H) = di.array() * s.i.array() * (1.0 - s.i.array());
      da.segment(H, H) = df.array() * s.f.array() * (1.0 - s.f.array());
      da.segment(2 * H, H) = dg.array() * (1.0 - s.g.array().square());
      da.segment(3 * H, H) = d_o.array() * s.o.array() * (1.0 - s.o.array());
      g.w_x.noalias() += da * s.x.transpose();
      g.w_h.noalias() += da * s.h_prev.transpose();
      g.b += da;
      dx[k] = p.w_x.transpose() * da;
      dh_next = p.w_h.transpose() * da;
      dc_next = dc.cwiseProduct(s.f);
    }
    return dx;
  }

  LossValue forward_backward(const Matrix& window, const Vector& noise, double* grad) const {
    check_window(window);
    if (noise.size() != config_.latent) fail(Errc::ShapeMismatch, "noise size mismatch");
    const Eigen::Index T = window.rows();
    const double* base = params_.data();

    std::vector<StepCache> enc_cache, dec_cache;
    const auto enc = enc_view(base);
    run_lstm(enc, window, enc_cache);
    const Vector& h_enc = enc_cache.back().h;
    const auto lat = latent_view(base);
    const Vector mu = lat.w_mu * h_enc + lat.b_mu;
    const Vector logvar = lat.w_logvar * h_enc + lat.b_logvar;
    const Vector std_dev = (0.5 * logvar.array()).exp();
    const Vector z = mu.array() + std_dev.array() * noise.array();

    const auto dec = dec_view(base);
    run_lstm(dec, z.transpose().replicate(T, 1), dec_cache);
    const auto out = out_view(base);

    LossValue lv;
    std::vector<Vector> dy(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
      const Vector y = out.w * dec_cache[static_cast<std::size_t>(t)].h + out.b;
      const Vector err = y - window.row(t).transpose();
      lv.recon += err.squaredNorm();
      dy[static_cast<std::size_t>(t)] = 2.0 * err;
    }
    lv.kl = -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum();
    // Each KL summand 1 + v - e^v <= 0, so the sum is non-negative up to
    // rounding; clamp the rounding away.
    lv.kl = std::max(lv.kl, 0.0);
    lv.total = lv.recon + lv.kl;
    if (!std::isfinite(lv.total)) fail(Errc::NonFinite, "loss overflowed");
    if (grad == nullptr) return lv;

    auto g_out = out_view(grad);
    std::vector<Vector> dh_dec(static_cast<std::size_t>(T));
    for (std::size_t t = 0; t < dy.size(); ++t) {
      g_out.w.noalias() += dy[t] * dec_cache[t].h.transpose();
      g_out.b += dy[t];
      dh_dec[t] = out.w.transpose() * dy[t];
    }
    const std::vector<Vector> dz_steps = backprop_lstm(dec, dec_view(grad), dec_cache, dh_dec);
    Vector dz = Vector::Zero(config_.latent);
    for (const auto& d : dz_steps) dz += d;

    const Vector dmu = dz + mu;
    const Vector dlogvar = (dz.array() * noise.array() * 0.5 * std_dev.array() +
                            0.5 * (logvar.array().exp() - 1.0))
                               .matrix();
    auto g_lat = latent_view(grad);
    g_lat.w_mu.noalias() += dmu * h_enc.transpose();
    g_lat.b_mu += dmu;
    g_lat.w_logvar.noalias() += dlogvar * h_enc.transpose();
    g_lat.b_logvar += dlogvar;

    std::vector<Vector> dh_enc(static_cast<std::size_t>(T), Vector::Zero(config_.hidden));
    dh_enc.back() = lat.w_mu.transpose() * dmu + lat.w_logvar.transpose() * dlogvar;
    backprop_lstm(enc, enc_view(grad), enc_cache, dh_enc);
    return lv;
  }

  void adam_step(const std::vector<double>& grad) {
    ++adam_t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      adam_m_[k] = b1 * adam_m_[k] + (1.0 - b1) * grad[k];
      adam_v_[k] = b2 * adam_v_[k] + (1.0 - b2) * grad[k] * grad[k];
      const double m_hat = adam_m_[k] / c1;
      const double v_hat = adam_v_[k] / c2;
      params_[k] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }

  void check_window(const Matrix& window) const {
    if (window.rows() != config_.timestep || window.cols() != config_.features)
      fail(Errc::ShapeMismatch, "window is " + std::to_string(window.rows()) + "x" +
                                    std::to_string(window.cols()) + ", scorer expects " +
                                    std::to_string(config_.timestep) + "x" +
                                    std::to_string(config_.features));
    if (!window.allFinite()) fail(Errc::NonFinite, "window contains non-finite values");
  }

  static std::string hex(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    return std::string(buf, r.ptr);
  }

  static double unhex(const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
      fail(Errc::SchemaMismatch, "bad hexfloat '" + s + "'");
    return v;
  }

  ScorerConfig config_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> params_;
  std::vector<double> adam_m_, adam_v_;
  std::uint64_t adam_t_ = 0;
};

}  // namespace adnad
