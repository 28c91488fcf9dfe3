#pragma once

// Small feed-forward multi-modal predictor with evidential outputs.
//
// features (2T) -> tanh(H) -> tanh(H) -> raw outputs (K*T'*2*4 + K)
//
// Raw layout: for mode k, step t, axis a the four values
// [gamma, nu, alpha, beta] start at ((k * T' + t) * 2 + a) * 4; the K raw
// evidences follow. Gradients flow in reverse mode: the loss graph on an
// ad::Tape gives d loss / d raw, the dense layers back-propagate that by
// their transposed Jacobians.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "evtraj/aggregate.hpp"
#include "evtraj/autodiff.hpp"
#include "evtraj/config.hpp"
#include "evtraj/errors.hpp"
#include "evtraj/evloss.hpp"
#include "evtraj/scene.hpp"
#include "evtraj/special.hpp"
#include "evtraj/synthgen.hpp"

namespace evtraj {

// ---------------------------------------------------------------------------
// Agent-centric frame

/// Rigid transform between world and agent-centric coordinates.
struct Frame {
  Vec2 origin;
  double cos_heading = 1.0;
  double sin_heading = 0.0;
  /// Metres per local unit.
  double scale = 1.0;

  Vec2 to_local(const Vec2& p) const {
    const double dx = p.x - origin.x, dy = p.y - origin.y;
    return {(cos_heading * dx + sin_heading * dy) / scale, (-sin_heading * dx + cos_heading * dy) / scale};
  }

  Vec2 to_world(const Vec2& p) const {
    const double x = p.x * scale, y = p.y * scale;
    return {origin.x + cos_heading * x - sin_heading * y, origin.y + sin_heading * x + cos_heading * y};
  }

  bool is_identity() const {
    return origin.x == 0.0 && origin.y == 0.0 && cos_heading == 1.0 && sin_heading == 0.0 && scale == 1.0;
  }
};

struct FrameOptions {
  /// Divide by the history's path length so motion at different speeds looks alike.
  bool scale_by_path_length = true;
  /// Floor on the path-length scale (m); keeps near-stationary agents finite.
  double min_scale = 1.0;
};

struct NormalizedInput {
  std::vector<double> features;
  Frame frame;
};

/// Translate the last observed point to the origin and rotate the final
/// history displacement onto +x. A zero final displacement keeps the world axes.
inline NormalizedInput normalize(const Trajectory& history, const FrameOptions& options = {}) {
  if (history.empty()) throw ShapeError("normalize: empty history");
  for (const auto& p : history)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("normalize: non-finite history point");
  NormalizedInput out;
  out.frame.origin = history.back();
  if (history.size() >= 2) {
    const Vec2& a = history[history.size() - 2];
    const Vec2& b = history.back();
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len = std::hypot(dx, dy);
    if (len > 0.0) {
      out.frame.cos_heading = dx / len;
      out.frame.sin_heading = dy / len;
    }
  }
  if (options.scale_by_path_length) {
    double path = 0.0;
    for (std::size_t i = 1; i < history.size(); ++i) path += distance(history[i - 1], history[i]);
    out.frame.scale = std::max(path, options.min_scale);
  }
  out.features.reserve(history.size() * 2);
  for (const auto& p : history) {
    const Vec2 q = out.frame.to_local(p);
    out.features.push_back(q.x);
    out.features.push_back(q.y);
  }
  return out;
}

inline NormalizedInput normalize(const TrajectoryRecord& record, const FrameOptions& options = {}) {
  return normalize(record.history, options);
}

// ---------------------------------------------------------------------------
// Model configuration and parameters

struct ModelConfig {
  std::size_t history_steps = 20;
  std::size_t horizon = 30;
  std::size_t modes = 6;
  std::size_t hidden = 64;
  FrameOptions frame;
  /// Features are divided by this (local units) and gamma is raw * position_scale.
  double position_scale = 1.0;
  /// Lower bound added to the positive maps for nu, alpha - 1 and beta.
  double min_positive = 1e-6;
  std::uint64_t init_seed = 0;

  std::size_t inputs() const { return 2 * history_steps; }
  std::size_t nig_outputs() const { return modes * horizon * 2 * 4; }
  std::size_t outputs() const { return nig_outputs() + modes; }

  void validate() const {
    if (history_steps < 2 || horizon < 1 || modes < 1 || hidden < 1) throw ConfigError("model dimensions must be positive");
    if (!(position_scale > 0.0)) throw ConfigError("position_scale must be > 0");
    if (!(min_positive > 0.0)) throw ConfigError("min_positive must be > 0");
    if (!(frame.min_scale > 0.0)) throw ConfigError("min_scale must be > 0");
  }

  static ModelConfig from(const KeyValueConfig& kv) {
    ModelConfig c;
    c.history_steps = kv.get_uint("history_steps", c.history_steps);
    c.horizon = kv.get_uint("future_steps", c.horizon);
    c.modes = kv.get_uint("modes", c.modes);
    c.hidden = kv.get_uint("hidden", c.hidden);
    c.position_scale = kv.get_double("position_scale", c.position_scale);
    c.frame.scale_by_path_length = kv.get_bool("scale_by_path_length", c.frame.scale_by_path_length);
    c.frame.min_scale = kv.get_double("min_scale", c.frame.min_scale);
    c.min_positive = kv.get_double("min_positive", c.min_positive);
    c.init_seed = kv.get_uint("init_seed", c.init_seed);
    c.validate();
    return c;
  }
};

/// All weights and biases in one flat vector; matrices are column-major views.
class ModelParams {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& config) : config_(config) {
    config_.validate();
    const auto in = static_cast<Eigen::Index>(config_.inputs());
    const auto h = static_cast<Eigen::Index>(config_.hidden);
    const auto out = static_cast<Eigen::Index>(config_.outputs());
    offsets_[0] = 0;
    offsets_[1] = offsets_[0] + h * in;  // b1
    offsets_[2] = offsets_[1] + h;       // w2
    offsets_[3] = offsets_[2] + h * h;   // b2
    offsets_[4] = offsets_[3] + h;       // w3
    offsets_[5] = offsets_[4] + out * h; // b3
    offsets_[6] = offsets_[5] + out;
    flat_ = Eigen::VectorXd::Zero(offsets_[6]);
  }

  const ModelConfig& config() const noexcept { return config_; }
  Eigen::Index size() const noexcept { return flat_.size(); }
  Eigen::VectorXd& flat() noexcept { return flat_; }
  const Eigen::VectorXd& flat() const noexcept { return flat_; }

  MatrixMap w1() { return mat(0, hid(), in()); }
  VectorMap b1() { return vec(1, hid()); }
  MatrixMap w2() { return mat(2, hid(), hid()); }
  VectorMap b2() { return vec(3, hid()); }
  MatrixMap w3() { return mat(4, out(), hid()); }
  VectorMap b3() { return vec(5, out()); }
  ConstMatrixMap w1() const { return cmat(0, hid(), in()); }
  ConstVectorMap b1() const { return cvec(1, hid()); }
  ConstMatrixMap w2() const { return cmat(2, hid(), hid()); }
  ConstVectorMap b2() const { return cvec(3, hid()); }
  ConstMatrixMap w3() const { return cmat(4, out(), hid()); }
  ConstVectorMap b3() const { return cvec(5, out()); }

  /// A zero vector with this layout, used for gradients and optimizer moments.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.flat_.setZero();
    return z;
  }

 private:
  Eigen::Index in() const { return static_cast<Eigen::Index>(config_.inputs()); }
  Eigen::Index hid() const { return static_cast<Eigen::Index>(config_.hidden); }
  Eigen::Index out() const { return static_cast<Eigen::Index>(config_.outputs()); }
  MatrixMap mat(int i, Eigen::Index r, Eigen::Index c) { return MatrixMap(flat_.data() + offsets_[i], r, c); }
  VectorMap vec(int i, Eigen::Index n) { return VectorMap(flat_.data() + offsets_[i], n); }
  ConstMatrixMap cmat(int i, Eigen::Index r, Eigen::Index c) const {
    return ConstMatrixMap(flat_.data() + offsets_[i], r, c);
  }
  ConstVectorMap cvec(int i, Eigen::Index n) const { return ConstVectorMap(flat_.data() + offsets_[i], n); }

  ModelConfig config_;
  Eigen::Index offsets_[7] = {};
  Eigen::VectorXd flat_;
};

inline double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; the output layer is
/// damped and its nu/alpha/beta biases start at nu = 1, alpha = 2, beta = 1.
inline ModelParams init_params(const ModelConfig& config) {
  ModelParams p(config);
  std::mt19937_64 rng(config.init_seed);
  auto fill = [&](auto&& m, double fan_in, double gain) {
    std::uniform_real_distribution<double> u(-gain / std::sqrt(fan_in), gain / std::sqrt(fan_in));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  };
  fill(p.w1(), static_cast<double>(config.inputs()), 1.0);
  fill(p.w2(), static_cast<double>(config.hidden), 1.0);
  fill(p.w3(), static_cast<double>(config.hidden), 0.1);
  auto b3 = p.b3();
  const double one = inverse_softplus(1.0);
  for (std::size_t i = 0; i < config.nig_outputs(); i += 4) {
    b3(static_cast<Eigen::Index>(i + 1)) = one;
    b3(static_cast<Eigen::Index>(i + 2)) = one;
    b3(static_cast<Eigen::Index>(i + 3)) = one;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Output decoding

inline std::size_t raw_index(const ModelConfig& c, std::size_t k, std::size_t t, Axis axis) {
  return ((k * c.horizon + t) * 2 + static_cast<std::size_t>(axis)) * 4;
}

inline std::size_t raw_evidence_index(const ModelConfig& c, std::size_t k) { return c.nig_outputs() + k; }

/// Maps raw network outputs to a valid prediction:
/// gamma = scale * raw, nu = softplus + eps, alpha = 1 + softplus + eps,
/// beta = softplus + eps, evidence alpha_k = 1 + softplus.
template <typename T>
BasicScenePrediction<T> decode(std::span<const T> raw, const ModelConfig& c) {
  using special::softplus;
  if (raw.size() != c.outputs())
    throw ShapeError("decode: expected " + std::to_string(c.outputs()) + " raw outputs, got " + std::to_string(raw.size()));
  BasicScenePrediction<T> pred(c.modes, c.horizon);
  for (std::size_t k = 0; k < c.modes; ++k) {
    for (std::size_t t = 0; t < c.horizon; ++t) {
      for (Axis axis : {Axis::kX, Axis::kY}) {
        const std::size_t i = raw_index(c, k, t, axis);
        auto& p = pred.at(k, t, axis);
        p.gamma = c.position_scale * raw[i];
        p.nu = softplus(raw[i + 1]) + c.min_positive;
        p.alpha = 1.0 + softplus(raw[i + 2]) + c.min_positive;
        p.beta = softplus(raw[i + 3]) + c.min_positive;
      }
    }
    pred.evidence().alphas[k] = 1.0 + softplus(raw[raw_evidence_index(c, k)]);
  }
  return pred;
}

// ---------------------------------------------------------------------------
// Network

struct ForwardCache {
  Eigen::MatrixXd input;
  Eigen::MatrixXd hidden1;
  Eigen::MatrixXd hidden2;
  Eigen::MatrixXd output;
};

/// Batched forward pass; columns of `input` are feature vectors already divided by position_scale.
inline ForwardCache forward_batch(const ModelParams& p, const Eigen::MatrixXd& input) {
  if (input.rows() != static_cast<Eigen::Index>(p.config().inputs())) throw ShapeError("forward: feature size mismatch");
  ForwardCache c;
  c.input = input;
  c.hidden1 = ((p.w1() * input).colwise() + p.b1()).array().tanh().matrix();
  c.hidden2 = ((p.w2() * c.hidden1).colwise() + p.b2()).array().tanh().matrix();
  c.output = (p.w3() * c.hidden2).colwise() + p.b3();
  return c;
}

/// Accumulates d loss / d params given d loss / d raw outputs (one column per sample).
inline void backward_batch(const ModelParams& p, const ForwardCache& c, const Eigen::MatrixXd& d_output,
                           ModelParams& grad) {
  grad.w3().noalias() += d_output * c.hidden2.transpose();
  grad.b3() += d_output.rowwise().sum();
  Eigen::MatrixXd d_h2 = p.w3().transpose() * d_output;
  d_h2.array() *= 1.0 - c.hidden2.array().square();
  grad.w2().noalias() += d_h2 * c.hidden1.transpose();
  grad.b2() += d_h2.rowwise().sum();
  Eigen::MatrixXd d_h1 = p.w2().transpose() * d_h2;
  d_h1.array() *= 1.0 - c.hidden1.array().square();
  grad.w1().noalias() += d_h1 * c.input.transpose();
  grad.b1() += d_h1.rowwise().sum();
}

inline Eigen::VectorXd scaled_features(const NormalizedInput& in, const ModelConfig& c) {
  if (in.features.size() != c.inputs())
    throw ShapeError("history has " + std::to_string(in.features.size() / 2) + " steps, model expects " +
                     std::to_string(c.history_steps));
  Eigen::VectorXd x(static_cast<Eigen::Index>(in.features.size()));
  for (std::size_t i = 0; i < in.features.size(); ++i) x(static_cast<Eigen::Index>(i)) = in.features[i] / c.position_scale;
  return x;
}

/// Single-sample forward pass in the agent-centric frame.
inline ScenePrediction forward(const ModelParams& params, const NormalizedInput& in) {
  const Eigen::VectorXd x = scaled_features(in, params.config());
  const ForwardCache cache = forward_batch(params, x);
  const Eigen::VectorXd raw = cache.output.col(0);
  return decode<double>(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())), params.config());
}

// ---------------------------------------------------------------------------
// Loss gradients

/// total_loss and its gradient with respect to one sample's raw outputs.
/// Only the winner mode's NIG outputs and the evidences get nonzero adjoints;
/// the other modes enter the graph as constants.
inline double raw_loss_gradient(std::span<const double> raw, const Trajectory& gt, const ModelConfig& c,
                                const LossOptions& options, std::span<double> d_raw, ad::Tape& tape,
                                LossBreakdown* breakdown = nullptr) {
  const ScenePrediction plain = decode<double>(raw, c);
  const std::size_t winner = winner_mode(plain, gt);

  tape.clear();
  std::vector<ad::Var> vars(raw.size());
  std::vector<std::uint32_t> var_of(raw.size(), ad::Tape::kNone);
  auto make_var = [&](std::size_t i) {
    vars[i] = tape.variable(raw[i]);
    var_of[i] = vars[i].index();
  };
  for (std::size_t i = 0; i < raw.size(); ++i) vars[i] = ad::Var(raw[i]);
  for (std::size_t t = 0; t < c.horizon; ++t)
    for (Axis axis : {Axis::kX, Axis::kY}) {
      const std::size_t base = raw_index(c, winner, t, axis);
      for (std::size_t j = 0; j < 4; ++j) make_var(base + j);
    }
  for (std::size_t k = 0; k < c.modes; ++k) make_var(raw_evidence_index(c, k));

  const auto pred = decode<ad::Var>(std::span<const ad::Var>(vars), c);
  const auto loss = total_loss(pred, gt, options);
  if (loss.winner != winner) throw std::logic_error("winner mode changed between passes");
  const auto adjoint = tape.gradient(loss.total);
  for (std::size_t i = 0; i < raw.size(); ++i) d_raw[i] = var_of[i] == ad::Tape::kNone ? 0.0 : adjoint[var_of[i]];

  if (breakdown) {
    breakdown->nll_reg = loss.nll_reg.value();
    breakdown->r_reg = loss.r_reg.value();
    breakdown->kl_reg = loss.kl_reg.value();
    breakdown->squared_cls = loss.squared_cls.value();
    breakdown->kl_cls = loss.kl_cls.value();
    breakdown->total = loss.total.value();
    breakdown->winner = loss.winner;
  }
  return loss.total.value();
}

/// A training example in the agent-centric frame.
struct Sample {
  Eigen::VectorXd features;  ///< scaled by 1 / position_scale
  Trajectory future;         ///< local frame
};

inline Sample make_sample(const TrajectoryRecord& r, const ModelConfig& c) {
  const NormalizedInput in = normalize(r, c.frame);
  Sample s{scaled_features(in, c), {}};
  s.future.reserve(r.future.size());
  for (const auto& p : r.future) s.future.push_back(in.frame.to_local(p));
  if (s.future.size() != c.horizon)
    throw ShapeError("record " + r.scene_id + " has " + std::to_string(s.future.size()) + " future steps, model expects " +
                     std::to_string(c.horizon));
  return s;
}

inline std::vector<Sample> make_samples(std::span<const TrajectoryRecord> records, const ModelConfig& c) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(make_sample(r, c));
  return out;
}

/// Mean total loss over the selected samples and its gradient w.r.t. every parameter.
inline double loss_and_gradient(const ModelParams& params, std::span<const Sample> samples,
                                std::span<const std::size_t> batch, const LossOptions& options, ModelParams& grad) {
  const ModelConfig& c = params.config();
  const auto b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(c.inputs()), b);
  for (Eigen::Index j = 0; j < b; ++j) x.col(j) = samples[batch[static_cast<std::size_t>(j)]].features;
  const ForwardCache cache = forward_batch(params, x);

  Eigen::MatrixXd d_out(cache.output.rows(), b);
  ad::Tape tape;
  tape.reserve(8192);
  double total = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const double* raw = cache.output.col(j).data();
    double* d = d_out.col(j).data();
    total += raw_loss_gradient(std::span<const double>(raw, c.outputs()), samples[batch[static_cast<std::size_t>(j)]].future,
                               c, options, std::span<double>(d, c.outputs()), tape);
  }
  d_out /= static_cast<double>(b);
  grad.flat().setZero();
  backward_batch(params, cache, d_out, grad);
  return total / static_cast<double>(b);
}

/// Mean total loss without gradients.
inline double mean_loss(const ModelParams& params, std::span<const Sample> samples, const LossOptions& options) {
  if (samples.empty()) return 0.0;
  const ModelConfig& c = params.config();
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - start);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(c.inputs()), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) x.col(static_cast<Eigen::Index>(j)) = samples[start + j].features;
    const ForwardCache cache = forward_batch(params, x);
    for (std::size_t j = 0; j < n; ++j) {
      const double* raw = cache.output.col(static_cast<Eigen::Index>(j)).data();
      const auto pred = decode<double>(std::span<const double>(raw, c.outputs()), c);
      total += total_loss(pred, samples[start + j].future, options).total;
    }
  }
  return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  /// Cosine decay of the step size to learning_rate * final_lr_fraction over
  /// `epochs`; 1 keeps it constant.
  double final_lr_fraction = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 10.0;
  std::size_t patience = 10;
  double min_delta = 1e-3;
  /// lambda3 rises linearly from 0 to its configured value over this many epochs.
  std::size_t anneal_epochs = 10;
  /// Epoch index the schedule starts from (non-zero when resuming from a checkpoint).
  std::size_t start_epoch = 0;
  std::uint64_t seed = 0;
  LossOptions loss;

  double learning_rate_at(std::size_t epoch) const {
    if (final_lr_fraction == 1.0 || epochs <= 1) return learning_rate;
    const double progress = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    const double floor = learning_rate * final_lr_fraction;
    return floor + 0.5 * (learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * progress));
  }

  /// Weights in effect during the given (absolute) epoch.
  LossWeights weights_at(std::size_t epoch) const {
    LossWeights w = loss.weights;
    if (anneal_epochs > 0 && epoch < anneal_epochs)
      w.lambda3 *= static_cast<double>(epoch) / static_cast<double>(anneal_epochs);
    return w;
  }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be >= 0");
    if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) throw ConfigError("final_lr_fraction must lie in (0, 1]");
    loss.weights.validate();
  }

  static TrainConfig from(const KeyValueConfig& kv) {
    TrainConfig c;
    c.epochs = kv.get_uint("epochs", c.epochs);
    c.batch_size = kv.get_uint("batch_size", c.batch_size);
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.final_lr_fraction = kv.get_double("final_lr_fraction", c.final_lr_fraction);
    c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
    c.patience = kv.get_uint("patience", c.patience);
    c.min_delta = kv.get_double("min_delta", c.min_delta);
    c.anneal_epochs = kv.get_uint("anneal_epochs", c.anneal_epochs);
    c.seed = kv.get_uint("seed", c.seed);
    auto& w = c.loss.weights;
    w.lambda1 = kv.get_double("lambda1", w.lambda1);
    w.lambda2 = kv.get_double("lambda2", w.lambda2);
    w.lambda3 = kv.get_double("lambda3", w.lambda3);
    w.lambda4 = kv.get_double("lambda4", w.lambda4);
    const std::string mult = kv.get_string("evidence_multiplier", "two_nu_plus_alpha");
    if (mult == "two_nu_plus_alpha") c.loss.multiplier = EvidenceMultiplier::kTwoNuPlusAlpha;
    else if (mult == "omega") c.loss.multiplier = EvidenceMultiplier::kOmega;
    else throw ConfigError("evidence_multiplier must be two_nu_plus_alpha or omega");
    c.loss.reg_prior.nu0 = kv.get_double("kl_prior_nu", c.loss.reg_prior.nu0);
    c.loss.reg_prior.alpha0 = kv.get_double("kl_prior_alpha", c.loss.reg_prior.alpha0);
    c.validate();
    return c;
  }
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

class Adam {
 public:
  Adam(const ModelParams& like, const TrainConfig& c)
      : m_(Eigen::VectorXd::Zero(like.size())), v_(Eigen::VectorXd::Zero(like.size())), config_(c) {}

  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  void step(ModelParams& params, const ModelParams& grad) {
    ++t_;
    const auto& g = grad.flat();
    m_ = config_.adam_beta1 * m_ + (1.0 - config_.adam_beta1) * g;
    v_ = config_.adam_beta2 * v_ + (1.0 - config_.adam_beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(t_));
    params.flat().array() -=
        config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.adam_epsilon);
  }

 private:
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  TrainConfig config_;
  std::uint64_t t_ = 0;
};

/// Minibatch Adam on the evidential loss with early stopping on validation
/// loss (evaluated with the fully annealed weights). Returns the best-validation
/// parameters; without validation samples the training loss is monitored.
inline TrainResult train(const ModelParams& initial, std::span<const Sample> train_set, std::span<const Sample> val_set,
                         const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  TrainResult result{initial, {}, 0, false};
  if (config.epochs == 0) return result;

  ModelParams params = initial;
  ModelParams grad = params.zeros_like();
  Adam adam(params, config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  LossOptions monitor = config.loss;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t e = 0; e < config.epochs; ++e) {
    LossOptions opts = config.loss;
    opts.weights = config.weights_at(config.start_epoch + e);
    adam.set_learning_rate(config.learning_rate_at(e));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const std::string where =
          "epoch " + std::to_string(config.start_epoch + e) + ", batch " + std::to_string(batches);
      double loss = 0.0;
      try {
        loss = loss_and_gradient(params, train_set, std::span<const std::size_t>(order).subspan(start, n), opts, grad);
      } catch (const DomainError& err) {
        throw NumericError("invalid network output in " + where + ": " + err.what());
      }
      if (!std::isfinite(loss) || !grad.flat().allFinite())
        throw NumericError("non-finite loss or gradient in " + where);
      if (config.clip_norm > 0.0) {
        const double norm = grad.flat().norm();
        if (norm > config.clip_norm) grad.flat() *= config.clip_norm / norm;
      }
      adam.step(params, grad);
      sum += loss;
      ++batches;
    }
    EpochRecord rec;
    rec.train_loss = sum / static_cast<double>(batches);
    rec.val_loss = val_set.empty() ? mean_loss(params, train_set, monitor) : mean_loss(params, val_set, monitor);
    if (!std::isfinite(rec.val_loss))
      throw NumericError("non-finite validation loss in epoch " + std::to_string(config.start_epoch + e));
    result.history.push_back(rec);

    if (rec.val_loss < best - config.min_delta || e == 0) {
      best = std::min(best, rec.val_loss);
      result.params = params;
      result.best_epoch = e;
      since_best = 0;
    } else if (++since_best >= config.patience && config.patience > 0) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  /// gamma mapped to world coordinates; nu, alpha, beta as predicted.
  ScenePrediction world;
  /// Computed in the agent-centric frame, so in squared local units.
  UncertaintyReport report;
  Frame frame;
};

/// Parameters plus a forward-pass counter. Concurrent predict() calls are safe.
class Model {
 public:
  explicit Model(ModelParams params) : params_(std::move(params)) {}
  Model(const Model& other) : params_(other.params_) {}

  const ModelParams& params() const noexcept { return params_; }
  const ModelConfig& config() const noexcept { return params_.config(); }

  ScenePrediction forward(const NormalizedInput& in) const {
    forward_passes_.fetch_add(1, std::memory_order_relaxed);
    return evtraj::forward(params_, in);
  }

  Prediction predict(const Trajectory& history,
                     UncertaintyComponent component = UncertaintyComponent::kTotal) const {
    const NormalizedInput in = normalize(history, config().frame);
    Prediction out{forward(in), {}, in.frame};
    out.report = build_report(out.world, component);
    for (std::size_t k = 0; k < out.world.modes(); ++k)
      for (std::size_t t = 0; t < out.world.horizon(); ++t) {
        const Vec2 w = in.frame.to_world(out.world.mean(k, t));
        out.world.at(k, t, Axis::kX).gamma = w.x;
        out.world.at(k, t, Axis::kY).gamma = w.y;
      }
    return out;
  }

  Prediction predict(const TrajectoryRecord& record,
                     UncertaintyComponent component = UncertaintyComponent::kTotal) const {
    return predict(record.history, component);
  }

  std::uint64_t forward_passes() const noexcept { return forward_passes_.load(std::memory_order_relaxed); }

 private:
  ModelParams params_;
  mutable std::atomic<std::uint64_t> forward_passes_{0};
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "evtraj-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_json(const ModelParams& p) {
  const ModelConfig& c = p.config();
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = {{"history_steps", c.history_steps}, {"horizon", c.horizon},         {"modes", c.modes},
                 {"hidden", c.hidden},               {"position_scale", c.position_scale},
                 {"min_positive", c.min_positive},   {"init_seed", c.init_seed},
                 {"scale_by_path_length", c.frame.scale_by_path_length},
                 {"min_scale", c.frame.min_scale}};
  j["params"] = std::vector<double>(p.flat().data(), p.flat().data() + p.flat().size());
  return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw DataError("not an evtraj checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    const auto& jc = j.at("config");
    ModelConfig c;
    c.history_steps = jc.at("history_steps").get<std::size_t>();
    c.horizon = jc.at("horizon").get<std::size_t>();
    c.modes = jc.at("modes").get<std::size_t>();
    c.hidden = jc.at("hidden").get<std::size_t>();
    c.position_scale = jc.at("position_scale").get<double>();
    c.min_positive = jc.at("min_positive").get<double>();
    c.init_seed = jc.at("init_seed").get<std::uint64_t>();
    c.frame.scale_by_path_length = jc.at("scale_by_path_length").get<bool>();
    c.frame.min_scale = jc.at("min_scale").get<double>();
    ModelParams p(c);
    const auto values = j.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != p.size())
      throw DataError("checkpoint holds " + std::to_string(values.size()) + " parameters, config needs " +
                      std::to_string(p.size()));
    for (std::size_t i = 0; i < values.size(); ++i) p.flat()(static_cast<Eigen::Index>(i)) = values[i];
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << checkpoint_json(p).dump() << '\n';
  if (!out) throw DataError("write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
  return params_from_json(j);
}

}  // namespace evtraj
