#pragma once

#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pfd/schedules.hpp"
#include "pfd/score_field.hpp"

namespace pfd {

/// Dense MLP noise predictor eps_phi(x, t). Input is (x, t/T), output has the
/// data dimension; hidden layers use tanh, the output layer is linear.
/// Reverse-mode gradients are computed in-module.
class ScoreNetwork {
 public:
  ScoreNetwork(int data_dim, std::vector<int> hidden, std::mt19937_64& rng)
      : data_dim_(data_dim) {
    std::vector<int> widths;
    widths.push_back(data_dim + 1);
    for (int h : hidden) {
      if (h < 1) throw std::invalid_argument("ScoreNetwork: layer width must be positive");
      widths.push_back(h);
    }
    widths.push_back(data_dim);
    init(widths, rng);
  }

  ScoreNetwork() = default;

  int data_dim() const { return data_dim_; }
  std::size_t layer_count() const { return W_.size(); }
  std::vector<Eigen::MatrixXd>& weights() { return W_; }
  std::vector<Eigen::VectorXd>& biases() { return b_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return W_; }
  const std::vector<Eigen::VectorXd>& biases() const { return b_; }

  /// Columns of `input` are (x, t/T) vectors.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const {
    Eigen::MatrixXd a = input;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      a = (W_[l] * a).colwise() + b_[l];
      if (l + 1 < W_.size()) a = a.array().tanh();
    }
    return a;
  }

  Eigen::VectorXd predict(const Eigen::VectorXd& x, double t, double terminal) const {
    Eigen::VectorXd in(x.size() + 1);
    in << x, t / terminal;
    return forward(in);
  }

  struct Gradients {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
  };

  /// Mean-squared-error loss over the batch and its reverse-mode gradient.
  double loss_and_gradients(const Eigen::MatrixXd& input, const Eigen::MatrixXd& target,
                            Gradients& grads) const {
    const auto L = W_.size();
    std::vector<Eigen::MatrixXd> acts(L + 1);
    acts[0] = input;
    for (std::size_t l = 0; l < L; ++l) {
      acts[l + 1] = (W_[l] * acts[l]).colwise() + b_[l];
      if (l + 1 < L) acts[l + 1] = acts[l + 1].array().tanh();
    }
    const auto batch = static_cast<double>(input.cols());
    const Eigen::MatrixXd resid = acts[L] - target;
    const double loss = resid.squaredNorm() / batch;

    grads.dW.resize(L);
    grads.db.resize(L);
    Eigen::MatrixXd delta = (2.0 / batch) * resid;
    for (std::size_t l = L; l-- > 0;) {
      grads.dW[l].noalias() = delta * acts[l].transpose();
      grads.db[l] = delta.rowwise().sum();
      if (l > 0) {
        delta = (W_[l].transpose() * delta).array() * (1.0 - acts[l].array().square());
      }
    }
    return loss;
  }

  void save(const std::string& path) const {
    static_assert(std::endian::native == std::endian::little, "blob format is little-endian");
    nlohmann::json header;
    header["data_dim"] = data_dim_;
    header["activation"] = "tanh";
    std::vector<int> widths{data_dim_ + 1};
    for (const auto& w : W_) widths.push_back(static_cast<int>(w.rows()));
    header["widths"] = widths;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ScoreNetwork::save: cannot open " + path);
    out << header.dump() << "\n";
    for (std::size_t l = 0; l < W_.size(); ++l) {
      out.write(reinterpret_cast<const char*>(W_[l].data()),
                static_cast<std::streamsize>(sizeof(double) * W_[l].size()));
      out.write(reinterpret_cast<const char*>(b_[l].data()),
                static_cast<std::streamsize>(sizeof(double) * b_[l].size()));
    }
  }

  static ScoreNetwork load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ScoreNetwork::load: cannot open " + path);
    std::string line;
    std::getline(in, line);
    const auto header = nlohmann::json::parse(line);
    if (header.at("activation").get<std::string>() != "tanh")
      throw std::runtime_error("ScoreNetwork::load: unknown activation id");
    const auto widths = header.at("widths").get<std::vector<int>>();
    ScoreNetwork net;
    net.data_dim_ = header.at("data_dim").get<int>();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Eigen::MatrixXd w(widths[l + 1], widths[l]);
      Eigen::VectorXd b(widths[l + 1]);
      in.read(reinterpret_cast<char*>(w.data()),
              static_cast<std::streamsize>(sizeof(double) * w.size()));
      in.read(reinterpret_cast<char*>(b.data()),
              static_cast<std::streamsize>(sizeof(double) * b.size()));
      net.W_.push_back(std::move(w));
      net.b_.push_back(std::move(b));
    }
    if (!in) throw std::runtime_error("ScoreNetwork::load: truncated blob");
    return net;
  }

 private:
  void init(const std::vector<int>& widths, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const double scale = std::sqrt(2.0 / (widths[l] + widths[l + 1]));
      Eigen::MatrixXd w(widths[l + 1], widths[l]);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * n(rng);
      W_.push_back(std::move(w));
      b_.push_back(Eigen::VectorXd::Zero(widths[l + 1]));
    }
  }

  int data_dim_ = 0;
  std::vector<Eigen::MatrixXd> W_;
  std::vector<Eigen::VectorXd> b_;
};

struct DsmOptions {
  int steps = 5000;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  int batch_size = 128;
};

/// Denoising score matching: `steps` SGD-with-momentum updates of
/// E[||eps - eps_phi(x_t, t)||^2] with minibatches of the provided samples,
/// t ~ U(t_min, t_max) per sample and eps ~ N(0, I). Mutates `net` (warm
/// starts are intentional); returns the per-step loss trajectory.
inline std::vector<double> train_dsm(ScoreNetwork& net, const Eigen::MatrixXd& samples,
                                     const NoiseSchedule& schedule, const DsmOptions& opts,
                                     std::mt19937_64& rng) {
  if (samples.cols() == 0) throw std::invalid_argument("train_dsm: empty sample set");
  if (samples.rows() != net.data_dim())
    throw std::invalid_argument("train_dsm: sample dimension does not match network");
  const int d = net.data_dim();
  const int batch = static_cast<int>(std::min<Eigen::Index>(opts.batch_size, samples.cols()));
  std::uniform_int_distribution<Eigen::Index> pick(0, samples.cols() - 1);
  std::uniform_real_distribution<double> tdist(schedule.t_min(), schedule.t_max());
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Eigen::MatrixXd> vW;
  std::vector<Eigen::VectorXd> vb;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    vW.push_back(Eigen::MatrixXd::Zero(net.weights()[l].rows(), net.weights()[l].cols()));
    vb.push_back(Eigen::VectorXd::Zero(net.biases()[l].size()));
  }

  std::vector<double> losses;
  losses.reserve(opts.steps);
  Eigen::MatrixXd input(d + 1, batch), target(d, batch);
  ScoreNetwork::Gradients grads;
  for (int step = 0; step < opts.steps; ++step) {
    for (int i = 0; i < batch; ++i) {
      const Eigen::VectorXd x0 = samples.col(pick(rng));
      const double t = tdist(rng);
      Eigen::VectorXd eps(d);
      for (int j = 0; j < d; ++j) eps[j] = gauss(rng);
      input.col(i).head(d) = schedule.perturb(x0, t, eps);
      input(d, i) = t / schedule.terminal_time();
      target.col(i) = eps;
    }
    const double loss = net.loss_and_gradients(input, target, grads);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_dsm: NaN loss at step " + std::to_string(step) +
                               " (lr=" + std::to_string(opts.learning_rate) + ")");
    losses.push_back(loss);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      vW[l] = opts.momentum * vW[l] - opts.learning_rate * grads.dW[l];
      vb[l] = opts.momentum * vb[l] - opts.learning_rate * grads.db[l];
      net.weights()[l] += vW[l];
      net.biases()[l] += vb[l];
    }
  }
  return losses;
}

/// Learned field: eps is native, score is the derived view. Times below the
/// schedule's sampling floor clamp to t_min (the network never saw them).
class NetworkScoreField final : public ScoreField {
 public:
  NetworkScoreField(const NoiseSchedule& schedule, const ScoreNetwork& net)
      : ScoreField(schedule), net_(&net) {}

  int dim() const override { return net_->data_dim(); }

  Eigen::VectorXd eps(const Eigen::VectorXd& x, double t) const override {
    return net_->predict(x, clamp(t), schedule().terminal_time());
  }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    const double tc = clamp(t);
    return net_->predict(x, tc, schedule().terminal_time()) / -eps_scale(schedule(), tc);
  }

 private:
  double clamp(double t) const { return std::max(t, schedule().t_min()); }
  const ScoreNetwork* net_;
};

}  // namespace pfd
