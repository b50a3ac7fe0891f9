#pragma once

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <vector>

#include "compliant/errors.hpp"

namespace compliant {

/// Affine layer y = w x + b, followed by ReLU unless it is the output layer.
template <typename Scalar>
struct DenseLayer {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> w;  // out x in
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> b;
  bool relu = true;
};

/// Multilayer perceptron acting on columns (one sample per column).
template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<DenseLayer<Scalar>> layers;

  /// Layer sizes [in, hidden..., out]; ReLU on hidden layers, linear output.
  /// He-uniform weights, zero biases.
  static Mlp random(const std::vector<int>& sizes, std::mt19937_64& rng) {
    if (sizes.size() < 2) throw InvalidArgument("mlp: need at least input and output sizes");
    Mlp net;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (sizes[l] < 1 || sizes[l + 1] < 1) throw InvalidArgument("mlp: layer sizes must be >= 1");
      DenseLayer<Scalar> layer;
      const double bound = std::sqrt(6.0 / sizes[l]);
      std::uniform_real_distribution<double> dist(-bound, bound);
      layer.w.resize(sizes[l + 1], sizes[l]);
      for (Eigen::Index j = 0; j < layer.w.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.w.rows(); ++i) layer.w(i, j) = Scalar(dist(rng));
      layer.b = Vector::Zero(sizes[l + 1]);
      layer.relu = l + 2 < sizes.size();
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

  Eigen::Index input_size() const { return layers.front().w.cols(); }
  Eigen::Index output_size() const { return layers.back().w.rows(); }

  std::vector<int> sizes() const {
    std::vector<int> out{int(input_size())};
    for (const auto& l : layers) out.push_back(int(l.w.rows()));
    return out;
  }

  Eigen::Index num_weights() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.w.size();
    return n;
  }

  Eigen::Index num_parameters() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }

  Matrix forward(const Matrix& x) const {
    if (x.rows() != input_size())
      throw InvalidArgument("mlp: input has " + std::to_string(x.rows()) + " rows, expected " +
                            std::to_string(input_size()));
    Matrix a = x;
    for (const auto& l : layers) {
      Matrix z = l.w * a;
      z.colwise() += l.b;
      a = l.relu ? Matrix(z.cwiseMax(Scalar(0))) : z;
    }
    return a;
  }

  /// Mean squared error over all output elements, and its gradient with
  /// respect to every weight and bias when `grad` is given.
  Scalar loss(const Matrix& x, const Matrix& y, std::vector<DenseLayer<Scalar>>* grad = nullptr) const {
    if (y.rows() != output_size() || y.cols() != x.cols())
      throw InvalidArgument("mlp: target shape mismatch");
    std::vector<Matrix> acts{x};
    std::vector<Matrix> pre;
    for (const auto& l : layers) {
      Matrix z = l.w * acts.back();
      z.colwise() += l.b;
      pre.push_back(z);
      acts.push_back(l.relu ? Matrix(z.cwiseMax(Scalar(0))) : z);
    }
    const Matrix diff = acts.back() - y;
    const Scalar count = Scalar(diff.size());
    const Scalar value = diff.squaredNorm() / count;
    if (!grad) return value;

    grad->resize(layers.size());
    Matrix delta = Scalar(2) / count * diff;
    for (std::size_t k = layers.size(); k-- > 0;) {
      if (layers[k].relu) delta = delta.cwiseProduct((pre[k].array() > Scalar(0)).template cast<Scalar>().matrix());
      (*grad)[k].w = delta * acts[k].transpose();
      (*grad)[k].b = delta.rowwise().sum();
      (*grad)[k].relu = layers[k].relu;
      if (k > 0) delta = layers[k].w.transpose() * delta;
    }
    return value;
  }
};

/// Adam optimizer state for an Mlp.
template <typename Scalar>
class Adam {
 public:
  Scalar rate = Scalar(1e-3), beta1 = Scalar(0.9), beta2 = Scalar(0.999), eps = Scalar(1e-8);

  explicit Adam(const Mlp<Scalar>& net) {
    for (const auto& l : net.layers) {
      DenseLayer<Scalar> z{decltype(l.w)::Zero(l.w.rows(), l.w.cols()), decltype(l.b)::Zero(l.b.size()), l.relu};
      m_.push_back(z);
      v_.push_back(z);
    }
  }

  void step(Mlp<Scalar>& net, const std::vector<DenseLayer<Scalar>>& grad) {
    ++t_;
    const Scalar c1 = 1 - std::pow(beta1, Scalar(t_));
    const Scalar c2 = 1 - std::pow(beta2, Scalar(t_));
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      update(net.layers[k].w, m_[k].w, v_[k].w, grad[k].w, c1, c2);
      update(net.layers[k].b, m_[k].b, v_[k].b, grad[k].b, c1, c2);
    }
  }

 private:
  template <typename M>
  void update(M& param, M& m, M& v, const M& g, Scalar c1, Scalar c2) {
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g.cwiseProduct(g);
    param.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  std::vector<DenseLayer<Scalar>> m_, v_;
  long t_ = 0;
};

/// Per-element standardization; deviations below 1e-12 are replaced by 1.
struct Standardizer {
  Eigen::VectorXd mean, std;

  static Standardizer fit(const Eigen::MatrixXd& cols) {
    if (cols.cols() < 2) throw InvalidArgument("standardize: need at least 2 samples");
    Standardizer s;
    s.mean = cols.rowwise().mean();
    const Eigen::MatrixXd c = cols.colwise() - s.mean;
    s.std = (c.rowwise().squaredNorm() / double(cols.cols())).cwiseSqrt();
    for (Eigen::Index i = 0; i < s.std.size(); ++i)
      if (!(s.std[i] >= 1e-12)) s.std[i] = 1.0;
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& cols) const {
    return (cols.colwise() - mean).array().colwise() / std.array();
  }
  Eigen::MatrixXd invert(const Eigen::MatrixXd& cols) const {
    return (cols.array().colwise() * std.array()).matrix().colwise() + mean;
  }
};

}  // namespace compliant
