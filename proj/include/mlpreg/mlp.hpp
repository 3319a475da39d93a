#pragma once

// Multilayer perceptron F_W : R^q -> R^d with tanh hidden layers and an affine
// output layer, plus exact first and second derivatives in the weights.
//
// Weight layout (fixed; every consumer addresses parameters by flat index k):
// layers are stored in order input -> output. Layer l with fan_in inputs and
// fan_out units occupies a contiguous block holding first its fan_out x fan_in
// weight matrix in row-major order, then its fan_out biases.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlpreg/dual.hpp"
#include "mlpreg/errors.hpp"
#include "mlpreg/rng.hpp"
#include "mlpreg/spd.hpp"

namespace mlpreg {

enum class Activation { Tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh:
      return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  throw InvalidArgument("unknown activation '" + s + "' (only tanh is supported)");
}

struct Architecture {
  int input_dim = 1;
  std::vector<int> hidden_dims;
  int output_dim = 1;
  Activation activation = Activation::Tanh;

  Architecture() = default;
  Architecture(int q, std::vector<int> hidden, int d)
      : input_dim(q), hidden_dims(std::move(hidden)), output_dim(d) {
    validate();
  }

  void validate() const {
    if (input_dim < 1 || output_dim < 1)
      throw InvalidArgument("Architecture: input and output dims must be >= 1");
    for (int h : hidden_dims)
      if (h < 1) throw InvalidArgument("Architecture: hidden layer widths must be >= 1");
  }

  int layer_count() const { return static_cast<int>(hidden_dims.size()) + 1; }
  int fan_in(int layer) const { return layer == 0 ? input_dim : hidden_dims[layer - 1]; }
  int fan_out(int layer) const {
    return layer == layer_count() - 1 ? output_dim : hidden_dims[layer];
  }
  int layer_size(int layer) const { return (fan_in(layer) + 1) * fan_out(layer); }

  /// Flat index of the first parameter of `layer`.
  int layer_offset(int layer) const {
    int off = 0;
    for (int l = 0; l < layer; ++l) off += layer_size(l);
    return off;
  }
  int weight_index(int layer, int unit, int input) const {
    return layer_offset(layer) + unit * fan_in(layer) + input;
  }
  int bias_index(int layer, int unit) const {
    return layer_offset(layer) + fan_out(layer) * fan_in(layer) + unit;
  }

  int param_count() const { return layer_offset(layer_count()); }

  bool in_output_layer(int k) const { return k >= layer_offset(layer_count() - 1); }
  bool is_output_bias(int k) const {
    return k >= bias_index(layer_count() - 1, 0) && k < param_count();
  }

  bool operator==(const Architecture&) const = default;
};

/// Flat weight vector tied to its architecture.
struct ParamVector {
  Architecture arch;
  Vector values;

  ParamVector() = default;
  explicit ParamVector(Architecture a) : arch(std::move(a)), values(Vector::Zero(arch.param_count())) {}
  ParamVector(Architecture a, Vector v) : arch(std::move(a)), values(std::move(v)) {
    detail::require_dims(values.size() == arch.param_count(),
                         "ParamVector: got " + std::to_string(values.size()) +
                             " values, architecture needs " +
                             std::to_string(arch.param_count()));
  }

  Eigen::Index size() const { return values.size(); }
  double& operator[](Eigen::Index k) { return values[k]; }
  double operator[](Eigen::Index k) const { return values[k]; }
};

namespace detail {

/// Per-sample activations kept between the forward and backward passes.
template <class T>
struct Tape {
  std::vector<std::vector<T>> act;  // act[0] = input, act[l] = output of hidden layer l
  std::vector<T> out;
  std::vector<T> delta, delta_prev;
};

template <class T>
void forward_tape(const Architecture& a, std::span<const T> w, std::span<const double> z,
                  Tape<T>& tape) {
  const int layers = a.layer_count();
  tape.act.resize(layers);
  tape.act[0].assign(z.begin(), z.end());
  for (int l = 0; l < layers; ++l) {
    const int fi = a.fan_in(l), fo = a.fan_out(l);
    const std::vector<T>& in = tape.act[l];
    std::vector<T>& dst = (l == layers - 1) ? tape.out : tape.act[l + 1];
    dst.assign(fo, T(0.0));
    const int wo = a.layer_offset(l), bo = wo + fo * fi;
    for (int i = 0; i < fo; ++i) {
      T s = w[bo + i];
      for (int j = 0; j < fi; ++j) s += w[wo + i * fi + j] * in[j];
      if (l == layers - 1) {
        dst[i] = s;
      } else {
        using std::tanh;
        dst[i] = tanh(s);
      }
    }
  }
}

/// grad_k = sum_j v_j dF_j/dW_k, reusing a filled tape.
template <class T, class V>
void vjp_tape(const Architecture& a, std::span<const T> w, Tape<T>& tape, std::span<const V> v,
              std::span<T> grad) {
  const int layers = a.layer_count();
  tape.delta.assign(v.begin(), v.end());
  for (int l = layers - 1; l >= 0; --l) {
    const int fi = a.fan_in(l), fo = a.fan_out(l);
    const std::vector<T>& in = tape.act[l];
    const int wo = a.layer_offset(l), bo = wo + fo * fi;
    for (int i = 0; i < fo; ++i) {
      for (int j = 0; j < fi; ++j) grad[wo + i * fi + j] = tape.delta[i] * in[j];
      grad[bo + i] = tape.delta[i];
    }
    if (l == 0) break;
    tape.delta_prev.assign(fi, T(0.0));
    for (int i = 0; i < fo; ++i)
      for (int j = 0; j < fi; ++j) tape.delta_prev[j] += w[wo + i * fi + j] * tape.delta[i];
    for (int j = 0; j < fi; ++j) {
      const T& h = in[j];
      tape.delta_prev[j] *= T(1.0) - h * h;
    }
    std::swap(tape.delta, tape.delta_prev);
  }
}

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<size_t>(v.size())}; }

inline void check_input(const ParamVector& w, const Vector& z) {
  require_dims(z.size() == w.arch.input_dim, "MLP input has length " + std::to_string(z.size()) +
                                                 ", expected " + std::to_string(w.arch.input_dim));
  require_dims(w.values.size() == w.arch.param_count(), "ParamVector length mismatch");
}

inline void check_index(const ParamVector& w, Eigen::Index k) {
  if (k < 0 || k >= w.size())
    throw IndexOutOfRange("parameter index " + std::to_string(k) + " out of range [0, " +
                          std::to_string(w.size()) + ")");
}

}  // namespace detail

/// Reusable evaluator for one parameter vector; holds scratch buffers so hot
/// loops over samples do not allocate. Not thread-safe; use one per thread.
class MlpEvaluator {
 public:
  explicit MlpEvaluator(const ParamVector& w)
      : arch_(w.arch), w_(w.values.data(), static_cast<size_t>(w.values.size())) {
    detail::require_dims(w.values.size() == arch_.param_count(), "ParamVector length mismatch");
    wdual_.resize(w_.size());
    for (size_t k = 0; k < w_.size(); ++k) wdual_[k] = Dual(w_[k]);
  }

  const Architecture& arch() const { return arch_; }
  int p() const { return arch_.param_count(); }

  /// F_W(z) written to `out` (length d).
  void forward(std::span<const double> z, std::span<double> out) {
    detail::forward_tape<double>(arch_, w_, z, tape_);
    std::copy(tape_.out.begin(), tape_.out.end(), out.begin());
  }

  /// J v with J the p x d Jacobian, i.e. the gradient of v^T F_W(z).
  void vjp(std::span<const double> z, std::span<const double> v, std::span<double> grad) {
    detail::forward_tape<double>(arch_, w_, z, tape_);
    detail::vjp_tape<double, double>(arch_, w_, tape_, v, grad);
  }

  /// Full Jacobian, row k = dF/dW_k. Also returns F_W(z) through `out`.
  void jacobian(std::span<const double> z, Matrix& jac, std::span<double> out) {
    const int d = arch_.output_dim;
    detail::forward_tape<double>(arch_, w_, z, tape_);
    std::copy(tape_.out.begin(), tape_.out.end(), out.begin());
    jac.resize(p(), d);
    unit_.assign(d, 0.0);
    grad_.resize(p());
    for (int j = 0; j < d; ++j) {
      unit_[j] = 1.0;
      detail::vjp_tape<double, double>(arch_, w_, tape_, unit_, grad_);
      unit_[j] = 0.0;
      for (int k = 0; k < p(); ++k) jac(k, j) = grad_[k];
    }
  }

  /// d/dW_l of (J v): column l of sum_j v_j d2F_j/dW dW^T, with v held fixed.
  void vjp_tangent(std::span<const double> z, std::span<const double> v, int l,
                   std::span<double> column) {
    wdual_[l].d = 1.0;
    detail::forward_tape<Dual>(arch_, wdual_, z, dtape_);
    dgrad_.resize(p());
    detail::vjp_tape<Dual, double>(arch_, wdual_, dtape_, v, dgrad_);
    wdual_[l].d = 0.0;
    for (int k = 0; k < p(); ++k) column[k] = dgrad_[k].d;
  }

  /// Second-derivative slice: out(k, j) = d2F_j / dW_k dW_l.
  void jacobian_tangent(std::span<const double> z, int l, Matrix& out) {
    const int d = arch_.output_dim;
    wdual_[l].d = 1.0;
    detail::forward_tape<Dual>(arch_, wdual_, z, dtape_);
    out.resize(p(), d);
    unit_.assign(d, 0.0);
    dgrad_.resize(p());
    for (int j = 0; j < d; ++j) {
      unit_[j] = 1.0;
      detail::vjp_tape<Dual, double>(arch_, wdual_, dtape_, unit_, dgrad_);
      unit_[j] = 0.0;
      for (int k = 0; k < p(); ++k) out(k, j) = dgrad_[k].d;
    }
    wdual_[l].d = 0.0;
  }

 private:
  Architecture arch_;
  std::span<const double> w_;
  std::vector<Dual> wdual_;
  detail::Tape<double> tape_;
  detail::Tape<Dual> dtape_;
  std::vector<double> unit_, grad_;
  std::vector<Dual> dgrad_;
};

inline Vector forward(const ParamVector& w, const Vector& z) {
  detail::check_input(w, z);
  MlpEvaluator ev(w);
  Vector out(w.arch.output_dim);
  ev.forward(detail::as_span(z), {out.data(), static_cast<size_t>(out.size())});
  return out;
}

/// p x d matrix whose row k is dF_W(z)/dW_k (exact back-propagation).
inline Matrix jacobian(const ParamVector& w, const Vector& z) {
  detail::check_input(w, z);
  MlpEvaluator ev(w);
  Matrix jac;
  Vector out(w.arch.output_dim);
  ev.jacobian(detail::as_span(z), jac, {out.data(), static_cast<size_t>(out.size())});
  return jac;
}

/// d2F_W(z) / dW_k dW_l, a d-vector.
inline Vector second_derivative(const ParamVector& w, const Vector& z, Eigen::Index k,
                                Eigen::Index l) {
  detail::check_input(w, z);
  detail::check_index(w, k);
  detail::check_index(w, l);
  MlpEvaluator ev(w);
  Matrix slice;
  ev.jacobian_tangent(detail::as_span(z), static_cast<int>(l), slice);
  return slice.row(k).transpose();
}

/// Weights uniform in (-0.7/sqrt(fan_in), 0.7/sqrt(fan_in)), biases uniform in
/// (-0.1, 0.1).
inline ParamVector init_random(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ParamVector w(arch);
  Rng rng(seed, {stream::kInit});
  for (int l = 0; l < arch.layer_count(); ++l) {
    const int fi = arch.fan_in(l), fo = arch.fan_out(l);
    const double bound = 0.7 / std::sqrt(static_cast<double>(fi));
    for (int i = 0; i < fo; ++i)
      for (int j = 0; j < fi; ++j) w[arch.weight_index(l, i, j)] = rng.uniform(-bound, bound);
    for (int i = 0; i < fo; ++i) w[arch.bias_index(l, i)] = rng.uniform(-0.1, 0.1);
  }
  return w;
}

}  // namespace mlpreg
