#include "convexcert/functions.hpp"

#include <cmath>

namespace convexcert {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double sigmoid_d1(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}
double sigmoid_d2(double x) {
  const double s = sigmoid(x);
  return (1.0 - 2.0 * s) * s * (1.0 - s);
}

double tanh_value(double x) { return std::tanh(x); }
double tanh_d1(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}
double tanh_d2(double x) {
  const double t = std::tanh(x);
  return -2.0 * t * (1.0 - t * t);
}

// Subgradient 0 at the kink; the distributional second derivative is dropped.
double relu(double x) { return x > 0 ? x : 0.0; }
double relu_d1(double x) { return x > 0 ? 1.0 : 0.0; }
double relu_d2(double) { return 0.0; }

double sin_value(double x) { return std::sin(x); }
double sin_d1(double x) { return std::cos(x); }
double sin_d2(double x) { return -std::sin(x); }

double square(double x) { return x * x; }
double square_d1(double x) { return 2.0 * x; }
double square_d2(double) { return 2.0; }

FunctionLibrary make_builtin() {
  FunctionLibrary lib;
  lib = lib.with_override(FunctionId::Sigmoid, {sigmoid, sigmoid_d1, sigmoid_d2});
  lib = lib.with_override(FunctionId::Tanh, {tanh_value, tanh_d1, tanh_d2});
  lib = lib.with_override(FunctionId::ReLU, {relu, relu_d1, relu_d2});
  lib = lib.with_override(FunctionId::Sin, {sin_value, sin_d1, sin_d2});
  lib = lib.with_override(FunctionId::Square, {square, square_d1, square_d2});
  return lib;
}

}  // namespace

const FunctionLibrary& FunctionLibrary::builtin() {
  static const FunctionLibrary lib = make_builtin();
  return lib;
}

FunctionLibrary FunctionLibrary::with_override(FunctionId id, ActivationFns fns) const {
  FunctionLibrary copy = *this;
  copy.table_[static_cast<std::size_t>(id)] = fns;
  return copy;
}

ScaledDerivatives FunctionLibrary::eval(FunctionId id, double delta, double x) const {
  const ActivationFns& f = get(id);
  const double u = delta * x;
  return {f.value(u), delta * f.d1(u), delta * delta * f.d2(u)};
}

std::string_view to_string(FunctionId id) {
  switch (id) {
    case FunctionId::Sigmoid: return "sigmoid";
    case FunctionId::Tanh: return "tanh";
    case FunctionId::ReLU: return "relu";
    case FunctionId::Sin: return "sin";
    case FunctionId::Square: return "square";
  }
  return "?";
}

std::optional<FunctionId> function_from_string(std::string_view name) {
  for (FunctionId id : kAllFunctions)
    if (to_string(id) == name) return id;
  return std::nullopt;
}

std::string_view to_string(LossId id) {
  switch (id) {
    case LossId::Square: return "square";
    case LossId::Absolute: return "absolute";
    case LossId::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

std::optional<LossId> loss_from_string(std::string_view name) {
  for (LossId id : {LossId::Square, LossId::Absolute, LossId::CrossEntropy})
    if (to_string(id) == name) return id;
  return std::nullopt;
}

}  // namespace convexcert
