#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace convexcert {

enum class FunctionId { Sigmoid, Tanh, ReLU, Sin, Square };

inline constexpr std::array<FunctionId, 5> kAllFunctions = {
    FunctionId::Sigmoid, FunctionId::Tanh, FunctionId::ReLU, FunctionId::Sin, FunctionId::Square};

std::string_view to_string(FunctionId id);
std::optional<FunctionId> function_from_string(std::string_view name);

/// Unscaled scalar nonlinearity s with its first and second derivatives.
struct ActivationFns {
  double (*value)(double);
  double (*d1)(double);
  double (*d2)(double);
};

/// Value and derivatives of x -> s(delta * x), chain-rule factors included.
struct ScaledDerivatives {
  double value;
  double d1;  // delta * s'(delta x)
  double d2;  // delta^2 * s''(delta x)
};

/// Maps function ids to their analytic implementations. The built-in table is
/// what graphs use by default; tests substitute single entries to check that
/// the oracles notice a wrong derivative.
class FunctionLibrary {
 public:
  static const FunctionLibrary& builtin();

  FunctionLibrary with_override(FunctionId id, ActivationFns fns) const;

  const ActivationFns& get(FunctionId id) const { return table_[static_cast<std::size_t>(id)]; }

  double value(FunctionId id, double delta, double x) const { return get(id).value(delta * x); }
  ScaledDerivatives eval(FunctionId id, double delta, double x) const;

 private:
  std::array<ActivationFns, kAllFunctions.size()> table_{};
};

enum class LossId { Square, Absolute, CrossEntropy };

std::string_view to_string(LossId id);
std::optional<LossId> loss_from_string(std::string_view name);

}  // namespace convexcert
