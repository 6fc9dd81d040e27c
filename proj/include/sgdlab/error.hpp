#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sgdlab {

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A caller-side contract was violated (bad parameter, excluded input).
class InvalidArgument : public Error {
  public:
    explicit InvalidArgument(const std::string& what) : Error(what) {}
};

/// A computation could not be carried out to the requested accuracy.
class NumericalFailure : public Error {
  public:
    explicit NumericalFailure(const std::string& what) : Error(what) {}
};

/// Norm cap exceeded or non-finite state. `index` is the failing step or
/// iterate index when one is meaningful.
class DivergenceError : public NumericalFailure {
  public:
    DivergenceError(const std::string& what, std::uint64_t index = 0)
        : NumericalFailure(what), index_(index) {}
    std::uint64_t index() const noexcept { return index_; }

  private:
    std::uint64_t index_;
};

/// Adaptive step size fell below the representable resolution.
class StiffnessError : public NumericalFailure {
  public:
    explicit StiffnessError(const std::string& what) : NumericalFailure(what) {}
};

/// A fit or estimate had too few usable samples.
class EstimationError : public NumericalFailure {
  public:
    explicit EstimationError(const std::string& what) : NumericalFailure(what) {}
};

} // namespace sgdlab
