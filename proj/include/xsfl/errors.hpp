#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xsfl {

/// Tensor or layer shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar parameter lies outside its admissible range.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A class index or element index is out of range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Local training produced a non-finite loss.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(std::size_t round, std::size_t epoch)
      : std::runtime_error("training diverged at round " + std::to_string(round) +
                           ", epoch " + std::to_string(epoch)),
        round_(round),
        epoch_(epoch) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t round_;
  std::size_t epoch_;
};

/// Every device was excluded from a round (delay budget or divergence).
class EmptyRoundError : public std::runtime_error {
 public:
  explicit EmptyRoundError(std::size_t round)
      : std::runtime_error("round " + std::to_string(round) +
                           ": no device participated"),
        round_(round) {}

  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

/// Reading a dataset, image, model or config file failed.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace xsfl
