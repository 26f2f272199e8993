#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prunelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class EmptyNetwork : public Error {
 public:
  using Error::Error;
};

class DegenerateVariance : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class InsufficientSamples : public Error {
 public:
  InsufficientSamples(const std::string& what, std::size_t label)
      : Error(what), label_(label) {}
  std::size_t label() const noexcept { return label_; }

 private:
  std::size_t label_;
};

class StaleArtifact : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training. `round` is -1 outside of a pruning driver.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration, int round = -1)
      : Error(what), iteration_(iteration), round_(round) {}
  std::size_t iteration() const noexcept { return iteration_; }
  int round() const noexcept { return round_; }

 private:
  std::size_t iteration_;
  int round_;
};

}  // namespace prunelab
