#pragma once

#include <stdexcept>
#include <string>

namespace deml {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or channel counts that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A vector whose norm is too small to normalize or to take a cosine with.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

// An optimizer step was asked to consume a gradient that was never populated.
class GradientError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// The adversary needs at least two branches to measure a discrepancy.
class InsufficientBranchesError : public Error {
 public:
  using Error::Error;
};

// A metric batch lacking positive or negative pairs.
class InvalidBatchError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class SplitDesignError : public Error {
 public:
  using Error::Error;
};

// Seen and unseen class sets intersect.
class SplitContaminationError : public Error {
 public:
  using Error::Error;
};

// Malformed image, checkpoint or config file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A loss evaluated to NaN or infinity during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace deml
