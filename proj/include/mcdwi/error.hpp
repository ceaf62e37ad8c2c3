#pragma once

#include <stdexcept>
#include <string>

namespace mcdwi {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Series whose b=0 maximum is not positive.
class DegenerateSeries : public Error {
 public:
  DegenerateSeries() : Error("degenerate series") {}
};

// Singular (weighted) normal matrix of the log-linear fit.
class DegenerateDesign : public Error {
 public:
  DegenerateDesign() : Error("degenerate design") {}
};

class UndefinedRSquared : public Error {
 public:
  UndefinedRSquared() : Error("undefined R²") {}
};

class EmptyRoi : public Error {
 public:
  EmptyRoi() : Error("empty ROI") {}
};

class DegenerateCohort : public Error {
 public:
  explicit DegenerateCohort(const std::string& why) : Error("degenerate cohort: " + why) {}
};

}  // namespace mcdwi
