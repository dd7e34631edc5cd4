#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace koopdecomp {

// Broad class of a failure; the CLI maps it to an exit code.
enum class ErrorKind { validation, numerical, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class IntegrationBlowup : public Error {
 public:
  IntegrationBlowup(double time, std::ptrdiff_t index = -1)
      : Error(ErrorKind::numerical, message(time, index)), time_(time), index_(index) {}
  double time() const noexcept { return time_; }
  // Position in a batch, -1 for a single trajectory.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  static std::string message(double time, std::ptrdiff_t index) {
    std::string m = "integration blowup at t=" + std::to_string(time);
    if (index >= 0) m += " (batch point " + std::to_string(index) + ")";
    return m;
  }
  double time_;
  std::ptrdiff_t index_;
};

class InvalidFrequency : public Error {
 public:
  explicit InvalidFrequency(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class DependentFrequencies : public Error {
 public:
  DependentFrequencies(std::vector<int> relation, int wraps)
      : Error(ErrorKind::validation, message(relation, wraps)),
        relation_(std::move(relation)),
        wraps_(wraps) {}
  const std::vector<int>& relation() const noexcept { return relation_; }
  // k in a.omega = 2*pi*k; zero for a plain vanishing combination.
  int wraps() const noexcept { return wraps_; }

 private:
  static std::string message(const std::vector<int>& a, int k) {
    std::string m = "dependent frequencies: a=(";
    for (std::size_t i = 0; i < a.size(); ++i) m += (i ? "," : "") + std::to_string(a[i]);
    return m + "), k=" + std::to_string(k);
  }
  std::vector<int> relation_;
  int wraps_;
};

class MetricDegenerate : public Error {
 public:
  explicit MetricDegenerate(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class StencilTooCoarse : public Error {
 public:
  explicit StencilTooCoarse(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class SubmersionViolation : public Error {
 public:
  SubmersionViolation(const std::string& what, std::vector<double> point)
      : Error(ErrorKind::numerical, what), point_(std::move(point)) {}
  const std::vector<double>& point() const noexcept { return point_; }

 private:
  std::vector<double> point_;
};

class InsufficientRecurrence : public Error {
 public:
  InsufficientRecurrence(std::size_t found, std::size_t wanted)
      : Error(ErrorKind::numerical, "found " + std::to_string(found) + " of " +
                                        std::to_string(wanted) +
                                        " leaf crossings; lengthen the sampling trajectory") {}
};

class LeafEscape : public Error {
 public:
  explicit LeafEscape(double drift)
      : Error(ErrorKind::numerical, "leaf membership drift " + std::to_string(drift)), drift_(drift) {}
  double drift() const noexcept { return drift_; }

 private:
  double drift_;
};

class TowerCoordinatesError : public Error {
 public:
  explicit TowerCoordinatesError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class InversionFailure : public Error {
 public:
  explicit InversionFailure(double membership)
      : Error(ErrorKind::numerical, "tower inversion left the leaf, membership " + std::to_string(membership)),
        membership_(membership) {}
  double membership() const noexcept { return membership_; }

 private:
  double membership_;
};

class ConjugacyViolation : public Error {
 public:
  explicit ConjugacyViolation(double residual)
      : Error(ErrorKind::numerical, "angle block deviates from affine evolution by " + std::to_string(residual)),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class UndersampledBins : public Error {
 public:
  explicit UndersampledBins(std::vector<std::size_t> bins)
      : Error(ErrorKind::numerical, std::to_string(bins.size()) + " angle bins below the sample minimum"),
        bins_(std::move(bins)) {}
  const std::vector<std::size_t>& bins() const noexcept { return bins_; }

 private:
  std::vector<std::size_t> bins_;
};

class MissingInput : public Error {
 public:
  explicit MissingInput(const std::string& what) : Error(ErrorKind::io, what) {}
};

class IoFailure : public Error {
 public:
  explicit IoFailure(const std::string& what) : Error(ErrorKind::io, what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::validation, what) {}
};

}  // namespace koopdecomp
