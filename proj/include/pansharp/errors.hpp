#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pansharp {

// Every library failure derives from Error; `kind()` is the stable tag that
// the CLI reports in its machine-readable error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PANSHARP_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(tag, what) {}          \
  };

PANSHARP_DEFINE_ERROR(FormatError, "format")
PANSHARP_DEFINE_ERROR(IntegrityError, "integrity")
PANSHARP_DEFINE_ERROR(ValidationError, "validation")
PANSHARP_DEFINE_ERROR(GeometryError, "geometry")
PANSHARP_DEFINE_ERROR(ArgumentError, "argument")
PANSHARP_DEFINE_ERROR(IoError, "io")
PANSHARP_DEFINE_ERROR(UndefinedMetricError, "undefined_metric")
PANSHARP_DEFINE_ERROR(DependencyError, "dependency")
PANSHARP_DEFINE_ERROR(ConfigError, "config")
PANSHARP_DEFINE_ERROR(ProvenanceError, "provenance")

#undef PANSHARP_DEFINE_ERROR

/// Non-finite loss or gradient during training; `diagnostics` is a JSON dump.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string diagnostics)
      : Error("divergence", what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

}  // namespace pansharp
