#pragma once

#include <stdexcept>
#include <string>

namespace erpgs {

/// Raised when a direction has no well-defined ERP projection (zero length
/// or pointing at a pole where longitude is undefined).
class DegenerateDirection : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Input that failed validation while loading a dataset, pose or checkpoint.
/// `path()` names the offending file, `field()` the offending key if any.
class LoadError : public std::runtime_error {
 public:
  LoadError(std::string path, std::string field, const std::string& what)
      : std::runtime_error(path + (field.empty() ? "" : " [" + field + "]") + ": " + what),
        path_(std::move(path)),
        field_(std::move(field)) {}

  const std::string& path() const { return path_; }
  const std::string& field() const { return field_; }

 private:
  std::string path_;
  std::string field_;
};

}  // namespace erpgs
