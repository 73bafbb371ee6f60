#pragma once

#include <stdexcept>
#include <string>

namespace prccf {

// Root of every error the library throws. Subclasses name the failing stage so
// the CLI can map them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public Error { using Error::Error; };
class SplitError : public Error { using Error::Error; };
class ContractViolation : public Error { using Error::Error; };
class AdapterError : public Error { using Error::Error; };
class RetrievalError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class KnowledgeError : public Error { using Error::Error; };
class FilterError : public Error { using Error::Error; };
class CauseDetectionError : public Error { using Error::Error; };
class ReportError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

class NumericError : public Error {
 public:
  NumericError(std::string stage, const std::string& what)
      : Error("numeric failure in " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Raised when a command needs an artifact that another command produces.
class MissingArtifact : public Error {
 public:
  MissingArtifact(const std::string& path, const std::string& producer)
      : Error("missing artifact " + path + " (run `prccf " + producer + "` first)"),
        producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

}  // namespace prccf
