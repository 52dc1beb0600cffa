#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace topicview {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. line() is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class InvariantError : public Error { using Error::Error; };
class AllTokensFiltered : public Error { using Error::Error; };
class DegenerateCorpus : public Error { using Error::Error; };
class DimensionMismatch : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class DuplicateTopic : public Error { using Error::Error; };
class VocabMismatch : public Error { using Error::Error; };
class InsufficientTopWords : public Error { using Error::Error; };
class BackendUnreachable : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ArtifactMismatch : public Error { using Error::Error; };

}  // namespace topicview
