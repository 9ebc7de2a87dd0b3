#pragma once

#include <stdexcept>
#include <string>

namespace nestwave {

// Bad input: malformed files, inconsistent configs, out-of-range arguments.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A nesting config that does not describe a binary partition tree.
class NestingError : public ValidationError {
 public:
  NestingError(std::string node, const std::string& what)
      : ValidationError("nesting node '" + node + "': " + what), node_(std::move(node)) {}

  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

// Argument outside the support of a distribution or transform.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite log density term; names the offending block.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

// Sampler could not produce a usable chain (e.g. every warmup transition diverged).
class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nestwave
