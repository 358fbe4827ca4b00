#pragma once

#include <stdexcept>
#include <string>

namespace riskeval {

enum class Strategy { base, use_confidence };
enum class Decision { answer, abstain };
enum class Correctness { correct, incorrect, ungraded };

const char* to_string(Strategy s);
const char* to_string(Decision d);
const char* to_string(Correctness c);

Strategy strategy_from_string(const std::string& s);
Decision decision_from_string(const std::string& s);
Correctness correctness_from_string(const std::string& s);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A record violates one of the ItemRecord invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Realized utility requested for an answered record that carries no grade.
class GradingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input text; the message carries file/line context when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace riskeval
