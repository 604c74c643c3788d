#pragma once

#include <stdexcept>
#include <string>

namespace tcde {

// Base class for all library failures. Subclasses map onto CLI exit codes:
// 2 = configuration, 3 = data format, 4 = provider, 5 = evaluation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (bad mode/N combination, unknown
// retriever, mismatched index, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: corpus/query/qrels/run files, persisted indexes.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Failures talking to an external provider (LLM or embedding endpoint).
// Messages identify prompts by hash only; prompt bodies never appear in
// errors or logs.
class ProviderError : public Error {
 public:
  using Error::Error;
};

// A transient provider failure persisted past the retry budget.
class RetryExhaustedError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// Provider answered, but the payload was not in the expected shape.
class ProtocolError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// A provider request timed out (possibly repeatedly, until retries ran out).
class TimeoutError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// Evaluation could not proceed (e.g. run and qrels share no queries).
class EvalError : public Error {
 public:
  using Error::Error;
};

// An expansion yielded no usable topics. Callers usually degrade the item
// to its identity form instead of aborting, so this rarely escapes.
class EmptyExpansionError : public Error {
 public:
  using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const FormatError*>(&e)) return 3;
  if (dynamic_cast<const ProviderError*>(&e)) return 4;
  if (dynamic_cast<const EvalError*>(&e)) return 5;
  return 1;
}

}  // namespace tcde
