#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bitref {

enum class Errc {
  // input data
  MalformedRow,
  EncodingError,
  InvalidSentence,
  MissingScore,
  SampleTooLarge,
  EmptyCorpus,
  BadLength,
  NonFiniteValue,
  DimMismatch,
  EmptyIndex,
  TooFewPairs,
  SequenceTooLong,
  LengthMismatch,
  EmptyHypSet,
  InvalidArgument,
  // files
  IoError,
  BadMagic,
  VersionMismatch,
  ManifestMismatch,
  MissingArtifact,
  // numerics
  DivisionDegenerate,
  NonFiniteLoss,
  NonFinite,
  // configuration
  ConfigError,
};

std::string_view errc_name(Errc code);

/// Process exit code category for an error: 2 config, 3 data, 4 numeric.
int exit_code_for(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::optional<std::size_t> index = std::nullopt);

  Errc code() const noexcept { return code_; }
  /// Line number, pair index or element index the error refers to, when known.
  std::optional<std::size_t> index() const noexcept { return index_; }
  /// The message without the error name and index.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
  std::optional<std::size_t> index_;
};

[[noreturn]] void fail(Errc code, const std::string& message,
                       std::optional<std::size_t> index = std::nullopt);

}  // namespace bitref
