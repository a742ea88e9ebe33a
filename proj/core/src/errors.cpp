#include "bitref/errors.hpp"

namespace bitref {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::EncodingError: return "EncodingError";
    case Errc::InvalidSentence: return "InvalidSentence";
    case Errc::MissingScore: return "MissingScore";
    case Errc::SampleTooLarge: return "SampleTooLarge";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::BadLength: return "BadLength";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::TooFewPairs: return "TooFewPairs";
    case Errc::SequenceTooLong: return "SequenceTooLong";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyHypSet: return "EmptyHypSet";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::ManifestMismatch: return "ManifestMismatch";
    case Errc::MissingArtifact: return "MissingArtifact";
    case Errc::DivisionDegenerate: return "DivisionDegenerate";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::NonFinite: return "NonFinite";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::InvalidArgument:
      return 2;
    case Errc::DivisionDegenerate:
    case Errc::NonFiniteLoss:
    case Errc::NonFinite:
      return 4;
    default:
      return 3;
  }
}

namespace {
std::string format_message(Errc code, const std::string& message,
                           std::optional<std::size_t> index) {
  std::string out(errc_name(code));
  if (index) out += "(" + std::to_string(*index) + ")";
  if (!message.empty()) out += ": " + message;
  return out;
}
}  // namespace

Error::Error(Errc code, const std::string& message, std::optional<std::size_t> index)
    : std::runtime_error(format_message(code, message, index)), code_(code), detail_(message), index_(index) {}

void fail(Errc code, const std::string& message, std::optional<std::size_t> index) {
  throw Error(code, message, index);
}

}  // namespace bitref
