#pragma once

#include <stdexcept>
#include <string>

namespace cae {

// All library failures derive from Error so callers can catch one type; the
// subclasses map onto distinct CLI exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Corpus does not satisfy a training/pre-training precondition
// (e.g. fewer than two identities).
struct CorpusError : Error {
  using Error::Error;
};

// Missing or unreadable files, malformed manifests, corrupt images/audio.
struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Checkpoint version or architecture fingerprint mismatch.
struct VersionError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace cae
