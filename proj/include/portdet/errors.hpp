#pragma once

#include <stdexcept>
#include <string>

namespace portdet {

// Bad user-supplied configuration (unknown key, out-of-range value, modality mismatch).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File system or stream failure; the message carries the path.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file that was read but does not follow its declared layout.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace portdet
