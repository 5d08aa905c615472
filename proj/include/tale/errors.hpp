#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tale {

// Error taxonomy. Exit-code mapping lives in the CLI: input-class errors
// exit 2, format errors exit 3.

// Bad user-supplied data: invalid token ids, oversized sequences, bad masks,
// out-of-range layer indices.
struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward on a non-scalar, accuracy over an empty split.
struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: degenerate task specs, zero-epoch training.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement; message names both shapes.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Fingerprint mismatch when resuming a trajectory against the wrong
// model or task.
struct integrity_error : std::runtime_error {
    explicit integrity_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or foreign files: bad magic, unknown version, truncation.
// Carries the byte offset at which decoding failed.
struct format_error : std::runtime_error {
    format_error(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Training diverged (NaN loss) or otherwise failed.
struct train_error : std::runtime_error {
    explicit train_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tale
