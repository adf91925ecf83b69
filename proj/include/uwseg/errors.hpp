#pragma once

#include <stdexcept>
#include <string>

namespace uwseg {

// Precondition or shape violation on an API boundary. CLI maps these to exit code 3.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// File does not follow the expected format (magic, version, header fields).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// File follows the format but its payload is inconsistent (truncated, dims overflow).
class CorruptFileError : public std::runtime_error {
public:
    explicit CorruptFileError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure; message carries the offending path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace uwseg
