#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace centrifuge {

// Base for every error raised by the library. The CLI maps all of these to
// exit code 1; only UsageError maps to 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// Object-file parse failure; carries the byte offset that could not be read.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class EmptyExtractionError : public Error {
public:
    using Error::Error;
};

} // namespace centrifuge
