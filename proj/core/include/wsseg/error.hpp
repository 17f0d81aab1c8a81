#pragma once

#include <stdexcept>
#include <string>

namespace wsseg {

// Every failure raised by the library carries one of these kinds so callers
// (the CLI in particular) can map them onto stable exit codes.
enum class ErrorKind {
    Parse,
    Schema,
    EmptyInput,
    Structural,
    Range,
    Parameter,
    NumericOverflow,
    Consistency,
    NonFiniteLoss,
    Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class ParseError : public Error {
public:
    ParseError(std::string path, std::size_t line, const std::string& what)
        : Error(ErrorKind::Parse, path + ":" + std::to_string(line) + ": " + what),
          path_(std::move(path)), line_(line) {}

    const std::string& path() const { return path_; }
    std::size_t line() const { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

} // namespace wsseg
