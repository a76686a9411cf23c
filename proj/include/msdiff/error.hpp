#pragma once

#include <stdexcept>
#include <string>

namespace msd {

enum class ErrorKind {
    shape,
    contract,
    vocab,
    numeric,
    parse,
    io,
    version,
    internal,
};

/// Base class for every error raised by the library. The kind maps 1:1 onto
/// the C API status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error(ErrorKind::shape, w) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error(ErrorKind::contract, w) {}
};
struct VocabError : Error {
    explicit VocabError(const std::string& w) : Error(ErrorKind::vocab, w) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& w) : Error(ErrorKind::parse, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct VersionError : Error {
    explicit VersionError(const std::string& w) : Error(ErrorKind::version, w) {}
};
struct InternalError : Error {
    explicit InternalError(const std::string& w) : Error(ErrorKind::internal, w) {}
};

}  // namespace msd
