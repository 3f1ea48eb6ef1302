#pragma once

#include <stdexcept>
#include <string>

namespace bms {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};
struct EmptyInput : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
struct NotScalar : Error {
    using Error::Error;
};
struct InvalidAlpha : Error {
    using Error::Error;
};
struct InvalidSpec : Error {
    using Error::Error;
};
struct InvalidFraction : Error {
    using Error::Error;
};
struct InvalidK : Error {
    using Error::Error;
};
struct TooFewSamples : Error {
    using Error::Error;
};
struct MissingY : Error {
    using Error::Error;
};
struct IndexOutOfRange : Error {
    using Error::Error;
};
struct KindMismatch : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct VersionMismatch : Error {
    using Error::Error;
};
struct CorruptPayload : Error {
    using Error::Error;
};

// Line-annotated parse failure for JSONL ingestion.
struct ParseError : Error {
    int line;
    ParseError(int line_, const std::string& msg)
        : Error("line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

struct SchemaError : Error {
    using Error::Error;
};

}  // namespace bms
