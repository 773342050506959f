#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace partseg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class InvalidData : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class IncompatibleAnnotations : public Error {
public:
    using Error::Error;
};

class UndefinedScore : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Structural template problem; `node_id` names the offending node.
class TemplateValidationError : public Error {
public:
    TemplateValidationError(std::uint32_t node_id, const std::string& what)
        : Error("template node " + std::to_string(node_id) + ": " + what), node_id_(node_id) {}

    std::uint32_t node_id() const noexcept { return node_id_; }

private:
    std::uint32_t node_id_;
};

/// Malformed input file; carries the 1-based line (text) or byte offset (binary).
class FormatError : public Error {
public:
    FormatError(const std::string& source, std::size_t location, const std::string& what)
        : Error(source + ":" + std::to_string(location) + ": " + what), location_(location) {}

    std::size_t location() const noexcept { return location_; }

private:
    std::size_t location_;
};

}  // namespace partseg
