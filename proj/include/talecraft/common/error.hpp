#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace talecraft {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidRequestError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// A response or file could not be parsed. Keeps the offending text around.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts) : Error(what), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// A token sequence carried a token from the wrong vocabulary range.
class DecodeError : public Error {
public:
    DecodeError(const std::string& what, std::size_t position) : Error(what), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or an impossible normalizer. `where` names the layer or step.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::string where) : Error(what), where_(std::move(where)) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

class InvalidBoxError : public Error {
public:
    using Error::Error;
};

class RegistrationError : public Error {
public:
    using Error::Error;
};

class ConflictError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

class OrderingError : public Error {
public:
    using Error::Error;
};

class MigrationError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class CancelledError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    ValidationError(const std::string& what, std::vector<std::string> issues)
        : Error(compose(what, issues)), issues_(std::move(issues)) {}
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    static std::string compose(const std::string& what, const std::vector<std::string>& issues) {
        std::string out = what;
        for (const auto& issue : issues) {
            out += "; ";
            out += issue;
        }
        return out;
    }
    std::vector<std::string> issues_;
};

/// Wraps a failure inside one pipeline stage.
class StageError : public Error {
public:
    StageError(std::string stage, int scene_index, const std::string& what)
        : Error(stage + " (scene " + std::to_string(scene_index) + "): " + what),
          stage_(std::move(stage)),
          scene_index_(scene_index) {}
    const std::string& stage() const noexcept { return stage_; }
    int scene_index() const noexcept { return scene_index_; }

private:
    std::string stage_;
    int scene_index_;
};

}  // namespace talecraft
