#pragma once

#include <stdexcept>
#include <string>

namespace lungad {

// Bad input: malformed files, violated preconditions, out-of-range parameters.
// The CLI maps this to exit status 2.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Failure while doing otherwise valid work (I/O, numerical breakdown).
// The CLI maps this to exit status 1.
class RuntimeError : public std::runtime_error {
public:
    explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace lungad
