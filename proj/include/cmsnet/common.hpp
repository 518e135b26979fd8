#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmsnet {

// Bad configuration supplied by the caller (shapes, flags, file contents).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data encountered at runtime.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure (NaN/Inf where finiteness is required).
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal invariant violated; indicates a bug, not a user mistake.
class internal_error : public std::logic_error {
public:
    explicit internal_error(const std::string& msg) : std::logic_error(msg) {}
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace cmsnet
