#pragma once

#include <stdexcept>
#include <string>

namespace ipwmeta {

// Malformed or invariant-violating input data (bad CSV rows, missing fields,
// duplicate ids, too few published studies).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical procedure could not produce a usable answer (no sign change for
// the selection-parameter root, degenerate sums).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ipwmeta
