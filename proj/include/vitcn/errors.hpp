#pragma once

#include <stdexcept>
#include <string>

namespace vitcn {

// Base class for everything this library throws on purpose.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; message names both shapes.
struct shape_error : error {
    using error::error;
};

// Precondition violation (bad index, non-scalar backward, NaN loss, ...).
struct contract_error : error {
    using error::error;
};

// Invalid static configuration (W % P != 0, D % H != 0, bad split, ...).
struct config_error : error {
    using error::error;
};

// Distractor synthesis exhausted its retry budget; caller should reseed.
struct generation_error : error {
    using error::error;
};

// File-format failures. Subclasses are deliberately distinct so callers
// (and tests) can tell the cases apart.
struct io_error : error {
    using error::error;
};

struct bad_magic_error : io_error {
    using io_error::io_error;
};

struct version_mismatch_error : io_error {
    using io_error::io_error;
};

struct truncated_file_error : io_error {
    using io_error::io_error;
};

struct unknown_parameter_error : io_error {
    using io_error::io_error;
};

} // namespace vitcn
