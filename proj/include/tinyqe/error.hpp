#pragma once

#include <stdexcept>
#include <string>

namespace tinyqe {

// Error taxonomy. Each type corresponds to one failure class so callers
// (and the CLI exit-code mapping) can dispatch on type rather than message.

// Tensor shapes disagree (matmul inner dims, elementwise mismatch, ...).
struct shape_error : std::invalid_argument {
    explicit shape_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// A documented precondition was violated (empty input, non-scalar loss, ...).
struct contract_error : std::invalid_argument {
    explicit contract_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid or inconsistent configuration (d_model not divisible by n_heads, ...).
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// A node id does not belong to the tape it was used with.
struct tape_error : std::logic_error {
    explicit tape_error(const std::string& msg) : std::logic_error(msg) {}
};

// Degenerate numeric input: zero-variance annotator column, constant vector
// passed to a correlation, all-masked pooling, single-element norm row.
struct degenerate_error : std::invalid_argument {
    explicit degenerate_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed text input (TSV rows, prediction files, checkpoint manifests).
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Duplicate segment ids or other uniqueness violations.
struct integrity_error : std::runtime_error {
    explicit integrity_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A checkpoint whose manifest and payload disagree.
struct corruption_error : std::runtime_error {
    explicit corruption_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Prediction sets and gold data do not cover the same segment ids.
struct alignment_error : std::runtime_error {
    explicit alignment_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures, always carrying the offending path.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf reaching the optimizer or the evaluation loss.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tinyqe
