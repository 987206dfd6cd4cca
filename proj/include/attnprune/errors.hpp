#pragma once

#include <stdexcept>
#include <string>

namespace attnprune {

/// Tensor rank or dimension disagreement. Messages name the offending shapes.
class shape_error : public std::invalid_argument {
public:
    explicit shape_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Value outside the documented domain of an operation (bad label, bad count, ...).
class domain_error : public std::invalid_argument {
public:
    explicit domain_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Invalid or inconsistent run configuration. CLI maps this to exit code 2.
class config_error : public std::invalid_argument {
public:
    explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A pruning budget that cannot be met (e.g. would remove every filter).
class budget_error : public std::invalid_argument {
public:
    explicit budget_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Mask/shape inconsistency discovered while rewiring a network.
class structural_error : public std::runtime_error {
public:
    explicit structural_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training produced a non-finite loss. Carries a diagnostic dump of score
/// statistics and the last learning rates. CLI maps this to exit code 3.
class divergence_error : public std::runtime_error {
public:
    explicit divergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (dataset, checkpoint, CSV). Messages carry byte offsets
/// where applicable.
class parse_error : public std::runtime_error {
public:
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint written by an unsupported format version. CLI maps this to exit 4.
class version_error : public std::runtime_error {
public:
    explicit version_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem failure, surfaced with the path involved.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace attnprune
