#pragma once

#include <stdexcept>
#include <string>

namespace atg {

// Trace ingestion and validation.
struct AlternationViolation : std::runtime_error {
    explicit AlternationViolation(const std::string &what) : std::runtime_error(what) {}
};
struct DanglingObservation : std::runtime_error {
    explicit DanglingObservation(const std::string &what) : std::runtime_error(what) {}
};
struct InconsistentTrace : std::runtime_error {
    explicit InconsistentTrace(const std::string &what) : std::runtime_error(what) {}
};
struct DomainMismatch : std::runtime_error {
    explicit DomainMismatch(const std::string &what) : std::runtime_error(what) {}
};

// Distances.
struct InvalidDistribution : std::runtime_error {
    explicit InvalidDistribution(const std::string &what) : std::runtime_error(what) {}
};

// Environments.
struct CoverageFailure : std::runtime_error {
    explicit CoverageFailure(const std::string &what) : std::runtime_error(what) {}
};

// Planning / evaluation.
struct UnknownNode : std::runtime_error {
    explicit UnknownNode(const std::string &what) : std::runtime_error(what) {}
};

// Sweep.
struct NoFeasibleCell : std::runtime_error {
    explicit NoFeasibleCell(const std::string &what) : std::runtime_error(what) {}
};

// Baselines.
struct DegenerateClustering : std::runtime_error {
    explicit DegenerateClustering(const std::string &what) : std::runtime_error(what) {}
};

// Localizer.
struct EmptyClass : std::runtime_error {
    explicit EmptyClass(const std::string &what) : std::runtime_error(what) {}
};

// Oracles.
struct LimitExceeded : std::runtime_error {
    explicit LimitExceeded(const std::string &what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string &what) : std::runtime_error(what) {}
};

}  // namespace atg
