#pragma once

#include <stdexcept>
#include <string>

namespace tlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };   // bad spec / option / out-of-range setting
struct ShapeError : Error { using Error::Error; };    // tensor / input shape mismatch
struct LookupError : Error { using Error::Error; };   // unknown arch, tap, group, metric, ...
struct CompatError : Error { using Error::Error; };   // snapshot/network or stats/network mismatch
struct DataError : Error { using Error::Error; };     // empty split, empty class, missing results
struct MetricError : Error { using Error::Error; };   // undefined metric (single class, degenerate)
struct NumericError : Error { using Error::Error; };  // non-finite values, degenerate inputs
struct IngestError : Error { using Error::Error; };   // unreadable files during dataset ingestion
struct UnsupportedError : Error { using Error::Error; };  // operation undefined for this family
struct EstimatorError : Error { using Error::Error; };    // minibatch estimator preconditions
struct PairingError : Error { using Error::Error; };      // mismatched sample ids across a pair

struct TrainError : Error {
    long iteration = -1;
    TrainError(const std::string& msg, long iter) : Error(msg), iteration(iter) {}
};

} // namespace tlab
