#pragma once

#include <stdexcept>
#include <string>

namespace pot {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define POT_DEFINE_ERROR(Name)                                        \
    struct Name : Error {                                             \
        explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
    }

POT_DEFINE_ERROR(ShapeMismatch);
POT_DEFINE_ERROR(NonFiniteInput);
POT_DEFINE_ERROR(NonScalarLoss);
POT_DEFINE_ERROR(TapeConsumed);
POT_DEFINE_ERROR(DisconnectedGraph);
POT_DEFINE_ERROR(IndexOutOfRange);
POT_DEFINE_ERROR(SelfLoop);
POT_DEFINE_ERROR(DuplicateEdge);
POT_DEFINE_ERROR(NonPositiveSigma);
POT_DEFINE_ERROR(EmptyDataset);
POT_DEFINE_ERROR(SchemaViolation);
POT_DEFINE_ERROR(JointCountMismatch);
POT_DEFINE_ERROR(NonPositiveDepth);
POT_DEFINE_ERROR(IoError);
POT_DEFINE_ERROR(CheckpointMismatch);
POT_DEFINE_ERROR(ConfigError);

#undef POT_DEFINE_ERROR

}  // namespace pot
