#include "darksynth/error.hpp"

namespace darksynth {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::Io: return "io";
    case ErrorKind::Compatibility: return "compatibility";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::EmptySet: return "empty_set";
    case ErrorKind::Divergence: return "divergence";
    }
    return "unknown";
}

}  // namespace darksynth
