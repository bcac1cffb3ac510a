#include "fovea/macs.hpp"

namespace fovea::macs {

thread_local std::uint64_t counter = 0;

}  // namespace fovea::macs
