#include "karma/random.h"

#include "karma/text.h"

namespace karma {

uint64_t derive_seed(uint64_t base, std::string_view stream) {
  return mix_seed(base ^ text::fnv1a64(stream));
}

}  // namespace karma
