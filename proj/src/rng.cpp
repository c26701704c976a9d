#include "ptta/rng.hpp"

#include <sstream>

#include "ptta/errors.hpp"

namespace ptta {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng deserialize_rng(const std::string& text) {
  std::istringstream in(text);
  Rng rng;
  in >> rng;
  if (!in) throw CorruptFileError("cannot restore random generator state");
  return rng;
}

}  // namespace ptta
