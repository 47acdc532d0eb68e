#include "deft/types.hpp"

namespace deft {

int class_id_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == name) return i;
  return -1;
}

std::string class_name(int class_id) {
  if (class_id == kSilenceClass) return "silence";
  if (class_id < 0 || class_id >= kNumClasses)
    throw ParameterError("class id out of range: " + std::to_string(class_id));
  return std::string(kClassNames[class_id]);
}

}  // namespace deft
