#include "deft/model.hpp"

namespace deft {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(mics, "mics");
  positive(max_sources, "max_sources");
  positive(dim, "dim");
  positive(blocks, "blocks");
  positive(kernel, "kernel");
  positive(heads, "heads");
  positive(ssm_state, "ssm_state");
  positive(ssm_expand, "ssm_expand");
  positive(classes, "classes");
  positive(norm_groups, "norm_groups");
  if (dim % heads != 0) throw ConfigError("model.dim must be divisible by model.heads");
  if (kernel % 2 == 0) throw ConfigError("model.kernel must be odd");
  if (dim % norm_groups != 0) throw ConfigError("model.dim must be divisible by model.norm_groups");
}

template class Model<float>;
template class Model<double>;

}  // namespace deft
