#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adavit/tensor.hpp"

namespace adavit {

// One subject: ordered (modality id, volume [X,Y,Z]) pairs plus optional label.
struct Case {
  std::string case_id;
  std::vector<std::pair<std::string, Tensor>> volumes;
  Tensor label;  // [X,Y,Z] binary, or undefined

  bool has_label() const { return label.defined(); }

  const Tensor* find(const std::string& modality) const {
    for (const auto& [id, v] : volumes)
      if (id == modality) return &v;
    return nullptr;
  }

  std::vector<std::string> modality_ids() const {
    std::vector<std::string> ids;
    ids.reserve(volumes.size());
    for (const auto& [id, v] : volumes) ids.push_back(id);
    return ids;
  }
};

}  // namespace adavit
