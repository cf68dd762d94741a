#include "lesionforge/heads.hpp"

#include <string>

namespace lesionforge {

void validate_predictions(const PredictionSet& p) {
  for (Head h : kHeads) {
    const Volume& v = p[h];
    if (!v.grid().compatible(p.all_t1.grid())) {
      throw ContractError("prediction maps are not grid compatible");
    }
    if (!((v.data() >= 0.0) && (v.data() <= 1.0)).all()) {
      throw ContractError("prediction map " + std::string(head_name(h)) +
                          " has values outside [0, 1]");
    }
  }
}

}  // namespace lesionforge
