#include "avsl/objectives.hpp"

namespace avsl {

LossBreakdown total_loss(double l1, double l2, double l_geo, double lambda_geo) {
  const std::pair<const char*, double> terms[] = {{"l_cl_branch1", l1}, {"l_cl_branch2", l2}, {"l_geo", l_geo}, {"lambda_geo", lambda_geo}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name);
  }
  if (lambda_geo < 0) throw ConfigError("lambda_geo must be >= 0");
  LossBreakdown b;
  b.l_cl_branch1 = l1;
  b.l_cl_branch2 = l2;
  b.l_geo = l_geo;
  b.lambda_geo = lambda_geo;
  b.l_total = l1 + l2 + lambda_geo * l_geo;
  return b;
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = {{"l_cl1", b.l_cl_branch1}, {"l_cl2", b.l_cl_branch2}, {"l_geo", b.l_geo}, {"l_total", b.l_total}, {"lambda_geo", b.lambda_geo}};
}

}  // namespace avsl
