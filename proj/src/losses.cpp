#include "relnet/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace relnet {

FocalForm parse_focal_form(const std::string& text) {
  if (text == "penalty_reduced") return FocalForm::PenaltyReduced;
  if (text == "literal") return FocalForm::Literal;
  throw std::invalid_argument("focal_form must be penalty_reduced or literal, got '" + text + "'");
}

std::string to_string(FocalForm form) { return form == FocalForm::Literal ? "literal" : "penalty_reduced"; }

void LossWeights::validate() const {
  for (double v : {alpha_s, alpha_o, alpha_r, lambda_f, lambda_i, alpha_e, gamma}) {
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
}

namespace {
double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
}  // namespace

double gce_loss(const std::array<double, 4>& scores, const LossWeights& w) {
  double loss = -std::log(clamp_prob(scores[0]));
  for (int k = 1; k < 4; ++k) loss -= w.lambda_f * std::log(1.0 - clamp_prob(scores[k]));
  return loss;
}

double adversarial_loss(const std::array<double, 3>& scores, const LossWeights& w) {
  return -std::log(clamp_prob(scores[0])) - std::log(clamp_prob(scores[1])) -
         w.lambda_i * std::log(clamp_prob(scores[2]));
}

double detection_total(double l_mul, double l_ga, const LossWeights& w) { return l_mul + w.alpha_e * l_ga; }

}  // namespace relnet
