#pragma once

#include "relnet/detector.hpp"
#include "relnet/heatmap_codec.hpp"
#include "relnet/layers.hpp"
#include "relnet/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>

namespace relnet {

enum class FocalForm { PenaltyReduced, Literal };

FocalForm parse_focal_form(const std::string& text);
std::string to_string(FocalForm form);

struct LossWeights {
  double alpha_s = 0.1;
  double alpha_o = 0.1;
  double alpha_r = 1.0;
  double lambda_f = 1.0 / 3.0;
  double lambda_i = 0.1;
  double alpha_e = 0.1;
  double gamma = 2.0;
  FocalForm focal_form = FocalForm::PenaltyReduced;

  void validate() const;
};

struct LossReport {
  double l_lh = 0.0;
  double l_ls = 0.0;
  double l_lo = 0.0;
  double l_rh = 0.0;
  double l_mul = 0.0;
  std::optional<double> l_ga;
  std::optional<double> l_gce;
  double l_det = 0.0;
};

inline constexpr double kProbEps = 1e-7;

/// Heatmap focal loss, normalised by max(#cells with gt == 1, 1).
/// Penalty-reduced form: positives -(1-p)^g log p, others -(1-gt)^4 p^g log(1-p).
/// Literal form keeps only the positive term. When `grad` is given it
/// receives dL/dpred; predictions are clamped to [eps, 1-eps] first.
template <typename Scalar>
Scalar focal_heatmap_loss(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& gt, double gamma,
                          FocalForm form = FocalForm::PenaltyReduced, FeatureMap<Scalar>* grad = nullptr) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("focal_heatmap_loss: shape mismatch");
  const auto g = static_cast<Scalar>(gamma);
  const auto eps = static_cast<Scalar>(kProbEps);
  if (grad) *grad = FeatureMap<Scalar>(pred.channels, pred.height, pred.width);
  Scalar total = 0;
  Eigen::Index positives = 0;
  for (Eigen::Index i = 0; i < pred.data.size(); ++i) {
    if (gt.data.data()[i] == Scalar(1)) ++positives;
  }
  const Scalar norm = Scalar(1) / static_cast<Scalar>(std::max<Eigen::Index>(positives, 1));
  for (Eigen::Index i = 0; i < pred.data.size(); ++i) {
    const Scalar raw = pred.data.data()[i];
    const Scalar y = gt.data.data()[i];
    const bool clamped = raw < eps || raw > Scalar(1) - eps;
    const Scalar p = std::clamp(raw, eps, Scalar(1) - eps);
    Scalar value = 0;
    Scalar dp = 0;
    if (y == Scalar(1)) {
      const Scalar q = Scalar(1) - p;
      value = -std::pow(q, g) * std::log(p);
      dp = g * std::pow(q, g - Scalar(1)) * std::log(p) - std::pow(q, g) / p;
    } else if (form == FocalForm::PenaltyReduced) {
      const Scalar penalty = std::pow(Scalar(1) - y, Scalar(4));
      value = -penalty * std::pow(p, g) * std::log(Scalar(1) - p);
      dp = -penalty * (g * std::pow(p, g - Scalar(1)) * std::log(Scalar(1) - p) - std::pow(p, g) / (Scalar(1) - p));
    }
    total += value;
    if (grad) grad->data.data()[i] = clamped ? Scalar(0) : dp * norm;
  }
  return total * norm;
}

/// Mean absolute error over masked cells and all channels; 0 for an empty mask.
template <typename Scalar>
Scalar l1_masked(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& gt, const FeatureMap<Scalar>& mask,
                 FeatureMap<Scalar>* grad = nullptr) {
  if (!pred.same_shape(gt) || mask.channels != 1 || mask.height != pred.height || mask.width != pred.width) {
    throw std::invalid_argument("l1_masked: shape mismatch");
  }
  if (grad) *grad = FeatureMap<Scalar>(pred.channels, pred.height, pred.width);
  const Scalar cells = mask.data.sum();
  if (cells <= Scalar(0)) return Scalar(0);
  const Scalar norm = Scalar(1) / (cells * static_cast<Scalar>(pred.channels));
  Scalar total = 0;
  for (int c = 0; c < pred.channels; ++c) {
    for (Eigen::Index k = 0; k < pred.pixels(); ++k) {
      if (mask.data(0, k) == Scalar(0)) continue;
      const Scalar diff = pred.data(c, k) - gt.data(c, k);
      total += std::abs(diff);
      // subgradient 0 at equality
      if (grad) grad->data(c, k) = diff > Scalar(0) ? norm : (diff < Scalar(0) ? -norm : Scalar(0));
    }
  }
  return total * norm;
}

/// L_Mul = L_LH + a_s L_LS + a_o L_LO + a_r L_RH. With
/// alpha_r == 0 the relation term is skipped and reported as 0. When
/// `grad` is given it receives dL_Mul/d(output).
template <typename Scalar>
LossReport multi_task_loss(const NetworkOutput<Scalar>& out, const TargetMaps& targets, const LossWeights& w,
                           NetworkOutput<Scalar>* grad = nullptr) {
  const auto y = targets.y_map.template cast<Scalar>();
  const auto s = targets.s_map.template cast<Scalar>();
  const auto o = targets.o_map.template cast<Scalar>();
  const auto mask = targets.pos_mask.template cast<Scalar>();
  if (grad) *grad = out.zeros_like();

  LossReport r;
  r.l_lh = static_cast<double>(focal_heatmap_loss(out.y_hat, y, w.gamma, w.focal_form, grad ? &grad->y_hat : nullptr));
  r.l_ls = static_cast<double>(l1_masked(out.s_hat, s, mask, grad ? &grad->s_hat : nullptr));
  r.l_lo = static_cast<double>(l1_masked(out.o_hat, o, mask, grad ? &grad->o_hat : nullptr));
  if (w.alpha_r != 0.0) {
    const auto rm = targets.r_map.template cast<Scalar>();
    r.l_rh = static_cast<double>(focal_heatmap_loss(out.r_hat, rm, w.gamma, w.focal_form, grad ? &grad->r_hat : nullptr));
  }
  r.l_mul = r.l_lh + w.alpha_s * r.l_ls + w.alpha_o * r.l_lo + w.alpha_r * r.l_rh;
  r.l_det = r.l_mul;
  if (grad) {
    grad->s_hat.data *= static_cast<Scalar>(w.alpha_s);
    grad->o_hat.data *= static_cast<Scalar>(w.alpha_o);
    grad->r_hat.data *= static_cast<Scalar>(w.alpha_r);
  }
  return r;
}

/// Evaluator objective on scores of (Y;R), (Yhat;R), (Y;Rhat), (Yhat;Rhat).
double gce_loss(const std::array<double, 4>& scores, const LossWeights& w);
/// Detector adversarial objective on scores of (Yhat;R), (Y;Rhat), (Yhat;Rhat).
double adversarial_loss(const std::array<double, 3>& scores, const LossWeights& w);
/// L_DET = L_Mul + alpha_e L_GA.
double detection_total(double l_mul, double l_ga, const LossWeights& w);

/// -log(sigmoid(z)), stable for large |z|.
template <typename Scalar>
Scalar neg_log_sigmoid(Scalar z) {
  return z >= Scalar(0) ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

/// gce_loss evaluated from pre-sigmoid logits; `grad` receives dL/dz.
template <typename Scalar>
Scalar gce_loss_logits(const std::array<Scalar, 4>& z, const LossWeights& w, std::array<Scalar, 4>* grad = nullptr) {
  const auto lf = static_cast<Scalar>(w.lambda_f);
  Scalar loss = neg_log_sigmoid(z[0]);
  for (int k = 1; k < 4; ++k) loss += lf * neg_log_sigmoid(-z[k]);
  if (grad) {
    (*grad)[0] = nn::sigmoid(z[0]) - Scalar(1);
    for (int k = 1; k < 4; ++k) (*grad)[k] = lf * nn::sigmoid(z[k]);
  }
  return loss;
}

/// adversarial_loss evaluated from pre-sigmoid logits; `grad` receives dL/dz.
template <typename Scalar>
Scalar adversarial_loss_logits(const std::array<Scalar, 3>& z, const LossWeights& w,
                               std::array<Scalar, 3>* grad = nullptr) {
  const std::array<Scalar, 3> weight = {Scalar(1), Scalar(1), static_cast<Scalar>(w.lambda_i)};
  Scalar loss = 0;
  for (int k = 0; k < 3; ++k) {
    loss += weight[k] * neg_log_sigmoid(z[k]);
    if (grad) (*grad)[k] = weight[k] * (nn::sigmoid(z[k]) - Scalar(1));
  }
  return loss;
}

}  // namespace relnet
