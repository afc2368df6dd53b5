#include "relnet/detector.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace relnet {

void DetectorConfig::validate() const {
  if (stem_width < 1 || mid_width < 1 || width < 1 || head_width < 1 || res_blocks < 0) {
    throw std::invalid_argument("detector config: widths must be positive and res_blocks >= 0");
  }
  if (!(heatmap_prior > 0.0 && heatmap_prior < 1.0)) {
    throw std::invalid_argument("detector config: heatmap_prior must lie in (0,1)");
  }
}

std::string DetectorConfig::describe() const {
  std::ostringstream os;
  os << "detector stem=" << stem_width << " mid=" << mid_width << " width=" << width << " res=" << res_blocks
     << " head=" << head_width << " d=" << kDownsample;
  return os.str();
}

std::string DetectorConfig::arch_hash() const { return hex64(fnv1a(describe())); }

namespace {

template <typename Scalar>
void fill_normal(RowMatrix<Scalar>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

}  // namespace

template <typename Scalar>
Detector<Scalar>::Detector(DetectorConfig cfg) : cfg_(cfg), layout_(cfg.arch_hash()) {
  cfg_.validate();
  auto add_conv = [&](const std::string& name, nn::ConvShape cs, double init_std) {
    ConvSlot slot{cs, 0, 0, init_std};
    slot.weight = layout_.add(name + ".weight", {cs.out_channels, cs.in_channels, cs.kernel, cs.kernel},
                              cs.out_channels, cs.patch());
    slot.bias = layout_.add(name + ".bias", {cs.out_channels}, cs.out_channels, 1);
    return slot;
  };
  auto he = [](const nn::ConvShape& cs) { return std::sqrt(2.0 / cs.patch()); };

  nn::ConvShape stem{3, cfg_.stem_width, 3, 1};
  nn::ConvShape down1{cfg_.stem_width, cfg_.mid_width, 3, 2};
  nn::ConvShape down2{cfg_.mid_width, cfg_.width, 3, 2};
  trunk_.push_back(add_conv("stem", stem, he(stem)));
  trunk_.push_back(add_conv("down1", down1, he(down1)));
  trunk_.push_back(add_conv("down2", down2, he(down2)));
  for (int b = 0; b < cfg_.res_blocks; ++b) {
    nn::ConvShape cs{cfg_.width, cfg_.width, 3, 1};
    const std::string prefix = "res" + std::to_string(b);
    trunk_.push_back(add_conv(prefix + ".conv1", cs, he(cs)));
    // second conv of a residual branch starts small so the block is near identity
    trunk_.push_back(add_conv(prefix + ".conv2", cs, 0.5 * he(cs)));
  }
  for (int h = 0; h < 4; ++h) {
    const std::string prefix = std::string("head.") + kHeadNames[h];
    nn::ConvShape hidden{cfg_.width, cfg_.head_width, 3, 1};
    nn::ConvShape out{cfg_.head_width, kHeadChannels[h], 1, 1};
    head_hidden_[h] = add_conv(prefix + ".hidden", hidden, he(hidden));
    head_out_[h] = add_conv(prefix + ".out", out, 0.01);
  }
}

template <typename Scalar>
ParamStore<Scalar> Detector<Scalar>::init_params(std::uint64_t seed) const {
  ParamStore<Scalar> params = layout_.zeros_like();
  std::mt19937_64 rng(seed);
  auto init = [&](const ConvSlot& slot) { fill_normal(params.value(slot.weight), slot.init_std, rng); };
  for (const auto& slot : trunk_) init(slot);
  for (int h = 0; h < 4; ++h) {
    init(head_hidden_[h]);
    init(head_out_[h]);
  }
  const auto prior_bias = static_cast<Scalar>(-std::log((1.0 - cfg_.heatmap_prior) / cfg_.heatmap_prior));
  params.value(head_out_[static_cast<int>(Head::Heatmap)].bias).setConstant(prior_bias);
  params.value(head_out_[static_cast<int>(Head::Relation)].bias).setConstant(prior_bias);
  return params;
}

template <typename Scalar>
void Detector<Scalar>::check_params(const ParamStore<Scalar>& params) const {
  if (params.size() != layout_.size()) {
    throw std::invalid_argument("detector params: expected " + std::to_string(layout_.size()) + " arrays, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const auto& want = layout_[i];
    const auto& got = params[i];
    if (want.name != got.name || want.value.rows() != got.value.rows() || want.value.cols() != got.value.cols()) {
      throw std::invalid_argument("detector params: layout mismatch at " + want.name);
    }
  }
}

template <typename Scalar>
NetworkOutput<Scalar> Detector<Scalar>::forward(const FeatureMap<Scalar>& image, const ParamStore<Scalar>& params,
                                                DetectorCache<Scalar>* cache, FeatureMap<Scalar>* features) const {
  if (image.channels != 3) throw std::invalid_argument("detector forward: image must have 3 channels");
  if (image.height % DetectorConfig::kDownsample != 0 || image.width % DetectorConfig::kDownsample != 0) {
    throw std::invalid_argument("detector forward: image size " + shape_string(3, image.height, image.width) +
                                " not divisible by 4");
  }
  check_params(params);

  std::vector<nn::ConvCache<Scalar>> local_convs(trunk_.size());
  auto& convs = cache ? cache->convs : local_convs;
  convs.assign(trunk_.size(), {});
  std::vector<FeatureMap<Scalar>> acts;
  acts.reserve(trunk_.size() + 1);

  auto conv = [&](const FeatureMap<Scalar>& x, std::size_t i) {
    const auto& slot = trunk_[i];
    return nn::conv_forward(x, params.value(slot.weight), &params.value(slot.bias), slot.shape,
                            cache ? &convs[i] : nullptr);
  };

  // acts[k] is the input of trunk conv k; the last entry is the feature map F.
  FeatureMap<Scalar> x = conv(image, 0);
  nn::relu_inplace(x);
  acts.push_back(x);
  x = conv(x, 1);
  nn::relu_inplace(x);
  acts.push_back(x);
  x = conv(x, 2);
  nn::relu_inplace(x);
  acts.push_back(x);
  for (int b = 0; b < cfg_.res_blocks; ++b) {
    const std::size_t c1 = 3 + 2 * static_cast<std::size_t>(b);
    FeatureMap<Scalar> h = conv(x, c1);
    nn::relu_inplace(h);
    acts.push_back(h);
    FeatureMap<Scalar> y = conv(h, c1 + 1);
    y.data += x.data;
    nn::relu_inplace(y);
    acts.push_back(y);
    x = std::move(y);
  }
  const FeatureMap<Scalar>& feat = acts.back();
  if (features) *features = feat;

  NetworkOutput<Scalar> out;
  RowMatrix<Scalar> cols = nn::im2col(feat, head_hidden_[0].shape);
  std::array<FeatureMap<Scalar>, 4> hidden;
  std::array<FeatureMap<Scalar>*, 4> dst = {&out.y_hat, &out.s_hat, &out.o_hat, &out.r_hat};
  for (int h = 0; h < 4; ++h) {
    const auto& hs = head_hidden_[h];
    FeatureMap<Scalar> hid(hs.shape.out_channels, feat.height, feat.width);
    hid.data.noalias() = params.value(hs.weight) * cols;
    hid.data.colwise() += params.value(hs.bias).col(0);
    nn::relu_inplace(hid);
    const auto& os = head_out_[h];
    FeatureMap<Scalar> o = nn::conv_forward(hid, params.value(os.weight), &params.value(os.bias), os.shape,
                                            static_cast<nn::ConvCache<Scalar>*>(nullptr));
    if (h == static_cast<int>(Head::Heatmap) || h == static_cast<int>(Head::Relation)) o = nn::sigmoid(o);
    *dst[h] = std::move(o);
    hidden[h] = std::move(hid);
  }

  if (cache) {
    cache->acts = std::move(acts);
    cache->head_cols = std::move(cols);
    cache->head_hidden = std::move(hidden);
    cache->output = out;
  }
  return out;
}

template <typename Scalar>
void Detector<Scalar>::backward(const DetectorCache<Scalar>& cache, const ParamStore<Scalar>& params,
                                const NetworkOutput<Scalar>& grad_out, ParamStore<Scalar>& grads) const {
  const auto& acts = cache.acts;
  const FeatureMap<Scalar>& feat = acts.back();

  std::array<const FeatureMap<Scalar>*, 4> g = {&grad_out.y_hat, &grad_out.s_hat, &grad_out.o_hat, &grad_out.r_hat};
  std::array<const FeatureMap<Scalar>*, 4> o = {&cache.output.y_hat, &cache.output.s_hat, &cache.output.o_hat,
                                                &cache.output.r_hat};
  RowMatrix<Scalar> grad_cols = RowMatrix<Scalar>::Zero(cache.head_cols.rows(), cache.head_cols.cols());
  for (int h = 0; h < 4; ++h) {
    FeatureMap<Scalar> glogit = *g[h];
    if (h == static_cast<int>(Head::Heatmap) || h == static_cast<int>(Head::Relation)) {
      glogit.data.array() *= o[h]->data.array() * (Scalar(1) - o[h]->data.array());
    }
    const auto& os = head_out_[h];
    const auto& hid = cache.head_hidden[h];
    grads.value(os.weight).noalias() += glogit.data * hid.data.transpose();
    grads.value(os.bias).col(0) += glogit.data.rowwise().sum();
    FeatureMap<Scalar> ghid(hid.channels, hid.height, hid.width);
    ghid.data.noalias() = params.value(os.weight).transpose() * glogit.data;
    nn::relu_backward_inplace(ghid, hid);
    const auto& hs = head_hidden_[h];
    grads.value(hs.weight).noalias() += ghid.data * cache.head_cols.transpose();
    grads.value(hs.bias).col(0) += ghid.data.rowwise().sum();
    grad_cols.noalias() += params.value(hs.weight).transpose() * ghid.data;
  }
  FeatureMap<Scalar> gx = nn::col2im(grad_cols, head_hidden_[0].shape, feat.height, feat.width);

  auto conv_back = [&](const FeatureMap<Scalar>& gout, std::size_t i, bool need_input) {
    const auto& slot = trunk_[i];
    return nn::conv_backward(gout, params.value(slot.weight), slot.shape, cache.convs[i],
                             static_cast<const FeatureMap<Scalar>*>(nullptr), grads.value(slot.weight),
                             &grads.value(slot.bias), need_input);
  };

  // acts layout: [stem, down1, down2, (hidden_b, out_b) per block]
  for (int b = cfg_.res_blocks - 1; b >= 0; --b) {
    const std::size_t c1 = 3 + 2 * static_cast<std::size_t>(b);
    const std::size_t hid_idx = 3 + 2 * static_cast<std::size_t>(b);
    nn::relu_backward_inplace(gx, acts[hid_idx + 1]);
    FeatureMap<Scalar> gh = conv_back(gx, c1 + 1, true);
    nn::relu_backward_inplace(gh, acts[hid_idx]);
    FeatureMap<Scalar> gskip = conv_back(gh, c1, true);
    gx.data += gskip.data;
  }
  nn::relu_backward_inplace(gx, acts[2]);
  gx = conv_back(gx, 2, true);
  nn::relu_backward_inplace(gx, acts[1]);
  gx = conv_back(gx, 1, true);
  nn::relu_backward_inplace(gx, acts[0]);
  conv_back(gx, 0, false);
}

template class Detector<float>;
template class Detector<double>;

}  // namespace relnet
