#include "relnet/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace relnet {

using nlohmann::json;

void AugConfig::validate() const {
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw std::invalid_argument("augmentation: hflip_prob must be in [0,1]");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw std::invalid_argument("augmentation: need 0 < scale_min <= scale_max");
  if (!(shift_min > 0.0 && shift_min <= shift_max)) throw std::invalid_argument("augmentation: need 0 < shift_min <= shift_max");
  if (!(color_jitter >= 0.0 && color_jitter < 1.0)) throw std::invalid_argument("augmentation: color_jitter must be in [0,1)");
  if (crop && (crop_size < 4 || crop_size % DetectorConfig::kDownsample != 0)) {
    throw std::invalid_argument("augmentation: crop_size must be a positive multiple of 4");
  }
}

AugConfig AugConfig::identity() {
  AugConfig a;
  a.hflip_prob = 0.0;
  a.scale_min = a.scale_max = 1.0;
  a.shift_min = a.shift_max = 1.0;
  a.color_jitter = 0.0;
  a.crop = false;
  return a;
}

namespace {

double unit(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

float bilinear_zero(const Image& img, int c, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  auto at = [&](int xx, int yy) -> double {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) return 0.0;
    return img(c, yy, xx);
  };
  return static_cast<float>((1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x0 + 1, y0)) +
                            ay * ((1 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1)));
}

}  // namespace

Sample augment(const Sample& sample, const AugConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int w = sample.image.width;
  const int h = sample.image.height;
  const bool flip = unit(rng) < cfg.hflip_prob;
  const double s = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  const double sx = cfg.shift_min + (cfg.shift_max - cfg.shift_min) * unit(rng);
  const double sy = cfg.shift_min + (cfg.shift_max - cfg.shift_min) * unit(rng);
  std::array<double, 3> gain{};
  for (auto& g : gain) g = 1.0 + cfg.color_jitter * (2.0 * unit(rng) - 1.0);
  const int out_w = cfg.crop ? cfg.crop_size : w;
  const int out_h = cfg.crop ? cfg.crop_size : h;
  const double ux = unit(rng);
  const double uy = unit(rng);
  const int ox = out_w <= w ? static_cast<int>(std::floor(ux * (w - out_w + 1))) : (w - out_w) / 2;
  const int oy = out_h <= h ? static_cast<int>(std::floor(uy * (h - out_h + 1))) : (h - out_h) / 2;

  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double tx = (sx - 1.0) * w / 2.0;
  const double ty = (sy - 1.0) * h / 2.0;

  Sample out;
  const bool identity_warp = s == 1.0 && tx == 0.0 && ty == 0.0 && ox == 0 && oy == 0 && out_w == w && out_h == h;
  if (identity_warp) {
    out.image = sample.image;
    if (flip) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int c = 0; c < 3; ++c) out.image(c, y, x) = sample.image(c, y, w - 1 - x);
        }
      }
    }
  } else {
    out.image = Image(sample.image.channels, out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double px = (x + ox - cx - tx) / s + cx;
        const double py = (y + oy - cy - ty) / s + cy;
        if (flip) px = (w - 1) - px;
        for (int c = 0; c < sample.image.channels; ++c) out.image(c, y, x) = bilinear_zero(sample.image, c, px, py);
      }
    }
  }
  if (cfg.color_jitter > 0.0) {
    for (int c = 0; c < std::min(3, out.image.channels); ++c) {
      out.image.data.row(c) = (out.image.data.row(c) * static_cast<float>(gain[static_cast<std::size_t>(c)]))
                                  .cwiseMax(0.0f)
                                  .cwiseMin(1.0f);
    }
  }

  const auto& lm = sample.landmarks;
  for (std::size_t i = 0; i < lm.size(); ++i) {
    double x = lm.points[i].x();
    double y = lm.points[i].y();
    if (flip) x = (w - 1) - x;
    x = s * (x - cx) + cx + tx - ox;
    y = s * (y - cy) + cy + ty - oy;
    if (x < 0.0 || y < 0.0 || x >= out_w || y >= out_h) continue;
    out.landmarks.points.emplace_back(x, y);
    if (lm.has_boxes()) out.landmarks.boxes.push_back({lm.boxes[i].w * s, lm.boxes[i].h * s});
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs_per_step < 1) throw std::invalid_argument("train config: epochs_per_step must be >= 1");
  if (gce_period < 1) throw std::invalid_argument("train config: gce_period must be >= 1");
  if (!(lr > 0.0) || !(gce_lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  weights.validate();
  augmentation.validate();
  detector.validate();
}

TrainConfig TrainConfig::from_kv(KeyValueConfig& kv) {
  TrainConfig c;
  c.epochs_per_step = kv.get("epochs_per_step", c.epochs_per_step);
  c.lr = kv.get("lr", c.lr);
  c.gce_lr = kv.get("gce_lr", c.gce_lr);
  c.batch = kv.get("batch", c.batch);
  c.gce_period = kv.get("gce_period", c.gce_period);
  c.seed = kv.get("seed", c.seed);
  auto& w = c.weights;
  w.alpha_s = kv.get("alpha_s", w.alpha_s);
  w.alpha_o = kv.get("alpha_o", w.alpha_o);
  w.alpha_r = kv.get("alpha_r", w.alpha_r);
  w.lambda_f = kv.get("lambda_f", w.lambda_f);
  w.lambda_i = kv.get("lambda_i", w.lambda_i);
  w.alpha_e = kv.get("alpha_e", w.alpha_e);
  w.gamma = kv.get("gamma", w.gamma);
  const std::string form = kv.get("focal_form", to_string(w.focal_form));
  try {
    w.focal_form = parse_focal_form(form);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(kv.source() + ": field 'focal_form' " + e.what());
  }
  auto& a = c.augmentation;
  a.hflip_prob = kv.get("hflip_prob", a.hflip_prob);
  a.scale_min = kv.get("scale_min", a.scale_min);
  a.scale_max = kv.get("scale_max", a.scale_max);
  a.shift_min = kv.get("shift_min", a.shift_min);
  a.shift_max = kv.get("shift_max", a.shift_max);
  a.color_jitter = kv.get("color_jitter", a.color_jitter);
  a.crop = kv.get("crop", a.crop);
  a.crop_size = kv.get("crop_size", a.crop_size);
  auto& d = c.detector;
  d.stem_width = kv.get("stem_width", d.stem_width);
  d.mid_width = kv.get("mid_width", d.mid_width);
  d.width = kv.get("width", d.width);
  d.res_blocks = kv.get("res_blocks", d.res_blocks);
  d.head_width = kv.get("head_width", d.head_width);
  d.heatmap_prior = kv.get("heatmap_prior", d.heatmap_prior);
  return c;
}

std::string TrainConfig::to_kv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epochs_per_step = " << epochs_per_step << "\n"
     << "lr = " << lr << "\n"
     << "gce_lr = " << gce_lr << "\n"
     << "batch = " << batch << "\n"
     << "gce_period = " << gce_period << "\n"
     << "seed = " << seed << "\n"
     << "alpha_s = " << weights.alpha_s << "\n"
     << "alpha_o = " << weights.alpha_o << "\n"
     << "alpha_r = " << weights.alpha_r << "\n"
     << "lambda_f = " << weights.lambda_f << "\n"
     << "lambda_i = " << weights.lambda_i << "\n"
     << "alpha_e = " << weights.alpha_e << "\n"
     << "gamma = " << weights.gamma << "\n"
     << "focal_form = " << to_string(weights.focal_form) << "\n"
     << "hflip_prob = " << augmentation.hflip_prob << "\n"
     << "scale_min = " << augmentation.scale_min << "\n"
     << "scale_max = " << augmentation.scale_max << "\n"
     << "shift_min = " << augmentation.shift_min << "\n"
     << "shift_max = " << augmentation.shift_max << "\n"
     << "color_jitter = " << augmentation.color_jitter << "\n"
     << "crop = " << (augmentation.crop ? "true" : "false") << "\n"
     << "crop_size = " << augmentation.crop_size << "\n"
     << "stem_width = " << detector.stem_width << "\n"
     << "mid_width = " << detector.mid_width << "\n"
     << "width = " << detector.width << "\n"
     << "res_blocks = " << detector.res_blocks << "\n"
     << "head_width = " << detector.head_width << "\n"
     << "heatmap_prior = " << detector.heatmap_prior << "\n";
  return os.str();
}

PhaseInfo train_step_schedule(int epoch, const TrainConfig& cfg) {
  const int e = cfg.epochs_per_step;
  if (epoch < 0 || epoch >= 3 * e) {
    throw std::out_of_range("train_step_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(3 * e) + ")");
  }
  if (epoch < e) return {Phase::Landmark, false, false};
  if (epoch < 2 * e) return {Phase::MultiTask, true, false};
  return {Phase::Adversarial, true, true};
}

std::string record_to_json(const StepRecord& r) {
  json j = {{"step", r.step},
            {"epoch", r.epoch},
            {"phase", static_cast<int>(r.phase)},
            {"update", r.update == Update::Detector ? "detector" : "gce"}};
  if (r.update == Update::Detector) {
    j["l_lh"] = r.loss.l_lh;
    j["l_ls"] = r.loss.l_ls;
    j["l_lo"] = r.loss.l_lo;
    j["l_rh"] = r.loss.l_rh;
    j["l_mul"] = r.loss.l_mul;
    j["l_det"] = r.loss.l_det;
    if (r.loss.l_ga) j["l_ga"] = *r.loss.l_ga;
  }
  if (r.loss.l_gce) j["l_gce"] = *r.loss.l_gce;
  return j.dump();
}

namespace {

struct BatchItem {
  FeatureMap<float> image;
  TargetMaps targets;
};

// Pair order shared by the evaluator and adversarial objectives:
// 0 (Y;R), 1 (Yhat;R), 2 (Y;Rhat), 3 (Yhat;Rhat).
constexpr std::array<std::array<bool, 2>, 4> kPairUsesPrediction = {{{false, false}, {true, false}, {false, true}, {true, true}}};

FeatureMap<float> pair_input(int k, const NetworkOutput<float>& out, const TargetMaps& t) {
  const auto& use = kPairUsesPrediction[static_cast<std::size_t>(k)];
  return stack_pair(use[0] ? out.y_hat : t.y_map, use[1] ? out.r_hat : t.r_map);
}

void check_finite(double v, long step, const char* what) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("non-finite " + std::string(what) + " at step " + std::to_string(step));
  }
}

LossReport mean_report(const std::vector<LossReport>& rs) {
  LossReport m;
  const double n = static_cast<double>(rs.size());
  for (const auto& r : rs) {
    m.l_lh += r.l_lh / n;
    m.l_ls += r.l_ls / n;
    m.l_lo += r.l_lo / n;
    m.l_rh += r.l_rh / n;
    m.l_mul += r.l_mul / n;
    m.l_det += r.l_det / n;
    if (r.l_ga) m.l_ga = m.l_ga.value_or(0.0) + *r.l_ga / n;
    if (r.l_gce) m.l_gce = m.l_gce.value_or(0.0) + *r.l_gce / n;
  }
  return m;
}

std::uint64_t gce_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

}  // namespace

TrainResult run_training(const std::vector<Sample>& dataset, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("run_training: empty dataset");
  const Detector<float> det(cfg.detector);
  const Gce<float> gce(cfg.gce);

  TrainResult res;
  res.detector = det.init_params(cfg.seed);
  res.gce = gce.init_params(gce_seed(cfg.seed));
  std::mt19937_64 rng(cfg.seed);

  std::ofstream log;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    log.open(*opts.out_dir / "loss_log.jsonl", std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + (*opts.out_dir / "loss_log.jsonl").string());
  }
  auto emit = [&](const StepRecord& r) {
    res.log.push_back(r);
    if (log.is_open()) log << record_to_json(r) << "\n" << std::flush;
    if (opts.on_update) opts.on_update(UpdateEvent{res.log.back(), res.detector, res.gce});
  };

  std::optional<Adam> det_opt;
  std::optional<Adam> gce_opt;
  long updates_in_phase = 0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto n = dataset.size();
  const auto batch = static_cast<std::size_t>(cfg.batch);

  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const PhaseInfo ph = train_step_schedule(epoch, cfg);
    if (epoch % cfg.epochs_per_step == 0) {
      det_opt.emplace(res.detector, Adam::Options{cfg.lr});
      gce_opt.reset();
      if (ph.adversarial) gce_opt.emplace(res.gce, Adam::Options{cfg.gce_lr});
      updates_in_phase = 0;
    }
    LossWeights w = cfg.weights;
    if (!ph.relation) w.alpha_r = 0.0;
    const bool adversarial = ph.adversarial && w.alpha_e > 0.0;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<LossReport> epoch_reports;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const auto scale = 1.0f / static_cast<float>(stop - start);
      const long step = res.detector_updates + 1;

      std::vector<BatchItem> items;
      for (std::size_t i = start; i < stop; ++i) {
        Sample a = augment(dataset[order[i]], cfg.augmentation, rng);
        GridSpec grid{a.image.width, a.image.height, DetectorConfig::kDownsample};
        items.push_back({std::move(a.image), encode_targets(a.landmarks, grid)});
      }

      // detector update, evaluator frozen
      ParamStore<float> grads = res.detector.zeros_like();
      std::vector<LossReport> reports;
      for (const auto& it : items) {
        DetectorCache<float> cache;
        const NetworkOutput<float> out = det.forward(it.image, res.detector, &cache);
        NetworkOutput<float> g;
        LossReport r = multi_task_loss(out, it.targets, w, &g);
        if (adversarial) {
          std::array<float, 4> z{};
          std::array<GceCache<float>, 4> caches;
          for (int k = 0; k < 4; ++k) {
            z[static_cast<std::size_t>(k)] = gce.logit(pair_input(k, out, it.targets), res.gce, k > 0 ? &caches[static_cast<std::size_t>(k)] : nullptr);
          }
          std::array<float, 3> gz{};
          const float l_ga = adversarial_loss_logits<float>({z[1], z[2], z[3]}, w, &gz);
          r.l_ga = l_ga;
          r.l_gce = gce_loss_logits<float>(z, w);
          r.l_det = detection_total(r.l_mul, l_ga, w);
          for (int k = 1; k < 4; ++k) {
            FeatureMap<float> gin;
            gce.backward(caches[static_cast<std::size_t>(k)], res.gce,
                         static_cast<float>(w.alpha_e) * gz[static_cast<std::size_t>(k - 1)], nullptr, &gin);
            const auto& use = kPairUsesPrediction[static_cast<std::size_t>(k)];
            if (use[0]) g.y_hat.data += gin.data.row(0);
            if (use[1]) g.r_hat.data += gin.data.row(1);
          }
        } else if (ph.adversarial) {
          r.l_ga = 0.0;
        }
        check_finite(r.l_det, step, "detector loss");
        for (auto* m : {&g.y_hat, &g.s_hat, &g.o_hat, &g.r_hat}) m->data *= scale;
        det.backward(cache, res.detector, g, grads);
        reports.push_back(r);
      }
      det_opt->step(res.detector, grads);
      ++res.detector_updates;
      ++updates_in_phase;
      StepRecord rec{step, epoch, ph.phase, Update::Detector, mean_report(reports)};
      epoch_reports.push_back(rec.loss);
      emit(rec);

      // evaluator update, detector frozen
      if (adversarial && updates_in_phase % cfg.gce_period == 0) {
        ParamStore<float> ggrads = res.gce.zeros_like();
        double l_gce = 0.0;
        for (const auto& it : items) {
          const NetworkOutput<float> out = det.forward(it.image, res.detector);
          std::array<float, 4> z{};
          std::array<GceCache<float>, 4> caches;
          for (int k = 0; k < 4; ++k) {
            z[static_cast<std::size_t>(k)] = gce.logit(pair_input(k, out, it.targets), res.gce, &caches[static_cast<std::size_t>(k)]);
          }
          std::array<float, 4> gz{};
          l_gce += gce_loss_logits<float>(z, w, &gz) / static_cast<double>(items.size());
          for (int k = 0; k < 4; ++k) {
            gce.backward(caches[static_cast<std::size_t>(k)], res.gce, gz[static_cast<std::size_t>(k)] * scale, &ggrads, nullptr);
          }
        }
        check_finite(l_gce, step, "evaluator loss");
        gce_opt->step(res.gce, ggrads);
        ++res.gce_updates;
        StepRecord grec{step, epoch, ph.phase, Update::Gce, {}};
        grec.loss.l_gce = l_gce;
        emit(grec);
      }
    }

    if (opts.progress) {
      const LossReport m = mean_report(epoch_reports);
      std::ostringstream os;
      os.precision(4);
      os << "epoch " << epoch + 1 << "/" << cfg.total_epochs() << " phase " << static_cast<int>(ph.phase)
         << " l_mul " << m.l_mul << " l_lh " << m.l_lh << " l_rh " << m.l_rh;
      if (m.l_ga) os << " l_ga " << *m.l_ga;
      if (m.l_gce) os << " l_gce " << *m.l_gce;
      opts.progress(os.str());
    }

    if ((epoch + 1) % cfg.epochs_per_step == 0) {
      const int p = static_cast<int>(ph.phase) - 1;
      res.phase_detector[static_cast<std::size_t>(p)] = res.detector;
      res.phase_gce[static_cast<std::size_t>(p)] = res.gce;
      if (opts.out_dir) {
        const auto dir = *opts.out_dir / ("phase" + std::to_string(p + 1));
        save_checkpoint(res.detector, dir / "detector", "detector");
        save_checkpoint(res.gce, dir / "gce", "gce");
      }
    }
  }
  if (opts.out_dir) {
    save_checkpoint(res.detector, *opts.out_dir / "detector", "detector");
    save_checkpoint(res.gce, *opts.out_dir / "gce", "gce");
  }
  return res;
}

std::vector<Detection> detect(const Detector<float>& net, const ParamStore<float>& params, const Image& image,
                              int top_k) {
  const NetworkOutput<float> out = net.forward(image, params);
  return decode(out, GridSpec{image.width, image.height, DetectorConfig::kDownsample}, top_k);
}

MetricsReport evaluate_detector(const Detector<float>& net, const ParamStore<float>& params,
                                const std::vector<Sample>& samples, int top_k) {
  std::vector<ImageEval> evals;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    evals.push_back({static_cast<int>(i), detect(net, params, samples[i].image, top_k), to_boxes(samples[i].landmarks)});
  }
  return evaluate(evals);
}

GceOrdering gce_ordering(const Detector<float>& net, const ParamStore<float>& det_params, const Gce<float>& gce,
                         const ParamStore<float>& gce_params, const std::vector<Sample>& samples) {
  GceOrdering o;
  if (samples.empty()) return o;
  for (const auto& s : samples) {
    const NetworkOutput<float> out = net.forward(s.image, det_params);
    const TargetMaps t = encode_targets(s.landmarks, GridSpec{s.image.width, s.image.height, DetectorConfig::kDownsample});
    o.ground_truth += nn::sigmoid(static_cast<double>(gce.logit(pair_input(0, out, t), gce_params)));
    o.predicted += nn::sigmoid(static_cast<double>(gce.logit(pair_input(3, out, t), gce_params)));
  }
  o.ground_truth /= static_cast<double>(samples.size());
  o.predicted /= static_cast<double>(samples.size());
  return o;
}

}  // namespace relnet
