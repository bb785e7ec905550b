#include "puregen/ddpm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "puregen/errors.hpp"
#include "puregen/parallel.hpp"

namespace puregen::ddpm {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 1) throw ConfigError("schedule: steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  beta_.resize(static_cast<std::size_t>(steps));
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    beta_[i] = beta_start + f * (beta_end - beta_start);
    prod *= 1.0 - beta_[i];
    alpha_bar_[i] = prod;
  }
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw ConfigError("schedule: t = " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule(steps, beta_start, beta_end);
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps) {
  if (x0.shape() != eps.shape()) throw ConfigError("q_sample: noise shape does not match image");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
  return out;
}

std::vector<float> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding dimension must be even and >= 2");
  const int half = dim / 2;
  std::vector<float> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[i] = static_cast<float>(std::sin(t * freq));
    out[i + half] = static_cast<float>(std::cos(t * freq));
  }
  return out;
}

Tensor to_model_space(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = 2.0f * v - 1.0f;
  return out;
}

Tensor from_model_space(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = 0.5f * (v + 1.0f);
  return out;
}

DdpmModel make_unet(const Shape& input_shape, std::uint64_t seed, int width, int embed_dim) {
  if (input_shape.size() != 3) throw ConfigError("unet needs a (C,H,W) input shape");
  if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0) throw ConfigError("unet needs H and W divisible by 4");
  if (width < 2 || width % 2 != 0) throw ConfigError("unet width must be even and >= 2");
  if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("unet embedding dimension must be even");
  const int w = width;
  const int groups = 2;
  GraphBuilder b(seed);
  const int x = b.input(input_shape);
  const int emb = b.input({embed_dim});
  const int e = b.silu(b.linear(emb, "temb", 4 * w));

  auto block = [&](int h, const std::string& name, int channels) {
    h = b.add_channel(h, b.linear(e, name + ".temb", channels));
    return b.silu(b.group_norm(h, name + ".norm", groups));
  };

  const int h0 = block(b.conv2d(x, "in", w, 3, 1, 1), "in", w);             // (w, H, W)
  const int d1 = block(b.conv2d(h0, "down1", 2 * w, 3, 2, 1), "down1", 2 * w);  // (2w, H/2, W/2)
  const int d2 = block(b.conv2d(d1, "down2", 2 * w, 3, 2, 1), "down2", 2 * w);  // (2w, H/4, W/4)
  const int mid = block(b.conv2d(d2, "mid", 2 * w, 3, 1, 1), "mid", 2 * w);
  int u1 = b.add(b.conv_transpose2d(mid, "up1", 2 * w, 4, 2, 1), d1);
  u1 = block(b.conv2d(u1, "up1.conv", 2 * w, 3, 1, 1), "up1", 2 * w);
  int u2 = b.add(b.conv_transpose2d(u1, "up2", w, 4, 2, 1), h0);
  u2 = block(b.conv2d(u2, "up2.conv", w, 3, 1, 1), "up2", w);
  const int out = b.conv2d(u2, "out", input_shape[0], 3, 1, 1);
  return DdpmModel{"unet", input_shape, width, embed_dim, std::move(b).build(out)};
}

DdpmModel make_ddpm(const std::string& architecture, const Shape& input_shape, int width, int embed_dim) {
  if (architecture == "unet") return make_unet(input_shape, 0, width, embed_dim);
  throw ConfigError("unknown ddpm architecture: " + architecture);
}

NetworkPredictor::NetworkPredictor(const DdpmModel& model)
    : model_(&model), tape_(model.graph), embedding_({model.embed_dim}) {}

const Tensor& NetworkPredictor::forward(const Tensor& x_t, int t) {
  if (x_t.shape() != model_->input_shape) {
    throw ConfigError("ddpm: image shape " + shape_to_string(x_t.shape()) + " does not match model");
  }
  const std::vector<float> e = timestep_embedding(t, model_->embed_dim);
  std::copy(e.begin(), e.end(), embedding_.data().begin());
  const Tensor* inputs[] = {&x_t, &embedding_};
  return tape_.forward(std::span<const Tensor* const>(inputs));
}

void NetworkPredictor::predict(const Tensor& x_t, int t, Tensor& eps) { eps = forward(x_t, t); }

void DdpmTrainConfig::validate(const NoiseSchedule& schedule) const {
  if (train_prefix_steps < 1 || train_prefix_steps > schedule.steps()) {
    throw ConfigError("ddpm.train_prefix_steps must be in [1, " + std::to_string(schedule.steps()) + "]");
  }
  if (epochs < 0) throw ConfigError("ddpm.epochs must be >= 0");
  if (batch < 1) throw ConfigError("ddpm.batch must be >= 1");
  if (!(learning_rate >= 0.0f)) throw ConfigError("ddpm.learning_rate must be >= 0");
  if (!(divergence_bound > 0.0)) throw ConfigError("ddpm.divergence_bound must be positive");
}

namespace {

struct Draw {
  int t = 1;
  Tensor eps;
};

Draw draw_noise(std::mt19937_64& rng, int prefix, const Shape& shape) {
  std::uniform_int_distribution<int> pick_t(1, prefix);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Draw d{pick_t(rng), Tensor(shape)};
  for (float& v : d.eps.data()) v = normal(rng);
  return d;
}

double squared_error(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace

DdpmTrainResult train_ddpm(const Dataset& data, const NoiseSchedule& schedule, const DdpmTrainConfig& config,
                           DdpmModel model, const DdpmProgress& progress) {
  config.validate(schedule);
  if (data.empty()) throw DataError("train_ddpm: empty dataset");
  if (data.image_shape != model.input_shape) throw ConfigError("train_ddpm: dataset shape does not match model");

  std::mt19937_64 rng(derive_seed(config.seed, {0xDD9A}));
  Optimizer optimizer(OptimizerConfig{.kind = config.optimizer, .learning_rate = config.learning_rate});
  const std::size_t m = static_cast<std::size_t>(config.batch);
  const std::size_t slots = worker_slots(m, config.workers);
  std::vector<NetworkPredictor> nets;
  nets.reserve(slots);
  for (std::size_t w = 0; w < slots; ++w) nets.emplace_back(model);

  const ParameterSet& ps = model.graph.parameters();
  std::vector<Tensor> grads(ps.size());
  std::vector<std::vector<Tensor>> sample_grads(m);
  std::vector<double> sample_loss(m);
  std::vector<Draw> draws(m);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  DdpmTrainResult result;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += m) {
      const std::size_t n = std::min(m, order.size() - start);
      for (std::size_t i = 0; i < n; ++i) draws[i] = draw_noise(rng, config.train_prefix_steps, model.input_shape);
      parallel_for(n, config.workers, [&](std::size_t i, std::size_t w) {
        const Tensor x0 = to_model_space(data.images[order[start + i]]);
        const Tensor xt = q_sample(schedule, x0, draws[i].t, draws[i].eps);
        const Tensor& pred = nets[w].forward(xt, draws[i].t);
        sample_loss[i] = squared_error(pred, draws[i].eps);
        Tensor g(pred.shape());
        const float k = 2.0f / static_cast<float>(pred.size());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = k * (pred[j] - draws[i].eps[j]);
        nets[w].tape().backward(g, GradRequest{.inputs = false, .params = true});
        sample_grads[i] = nets[w].tape().param_grads();
      });
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) loss += sample_loss[i];
      loss /= static_cast<double>(n);
      if (!std::isfinite(loss) || loss > config.divergence_bound) {
        std::ostringstream msg;
        msg << "train_ddpm diverged at step " << step << ": loss " << loss;
        throw DivergenceError(msg.str());
      }
      const float inv = 1.0f / static_cast<float>(n);
      for (std::size_t p = 0; p < ps.size(); ++p) {
        Tensor acc(ps[p].shape());
        for (std::size_t i = 0; i < n; ++i) {
          const auto gv = sample_grads[i][p].data();
          for (std::size_t k = 0; k < gv.size(); ++k) acc[k] += gv[k];
        }
        for (float& v : acc.data()) v *= inv;
        grads[p] = std::move(acc);
      }
      optimizer.step(model.graph.parameters(), grads);
      DdpmStepStats stats{step, epoch, loss};
      result.history.push_back(stats);
      if (progress) progress(stats);
      ++step;
    }
  }
  result.model = std::move(model);
  return result;
}

double ddpm_loss(const DdpmModel& model, const NoiseSchedule& schedule, const Dataset& data, int prefix_steps,
                 std::uint64_t seed, int workers) {
  if (data.empty()) throw DataError("ddpm_loss: empty dataset");
  if (prefix_steps < 1 || prefix_steps > schedule.steps()) throw ConfigError("ddpm_loss: prefix out of range");
  std::mt19937_64 rng(derive_seed(seed, {0x105E}));
  std::vector<Draw> draws;
  draws.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) draws.push_back(draw_noise(rng, prefix_steps, model.input_shape));
  std::vector<double> loss(data.size());
  const std::size_t slots = worker_slots(data.size(), workers);
  std::vector<NetworkPredictor> nets;
  nets.reserve(slots);
  for (std::size_t w = 0; w < slots; ++w) nets.emplace_back(model);
  parallel_for(data.size(), workers, [&](std::size_t i, std::size_t w) {
    const Tensor xt = q_sample(schedule, to_model_space(data.images[i]), draws[i].t, draws[i].eps);
    loss[i] = squared_error(nets[w].forward(xt, draws[i].t), draws[i].eps);
  });
  return std::accumulate(loss.begin(), loss.end(), 0.0) / static_cast<double>(loss.size());
}

DdpmPurifyResult ddpm_purify(NoisePredictor& predictor, const NoiseSchedule& schedule, const Tensor& x, int steps,
                             const DdpmPurifyOptions& options, NoiseSource& noise) {
  if (steps < 0 || steps > schedule.steps()) {
    throw ConfigError("ddpm_purify: steps must be in [0, " + std::to_string(schedule.steps()) + "]");
  }
  DdpmPurifyResult result{x, {}};
  const Tensor& clean = options.clean_reference ? *options.clean_reference : x;
  const Tensor& poisoned = options.poisoned_reference ? *options.poisoned_reference : x;
  auto record = [&](int k, const Tensor& model_x) {
    if (!options.record) return;
    Tensor img = from_model_space(model_x);
    clamp_unit(img.data());
    result.log.records.push_back({k, 0.0, l2_distance(img, clean), l2_distance(img, poisoned)});
  };
  if (steps == 0) {
    if (options.record) result.log.records.push_back({0, 0.0, l2_distance(x, clean), l2_distance(x, poisoned)});
    return result;
  }

  Tensor eps(x.shape());
  noise.fill_normal(eps.data());
  Tensor cur = q_sample(schedule, to_model_space(x), steps, eps);
  if (options.record) result.log.records.push_back({0, 0.0, l2_distance(x, clean), l2_distance(x, poisoned)});
  Tensor eps_hat(x.shape());
  Tensor z(x.shape());
  for (int t = steps; t >= 1; --t) {
    predictor.predict(cur, t, eps_hat);
    if (eps_hat.shape() != cur.shape() || !eps_hat.all_finite()) {
      throw DivergenceError("ddpm_purify: predictor returned a bad noise estimate at t = " + std::to_string(t));
    }
    const double beta = schedule.beta(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
    const bool add_noise = options.reverse_noise && t > 1;
    if (add_noise) noise.fill_normal(z.data());
    const double sigma = std::sqrt(beta);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      double v = inv_sqrt_alpha * (cur[i] - coef * eps_hat[i]);
      if (add_noise) v += sigma * z[i];
      cur[i] = static_cast<float>(v);
    }
    record(steps - t + 1, cur);
  }
  result.image = from_model_space(cur);
  clamp_unit(result.image.data());
  return result;
}

DdpmPurifyResult ddpm_purify(const DdpmModel& model, const NoiseSchedule& schedule, const Tensor& x, int steps,
                             const DdpmPurifyOptions& options, std::uint64_t seed) {
  NetworkPredictor net(model);
  GaussianNoise noise(seed);
  return ddpm_purify(net, schedule, x, steps, options, noise);
}

}  // namespace puregen::ddpm
